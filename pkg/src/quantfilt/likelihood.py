"""Likelihood of a quantized output given the state.

Two evaluation routes are provided and kept independent on purpose:

* the exact route integrates the output-noise density over the quantizer
  region via the normal CDF (`exact_likelihood`), and
* the quadrature route approximates the same integral by a Gauss-Legendre
  sum, which turns the likelihood into a Gaussian mixture in the output
  offset (`likelihood_mixture_params`) and is what the Gaussian-sum
  filter consumes.

The smooth arctan surrogate of the quantizer used by the EKF lives here
as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, ndtr

from .model import LinearSSM, Quantizer, region_bounds

__all__ = [
    "GLRule",
    "gl_rule",
    "MixtureParams",
    "likelihood_mixture_params",
    "mixture_likelihood",
    "exact_likelihood",
    "exact_loglikelihood",
    "interval_prob",
    "interval_logprob",
    "ilq_levels_near",
    "SmoothQuantizerCfg",
    "smooth_quantizer",
]


@dataclass(frozen=True)
class GLRule:
    """Gauss-Legendre nodes and weights on [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.nodes.size


def gl_rule(K: int) -> GLRule:
    """Gauss-Legendre rule of order K, by Newton iteration on P_K.

    Nodes are the roots of the degree-K Legendre polynomial, refined from
    the Chebyshev-like initial guess; weights are 2 / ((1 - x^2) P_K'(x)^2).
    The rule is exact for polynomials up to degree 2K - 1.
    """
    if not 1 <= K <= 64:
        raise ValueError("K must be in 1..64")
    i = np.arange(1, K + 1)
    x = np.cos(np.pi * (i - 0.25) / (K + 0.5))
    for _ in range(100):
        p_prev = np.ones_like(x)
        p = x.copy()
        for k in range(1, K):
            p, p_prev = ((2 * k + 1) * x * p - k * p_prev) / (k + 1), p
        # derivative via P_K'(x) = K (x P_K - P_{K-1}) / (x^2 - 1)
        dp = K * (x * p - p_prev) / (x * x - 1.0) if K > 1 else p_prev
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    # one more recurrence pass for the weights at the converged nodes
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(1, K):
        p, p_prev = ((2 * k + 1) * x * p - k * p_prev) / (k + 1), p
    dp = K * (x * p - p_prev) / (x * x - 1.0) if K > 1 else p_prev
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce the exact symmetry of the rule
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.flags.writeable = False
    w.flags.writeable = False
    return GLRule(nodes=x, weights=w)


def interval_prob(a, b, R: float):
    """P(a <= v < b) for v ~ N(0, R); endpoints may be +-inf."""
    s = np.sqrt(R)
    return np.clip(ndtr(np.asarray(b) / s) - ndtr(np.asarray(a) / s), 0.0, 1.0)


def interval_logprob(a, b, R: float):
    """log P(a <= v < b) for v ~ N(0, R), stable in both tails."""
    s = np.sqrt(R)
    a = np.asarray(a, dtype=float) / s
    b = np.asarray(b, dtype=float) / s
    # reflect so the interval sits in the lower tail where log_ndtr is stable
    flip = (a + b) > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = log_hi + np.log1p(-np.exp(log_lo - log_hi))
    out = np.where(np.isneginf(log_lo), log_hi, out)
    return out if out.ndim else float(out)


def exact_likelihood(y, x, u, model: LinearSSM, spec: Quantizer):
    """p(y | x) via the normal CDF over the quantizer region of y.

    ``x`` may be one state (n,) or a batch (M, n); returns a scalar or (M,).
    """
    offset = model.output_offset(np.asarray(x, dtype=float), u)
    a, b = region_bounds(y, spec, offset)
    out = interval_prob(a, b, model.R)
    return out if np.ndim(out) else float(out)


def exact_loglikelihood(y, x, u, model: LinearSSM, spec: Quantizer):
    """log p(y | x); underflow-safe twin of `exact_likelihood`."""
    offset = model.output_offset(np.asarray(x, dtype=float), u)
    a, b = region_bounds(y, spec, offset)
    return interval_logprob(a, b, model.R)


def ilq_levels_near(spec: Quantizer, offset, R: float, nsigma: float = 8.0) -> np.ndarray:
    """ILQ levels whose regions can carry mass for the given offset range.

    Enumerates levels within ``nsigma * sqrt(R)`` plus one region width of
    the offsets; beyond that the Gaussian tail mass is below 1e-15.
    """
    if spec.kind != "ilq":
        raise ValueError("only meaningful for ILQ quantizers")
    offset = np.asarray(offset, dtype=float)
    pad = nsigma * np.sqrt(R) + spec.step
    lo = np.floor((offset.min() - pad) / spec.step)
    hi = np.ceil((offset.max() + pad) / spec.step)
    return spec.step * np.arange(lo, hi + 1)


@dataclass(frozen=True)
class MixtureParams:
    """Per-node parameters (scale, pseudo-observation, shift) of the
    Gauss-Legendre mixture approximation of p(y | x):

        p(y | x) ~= sum_tau scale_tau * N(eta_tau; C x + D u + shift_tau, R)
    """

    scale: np.ndarray
    eta: np.ndarray
    shift: np.ndarray

    @property
    def order(self) -> int:
        return self.scale.size


def likelihood_mixture_params(y, spec: Quantizer, rule: GLRule) -> MixtureParams:
    """Mixture parameters for level ``y``.

    Interior levels map the region [q_{k-1}, q_k] onto [-1, 1] linearly;
    the saturating FLQ edge levels use a rational substitution that maps
    the semi-infinite region onto [-1, 1].
    """
    psi, w = rule.nodes, rule.weights
    a, b = region_bounds(y, spec, 0.0)
    if np.isinf(a):  # FLQ bottom level, region (-inf, q_1)
        scale = 2.0 * w / (1.0 + psi) ** 2
        eta = -(1.0 - psi) / (1.0 + psi)
        shift = np.full_like(w, -b)
    elif np.isinf(b):  # FLQ top level, region [q_{L-1}, inf)
        scale = 2.0 * w / (1.0 + psi) ** 2
        eta = (1.0 - psi) / (1.0 + psi)
        shift = np.full_like(w, -a)
    else:
        width = b - a
        scale = w * width / 2.0
        eta = psi * width / 2.0
        shift = np.full_like(w, -(b + a) / 2.0)
    for arr in (scale, eta, shift):
        arr.flags.writeable = False
    return MixtureParams(scale=scale, eta=eta, shift=shift)


def mixture_likelihood(params: MixtureParams, offset, R: float):
    """Evaluate the mixture approximation of p(y | x) at output offsets."""
    offset = np.asarray(offset, dtype=float)
    resid = params.eta - offset[..., None] - params.shift
    dens = np.exp(-0.5 * resid * resid / R) / np.sqrt(2.0 * np.pi * R)
    out = dens @ params.scale
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SmoothQuantizerCfg:
    """Arctan surrogate of a uniform quantizer: step and sharpness rho.

    rho controls how tightly the arctan branch hugs the staircase at the
    switch points; it defaults to 0.001 * step.
    """

    step: float
    rho: Optional[float] = None

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        rho = 0.001 * self.step if self.rho is None else float(self.rho)
        if rho <= 0:
            raise ValueError("rho must be positive")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "step", float(self.step))


def smooth_quantizer(z, cfg: SmoothQuantizerCfg):
    """Smooth staircase h(z) and its derivative dh(z).

    Within each branch [k*step, (k+1)*step) the surrogate is
    (step/pi) * arctan((z - c) / rho) + c with c the branch center
    (k + 0.5) * step; dh is its derivative, peaked at the switch points.
    """
    z = np.asarray(z, dtype=float)
    step, rho = cfg.step, cfg.rho
    c = (np.floor(z / step) + 0.5) * step
    r = z - c
    h = (step / np.pi) * np.arctan(r / rho) + c
    dh = (step / np.pi) * rho / (r * r + rho * rho)
    if h.ndim:
        return h, dh
    return float(h), float(dh)
