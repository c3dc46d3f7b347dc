"""Gaussian-approximation filters for quantized output data.

All four filters produce a `GaussianSequence` (filtered and one-step
predicted moments) and share one RTS-style backward smoother:

* `kf_filter`   -- classical KF that treats the quantized output as if it
                   were the linear measurement (baseline),
* `qkf_filter`  -- KF with the innovation formed against the quantized
                   predicted output,
* `ekf_filter`  -- EKF on the extended model, linearizing the arctan
                   surrogate of the quantizer,
* `ukf_filter`  -- UKF on the extended model, propagating sigma points
                   through the true quantizer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .likelihood import SmoothQuantizerCfg, smooth_quantizer
from .model import (
    ExtendedSSM,
    LinearSSM,
    NumericalError,
    Quantizer,
    psd_sqrt,
    quantize,
    symmetrize,
)

__all__ = [
    "GaussianSequence",
    "UkfConfig",
    "kf_filter",
    "qkf_filter",
    "ekf_filter",
    "ukf_filter",
    "rts_smoother",
]


@dataclass(frozen=True)
class GaussianSequence:
    """Filtered and predicted Gaussian moments, one entry per time step.

    ``predicted_*[t]`` holds the moments of x_t given y up to t-1, so the
    entry at t = 0 is the prior of the initial state.
    """

    filtered_means: np.ndarray  # (N, n)
    filtered_covs: np.ndarray  # (N, n, n)
    predicted_means: np.ndarray  # (N, n)
    predicted_covs: np.ndarray  # (N, n, n)

    @property
    def N(self) -> int:
        return self.filtered_means.shape[0]


@dataclass(frozen=True)
class UkfConfig:
    """Unscented-transform parameters; beta = 2 is Gaussian-optimal."""

    alpha: float = 1.0
    kappa: float = 0.0
    beta: float = 2.0

    def scaling(self, n: int) -> float:
        if self.alpha == 0:
            raise ValueError("alpha must be nonzero")
        lam = self.alpha**2 * (n + self.kappa) - n
        if n + lam <= 0:
            raise ValueError("alpha/kappa must satisfy n + lambda > 0")
        return lam


def _extended_inputs(u: np.ndarray, m: int) -> np.ndarray:
    """Stack [u_t; u_{t+1}] per step, zero-padding past the horizon."""
    N = u.shape[0]
    ue = np.zeros((N, 2 * m))
    ue[:, :m] = u
    ue[: N - 1, m:] = u[1:]
    return ue


def _as_inputs(u, m: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != m:
        raise ValueError(f"u must have {m} columns")
    return u


def kf_filter(model: LinearSSM, u, y) -> GaussianSequence:
    """Kalman filter with y treated as the linear output C x + D u + v."""
    return _kf_like(model, u, y, innovation_ref=None)


def qkf_filter(
    model: LinearSSM,
    spec: Quantizer,
    u,
    y,
    quantizer_fn: Optional[Callable] = None,
) -> GaussianSequence:
    """KF variant whose innovation is y_t - q{C xhat_{t|t-1} + D u_t}.

    ``quantizer_fn`` is a test seam replacing the quantizer; with the
    identity map the filter coincides with `kf_filter` exactly.
    """
    if quantizer_fn is None:
        quantizer_fn = lambda z: quantize(z, spec)
    return _kf_like(model, u, y, innovation_ref=quantizer_fn)


def _kf_like(model, u, y, innovation_ref) -> GaussianSequence:
    u = _as_inputs(u, model.m)
    y = np.asarray(y, dtype=float)
    N, n = u.shape[0], model.n
    A, B, C, D, Q, R = model.A, model.B, model.C, model.D, model.Q, model.R

    fm = np.empty((N, n))
    fc = np.empty((N, n, n))
    pm = np.empty((N, n))
    pc = np.empty((N, n, n))
    m_p, P_p = model.mu1, model.P1
    for t in range(N):
        pm[t], pc[t] = m_p, P_p
        z_pred = C @ m_p + D @ u[t]
        S = C @ P_p @ C + R
        if S <= 0:
            raise NumericalError("innovation covariance is not positive")
        K = P_p @ C / S
        ref = z_pred if innovation_ref is None else innovation_ref(z_pred)
        m_f = m_p + K * (y[t] - ref)
        P_f = symmetrize(P_p - np.outer(K, C @ P_p))
        fm[t], fc[t] = m_f, P_f
        m_p = A @ m_f + B @ u[t]
        P_p = symmetrize(Q + A @ P_f @ A.T)
    return GaussianSequence(fm, fc, pm, pc)


def ekf_filter(ext: ExtendedSSM, cfg: SmoothQuantizerCfg, u, y) -> GaussianSequence:
    """EKF on the extended model with the arctan quantizer surrogate.

    The Jacobian row is [0, ..., 0, dh] evaluated at the predicted
    noiseless output, so the gain vanishes away from switch points.
    """
    m_in = ext.Be.shape[1] // 2
    u = _as_inputs(u, m_in)
    ue = _extended_inputs(u, m_in)
    y = np.asarray(y, dtype=float)
    N, ne = u.shape[0], ext.n

    fm = np.empty((N, ne))
    fc = np.empty((N, ne, ne))
    pm = np.empty((N, ne))
    pc = np.empty((N, ne, ne))
    m_p, P_p = ext.mu1e, ext.P1e
    for t in range(N):
        pm[t], pc[t] = m_p, P_p
        h, dh = smooth_quantizer(m_p[-1], cfg)
        S = ext.eps + dh * dh * P_p[-1, -1]
        K = dh * P_p[:, -1] / S
        # the filter is divergence-prone by construction; clip diverged
        # states at a huge finite magnitude so MSEs stay finite, never NaN
        m_f = np.clip(m_p + K * (y[t] - h), -1e150, 1e150)
        P_f = symmetrize(P_p - dh * np.outer(K, P_p[-1, :]))
        fm[t], fc[t] = m_f, P_f
        m_p = ext.Ae @ m_f + ext.Be @ ue[t]
        P_p = symmetrize(ext.Qe + ext.Ae @ P_f @ ext.Ae.T)
    return GaussianSequence(fm, fc, pm, pc)


def ukf_filter(
    ext: ExtendedSSM,
    spec: Quantizer,
    cfg: UkfConfig,
    u,
    y,
    output_map: Optional[Callable] = None,
) -> GaussianSequence:
    """UKF on the extended model, sigma points through the quantizer.

    Sigma points and weights follow the scaled unscented transform
    (center point weights lambda/(n+lambda) for the mean and additionally
    1 - alpha^2 + beta for the covariance); the matrix square root is the
    symmetric eigendecomposition with negative eigenvalues clamped to
    zero.  ``output_map`` is a test seam replacing the quantizer applied
    to the noiseless-output component.
    """
    if output_map is None:
        output_map = lambda z: quantize(z, spec)
    m_in = ext.Be.shape[1] // 2
    u = _as_inputs(u, m_in)
    ue = _extended_inputs(u, m_in)
    y = np.asarray(y, dtype=float)
    N, ne = u.shape[0], ext.n

    lam = cfg.scaling(ne)
    zeta = 1.0 / (ne + lam)
    w_mean = np.full(2 * ne + 1, 0.5 * zeta)
    w_cov = np.full(2 * ne + 1, 0.5 * zeta)
    w_mean[0] = lam * zeta
    w_cov[0] = lam * zeta + 1.0 - cfg.alpha**2 + cfg.beta
    scale = np.sqrt(ne + lam)

    fm = np.empty((N, ne))
    fc = np.empty((N, ne, ne))
    pm = np.empty((N, ne))
    pc = np.empty((N, ne, ne))
    m_p, P_p = ext.mu1e, ext.P1e
    for t in range(N):
        pm[t], pc[t] = m_p, P_p
        root = scale * psd_sqrt(P_p)
        points = np.concatenate([m_p[None, :], m_p + root.T, m_p - root.T], axis=0)
        z_pts = np.asarray(output_map(points @ ext.Ce), dtype=float)
        nu = w_mean @ z_pts
        dz = z_pts - nu
        S = float(w_cov @ (dz * dz)) + ext.eps
        gamma = (w_cov * dz) @ (points - m_p)
        K = gamma / S
        m_f = m_p + K * (y[t] - nu)
        P_f = symmetrize(P_p - S * np.outer(K, K))
        fm[t], fc[t] = m_f, P_f
        m_p = ext.Ae @ m_f + ext.Be @ ue[t]
        P_p = symmetrize(ext.Qe + ext.Ae @ P_f @ ext.Ae.T)
    return GaussianSequence(fm, fc, pm, pc)


def rts_smoother(model, seq: GaussianSequence):
    """RTS backward pass shared by all Gaussian filters.

    Accepts the original model or the extended one (the transition matrix
    is all it needs).  Returns (means, covs) of the smoothing marginals;
    the recursion anchors at the last filtered moments.
    """
    A = model.Ae if isinstance(model, ExtendedSSM) else model.A
    N, n = seq.filtered_means.shape
    sm = np.empty((N, n))
    sc = np.empty((N, n, n))
    sm[-1] = seq.filtered_means[-1]
    sc[-1] = seq.filtered_covs[-1]
    for t in range(N - 2, -1, -1):
        P_pred = seq.predicted_covs[t + 1]
        evals = np.linalg.eigvalsh(P_pred)
        if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
            warnings.warn("singular predicted covariance; ridge-regularizing")
            P_pred = P_pred + 1e-10 * np.trace(P_pred) * np.eye(n)
        G = np.linalg.solve(P_pred, A @ seq.filtered_covs[t]).T
        sm[t] = seq.filtered_means[t] + G @ (sm[t + 1] - seq.predicted_means[t + 1])
        sc[t] = symmetrize(
            seq.filtered_covs[t] + G @ (sc[t + 1] - P_pred) @ G.T
        )
    return sm, sc
