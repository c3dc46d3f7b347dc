"""Bootstrap particle filter with MCMC rejuvenation, and particle smoothers.

The filter propagates particles through the state-transition prior, so
weights multiply by the measurement likelihood (evaluated through the
exact CDF route), resamples every step with one of four schemes
(systematic, multinomial, Metropolis, local selection), and then applies
one Metropolis-Hastings or random-walk move per particle to fight sample
impoverishment.

Two smoothers are provided: the rejection-based backward smoother (draws
ancestors by rejection against the transition kernel bound) and the
O(M^2 N) marginal backward-reweighting smoother used as a cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .likelihood import exact_loglikelihood
from .model import LinearSSM, Quantizer, psd_sqrt, symmetrize
from .streams import substream

__all__ = [
    "ParticleSet",
    "McmcConfig",
    "PfResult",
    "SmootherResult",
    "weighted_moments",
    "resample",
    "mcmc_move",
    "pf_step",
    "pf_filter",
    "ps_rejection",
    "ps_marginal",
]

RESAMPLING_SCHEMES = ("sys", "ml", "mt", "ls")


@dataclass(frozen=True)
class ParticleSet:
    """Particles (M, n) with normalized weights (M,)."""

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.particles, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @property
    def M(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class McmcConfig:
    """Rejuvenation move: "mh" proposes from the state-transition prior,
    "rwm" adds N(0, rwm_variance * I) to the particle."""

    kind: str = "rwm"
    rwm_variance: float = 100.0

    def __post_init__(self):
        if self.kind not in ("mh", "rwm"):
            raise ValueError(f"unknown MCMC kind {self.kind!r}")
        if self.kind == "rwm" and self.rwm_variance <= 0:
            raise ValueError("rwm_variance must be positive")


def weighted_moments(ps: ParticleSet) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted mean and covariance of a particle set."""
    mean = ps.weights @ ps.particles
    d = ps.particles - mean
    cov = symmetrize(np.einsum("k,ki,kj->ij", ps.weights, d, d))
    return mean, cov


def _resample_indices(w: np.ndarray, scheme: str, rng: np.random.Generator, mt_iters: int):
    M = w.size
    if scheme == "sys":
        positions = rng.uniform(0.0, 1.0 / M) + np.arange(M) / M
        idx = np.searchsorted(np.cumsum(w), positions, side="right")
        idx = np.minimum(idx, M - 1)
        new_w = np.full(M, 1.0 / M)
    elif scheme == "ml":
        idx = np.searchsorted(np.cumsum(w), rng.random(M), side="right")
        idx = np.minimum(idx, M - 1)
        new_w = np.full(M, 1.0 / M)
    elif scheme == "mt":
        idx = np.arange(M)
        for _ in range(mt_iters):
            j = rng.integers(0, M, M)
            u = rng.random(M)
            # u <= w_j / w_k without dividing (handles zero weights)
            accept = u * w[idx] <= w[j]
            idx = np.where(accept, j, idx)
        new_w = np.full(M, 1.0 / M)
    elif scheme == "ls":
        # select within the circular neighborhood {i-1, i, i+1} of each slot
        w3 = np.stack([np.roll(w, 1), w, np.roll(w, -1)])  # (3, M)
        csum = np.cumsum(w3, axis=0)
        r = rng.random(M) * csum[-1]
        pick = (r[None, :] < csum).argmax(axis=0)
        idx = (np.arange(M) + pick - 1) % M
        new_w = csum[-1] / 3.0  # neighborhood mean weight
        new_w = new_w / new_w.sum()
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return idx, new_w


def resample(ps: ParticleSet, scheme: str, rng: np.random.Generator, mt_iters: int = 20) -> ParticleSet:
    """Resample a particle set with the chosen scheme.

    Systematic, multinomial, and Metropolis resampling return uniform
    weights; local selection returns the renormalized neighborhood-mean
    weights.
    """
    idx, new_w = _resample_indices(ps.weights, scheme, rng, mt_iters)
    return ParticleSet(ps.particles[idx], new_w)


def _default_loglik(model: LinearSSM, spec: Quantizer):
    def loglik(t, y_t, x, u_t):
        return exact_loglikelihood(y_t, x, u_t, model, spec)

    return loglik


def _transition_moments(ancestors, u_prev, model):
    """Mean and covariance of the transition prior given the ancestors;
    the initial-state prior plays that role at the first step."""
    if ancestors is None:
        return model.mu1[None, :], model.P1
    return ancestors @ model.A.T + model.B @ np.atleast_1d(u_prev), model.Q


def mcmc_move(
    particles: np.ndarray,
    ancestors: Optional[np.ndarray],
    y_t: float,
    u_prev: Optional[np.ndarray],
    u_t: np.ndarray,
    model: LinearSSM,
    cfg: McmcConfig,
    rng: np.random.Generator,
    loglik: Callable,
    t: int = 0,
) -> np.ndarray:
    """One rejuvenation move per particle, vectorized over the set.

    The move targets the per-particle local posterior, proportional to
    p(y_t | x) p(x | x_ancestor).  With the "mh" kind the proposal is the
    transition prior itself, so the prior factors cancel and the
    acceptance ratio is min{1, p(y|x*) / p(y|x)}.  The "rwm" kind uses a
    symmetric random-walk proposal, so the transition-prior ratio stays
    in the acceptance probability (dropping it would leave a flat target
    inside each quantizer region and wash out the dynamics).  Rejected
    particles are returned bit-for-bit unchanged.
    """
    M, n = particles.shape
    prior_mean, prior_cov = _transition_moments(ancestors, u_prev, model)
    if cfg.kind == "rwm":
        proposal = particles + np.sqrt(cfg.rwm_variance) * rng.standard_normal((M, n))
    else:
        noise = rng.standard_normal((M, n))
        proposal = prior_mean + noise @ psd_sqrt(prior_cov).T
    log_u = np.log(rng.random(M))
    log_new = np.asarray(loglik(t, y_t, proposal, u_t))
    log_old = np.asarray(loglik(t, y_t, particles, u_t))
    with np.errstate(invalid="ignore"):
        log_ratio = log_new - log_old
    # both likelihoods zero: define the ratio as 0 (always reject)
    log_ratio = np.where(np.isneginf(log_new) & np.isneginf(log_old), -np.inf, log_ratio)
    if cfg.kind == "rwm":
        if n == 1:
            q = float(prior_cov[0, 0])
            d_new = (proposal - prior_mean)[:, 0] ** 2 / q
            d_old = (particles - prior_mean)[:, 0] ** 2 / q
        else:
            Pinv = np.linalg.inv(prior_cov)
            dn = proposal - prior_mean
            do = particles - prior_mean
            d_new = np.einsum("ki,ij,kj->k", dn, Pinv, dn)
            d_old = np.einsum("ki,ij,kj->k", do, Pinv, do)
        log_ratio = log_ratio - 0.5 * (d_new - d_old)
    accept = log_u <= log_ratio
    return np.where(accept[:, None], proposal, particles)


@dataclass
class PfResult:
    """Per-step particle sets (after resampling and the MCMC move) and
    their weighted moments."""

    sets: List[ParticleSet]
    means: np.ndarray  # (N, n)
    covs: np.ndarray  # (N, n, n)
    degenerate_steps: int = 0  # steps where every weight underflowed

    @property
    def N(self) -> int:
        return len(self.sets)


def pf_step(
    prev: ParticleSet,
    y_t: float,
    u_prev,
    u_t,
    model: LinearSSM,
    spec: Optional[Quantizer],
    scheme: str = "sys",
    mcmc: McmcConfig = McmcConfig(),
    rng: Optional[np.random.Generator] = None,
    mt_iters: int = 20,
    loglik_fn: Optional[Callable] = None,
    t: int = 0,
) -> ParticleSet:
    """One bootstrap step: propagate, weight, resample, rejuvenate.

    Standalone single-stream variant of the `pf_filter` inner loop (all
    draws come sequentially from ``rng``); use `pf_filter` for full runs
    with reproducible per-purpose streams.
    """
    rng = np.random.default_rng() if rng is None else rng
    loglik = _default_loglik(model, spec) if loglik_fn is None else loglik_fn
    M, n = prev.particles.shape
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    x = (
        prev.particles @ model.A.T
        + model.B @ u_prev
        + rng.standard_normal((M, n)) @ psd_sqrt(model.Q).T
    )
    with np.errstate(divide="ignore"):
        logw = np.log(prev.weights) + np.asarray(loglik(t, y_t, x, u_t))
    wmax = logw.max()
    if np.isfinite(wmax):
        w = np.exp(logw - wmax)
        w /= w.sum()
    else:
        warnings.warn("all particle weights underflowed; falling back to uniform")
        w = np.full(M, 1.0 / M)
    idx, w = _resample_indices(w, scheme, rng, mt_iters)
    x = mcmc_move(x[idx], prev.particles[idx], y_t, u_prev, u_t, model, mcmc,
                  rng, loglik, t=t)
    return ParticleSet(x, w)


def pf_filter(
    model: LinearSSM,
    spec: Optional[Quantizer],
    u,
    y,
    n_particles: int,
    scheme: str = "sys",
    mcmc: McmcConfig = McmcConfig(),
    seed_keys: Sequence = (0,),
    mt_iters: int = 20,
    loglik_fn: Optional[Callable] = None,
) -> PfResult:
    """Run the MCMC-rejuvenated bootstrap filter.

    ``seed_keys`` prefixes the RNG stream addresses; streams are keyed by
    (*seed_keys, time index, purpose), so runs are reproducible and two
    variants with the same prefix see identical process noise.

    ``loglik_fn(t, y_t, x_batch, u_t)`` is a test seam replacing the
    quantized-output likelihood.
    """
    if scheme not in RESAMPLING_SCHEMES:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    y = np.asarray(y, dtype=float)
    N, n, M = u.shape[0], model.n, n_particles
    loglik = _default_loglik(model, spec) if loglik_fn is None else loglik_fn

    sqrt_Q = psd_sqrt(model.Q)
    sets: List[ParticleSet] = []
    means = np.empty((N, n))
    covs = np.empty((N, n, n))
    degenerate = 0
    x_prev = None
    w_prev = np.full(M, 1.0 / M)
    for t in range(N):
        if t == 0:
            rng = substream(*seed_keys, 0, "pf-init")
            x = model.mu1 + rng.standard_normal((M, n)) @ psd_sqrt(model.P1).T
            ancestors = None
            u_prev = None
        else:
            rng = substream(*seed_keys, t, "pf-propagate")
            x = x_prev @ model.A.T + model.B @ u[t - 1] + rng.standard_normal((M, n)) @ sqrt_Q.T
            ancestors = x_prev
            u_prev = u[t - 1]

        logw = np.log(w_prev) + np.asarray(loglik(t, y[t], x, u[t]))
        wmax = logw.max()
        if np.isfinite(wmax):
            w = np.exp(logw - wmax)
            w /= w.sum()
        else:
            degenerate += 1
            w = np.full(M, 1.0 / M)

        idx, w = _resample_indices(w, scheme, substream(*seed_keys, t, "pf-resample"), mt_iters)
        x = x[idx]
        anc = None if ancestors is None else ancestors[idx]
        x = mcmc_move(
            x, anc, y[t], u_prev, u[t], model, mcmc,
            substream(*seed_keys, t, "pf-move"), loglik, t=t,
        )
        ps = ParticleSet(x, w)
        sets.append(ps)
        means[t], covs[t] = weighted_moments(ps)
        x_prev, w_prev = x, w
    return PfResult(sets=sets, means=means, covs=covs, degenerate_steps=degenerate)


@dataclass
class SmootherResult:
    """Smoothed particle sets plus bookkeeping for the rejection cap."""

    sets: List[ParticleSet]
    means: np.ndarray
    covs: np.ndarray
    capped_draws: int = 0  # particles that exhausted the rejection budget

    @property
    def N(self) -> int:
        return len(self.sets)


def ps_rejection(
    filtered: List[ParticleSet],
    model: LinearSSM,
    u,
    seed_keys: Sequence = (0,),
    max_attempts: int = 10_000,
) -> SmootherResult:
    """Rejection-based backward particle smoother.

    At every step each smoothed particle repeatedly draws a uniform
    candidate ancestor tau and accepts it with probability
    f = exp(-eta' Q^-1 eta / 2) <= 1, eta being the transition residual.
    A particle exceeding ``max_attempts`` draws falls back to a
    categorical draw proportional to its f values over all candidates.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    N = len(filtered)
    M, n = filtered[-1].particles.shape
    Qinv = np.linalg.inv(model.Q)
    uniform = np.full(M, 1.0 / M)

    sets: List[Optional[ParticleSet]] = [None] * N
    sets[N - 1] = ParticleSet(filtered[N - 1].particles, uniform)
    capped = 0
    for t in range(N - 2, -1, -1):
        rng = substream(*seed_keys, t, "ps-reject")
        x_next = sets[t + 1].particles
        x_t = filtered[t].particles
        prop_mean = x_t @ model.A.T + model.B @ u[t]  # (M, n)
        chosen = np.empty(M, dtype=np.intp)
        remaining = np.arange(M)
        attempts = 0
        block = 8  # candidates drawn per particle per round; same acceptance law
        while remaining.size:
            R = remaining.size
            tau = rng.integers(0, M, (R, block))
            uu = rng.random((R, block))
            eta = x_next[remaining, None, :] - prop_mean[tau]
            if n == 1:
                logf = -0.5 * Qinv[0, 0] * eta[..., 0] ** 2
            else:
                logf = -0.5 * np.einsum("rbi,ij,rbj->rb", eta, Qinv, eta)
            acc = uu <= np.exp(logf)
            hit = acc.any(axis=1)
            first = acc.argmax(axis=1)
            chosen[remaining[hit]] = tau[np.flatnonzero(hit), first[hit]]
            remaining = remaining[~hit]
            attempts += block
            block = min(2 * block, 1024)
            if attempts >= max_attempts and remaining.size:
                capped += remaining.size
                for i in remaining:
                    eta = x_next[i] - prop_mean
                    f = np.exp(-0.5 * np.einsum("ki,ij,kj->k", eta, Qinv, eta))
                    total = f.sum()
                    p = f / total if total > 0 else uniform
                    chosen[i] = rng.choice(M, p=p)
                break
        sets[t] = ParticleSet(x_t[chosen], uniform)

    means = np.empty((N, n))
    covs = np.empty((N, n, n))
    for t in range(N):
        means[t], covs[t] = weighted_moments(sets[t])
    return SmootherResult(sets=sets, means=means, covs=covs, capped_draws=capped)


def ps_marginal(filtered: List[ParticleSet], model: LinearSSM, u) -> List[np.ndarray]:
    """Marginal smoother: reweight the filter particles backward in time.

    Returns one weight vector per step (particles are unchanged).  All
    sums run in log space; the O(M^2) transition-density matrix makes
    this a cross-check tool rather than a benchmark contender.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    N = len(filtered)
    n = model.n
    Qinv = np.linalg.inv(model.Q)
    _, logdet_Q = np.linalg.slogdet(model.Q)
    log_norm = -0.5 * (n * np.log(2.0 * np.pi) + logdet_Q)

    log_w: List[Optional[np.ndarray]] = [None] * N
    with np.errstate(divide="ignore"):
        log_w[N - 1] = np.log(filtered[N - 1].weights)
    for t in range(N - 2, -1, -1):
        x_t = filtered[t].particles
        x_next = filtered[t + 1].particles
        with np.errstate(divide="ignore"):
            log_wt = np.log(filtered[t].weights)
        mean = x_t @ model.A.T + model.B @ u[t]  # (M, n)
        diff = x_next[:, None, :] - mean[None, :, :]  # (j, i, n)
        log_trans = log_norm - 0.5 * np.einsum("jik,kl,jil->ji", diff, Qinv, diff)
        log_denom = logsumexp(log_wt[None, :] + log_trans, axis=1)  # over i, per j
        lw = logsumexp(
            log_w[t + 1][:, None] + log_wt[None, :] + log_trans - log_denom[:, None],
            axis=0,
        )
        log_w[t] = lw - logsumexp(lw)
    out = []
    for t in range(N):
        w = np.exp(log_w[t] - logsumexp(log_w[t]))
        out.append(w / w.sum())
    return out
