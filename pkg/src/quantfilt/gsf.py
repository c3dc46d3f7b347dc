"""Gaussian-sum filtering and smoothing for quantized output data.

The filter propagates a Gaussian mixture through the usual predict /
update cycle, where the measurement update multiplies by the
Gauss-Legendre likelihood mixture (one Kalman-style update per prior
component and quadrature node) and the mixture is then reduced by
moment-matching merges.

The smoother runs a backward recursion on unnormalized exponential-
quadratic ("canonical") components representing p(y_{t:N} | x_t), reduces
them in moment space, and combines each reduced backward mixture with the
forward predicted mixture to form the smoothing marginals.

Scalar-state models take dedicated fast paths (plain array arithmetic,
and a compiled merge loop when numba is importable); general state
dimensions go through batched linear algebra.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy.special import logsumexp

from .likelihood import GLRule, MixtureParams, gl_rule, likelihood_mixture_params
from .model import LinearSSM, Quantizer, symmetrize

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is expected to be present
    _HAVE_NUMBA = False

__all__ = [
    "GaussianMixture",
    "mixture_reduce",
    "gsf_step",
    "gsf_filter",
    "GsfResult",
    "BackwardMixture",
    "ReducedBackward",
    "backward_init",
    "backward_predict",
    "backward_measure",
    "backward_step",
    "canonical_to_moment",
    "moment_to_canonical",
    "gss_combine_step",
    "gss_smoother",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted Gaussian components; the posterior representation of the
    Gaussian-sum recursions."""

    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, n)
    covs: np.ndarray  # (M, n, n)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        P = np.asarray(self.covs, dtype=float)
        if P.ndim == 2:
            P = P[None, :, :]
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", P)

    def __len__(self) -> int:
        return self.weights.size

    @property
    def n(self) -> int:
        return self.means.shape[1]

    def normalized(self) -> "GaussianMixture":
        return GaussianMixture(self.weights / self.weights.sum(), self.means, self.covs)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means / self.weights.sum()

    def cov(self) -> np.ndarray:
        w = self.weights / self.weights.sum()
        m = w @ self.means
        d = self.means - m
        scatter = np.einsum("k,ki,kj->ij", w, d, d)
        return symmetrize(np.einsum("k,kij->ij", w, self.covs) + scatter)


# ---------------------------------------------------------------------------
# mixture reduction


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _greedy_merge_1d(w, mu, p, target):  # pragma: no cover - compiled
        M = w.size
        logp = np.log(p)
        INF = np.inf
        D = np.empty((M, M))
        for i in range(M):
            D[i, i] = INF
        for i in range(M):
            for j in range(i + 1, M):
                ww = w[i] + w[j]
                a1 = w[i] / ww
                a2 = w[j] / ww
                d = mu[i] - mu[j]
                pm = a1 * p[i] + a2 * p[j] + a1 * a2 * d * d
                c = 0.5 * (ww * np.log(pm) - w[i] * logp[i] - w[j] * logp[j])
                D[i, j] = c
                D[j, i] = c
        rowmin = np.empty(M)
        rowarg = np.empty(M, np.int64)
        for i in range(M):
            bm = INF
            ba = -1
            for j in range(M):
                if D[i, j] < bm:
                    bm = D[i, j]
                    ba = j
            rowmin[i] = bm
            rowarg[i] = ba
        active = np.ones(M, np.bool_)
        count = M
        while count > target:
            gi = 0
            gm = INF
            for r in range(M):
                if rowmin[r] < gm:
                    gm = rowmin[r]
                    gi = r
            i = gi
            j = rowarg[i]
            ww = w[i] + w[j]
            a1 = w[i] / ww
            a2 = w[j] / ww
            m_new = a1 * mu[i] + a2 * mu[j]
            d1 = mu[i] - m_new
            d2 = mu[j] - m_new
            p_new = a1 * (p[i] + d1 * d1) + a2 * (p[j] + d2 * d2)
            w[i] = ww
            mu[i] = m_new
            p[i] = p_new
            logp[i] = np.log(p_new)
            active[j] = False
            count -= 1
            for r in range(M):
                D[r, j] = INF
                D[j, r] = INF
            rowmin[j] = INF
            for r in range(M):
                if active[r] and r != i:
                    ww2 = w[i] + w[r]
                    b1 = w[i] / ww2
                    b2 = w[r] / ww2
                    dd = mu[i] - mu[r]
                    pm = b1 * p[i] + b2 * p[r] + b1 * b2 * dd * dd
                    c = 0.5 * (ww2 * np.log(pm) - w[i] * logp[i] - w[r] * logp[r])
                    D[i, r] = c
                    D[r, i] = c
            bm = INF
            ba = -1
            for r in range(M):
                if D[i, r] < bm:
                    bm = D[i, r]
                    ba = r
            rowmin[i] = bm
            rowarg[i] = ba
            for r in range(M):
                if not active[r] or r == i:
                    continue
                if rowarg[r] == i or rowarg[r] == j:
                    bm2 = INF
                    ba2 = -1
                    for c2 in range(M):
                        if D[r, c2] < bm2:
                            bm2 = D[r, c2]
                            ba2 = c2
                    rowmin[r] = bm2
                    rowarg[r] = ba2
                elif D[r, i] < rowmin[r]:
                    rowmin[r] = D[r, i]
                    rowarg[r] = i
        out = np.empty(count, np.int64)
        k = 0
        for r in range(M):
            if active[r]:
                out[k] = r
                k += 1
        return w[out], mu[out], p[out]


def _merged_logdet(w1, w2, mu1, mu2, P1, P2):
    """log det of the moment-matched merge, broadcasting over leading axes."""
    w = w1 + w2
    a1 = w1 / w
    a2 = w2 / w
    d = mu1 - mu2
    if d.shape[-1] == 1:
        p = a1 * P1[..., 0, 0] + a2 * P2[..., 0, 0] + a1 * a2 * d[..., 0] ** 2
        with np.errstate(divide="ignore"):
            return np.log(p)
    P = (
        np.asarray(a1)[..., None, None] * P1
        + np.asarray(a2)[..., None, None] * P2
        + np.asarray(a1 * a2)[..., None, None] * (d[..., :, None] * d[..., None, :])
    )
    return np.linalg.slogdet(P)[1]


def _pair_cost(w1, w2, l1, l2, lmerged):
    # Runnalls' upper bound on the KL discrimination of merging the pair
    return 0.5 * ((w1 + w2) * lmerged - w1 * l1 - w2 * l2)


def _merge_pair(w, mu, P, i, j):
    wij = w[i] + w[j]
    a1, a2 = w[i] / wij, w[j] / wij
    m = a1 * mu[i] + a2 * mu[j]
    d1 = mu[i] - m
    d2 = mu[j] - m
    Pij = a1 * (P[i] + np.outer(d1, d1)) + a2 * (P[j] + np.outer(d2, d2))
    return wij, m, symmetrize(Pij)


def _greedy_merge(w, mu, P, target):
    """Greedy pairwise moment-matching merge down to ``target`` components.

    Each merge takes the pair with the smallest Runnalls-style merge cost;
    per-row minima of the pairwise cost matrix are cached and refreshed
    lazily so a merge costs O(active) instead of a fresh O(M^2) scan.
    """
    if w.size <= target:
        return w, mu, P
    if mu.shape[1] == 1 and _HAVE_NUMBA:
        wo, mo, po = _greedy_merge_1d(
            np.ascontiguousarray(w, dtype=float),
            np.ascontiguousarray(mu[:, 0], dtype=float),
            np.ascontiguousarray(P[:, 0, 0], dtype=float),
            target,
        )
        return wo, mo[:, None], po[:, None, None]
    w = w.copy()
    mu = mu.copy()
    P = P.copy()
    M = w.size
    with np.errstate(divide="ignore"):
        logdet = np.log(P[:, 0, 0]) if mu.shape[1] == 1 else np.linalg.slogdet(P)[1]
    D = _pair_cost(
        w[:, None],
        w[None, :],
        logdet[:, None],
        logdet[None, :],
        _merged_logdet(
            w[:, None], w[None, :], mu[:, None, :], mu[None, :, :], P[:, None], P[None, :]
        ),
    )
    np.fill_diagonal(D, np.inf)
    rowmin = D.min(axis=1)
    rowarg = D.argmin(axis=1)
    active = np.ones(M, dtype=bool)
    count = M

    def refresh_row(r):
        rowmin[r] = D[r].min()
        rowarg[r] = D[r].argmin()

    while count > target:
        i = int(np.argmin(rowmin))
        j = int(rowarg[i])
        w[i], mu[i], P[i] = _merge_pair(w, mu, P, i, j)
        with np.errstate(divide="ignore"):
            logdet[i] = (
                np.log(P[i, 0, 0]) if mu.shape[1] == 1 else np.linalg.slogdet(P[i])[1]
            )
        active[j] = False
        count -= 1
        D[j, :] = np.inf
        D[:, j] = np.inf
        rowmin[j] = np.inf
        row = np.full(M, np.inf)
        idx = np.flatnonzero(active)
        idx = idx[idx != i]
        if idx.size:
            lm = _merged_logdet(w[i], w[idx], mu[i], mu[idx], P[i], P[idx])
            row[idx] = _pair_cost(w[i], w[idx], logdet[i], logdet[idx], lm)
        D[i, :] = row
        D[:, i] = row
        refresh_row(i)
        stale = np.flatnonzero(active & ((rowarg == i) | (rowarg == j)))
        for r in stale:
            if r != i:
                refresh_row(r)
        better = row < rowmin
        better[i] = False
        for r in np.flatnonzero(better & active):
            rowmin[r] = row[r]
            rowarg[r] = i
    keep = np.flatnonzero(active)
    return w[keep], mu[keep], P[keep]


def mixture_reduce(mix: GaussianMixture, target: int) -> GaussianMixture:
    """Prune negligible components, then merge greedily down to ``target``.

    Pairs are merged by moment matching (each merge preserves the pair's
    total weight, mean, and covariance exactly); the merge order follows
    the smallest Runnalls-style weighted KL surrogate.  A mixture that
    already fits is returned unchanged.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    if len(mix) <= target:
        return mix
    w, mu, P = mix.weights, mix.means, mix.covs
    total = w.sum()
    keep = w >= 1e-12 * total
    if not np.all(keep):
        w, mu, P = w[keep], mu[keep], P[keep]
        w = w * (total / w.sum())
    if w.size > target:
        w, mu, P = _greedy_merge(w.copy(), mu.copy(), P.copy(), target)
    return GaussianMixture(w, mu, P)


# ---------------------------------------------------------------------------
# forward filter


@dataclass(frozen=True)
class GsfResult:
    """Forward pass output: filtered/predicted mixtures and the likelihood
    mixture parameters per step (the backward pass reuses them)."""

    filtered: List[GaussianMixture]
    predicted: List[GaussianMixture]
    params: List[MixtureParams]

    @property
    def N(self) -> int:
        return len(self.filtered)

    @property
    def filtered_means(self) -> np.ndarray:
        return np.stack([g.mean() for g in self.filtered])

    @property
    def filtered_covs(self) -> np.ndarray:
        return np.stack([g.cov() for g in self.filtered])


def gsf_step(
    prior: GaussianMixture,
    y: float,
    u: np.ndarray,
    model: LinearSSM,
    params: MixtureParams,
    max_components: int,
):
    """One measurement update + reduction + time update.

    Every prior component is updated against every quadrature node of the
    likelihood mixture (a standard Kalman update with pseudo-observation
    eta and offset shift), giving K * M weighted posterior components
    before reduction.  Returns (posterior at t|t, predicted at t+1|t).
    """
    w, mu, P = prior.weights, prior.means, prior.covs
    C, D, R = model.C, model.D, model.R
    n = model.n
    K_ord = params.order
    u = np.atleast_1d(np.asarray(u, dtype=float))

    if n == 1:
        c0 = C[0]
        Pv = P[:, 0, 0]
        V = c0 * c0 * Pv + R  # (M,)
        gain = Pv * c0 / V  # (M,)
        kappa = (mu[:, 0] * c0 + D @ u)[:, None] + params.shift[None, :]
        resid = params.eta[None, :] - kappa  # (M, K)
        post_means = (mu[:, 0:1] + gain[:, None] * resid).reshape(-1)[:, None]
        post_cov_v = np.repeat(Pv * (1.0 - gain * c0), K_ord)
        post_covs = post_cov_v[:, None, None]
    else:
        V = np.einsum("i,kij,j->k", C, P, C) + R
        gain_mat = (P @ C) / V[:, None]  # (M, n)
        kappa = (mu @ C + D @ u)[:, None] + params.shift[None, :]
        resid = params.eta[None, :] - kappa
        post_means = (mu[:, None, :] + gain_mat[:, None, :] * resid[:, :, None]).reshape(-1, n)
        pc = symmetrize(P - np.einsum("ki,kj->kij", gain_mat, np.einsum("i,kij->kj", C, P)))
        post_covs = np.repeat(pc, K_ord, axis=0)

    with np.errstate(divide="ignore"):
        logw = (
            np.log(w)[:, None]
            + np.log(params.scale)[None, :]
            - 0.5 * resid**2 / V[:, None]
            - 0.5 * np.log(2.0 * np.pi * V)[:, None]
        ).reshape(-1)
    wmax = logw.max()
    if np.isfinite(wmax):
        weights = np.exp(logw - wmax)
        weights /= weights.sum()
    else:
        # every component underflowed; keep the least-implausible one
        best = int(np.argmin(np.abs(resid).reshape(-1) / np.sqrt(np.repeat(V, K_ord))))
        weights = np.zeros(logw.size)
        weights[best] = 1.0
    posterior = mixture_reduce(GaussianMixture(weights, post_means, post_covs), max_components)

    if n == 1:
        a0 = model.A[0, 0]
        pred_means = posterior.means * a0 + model.B @ u
        pred_covs = model.Q[0, 0] + a0 * a0 * posterior.covs
    else:
        pred_means = posterior.means @ model.A.T + model.B @ u
        pred_covs = symmetrize(
            model.Q + np.einsum("ij,kjl,ml->kim", model.A, posterior.covs, model.A)
        )
    predicted = GaussianMixture(posterior.weights.copy(), pred_means, pred_covs)
    return posterior, predicted


def gsf_filter(
    model: LinearSSM,
    spec: Quantizer,
    u,
    y,
    rule: Optional[GLRule] = None,
    max_components: int = 50,
    params_fn: Optional[Callable] = None,
) -> GsfResult:
    """Run the Gaussian-sum filter over a record of quantized outputs.

    ``params_fn(t, y_t) -> MixtureParams`` is a test seam replacing the
    quantized-likelihood mixture (a single unit-scale component with
    eta = y_t turns every step into an exact Kalman update).
    """
    rule = gl_rule(10) if rule is None else rule
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    y = np.asarray(y, dtype=float)
    N = u.shape[0]

    predicted = GaussianMixture(np.ones(1), model.mu1[None, :], model.P1[None, :, :])
    filtered_list, predicted_list, params_list = [], [], []
    for t in range(N):
        if params_fn is None:
            params = likelihood_mixture_params(y[t], spec, rule)
        else:
            params = params_fn(t, y[t])
        predicted_list.append(predicted)
        posterior, predicted = gsf_step(predicted, y[t], u[t], model, params, max_components)
        filtered_list.append(posterior)
        params_list.append(params)
    return GsfResult(filtered=filtered_list, predicted=predicted_list, params=params_list)


# ---------------------------------------------------------------------------
# backward recursion (canonical components)


@dataclass(frozen=True)
class BackwardMixture:
    """Sum of components eps * exp(log_lam - (x'Fx - 2G'x + H)/2), the
    canonical-form representation of p(y_{t:N} | x_t)."""

    eps: np.ndarray  # (S,)
    log_lam: np.ndarray  # (S,)
    F: np.ndarray  # (S, n, n)
    G: np.ndarray  # (S, n)
    H: np.ndarray  # (S,)

    def __len__(self) -> int:
        return self.eps.size

    def log_value(self, x: np.ndarray) -> np.ndarray:
        """log of the represented function at states x (B, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        quad = np.einsum("bi,kij,bj->bk", x, self.F, x)
        lin = x @ self.G.T
        expo = self.log_lam[None, :] + np.log(self.eps)[None, :] - 0.5 * (
            quad - 2.0 * lin + self.H[None, :]
        )
        return logsumexp(expo, axis=1)

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_value(x))


@dataclass(frozen=True)
class ReducedBackward:
    """Moment form of a reduced backward mixture: sum of delta * N(x; z, U)
    with the scales delta kept in log space."""

    log_delta: np.ndarray  # (S,)
    z: np.ndarray  # (S, n)
    U: np.ndarray  # (S, n, n)

    def __len__(self) -> int:
        return self.log_delta.size


def backward_init(params: MixtureParams, u, model: LinearSSM) -> BackwardMixture:
    """Canonical components of p(y_N | x_N) from the likelihood mixture."""
    C, D, R = model.C, model.D, model.R
    u = np.atleast_1d(np.asarray(u, dtype=float))
    theta = params.eta - D @ u - params.shift  # (K,)
    K = theta.size
    eps = params.scale.copy()
    log_lam = np.full(K, -0.5 * np.log(2.0 * np.pi * R))
    F = np.broadcast_to(np.outer(C, C) / R, (K, model.n, model.n)).copy()
    G = np.outer(theta, C) / R
    H = theta**2 / R
    return BackwardMixture(eps=eps, log_lam=log_lam, F=F, G=G, H=H)


def backward_predict(bm: BackwardMixture, u, model: LinearSSM) -> BackwardMixture:
    """Marginalize the state transition: p(y_{t+1:N} | x_t) from time t+1.

    Requires Q nonsingular.  Note the moment matrix is
    Q^-1 - Q^-1 Fq^-1 Q^-1 (equivalently (Q + F^-1)^-1): information must
    shrink through the transition noise.
    """
    A, B, Q = model.A, model.B, model.Q
    u = np.atleast_1d(np.asarray(u, dtype=float))
    Bu = B @ u  # (n,)
    if model.n == 1:
        a0, q = A[0, 0], Q[0, 0]
        if q <= 0:
            raise ValueError("backward smoothing requires positive definite Q")
        qinv = 1.0 / q
        f = bm.F[:, 0, 0]
        g = bm.G[:, 0]
        fq = f + qinv
        fq_inv_g = g / fq
        mq = qinv - qinv * qinv / fq
        bu = Bu[0]
        log_lam = bm.log_lam - 0.5 * (np.log(q) + np.log(fq))
        F = (a0 * a0 * mq)[:, None, None]
        G = (a0 * qinv * fq_inv_g - a0 * mq * bu)[:, None]
        H = bm.H - g * fq_inv_g + bu * bu * mq - 2.0 * bu * qinv * fq_inv_g
        return BackwardMixture(eps=bm.eps.copy(), log_lam=log_lam, F=F, G=G, H=H)
    Qinv = np.linalg.inv(Q)
    sign, logdet_Q = np.linalg.slogdet(Q)
    if sign <= 0:
        raise ValueError("backward smoothing requires positive definite Q")
    Fq = bm.F + Qinv  # (S, n, n)
    Fq_inv = np.linalg.inv(Fq)
    logdet_Fq = np.linalg.slogdet(Fq)[1]
    Mq = Qinv - Qinv @ Fq_inv @ Qinv  # (S, n, n)
    Fq_inv_G = np.einsum("kij,kj->ki", Fq_inv, bm.G)

    log_lam = bm.log_lam - 0.5 * (logdet_Q + logdet_Fq)
    F = symmetrize(np.einsum("ji,kjl,lm->kim", A, Mq, A))
    G = np.einsum("ji,jl,kl->ki", A, Qinv, Fq_inv_G) - np.einsum("ji,kjl,l->ki", A, Mq, Bu)
    H = (
        bm.H
        - np.einsum("ki,ki->k", bm.G, Fq_inv_G)
        + np.einsum("i,kij,j->k", Bu, Mq, Bu)
        - 2.0 * np.einsum("i,ij,kj->k", Bu, Qinv, Fq_inv_G)
    )
    return BackwardMixture(eps=bm.eps.copy(), log_lam=log_lam, F=F, G=G, H=H)


def backward_measure(bm: BackwardMixture, params: MixtureParams, u, model: LinearSSM) -> BackwardMixture:
    """Multiply by the likelihood mixture of y_t; K-fold component growth."""
    C, D, R = model.C, model.D, model.R
    u = np.atleast_1d(np.asarray(u, dtype=float))
    theta = params.eta - D @ u - params.shift  # (K,)
    K = theta.size
    S = len(bm)
    # component index k = (l - 1) K + tau: l-major ordering
    eps = (bm.eps[:, None] * params.scale[None, :]).reshape(S * K)
    log_lam = np.repeat(bm.log_lam - 0.5 * np.log(2.0 * np.pi * R), K)
    F = np.repeat(bm.F + np.outer(C, C) / R, K, axis=0)
    G = (bm.G[:, None, :] + np.outer(theta, C)[None, :, :] / R).reshape(S * K, -1)
    H = (bm.H[:, None] + (theta**2 / R)[None, :]).reshape(S * K)
    return BackwardMixture(eps=eps, log_lam=log_lam, F=F, G=G, H=H)


def canonical_to_moment(eps: float, log_lam: float, F: np.ndarray, G: np.ndarray, H: float):
    """Rewrite one canonical component as delta * N(x; z, U).

    Complete-the-square identity: U = F^-1, z = F^-1 G and
    delta = eps * lam * (2 pi)^{n/2} det(F)^{-1/2} exp(-(H - G'F^-1G)/2).
    Raises for singular F (non-normalizable component).
    """
    F = np.atleast_2d(F)
    n = F.shape[0]
    if np.linalg.cond(F) > 1e12:
        raise np.linalg.LinAlgError("F is singular; component is not normalizable")
    U = np.linalg.inv(F)
    z = U @ np.atleast_1d(G)
    log_delta = (
        np.log(eps)
        + log_lam
        + 0.5 * n * _LOG_2PI
        - 0.5 * np.linalg.slogdet(F)[1]
        - 0.5 * (H - z @ np.atleast_1d(G))
    )
    return float(np.exp(log_delta)), z, symmetrize(U)


def _normalizable(bm: BackwardMixture) -> np.ndarray:
    """Components whose F is invertible (condition number below 1e12)."""
    n = bm.F.shape[1]
    if n == 1:
        return bm.F[:, 0, 0] > 0
    out = np.empty(len(bm), dtype=bool)
    for k in range(len(bm)):
        out[k] = np.linalg.cond(bm.F[k]) < 1e12
    return out


def _canonical_to_moment_batch(bm: BackwardMixture) -> ReducedBackward:
    n = bm.F.shape[1]
    if n == 1:
        f = bm.F[:, 0, 0]
        g = bm.G[:, 0]
        z = g / f
        log_delta = (
            np.log(bm.eps) + bm.log_lam + 0.5 * _LOG_2PI - 0.5 * np.log(f)
            - 0.5 * (bm.H - z * g)
        )
        return ReducedBackward(log_delta=log_delta, z=z[:, None], U=(1.0 / f)[:, None, None])
    U = np.linalg.inv(bm.F)
    z = np.einsum("kij,kj->ki", U, bm.G)
    log_delta = (
        np.log(bm.eps)
        + bm.log_lam
        + 0.5 * n * _LOG_2PI
        - 0.5 * np.linalg.slogdet(bm.F)[1]
        - 0.5 * (bm.H - np.einsum("ki,ki->k", z, bm.G))
    )
    return ReducedBackward(log_delta=log_delta, z=z, U=symmetrize(U))


def _select(bm: BackwardMixture, mask: np.ndarray) -> BackwardMixture:
    return BackwardMixture(eps=bm.eps[mask], log_lam=bm.log_lam[mask],
                           F=bm.F[mask], G=bm.G[mask], H=bm.H[mask])


def _concat(a: BackwardMixture, b: BackwardMixture) -> BackwardMixture:
    return BackwardMixture(
        eps=np.concatenate([a.eps, b.eps]),
        log_lam=np.concatenate([a.log_lam, b.log_lam]),
        F=np.concatenate([a.F, b.F]),
        G=np.concatenate([a.G, b.G]),
        H=np.concatenate([a.H, b.H]),
    )


def moment_to_canonical(red: ReducedBackward) -> BackwardMixture:
    n = red.z.shape[1]
    if n == 1:
        uval = red.U[:, 0, 0]
        f = 1.0 / uval
        g = f * red.z[:, 0]
        H = red.z[:, 0] * g
        log_lam = red.log_delta - 0.5 * _LOG_2PI - 0.5 * np.log(uval)
        return BackwardMixture(
            eps=np.ones(len(red)), log_lam=log_lam, F=f[:, None, None], G=g[:, None], H=H
        )
    F = np.linalg.inv(red.U)
    G = np.einsum("kij,kj->ki", F, red.z)
    H = np.einsum("ki,ki->k", red.z, G)
    log_lam = red.log_delta - 0.5 * n * _LOG_2PI - 0.5 * np.linalg.slogdet(red.U)[1]
    return BackwardMixture(eps=np.ones(len(red)), log_lam=log_lam, F=symmetrize(F), G=G, H=H)


def _reduce_backward(red: ReducedBackward, target: int) -> ReducedBackward:
    """Prune-and-merge in moment space, preserving the total mass."""
    if len(red) <= target:
        return red
    ref = red.log_delta.max()
    rel = np.exp(red.log_delta - ref)
    total = rel.sum()
    keep = rel >= 1e-12 * total
    rel, z, U = rel[keep], red.z[keep], red.U[keep]
    rel *= total / rel.sum()
    if rel.size > target:
        rel, z, U = _greedy_merge(rel.copy(), z.copy(), U.copy(), target)
    return ReducedBackward(log_delta=np.log(rel) + ref, z=z, U=U)


def backward_step(
    bm_next: BackwardMixture,
    u,
    model: LinearSSM,
    params: MixtureParams,
    s_max: int,
):
    """One full backward iteration at time t.

    Predicts p(y_{t+1:N} | x_t) from the components at t+1, multiplies by
    the measurement mixture of y_t, converts to moment form, reduces to at
    most ``s_max`` components, and returns (reduced moment mixture at t,
    canonical mixture at t for the next iteration).

    Components with singular F (possible for saturating edge levels in
    multivariate states) are not normalizable: they bypass the
    moment-space reduction and are carried verbatim into the next
    iteration; the fusion step consumes only the normalizable part.
    """
    pred = backward_predict(bm_next, u, model)
    meas = backward_measure(pred, params, u, model)
    ok = _normalizable(meas)
    if not np.all(ok):
        if not np.any(ok):
            raise ValueError("no normalizable backward components remain")
        red = _reduce_backward(_canonical_to_moment_batch(_select(meas, ok)), s_max)
        return red, _concat(moment_to_canonical(red), _select(meas, ~ok))
    red = _reduce_backward(_canonical_to_moment_batch(meas), s_max)
    return red, moment_to_canonical(red)


def gss_combine_step(predicted: GaussianMixture, red: ReducedBackward) -> GaussianMixture:
    """Fuse the forward predicted mixture at t|t-1 with the reduced
    backward mixture at t into the smoothing mixture at t|N."""
    n = predicted.n
    S, M = len(red), len(predicted)
    if n == 1:
        uval = red.U[:, 0, 0]
        sval = predicted.covs[:, 0, 0]
        uinv = 1.0 / uval
        sinv = 1.0 / sval
        L = uinv[:, None] + sinv[None, :]  # (S, M)
        rho = (uinv * red.z[:, 0])[:, None] + (sinv * predicted.means[:, 0])[None, :]
        mean_v = rho / L
        phi1 = uinv * red.z[:, 0] ** 2
        phi2 = sinv * predicted.means[:, 0] ** 2
        phi3 = rho * mean_v
        with np.errstate(divide="ignore"):
            log_w = (
                np.log(predicted.weights)[None, :]
                + red.log_delta[:, None]
                - 0.5 * (phi1[:, None] + phi2[None, :] - phi3)
                - 0.5 * _LOG_2PI
                - 0.5 * (np.log(L) + np.log(uval)[:, None] + np.log(sval)[None, :])
            ).reshape(S * M)
        weights = np.exp(log_w - logsumexp(log_w))
        return GaussianMixture(
            weights, mean_v.reshape(S * M, 1), (1.0 / L).reshape(S * M, 1, 1)
        )
    Uinv = np.linalg.inv(red.U)  # (S, n, n)
    Sinv = np.linalg.inv(predicted.covs)  # (M, n, n)
    L = Uinv[:, None] + Sinv[None, :]  # (S, M, n, n)
    try:
        Linv = np.linalg.inv(L)
    except np.linalg.LinAlgError:
        warnings.warn("singular fusion information matrix; ridge-regularizing")
        tr = np.trace(L, axis1=-2, axis2=-1)[..., None, None]
        Linv = np.linalg.inv(L + 1e-10 * tr * np.eye(n))
    rho = (
        np.einsum("sij,sj->si", Uinv, red.z)[:, None, :]
        + np.einsum("mij,mj->mi", Sinv, predicted.means)[None, :, :]
    )  # (S, M, n)
    means = np.einsum("smij,smj->smi", Linv, rho)
    phi1 = np.einsum("si,sij,sj->s", red.z, Uinv, red.z)
    phi2 = np.einsum("mi,mij,mj->m", predicted.means, Sinv, predicted.means)
    phi3 = np.einsum("smi,smi->sm", rho, means)
    with np.errstate(divide="ignore"):
        log_w = (
            np.log(predicted.weights)[None, :]
            + red.log_delta[:, None]
            - 0.5 * (phi1[:, None] + phi2[None, :] - phi3)
            - 0.5 * n * _LOG_2PI
            - 0.5 * (
                np.linalg.slogdet(L)[1]
                + np.linalg.slogdet(red.U)[1][:, None]
                + np.linalg.slogdet(predicted.covs)[1][None, :]
            )
        ).reshape(S * M)
    weights = np.exp(log_w - logsumexp(log_w))
    return GaussianMixture(weights, means.reshape(S * M, n), symmetrize(Linv.reshape(S * M, n, n)))


def gss_smoother(
    result: GsfResult,
    model: LinearSSM,
    u,
    s_max: int = 10,
) -> List[GaussianMixture]:
    """Gaussian-sum smoothing marginals for every time step.

    Anchors at the filtered mixture at t = N, runs the canonical backward
    recursion with per-step reduction, and combines against the forward
    predicted mixtures (whose entry at t = 1 is the state prior).
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    N = result.N
    smoothed: List[Optional[GaussianMixture]] = [None] * N
    smoothed[N - 1] = result.filtered[N - 1]
    bm = backward_init(result.params[N - 1], u[N - 1], model)
    for t in range(N - 2, -1, -1):
        red, bm = backward_step(bm, u[t], model, result.params[t], s_max)
        smoothed[t] = gss_combine_step(result.predicted[t], red)
    return smoothed
