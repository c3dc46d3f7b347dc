"""State-space model with quantized scalar output, and trajectory simulation.

Model:
    x_{t+1} = A x_t + B u_t + w_t,      w_t ~ N(0, Q)
    z_t     = C x_t + D u_t + v_t,      v_t ~ N(0, R)
    y_t     = quantize(z_t)

with x_1 ~ N(mu1, P1).  The quantizer maps the real line onto a countable
set of output levels: either infinitely many uniform levels (ILQ, step
``delta``) or finitely many levels with saturating edge regions (FLQ).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

__all__ = [
    "LinearSSM",
    "Quantizer",
    "ExtendedSSM",
    "Trajectory",
    "Gaussian",
    "NumericalError",
    "quantize",
    "region_bounds",
    "build_extended",
    "simulate_trajectory",
    "symmetrize",
    "psd_sqrt",
]


class NumericalError(RuntimeError):
    """Raised when an estimator hits a numerically invalid intermediate."""


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose to suppress asymmetry drift."""
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix, negative eigenvalues clamped to 0."""
    vals, vecs = np.linalg.eigh(symmetrize(mat))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _as_matrix(a, rows: int, cols: int, name: str) -> np.ndarray:
    out = np.atleast_2d(np.asarray(a, dtype=float))
    if out.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {out.shape}")
    out.flags.writeable = False
    return out


def _as_vector(a, size: int, name: str) -> np.ndarray:
    out = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
    if out.shape != (size,):
        raise ValueError(f"{name} must have {size} entries, got shape {out.shape}")
    out.flags.writeable = False
    return out


def _check_psd(mat: np.ndarray, name: str, tol: float = 1e-10) -> None:
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(symmetrize(mat)).min() < -tol:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class LinearSSM:
    """Linear Gaussian state-space model with scalar output.

    Scalars are accepted for any field and promoted to the right shape,
    so the one-dimensional benchmark model can be written as
    ``LinearSSM(A=0.9, B=1.2, C=2.2, D=0.75, Q=1.0, R=0.5, mu1=1.0, P1=0.01)``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray  # output row, stored as a length-n vector
    D: np.ndarray  # feedthrough row, stored as a length-m vector
    Q: np.ndarray
    R: float
    mu1: np.ndarray
    P1: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(n, -1)
        m = B.shape[1]
        object.__setattr__(self, "A", _as_matrix(A, n, n, "A"))
        object.__setattr__(self, "B", _as_matrix(B, n, m, "B"))
        object.__setattr__(self, "C", _as_vector(self.C, n, "C"))
        object.__setattr__(self, "D", _as_vector(self.D, m, "D"))
        object.__setattr__(self, "Q", _as_matrix(self.Q, n, n, "Q"))
        object.__setattr__(self, "mu1", _as_vector(self.mu1, n, "mu1"))
        object.__setattr__(self, "P1", _as_matrix(self.P1, n, n, "P1"))
        object.__setattr__(self, "R", float(self.R))
        if self.R <= 0:
            raise ValueError("R must be a positive scalar variance")
        _check_psd(self.Q, "Q")
        _check_psd(self.P1, "P1")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def output_offset(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """C x + D u for a single state or a batch of states (last axis = n)."""
        return np.asarray(x) @ self.C + float(np.asarray(u).ravel() @ self.D)


@dataclass(frozen=True)
class Quantizer:
    """Output quantizer, either uniform with infinitely many levels or finite.

    ILQ ("infinite-level"): levels ``k * step`` with regions
    ``[level - step/2, level + step/2)``; quantization rounds half away
    from zero, matching the benchmark's rounding convention.

    FLQ ("finite-level"): explicit strictly increasing ``thresholds``
    q_1 < ... < q_{L-1} and ``levels`` psi_1 .. psi_L; the edge regions
    (-inf, q_1) and [q_{L-1}, inf) saturate.
    """

    kind: str
    step: Optional[float] = None
    thresholds: Optional[np.ndarray] = None
    levels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "ilq":
            if self.step is None or self.step <= 0:
                raise ValueError("ILQ quantizer requires step > 0")
            object.__setattr__(self, "step", float(self.step))
        elif self.kind == "flq":
            thr = np.asarray(self.thresholds, dtype=float).ravel()
            lev = np.asarray(self.levels, dtype=float).ravel()
            if thr.size < 1 or lev.size != thr.size + 1:
                raise ValueError("FLQ needs L levels and L-1 thresholds")
            if np.any(np.diff(thr) <= 0):
                raise ValueError("FLQ thresholds must be strictly increasing")
            thr.flags.writeable = False
            lev.flags.writeable = False
            object.__setattr__(self, "thresholds", thr)
            object.__setattr__(self, "levels", lev)
        else:
            raise ValueError(f"unknown quantizer kind {self.kind!r}")

    @classmethod
    def uniform(cls, step: float) -> "Quantizer":
        return cls(kind="ilq", step=step)

    @classmethod
    def finite(cls, thresholds, levels) -> "Quantizer":
        return cls(kind="flq", thresholds=thresholds, levels=levels)


def quantize(z, spec: Quantizer):
    """Map z (scalar or array) to its quantizer output level."""
    z = np.asarray(z, dtype=float)
    if spec.kind == "ilq":
        r = z / spec.step
        # round half away from zero (np.round would round half to even)
        k = np.sign(r) * np.floor(np.abs(r) + 0.5)
        out = spec.step * k
    else:
        idx = np.searchsorted(spec.thresholds, z, side="right")
        out = spec.levels[idx]
    return out if out.ndim else float(out)


def _ilq_index(y, step: float):
    k = np.asarray(y, dtype=float) / step
    k_round = np.round(k)
    if np.any(np.abs(k - k_round) > 1e-9 * np.maximum(1.0, np.abs(k))):
        raise ValueError("level not in output set")
    return k_round


def _flq_index(y, spec: Quantizer):
    y = np.asarray(y, dtype=float)
    idx = np.argmin(np.abs(spec.levels[:, None] - y.ravel()[None, :]), axis=0)
    if not np.allclose(spec.levels[idx], y.ravel(), rtol=1e-12, atol=1e-12):
        raise ValueError("level not in output set")
    return idx.reshape(y.shape) if y.ndim else int(idx[0])


def region_bounds(y, spec: Quantizer, offset=0.0):
    """Integration limits (a, b) of the output-noise integral for level y.

    Returns the endpoints of the quantizer region of ``y`` shifted by
    ``-offset`` (offset = C x + D u).  FLQ edge levels give -inf / +inf on
    the open side.  ``offset`` may be an array; the bounds broadcast.
    """
    offset = np.asarray(offset, dtype=float)
    if spec.kind == "ilq":
        k = _ilq_index(y, spec.step)
        y = k * spec.step
        a = y - 0.5 * spec.step - offset
        b = y + 0.5 * spec.step - offset
    else:
        i = _flq_index(y, spec)
        if np.ndim(i):
            raise ValueError("region_bounds expects a single FLQ level")
        lo = -np.inf if i == 0 else spec.thresholds[i - 1]
        hi = np.inf if i == len(spec.levels) - 1 else spec.thresholds[i]
        a = lo - offset
        b = hi - offset
    if np.ndim(a):
        return a, b
    return float(a), float(b)


@dataclass(frozen=True)
class ExtendedSSM:
    """State-space model extended with the noiseless output as an extra state.

    The extended state is [x_t; z_t]; the quantizer applies to the last
    component, observed through a small pseudo-measurement noise ``eps``.
    The extended input stacks [u_t; u_{t+1}] (zero-padded at the horizon).
    """

    Ae: np.ndarray
    Be: np.ndarray
    Ce: np.ndarray
    Qe: np.ndarray
    mu1e: np.ndarray
    P1e: np.ndarray
    eps: float

    @property
    def n(self) -> int:
        return self.Ae.shape[0]


def build_extended(model: LinearSSM, eps: Optional[float] = None) -> ExtendedSSM:
    """Assemble the extended-state model from ``model``.

    Args:
        model: the original state-space model.
        eps: pseudo-measurement noise variance; defaults to 1e-6 * R, small
            enough to be negligible while keeping gains finite.
    """
    if eps is None:
        eps = 1e-6 * model.R
    if eps <= 0:
        raise ValueError("eps must be positive")
    n, m = model.n, model.m
    A, B, C, D, Q = model.A, model.B, model.C, model.D, model.Q

    Ae = np.zeros((n + 1, n + 1))
    Ae[:n, :n] = A
    Ae[n, :n] = C @ A

    Be = np.zeros((n + 1, 2 * m))
    Be[:n, :m] = B
    Be[n, :m] = C @ B
    Be[n, m:] = D

    Ce = np.zeros(n + 1)
    Ce[n] = 1.0

    Qe = np.zeros((n + 1, n + 1))
    Qe[:n, :n] = Q
    Qe[:n, n] = Q @ C
    Qe[n, :n] = C @ Q
    Qe[n, n] = C @ Q @ C + model.R

    mu1e = np.concatenate([model.mu1, [0.0]])
    P1e = np.zeros((n + 1, n + 1))
    P1e[:n, :n] = model.P1
    P1e[n, n] = 1.0

    for arr in (Ae, Be, Ce, Qe, mu1e, P1e):
        arr.flags.writeable = False
    return ExtendedSSM(Ae=Ae, Be=Be, Ce=Ce, Qe=Qe, mu1e=mu1e, P1e=P1e, eps=float(eps))


@dataclass(frozen=True)
class Trajectory:
    """One simulated realization: states, outputs, and the applied input."""

    x: np.ndarray  # (N, n)
    z: np.ndarray  # (N,)
    y: np.ndarray  # (N,)
    u: np.ndarray  # (N, m)

    @property
    def N(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class Gaussian:
    """Gaussian with defensively symmetrized covariance."""

    mean: np.ndarray
    cov: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = symmetrize(np.atleast_2d(np.asarray(self.cov, dtype=float)))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def simulate_trajectory(
    model: LinearSSM,
    spec: Quantizer,
    u: np.ndarray,
    seed: Union[int, np.random.Generator],
) -> Trajectory:
    """Simulate the model forward and quantize the output.

    Args:
        model: system to simulate.
        spec: output quantizer.
        u: inputs, shape (N, m) or (N,) for single-input models.
        seed: integer seed or a numpy Generator; the draw order is fixed
            (x1, process noise, output noise), so equal seeds give equal
            trajectories.
    """
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    N = u.shape[0]
    if N < 1:
        raise ValueError("need at least one time step")
    if u.shape[1] != model.m:
        raise ValueError(f"u must have {model.m} columns")

    n = model.n
    x = np.empty((N, n))
    x[0] = model.mu1 + psd_sqrt(model.P1) @ rng.standard_normal(n)
    w = rng.standard_normal((N - 1, n)) @ psd_sqrt(model.Q).T
    v = np.sqrt(model.R) * rng.standard_normal(N)
    for t in range(N - 1):
        x[t + 1] = model.A @ x[t] + model.B @ u[t] + w[t]
    z = x @ model.C + u @ model.D + v
    y = quantize(z, spec)
    for arr in (x, z, y, u):
        arr.flags.writeable = False
    return Trajectory(x=x, z=z, y=y, u=u)
