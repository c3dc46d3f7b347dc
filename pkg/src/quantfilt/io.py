"""CSV/text output helpers.

All writers are atomic (write to a temp file in the target directory,
then rename), so a failing command never leaves partial output behind.
Floats are serialized with ``repr``: shortest round-trip strings, so
identical numbers always produce identical bytes.
"""

from __future__ import annotations

import csv
import os
import tempfile
from typing import Iterable, List, Sequence

import numpy as np

from .gsf import GaussianMixture
from .model import Trajectory
from .particle import ParticleSet

__all__ = [
    "write_text_atomic",
    "write_csv_atomic",
    "trajectory_to_csv",
    "mixtures_to_csv",
    "particles_to_csv",
    "estimates_to_csv",
]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_text_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_to_csv(traj: Trajectory, path: str) -> None:
    """Columns: t, x_1..x_n, z, y, u_1..u_m (t is 1-based)."""
    n = traj.x.shape[1]
    m = traj.u.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + ["z", "y"]
        + [f"u{i + 1}" for i in range(m)]
    )
    rows = (
        [t + 1, *traj.x[t], traj.z[t], traj.y[t], *traj.u[t]]
        for t in range(traj.N)
    )
    write_csv_atomic(path, header, rows)


def mixtures_to_csv(mixtures: List[GaussianMixture], path: str) -> None:
    """Columns: t, component, weight, mean_1.., cov_11.. (row-major cov)."""
    n = mixtures[0].n
    header = (
        ["t", "component", "weight"]
        + [f"mean{i + 1}" for i in range(n)]
        + [f"cov{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    )
    rows = (
        [t + 1, k, mix.weights[k], *mix.means[k], *mix.covs[k].ravel()]
        for t, mix in enumerate(mixtures)
        for k in range(len(mix))
    )
    write_csv_atomic(path, header, rows)


def particles_to_csv(sets: List[ParticleSet], path: str) -> None:
    """Columns: t, index, weight, state_1.. ."""
    n = sets[0].particles.shape[1]
    header = ["t", "index", "weight"] + [f"state{i + 1}" for i in range(n)]
    rows = (
        [t + 1, i, ps.weights[i], *ps.particles[i]]
        for t, ps in enumerate(sets)
        for i in range(ps.M)
    )
    write_csv_atomic(path, header, rows)


def estimates_to_csv(means: np.ndarray, covs: np.ndarray, path: str) -> None:
    """Columns: t, mean per state dimension, variance per state dimension."""
    n = means.shape[1]
    header = ["t"] + [f"mean{i + 1}" for i in range(n)] + [f"var{i + 1}" for i in range(n)]
    rows = ([t + 1, *means[t], *np.diag(covs[t])] for t in range(means.shape[0]))
    write_csv_atomic(path, header, rows)
