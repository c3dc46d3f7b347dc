"""Monte Carlo comparison harness.

Runs every configured estimator variant on the same seeded trajectories,
collects per-run time-averaged squared state errors and wall times, and
ranks the variants by mean filtering MSE, mean smoothing MSE, and mean
smoothing execution time.

Timing convention: the filter time covers the filtering pass; the
smoothing time covers filter plus backward pass (the cost of producing
smoothed estimates from data).  Simulation and I/O are never timed.
Wall times are inherently machine- and load-dependent, so they live in a
separate output file and only their relative ranks are meaningful.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .gaussian_filters import (
    UkfConfig,
    ekf_filter,
    kf_filter,
    qkf_filter,
    rts_smoother,
    ukf_filter,
)
from .gsf import gsf_filter, gss_smoother
from .likelihood import SmoothQuantizerCfg, gl_rule
from .model import (
    LinearSSM,
    Quantizer,
    Trajectory,
    build_extended,
    simulate_trajectory,
)
from .particle import McmcConfig, pf_filter, ps_rejection
from .streams import substream

__all__ = [
    "VariantSpec",
    "ExperimentConfig",
    "RunRecord",
    "mse_per_run",
    "run_single",
    "run_monte_carlo",
    "RankReport",
    "rank_report",
]


@dataclass(frozen=True)
class VariantSpec:
    """One estimator variant: a Gaussian-family filter, the Gaussian-sum
    filter, or a particle filter with its MCMC move and resampling scheme."""

    algorithm: str
    move: Optional[str] = None  # mh | rwm
    resampling: Optional[str] = None  # sys | ml | mt | ls
    particles: Optional[int] = None

    def __post_init__(self):
        if self.algorithm not in ("kf", "qkf", "ekf", "ukf", "gsf", "pf"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "pf":
            if self.move not in ("mh", "rwm"):
                raise ValueError("particle variants need move 'mh' or 'rwm'")
            if self.resampling not in ("sys", "ml", "mt", "ls"):
                raise ValueError("particle variants need resampling sys|ml|mt|ls")
            if not self.particles or self.particles < 1:
                raise ValueError("particle variants need a positive particle count")

    @classmethod
    def parse(cls, name: str, particles: Optional[int] = None) -> "VariantSpec":
        """Parse CLI-style names: "kf", "gsf", "pf-rwm-sys" (+ particles)."""
        parts = name.lower().split("-")
        if parts[0] != "pf":
            if len(parts) != 1:
                raise ValueError(f"cannot parse variant name {name!r}")
            return cls(algorithm=parts[0])
        if len(parts) != 3:
            raise ValueError(f"cannot parse particle variant name {name!r}")
        return cls(algorithm="pf", move=parts[1], resampling=parts[2],
                   particles=particles or 1000)

    @property
    def filter_label(self) -> str:
        if self.algorithm == "pf":
            return f"PF-{self.move.upper()}-{self.resampling.upper()}({self.particles})"
        return self.algorithm.upper()

    @property
    def smoother_label(self) -> str:
        if self.algorithm == "pf":
            return f"PS-{self.move.upper()}-{self.resampling.upper()}({self.particles})"
        return {"kf": "KS", "qkf": "QKS", "ekf": "EKS", "ukf": "UKS", "gsf": "GSS"}[
            self.algorithm
        ]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a Monte Carlo battery needs; every field has a default
    except the model, quantizer, and variant list."""

    model: LinearSSM
    quantizer: Quantizer
    variants: Tuple[VariantSpec, ...]
    N: int = 200
    runs: int = 1000
    master_seed: int = 20211123
    gl_order: int = 10
    rho: Optional[float] = None  # arctan sharpness; None -> 0.001 * step
    eps: Optional[float] = None  # pseudo-measurement noise; None -> 1e-6 R
    ukf: UkfConfig = field(default_factory=UkfConfig)
    rwm_variance: float = 100.0
    mt_iters: int = 20
    gsf_max_components: int = 50
    gss_components: int = 10

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        object.__setattr__(self, "variants", tuple(self.variants))


@dataclass
class RunRecord:
    """Per-run, per-variant outcome; times in seconds."""

    run: int
    variant: str  # filter label
    smoother: str  # smoother label
    filter_mse: float
    smooth_mse: float
    filter_time: float
    smooth_time: float
    traj_hash: str = ""
    degenerate_steps: int = 0
    capped_draws: int = 0
    error: str = ""


def mse_per_run(estimates: np.ndarray, truth: np.ndarray) -> float:
    """Time-averaged squared state error over one run."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if estimates.shape != truth.shape:
        raise ValueError("estimate and truth lengths differ")
    return float(np.mean(np.sum((estimates - truth) ** 2, axis=1)))


def _traj_hash(traj: Trajectory) -> str:
    h = hashlib.sha256()
    for arr in (traj.x, traj.z, traj.y, traj.u):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


_GSF_WARM = False


def _ensure_gsf_warm(cfg: ExperimentConfig) -> None:
    # first gsf call in a process may load/compile the jitted merge loop;
    # keep that outside the timed spans
    global _GSF_WARM
    if _GSF_WARM:
        return
    rng = substream(0, "warmup")
    u = rng.standard_normal((3, cfg.model.m))
    traj = simulate_trajectory(cfg.model, cfg.quantizer, u, rng)
    res = gsf_filter(cfg.model, cfg.quantizer, u, traj.y, max_components=1)
    gss_smoother(res, cfg.model, u, s_max=1)
    _GSF_WARM = True


def _run_variant(v: VariantSpec, cfg: ExperimentConfig, ext, rule, traj, run_idx):
    model, spec = cfg.model, cfg.quantizer
    n = model.n
    u, y = traj.u, traj.y
    keys = (cfg.master_seed, run_idx)
    if v.algorithm == "gsf":
        _ensure_gsf_warm(cfg)

    t0 = time.perf_counter()
    if v.algorithm == "kf":
        seq = kf_filter(model, u, y)
        fmeans = seq.filtered_means
        t1 = time.perf_counter()
        sm, _ = rts_smoother(model, seq)
    elif v.algorithm == "qkf":
        seq = qkf_filter(model, spec, u, y)
        fmeans = seq.filtered_means
        t1 = time.perf_counter()
        sm, _ = rts_smoother(model, seq)
    elif v.algorithm == "ekf":
        if spec.kind != "ilq":
            raise ValueError("the EKF's arctan surrogate needs a uniform quantizer")
        scfg = SmoothQuantizerCfg(step=spec.step, rho=cfg.rho)
        seq = ekf_filter(ext, scfg, u, y)
        fmeans = seq.filtered_means[:, :n]
        t1 = time.perf_counter()
        sm = rts_smoother(ext, seq)[0][:, :n]
    elif v.algorithm == "ukf":
        seq = ukf_filter(ext, spec, cfg.ukf, u, y)
        fmeans = seq.filtered_means[:, :n]
        t1 = time.perf_counter()
        sm = rts_smoother(ext, seq)[0][:, :n]
    elif v.algorithm == "gsf":
        res = gsf_filter(model, spec, u, y, rule=rule,
                         max_components=cfg.gsf_max_components)
        fmeans = res.filtered_means
        t1 = time.perf_counter()
        mixtures = gss_smoother(res, model, u, s_max=cfg.gss_components)
        sm = np.stack([mix.mean() for mix in mixtures])
    else:
        mcmc = McmcConfig(kind=v.move, rwm_variance=cfg.rwm_variance)
        res = pf_filter(model, spec, u, y, v.particles, v.resampling, mcmc,
                        seed_keys=keys, mt_iters=cfg.mt_iters)
        fmeans = res.means
        t1 = time.perf_counter()
        smres = ps_rejection(res.sets, model, u, seed_keys=keys)
        sm = smres.means
    t2 = time.perf_counter()

    rec = RunRecord(
        run=run_idx,
        variant=v.filter_label,
        smoother=v.smoother_label,
        filter_mse=mse_per_run(fmeans, traj.x),
        smooth_mse=mse_per_run(sm, traj.x),
        filter_time=t1 - t0,
        smooth_time=t2 - t0,
    )
    if v.algorithm == "pf":
        rec.degenerate_steps = res.degenerate_steps
        rec.capped_draws = smres.capped_draws
    return rec


def run_single(cfg: ExperimentConfig, run_idx: int) -> List[RunRecord]:
    """Simulate one trajectory and run every variant on it."""
    rng = substream(cfg.master_seed, run_idx, "sim")
    u = rng.standard_normal((cfg.N, cfg.model.m))
    traj = simulate_trajectory(cfg.model, cfg.quantizer, u, rng)
    thash = _traj_hash(traj)

    needs_ext = any(v.algorithm in ("ekf", "ukf") for v in cfg.variants)
    ext = build_extended(cfg.model, cfg.eps) if needs_ext else None
    rule = gl_rule(cfg.gl_order)

    # touch the cheap code paths untimed so the first timed variant does
    # not absorb cache-cold overhead
    warm = kf_filter(cfg.model, traj.u[:3], traj.y[:3])
    rts_smoother(cfg.model, warm)

    records = []
    for v in cfg.variants:
        try:
            rec = _run_variant(v, cfg, ext, rule, traj, run_idx)
        except Exception as exc:  # per-variant failures stay in the record
            rec = RunRecord(
                run=run_idx, variant=v.filter_label, smoother=v.smoother_label,
                filter_mse=float("nan"), smooth_mse=float("nan"),
                filter_time=float("nan"), smooth_time=float("nan"),
                error=f"{type(exc).__name__}: {exc}",
            )
        rec.traj_hash = thash
        records.append(rec)
    return records


def run_monte_carlo(cfg: ExperimentConfig, threads: int = 1) -> List[RunRecord]:
    """Run the full battery; deterministic given the master seed and
    independent of ``threads`` (every run owns pre-keyed RNG streams)."""
    if threads <= 1:
        out: List[RunRecord] = []
        for r in range(cfg.runs):
            out.extend(run_single(cfg, r))
        return out
    results: List[Optional[List[RunRecord]]] = [None] * cfg.runs
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for r, recs in enumerate(pool.map(_run_single_star, [(cfg, r) for r in range(cfg.runs)],
                                          chunksize=max(1, cfg.runs // (8 * threads)))):
            results[r] = recs
    out = []
    for recs in results:
        out.extend(recs)
    return out


def _run_single_star(args) -> List[RunRecord]:
    return run_single(*args)


# ---------------------------------------------------------------------------
# reports


@dataclass
class RankReport:
    """Ranked means plus per-variant quartile data for boxplots."""

    filter_rank: List[Tuple[float, str]]  # (mean MSE, filter label)
    smooth_rank: List[Tuple[float, str]]  # (mean MSE, smoother label)
    time_rank: List[Tuple[float, str]]  # (mean seconds, smoother label)
    filter_box: List[Tuple[str, float, float, float, float, float]]
    smooth_box: List[Tuple[str, float, float, float, float, float]]
    time_box: List[Tuple[str, float, float, float, float, float]]

    def render_text(self) -> str:
        lines = []
        head = (
            f"{'Rank':>4} | {'Filter MSE':>12} {'Algorithm':<20} | "
            f"{'Smooth MSE':>12} {'Algorithm':<20} | {'Time [s]':>10} {'Algorithm':<20}"
        )
        lines.append(head)
        lines.append("-" * len(head))
        for i in range(len(self.filter_rank)):
            fm, fl = self.filter_rank[i]
            sm, sl = self.smooth_rank[i]
            tm, tl = self.time_rank[i]
            lines.append(
                f"{i + 1:>4} | {fm:>12.4g} {fl:<20} | "
                f"{sm:>12.4g} {sl:<20} | {tm:>10.4g} {tl:<20}"
            )
        return "\n".join(lines) + "\n"


def _ranked(pairs):
    # ascending mean; ties broken by name
    return sorted(pairs, key=lambda p: (p[0], p[1]))


def _quartiles(label, values):
    v = np.asarray(values, dtype=float)
    q0, q1, q2, q3, q4 = np.percentile(v, [0, 25, 50, 75, 100])
    return (label, q0, q1, q2, q3, q4)


def rank_report(records: Sequence[RunRecord]) -> RankReport:
    """Aggregate run records into the three rankings and boxplot data."""
    if not records:
        raise ValueError("no records to rank")
    by_filter = {}
    by_smoother = {}
    for rec in records:
        by_filter.setdefault(rec.variant, []).append(rec)
        by_smoother.setdefault(rec.smoother, []).append(rec)
    filter_rank = _ranked(
        [(float(np.mean([r.filter_mse for r in v])), k) for k, v in by_filter.items()]
    )
    smooth_rank = _ranked(
        [(float(np.mean([r.smooth_mse for r in v])), k) for k, v in by_smoother.items()]
    )
    time_rank = _ranked(
        [(float(np.mean([r.smooth_time for r in v])), k) for k, v in by_smoother.items()]
    )
    filter_box = [
        _quartiles(k, [r.filter_mse for r in v]) for k, v in sorted(by_filter.items())
    ]
    smooth_box = [
        _quartiles(k, [r.smooth_mse for r in v]) for k, v in sorted(by_smoother.items())
    ]
    time_box = [
        _quartiles(k, [r.smooth_time for r in v]) for k, v in sorted(by_smoother.items())
    ]
    return RankReport(
        filter_rank=filter_rank,
        smooth_rank=smooth_rank,
        time_rank=time_rank,
        filter_box=filter_box,
        smooth_box=smooth_box,
        time_box=time_box,
    )
