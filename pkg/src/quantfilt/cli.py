"""Command-line interface.

Verbs:
    simulate  write one simulated trajectory as CSV
    filter    run one variant's filter on a simulated dataset
    smooth    run one variant's filter + smoother on a simulated dataset
    bench     run the full Monte Carlo battery
    report    recompute rankings from an existing results.csv

All diagnostics go to stderr; data goes to files in the output directory
(atomically, so failures never leave partial files).  Exit status: 0 on
success, 1 on configuration/usage errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import List, Optional

import numpy as np

from .bench import (
    ExperimentConfig,
    RunRecord,
    VariantSpec,
    rank_report,
    run_monte_carlo,
)
from .config import ConfigError, load_config, render_config
from .gaussian_filters import ekf_filter, kf_filter, qkf_filter, rts_smoother, ukf_filter
from .gsf import gsf_filter, gss_smoother
from .io import (
    estimates_to_csv,
    mixtures_to_csv,
    particles_to_csv,
    trajectory_to_csv,
    write_csv_atomic,
    write_text_atomic,
)
from .likelihood import SmoothQuantizerCfg, gl_rule
from .model import NumericalError, build_extended, simulate_trajectory
from .particle import McmcConfig, pf_filter, ps_rejection
from .streams import substream

__all__ = ["main", "run_cli"]


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    for cast in (int, float):
        try:
            return key, cast(raw)
        except ValueError:
            pass
    if raw in ("true", "false"):
        return key, raw == "true"
    return key, raw


def _build_parser() -> _Parser:
    p = _Parser(prog="quantfilt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in ("simulate", "filter", "smooth", "bench", "report"):
        sp = sub.add_parser(verb)
        sp.add_argument("--out", default="out", help="output directory")
        if verb != "report":
            sp.add_argument("--config", required=True,
                            help="TOML config file or preset name (e.g. paper_iv)")
            sp.add_argument("--seed", type=int, default=None,
                            help="override the master seed")
            sp.add_argument("--set", dest="overrides", action="append", default=[],
                            metavar="SECTION.KEY=VALUE", help="override a config key")
        if verb == "bench":
            sp.add_argument("--runs", type=int, default=None, help="override run count")
            sp.add_argument("--threads", type=int, default=1, help="worker process count")
        if verb in ("filter", "smooth"):
            sp.add_argument("--variant", required=True,
                            help="variant name, e.g. kf, gsf, pf-rwm-sys")
            sp.add_argument("--particles", type=int, default=None)
    return p


def _load(args) -> ExperimentConfig:
    overrides = dict(_parse_override(s) for s in args.overrides)
    if args.seed is not None:
        overrides["bench.master_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["bench.runs"] = args.runs
    return load_config(args.config, overrides)


def _echo_config(cfg: ExperimentConfig, outdir: str) -> None:
    write_text_atomic(os.path.join(outdir, "effective_config.toml"), render_config(cfg))


def _simulate(cfg: ExperimentConfig):
    rng = substream(cfg.master_seed, 0, "sim")
    u = rng.standard_normal((cfg.N, cfg.model.m))
    return simulate_trajectory(cfg.model, cfg.quantizer, u, rng)


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    traj = _simulate(cfg)
    trajectory_to_csv(traj, os.path.join(args.out, "trajectory.csv"))
    _echo_config(cfg, args.out)
    return 0


def _run_one_variant(cfg: ExperimentConfig, variant: VariantSpec, traj, smooth: bool, outdir: str):
    model, spec = cfg.model, cfg.quantizer
    n = model.n
    u, y = traj.u, traj.y
    snapshots = {}
    if variant.algorithm in ("kf", "qkf"):
        seq = (
            kf_filter(model, u, y)
            if variant.algorithm == "kf"
            else qkf_filter(model, spec, u, y)
        )
        means, covs = seq.filtered_means, seq.filtered_covs
        if smooth:
            means, covs = rts_smoother(model, seq)
    elif variant.algorithm in ("ekf", "ukf"):
        ext = build_extended(model, cfg.eps)
        if variant.algorithm == "ekf":
            if spec.kind != "ilq":
                raise ConfigError("the EKF's arctan surrogate needs a uniform quantizer")
            seq = ekf_filter(ext, SmoothQuantizerCfg(step=spec.step, rho=cfg.rho), u, y)
        else:
            seq = ukf_filter(ext, spec, cfg.ukf, u, y)
        means, covs = seq.filtered_means, seq.filtered_covs
        if smooth:
            means, covs = rts_smoother(ext, seq)
        means, covs = means[:, :n], covs[:, :n, :n]
    elif variant.algorithm == "gsf":
        res = gsf_filter(model, spec, u, y, rule=gl_rule(cfg.gl_order),
                         max_components=cfg.gsf_max_components)
        mixtures = res.filtered
        if smooth:
            mixtures = gss_smoother(res, model, u, s_max=cfg.gss_components)
        means = np.stack([mix.mean() for mix in mixtures])
        covs = np.stack([mix.cov() for mix in mixtures])
        snapshots["mixtures.csv"] = mixtures
    else:
        mcmc = McmcConfig(kind=variant.move, rwm_variance=cfg.rwm_variance)
        res = pf_filter(model, spec, u, y, variant.particles, variant.resampling,
                        mcmc, seed_keys=(cfg.master_seed, 0), mt_iters=cfg.mt_iters)
        sets, means, covs = res.sets, res.means, res.covs
        if smooth:
            sm = ps_rejection(res.sets, model, u, seed_keys=(cfg.master_seed, 0))
            sets, means, covs = sm.sets, sm.means, sm.covs
        snapshots["particles.csv"] = sets

    estimates_to_csv(means, covs, os.path.join(outdir, "estimates.csv"))
    for fname, payload in snapshots.items():
        if fname == "mixtures.csv":
            mixtures_to_csv(payload, os.path.join(outdir, fname))
        else:
            particles_to_csv(payload, os.path.join(outdir, fname))


def _cmd_filter(args, smooth: bool) -> int:
    cfg = _load(args)
    variant = VariantSpec.parse(args.variant, particles=args.particles)
    traj = _simulate(cfg)
    _run_one_variant(cfg, variant, traj, smooth, args.out)
    _echo_config(cfg, args.out)
    return 0


_RESULT_HEADER = ["run", "variant", "filter_mse", "smooth_mse"]
_TIMING_HEADER = ["run", "variant", "filter_time_s", "smooth_time_s"]
_META_HEADER = ["run", "variant", "traj_hash", "degenerate_steps", "capped_draws", "error"]


def _write_report_files(records: List[RunRecord], outdir: str) -> None:
    rep = rank_report(records)
    write_csv_atomic(os.path.join(outdir, "rank_filter.csv"),
                     ["rank", "mse", "variant"],
                     [[i + 1, v, k] for i, (v, k) in enumerate(rep.filter_rank)])
    write_csv_atomic(os.path.join(outdir, "rank_smooth.csv"),
                     ["rank", "mse", "variant"],
                     [[i + 1, v, k] for i, (v, k) in enumerate(rep.smooth_rank)])
    write_csv_atomic(os.path.join(outdir, "rank_time.csv"),
                     ["rank", "time_s", "variant"],
                     [[i + 1, v, k] for i, (v, k) in enumerate(rep.time_rank)])
    box_header = ["variant", "min", "q1", "median", "q3", "max"]
    write_csv_atomic(os.path.join(outdir, "boxplot_filter.csv"), box_header, rep.filter_box)
    write_csv_atomic(os.path.join(outdir, "boxplot_smooth.csv"), box_header, rep.smooth_box)
    write_csv_atomic(os.path.join(outdir, "boxplot_time.csv"), box_header, rep.time_box)
    write_text_atomic(os.path.join(outdir, "summary.txt"), rep.render_text())


def _cmd_bench(args) -> int:
    cfg = _load(args)
    records = run_monte_carlo(cfg, threads=args.threads)
    out = args.out
    write_csv_atomic(
        os.path.join(out, "results.csv"), _RESULT_HEADER,
        [[r.run, r.variant, r.filter_mse, r.smooth_mse] for r in records],
    )
    write_csv_atomic(
        os.path.join(out, "timings.csv"), _TIMING_HEADER,
        [[r.run, r.variant, r.filter_time, r.smooth_time] for r in records],
    )
    write_csv_atomic(
        os.path.join(out, "run_meta.csv"), _META_HEADER,
        [[r.run, r.variant, r.traj_hash, r.degenerate_steps, r.capped_draws, r.error]
         for r in records],
    )
    _write_report_files(records, out)
    _echo_config(cfg, out)
    return 0


def _smoother_label(filter_label: str) -> str:
    fixed = {"KF": "KS", "QKF": "QKS", "EKF": "EKS", "UKF": "UKS", "GSF": "GSS"}
    if filter_label in fixed:
        return fixed[filter_label]
    if filter_label.startswith("PF-"):
        return "PS-" + filter_label[3:]
    return filter_label


def _cmd_report(args) -> int:
    res_path = os.path.join(args.out, "results.csv")
    if not os.path.exists(res_path):
        print(f"quantfilt: no results.csv in {args.out}", file=sys.stderr)
        return 1
    timings = {}
    tim_path = os.path.join(args.out, "timings.csv")
    if os.path.exists(tim_path):
        with open(tim_path, newline="") as fh:
            for row in csv.DictReader(fh):
                timings[(int(row["run"]), row["variant"])] = (
                    float(row["filter_time_s"]), float(row["smooth_time_s"]),
                )
    records = []
    with open(res_path, newline="") as fh:
        for row in csv.DictReader(fh):
            run, variant = int(row["run"]), row["variant"]
            ft, st = timings.get((run, variant), (float("nan"), float("nan")))
            records.append(RunRecord(
                run=run, variant=variant, smoother=_smoother_label(variant),
                filter_mse=float(row["filter_mse"]), smooth_mse=float(row["smooth_mse"]),
                filter_time=ft, smooth_time=st,
            ))
    if not records:
        print("quantfilt: results.csv is empty", file=sys.stderr)
        return 1
    _write_report_files(records, args.out)
    return 0


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and dispatch; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.verb == "simulate":
            return _cmd_simulate(args)
        if args.verb == "filter":
            return _cmd_filter(args, smooth=False)
        if args.verb == "smooth":
            return _cmd_filter(args, smooth=True)
        if args.verb == "bench":
            return _cmd_bench(args)
        return _cmd_report(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"quantfilt: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"quantfilt: numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run_cli())
