"""Command-line interface.

    mcvdloc simulate --config run.cfg --out out/
    mcvdloc fit      --config run.cfg --traces out/traces.csv --out out/
    mcvdloc localize --config run.cfg --estimates out/estimates.csv --out out/
    mcvdloc pipeline --config run.cfg --trials 50 --threads 8
    mcvdloc sweep    --config sweep.cfg
    mcvdloc probmap  --config map.cfg
    mcvdloc oracle   --config run.cfg

Failures print one ``error code=<code> message=<text>`` line on stderr and
exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .channel import FitParams, fit_model
from .config import ExperimentConfig, load_config, parse_pairs, step_for
from .distance import DistanceEstimate, context_for, estimate_all
from .errors import ConfigError, McvdError
from .experiments import (
    TrialOutcome,
    oracle_report,
    probability_map,
    run_sweep,
    sweep_summary,
    synthetic_traces,
)
from .localization import localize_from_estimates, location_error
from .scenario import validate_scenario
from .sim import run_trials

SWEEP_DEFAULT_TRIALS = 50

RAW_HEADER = [
    "axis", "value", "tn_x", "tn_y", "tn_z", "trial", "status", "delta_p",
    "p_hat_x", "p_hat_y", "p_hat_z", "objective", "sd_iterations", "lm_iterations", "used_receivers",
]
SUMMARY_HEADER = ["axis", "value", "tn_x", "tn_y", "tn_z", "trials", "failed", "mean", "median", "q25", "q75"]
PROBMAP_HEADER = ["x", "y", "z", "receiver", "probability", "valid"]
ORACLE_HEADER = ["check", "deviation", "tolerance", "passed"]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment config file")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--trials", type=int, default=None, help="override the number of trials")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")

    parser = argparse.ArgumentParser(prog="mcvdloc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate cumulative traces")
    p = sub.add_parser("fit", parents=[common], help="fit distances to a trace CSV")
    p.add_argument("--traces", type=Path, default=None, help="trace CSV (default: OUT/traces.csv)")
    p = sub.add_parser("localize", parents=[common], help="localise from an estimate CSV")
    p.add_argument("--estimates", type=Path, default=None, help="estimate CSV (default: OUT/estimates.csv)")
    p.add_argument("--subset", default=None, help="receivers used: an integer k or 'all'")
    p = sub.add_parser("pipeline", parents=[common], help="simulate, fit and localise")
    p.add_argument("--subset", default=None, help="receivers used: an integer k or 'all'")
    p.add_argument("--no-records", action="store_true", help="skip the per-trial result documents")
    sub.add_parser("sweep", parents=[common], help="run the configured parameter sweep")
    sub.add_parser("probmap", parents=[common], help="receiving probability over a grid")
    sub.add_parser("oracle", parents=[common], help="brute-force consistency checks")
    return parser


def _subset_arg(value):
    if value is None:
        return None
    if value == "all":
        return "all"
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"--subset must be an integer or 'all', got {value!r}") from None


def _config(args, default_trials: int | None = None) -> ExperimentConfig:
    cfg = load_config(args.config)
    trials = args.trials
    if trials is None and default_trials is not None:
        if "trials" not in {key for _, key, _ in parse_pairs(cfg.source_text)}:
            trials = default_trials
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    return cfg.with_overrides(seed=args.seed, trials=trials)


def _prov(cfg: ExperimentConfig, **extra) -> str:
    return io.provenance_line(cfg.config_hash, cfg.seed, **extra)


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    sc = validate_scenario(cfg.scenario)
    if cfg.mode == "synthetic":
        per_trial = [synthetic_traces(cfg, sc, cfg.plan, i, cfg.seed) for i in range(cfg.trials)]
        print(f"synthetic traces trials={cfg.trials} receivers={sc.K}")
    else:
        ens = run_trials(sc, cfg.plan, step_for(cfg, sc), cfg.seed, cfg.trials,
                         coarse=cfg.coarse, policy=cfg.absorption, threads=args.threads)
        per_trial = ens.traces
        n = ens.events[0].n_steps
        ok = True
        for i, (ev, traces) in enumerate(zip(ens.events, per_trial)):
            absorbed = int(sum(tr.final for tr in traces))
            alive = ev.alive_at(n)
            ok &= absorbed + alive == sc.molecule_budget
            print(f"trial={i} Q={sc.molecule_budget} absorbed={absorbed} alive={alive} "
                  f"conserved={str(absorbed + alive == sc.molecule_budget).lower()}")
        print(f"conservation {'ok' if ok else 'VIOLATED'} trials={cfg.trials}")
    path = io.write_traces(args.out / "traces.csv", per_trial, _prov(cfg))
    print(f"wrote {path}")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    sc = validate_scenario(cfg.scenario)
    src = args.traces or args.out / "traces.csv"
    per_trial = io.read_traces(src)
    rows, failed = [], 0
    for i, traces in enumerate(per_trial):
        _check_receivers(traces, sc)
        plan = cfg.plan
        for est in estimate_all(traces, sc, plan):
            if est is None:
                failed += 1
                continue
            rows.append((i, est.receiver_id, est.a, est.d, est.sse, est.r_square, est.iterations))
    path = io.write_csv(args.out / "estimates.csv", io.ESTIMATE_HEADER, rows, _prov(cfg))
    print(f"fitted={len(rows)} failed={failed}")
    print(f"wrote {path}")
    return 0


def _check_receivers(traces, sc) -> None:
    ids = [tr.receiver_id for tr in traces]
    if ids != [rx.id for rx in sc.receivers]:
        raise ConfigError(f"trace receivers {ids} do not match the config receivers")


def _estimates_from_csv(path, sc, cfg) -> dict[int, list[DistanceEstimate | None]]:
    """Rebuild estimates per trial. The CSV has no counts, so receiver
    ranking uses the fitted model's value at the last sample instead."""
    out: dict[int, dict[int, DistanceEstimate]] = {}
    for row in io.read_csv(path):
        rid = int(row["receiver"])
        k = sc.receiver_index(rid)
        ctx = context_for(sc, cfg.plan, k)
        a, d = float(row["a"]), float(row["d"])
        final = float(fit_model(FitParams(a, d), ctx, ctx.sample_times[-1]))
        est = DistanceEstimate(rid, a, d, float(row["sse"]), float(row["r_square"]),
                               int(row["iterations"]), True, final)
        out.setdefault(int(row["trial"]), {})[rid] = est
    return {t: [m.get(rx.id) for rx in sc.receivers] for t, m in sorted(out.items())}


def cmd_localize(args) -> int:
    cfg = _config(args)
    sc = validate_scenario(cfg.scenario)
    subset = _subset_arg(args.subset) if args.subset is not None else cfg.subset
    src = args.estimates or args.out / "estimates.csv"
    outcomes = []
    for trial, est in _estimates_from_csv(src, sc, cfg).items():
        try:
            res = localize_from_estimates(est, sc, subset)
            outcomes.append(TrialOutcome(trial, "ok", res, location_error(res.p_hat, sc.transmitter), est))
        except McvdError as exc:
            outcomes.append(TrialOutcome(trial, exc.code, estimates=est, message=str(exc)))
    _write_records(args.out, cfg, outcomes, prefix="")
    _report(args.out, cfg, [("none", "-", sc.transmitter, o) for o in outcomes], "localize")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    if args.subset is not None:
        from dataclasses import replace

        cfg = replace(cfg, subset=_subset_arg(args.subset))
    rows = run_sweep(cfg, axis="none", values=["-"], threads=args.threads)
    if not args.no_records:
        positions = cfg.tn_positions()
        for j, tn in enumerate(positions):
            outs = [r.outcome for r in rows if tuple(r.tn) == tuple(tn)]
            _write_records(args.out, cfg, outs, prefix=f"tn{j:03d}_" if len(positions) > 1 else "")
    _report(args.out, cfg, [(r.axis, r.value, r.tn, r.outcome) for r in rows], "pipeline")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args, default_trials=SWEEP_DEFAULT_TRIALS)
    if cfg.sweep_axis is None:
        raise ConfigError("sweep needs a 'sweep = <axis> <values...>' entry in the config")
    rows = run_sweep(cfg, threads=args.threads)
    _report(args.out, cfg, [(r.axis, r.value, r.tn, r.outcome) for r in rows], "sweep")
    return 0


def cmd_probmap(args) -> int:
    cfg = _config(args)
    cells = probability_map(cfg, threads=args.threads)
    rows = [(*c.position, c.receiver_id, c.probability, int(c.valid)) for c in cells]
    path = io.write_csv(args.out / "probmap.csv", PROBMAP_HEADER, rows, _prov(cfg))
    skipped = len({c.position for c in cells if not c.valid})
    print(f"grid_points={len({c.position for c in cells})} skipped={skipped}")
    print(f"wrote {path}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _config(args)
    checks = oracle_report(cfg)
    for c in checks:
        print(f"{c.name}: deviation={c.deviation:.3e} tolerance={c.tolerance:.1e} "
              f"{'PASS' if c.passed else 'FAIL'} {c.detail}".rstrip())
    rows = [(c.name, c.deviation, c.tolerance, int(c.passed)) for c in checks]
    path = io.write_csv(args.out / "oracle.csv", ORACLE_HEADER, rows, _prov(cfg))
    print(f"wrote {path}")
    return 0


# --- output helpers ---------------------------------------------------------------

def _write_records(out: Path, cfg, outcomes, prefix: str) -> None:
    for o in outcomes:
        items: list[tuple[str, object]] = [("trial", o.trial), ("status", o.status)]
        if o.result is not None:
            r = o.result
            items += [
                ("p_init", list(r.p_init)),
                ("p_hat", list(r.p_hat)),
                ("objective", r.objective),
                ("sd_iterations", r.sd_iterations),
                ("used_receivers", r.used_receivers),
                ("delta_p", o.delta_p),
            ]
        elif o.message:
            items.append(("message", o.message))
        for est in o.estimates or []:
            if est is None:
                continue
            for name in ("a", "d", "sse", "r_square"):
                items.append((f"receiver_{est.receiver_id}.{name}", getattr(est, name)))
        io.write_kv(out / "results" / f"{prefix}trial_{o.trial:04d}.kv", items, _prov(cfg))


def raw_row(axis, value, tn, o: TrialOutcome) -> tuple:
    nan = float("nan")
    if o.result is None:
        return (axis, value, *map(float, tn), o.trial, o.status, nan, nan, nan, nan, nan, "", "", "")
    r = o.result
    return (axis, value, *map(float, tn), o.trial, o.status, o.delta_p, *map(float, r.p_hat),
            r.objective, r.sd_iterations, r.lm_iterations, " ".join(map(str, r.used_receivers)))


def summary_rows(raw: list[tuple]) -> list[tuple]:
    """One row per (axis value, TN position), in first-seen order."""
    groups: dict[tuple, list[tuple]] = {}
    for row in raw:
        groups.setdefault(row[:5], []).append(row)
    out = []
    for key, rows in groups.items():
        ok = [float(r[7]) for r in rows if r[6] == "ok"]
        stats = _stats(ok)
        out.append((*key, len(rows), len(rows) - len(ok), *stats))
    return out


def _stats(values: list[float]) -> tuple[float, float, float, float]:
    if not values:
        return (float("nan"),) * 4
    v = np.asarray(values, dtype=float)
    return (float(np.mean(v)), float(np.median(v)), float(np.quantile(v, 0.25)), float(np.quantile(v, 0.75)))


def _report(out: Path, cfg, rows, name: str) -> None:
    raw = [raw_row(*r) for r in rows]
    prov = _prov(cfg)
    p1 = io.write_csv(out / f"{name}_raw.csv", RAW_HEADER, raw, prov)
    summary = summary_rows(raw)
    p2 = io.write_csv(out / f"{name}_summary.csv", SUMMARY_HEADER, summary, prov)
    for s in summary:
        print(f"{s[0]}={s[1]} tn=({s[2]:g},{s[3]:g},{s[4]:g}) trials={s[5]} failed={s[6]} "
              f"mean={s[7]:.4g} median={s[8]:.4g}")
    failures = sorted({o.status for *_, o in rows if o.status != "ok"})
    if failures:
        print("failure codes: " + " ".join(failures))
    print(f"wrote {p1}")
    print(f"wrote {p2}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "localize": cmd_localize,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
    "probmap": cmd_probmap,
    "oracle": cmd_oracle,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except McvdError as exc:
        print(f"error code={exc.code} message={str(exc)!r}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error code=io_error message={str(exc)!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
