"""Command-line entry point: ``normkit <command> [flags]``.

Exit status is 0 on success, 1 when a check fails or a run diverges, and 2
on a usage error.  Human-readable summaries go to stdout; machine artifacts
are written only to ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Optional

import numpy as np

from . import bench, verify
from .harness import stats as stats_mod
from .harness.sweep import SWEEP_P, loss_band, p_sweep, robustness_probe, sweep_table
from .harness.tasks import TaskSpec, sample_batch
from .harness.train import ConfigError, RunConfig, build_model, median_final_loss, train, train_seeds
from .nets.checkpoint import CheckpointError, load_checkpoint, restore, save_checkpoint
from .normalizers import NormalizerKind

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _normalizer(text: str) -> Optional[NormalizerKind]:
    if text in ("none", "baseline"):
        return None
    try:
        return NormalizerKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the machine-readable artifact here")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _run_flags(p: argparse.ArgumentParser, normalizer: str = "rmsnorm") -> None:
    p.add_argument("--config", help="JSON run config; its fields override the flags")
    p.add_argument("--task", choices=("copy", "adding", "spiral"), default="copy")
    p.add_argument("--length", type=int, default=20)
    p.add_argument("--vocab", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--model", choices=("gru", "mlp"), default=None)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--normalizer", type=_normalizer, default=_normalizer(normalizer),
                   help="rmsnorm, prmsnorm:P, layernorm, l2norm or none")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--init-center", type=float, default=0.0)
    p.add_argument("--timing", action="store_true", help="include wall-clock fields in artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normkit", description="Normalizer verification and training lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-invariance", help="reproduce the invariance table")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--delta", type=float, default=verify.TABLE_DELTA)
    p.add_argument("--p", type=float, default=verify.TABLE_PRMS_P, help="pRMSNorm ratio in the table")

    p = sub.add_parser("check-grad", help="gradient scaling law and finite-difference checks")
    _common(p)
    p.add_argument("--deltas", type=_floats, default=[0.1, 0.5, 2.0, 10.0])
    p.add_argument("--normalizer", type=_normalizer, default=NormalizerKind.rmsnorm())
    p.add_argument("--dims", type=_ints, default=list(verify.GRAD_DIMS))
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--no-fd", action="store_true", help="skip the finite-difference checks")

    p = sub.add_parser("train", help="train one model per seed")
    _common(p)
    _run_flags(p)
    p.add_argument("--seeds", type=_ints, default=None, help="comma-separated; defaults to --seed")
    p.add_argument("--checkpoint", help="save the first seed's trained parameters here")

    p = sub.add_parser("sweep-p", help="pRMSNorm partial-ratio sweep")
    _common(p)
    _run_flags(p)
    p.add_argument("--p-values", type=_floats, default=list(SWEEP_P))
    p.add_argument("--max-band", type=float, default=0.15)

    p = sub.add_parser("stats", help="per-position mean/std of the candidate gate")
    _common(p)
    _run_flags(p)
    p.add_argument("--positions", type=int, default=None)
    p.add_argument("--cases", type=int, default=256)
    p.add_argument("--checkpoint", help="load parameters from here instead of training")

    p = sub.add_parser("bench", help="normalizer microbenchmarks")
    _common(p)
    p.add_argument("--suite", action="store_true", help="full n x precision x normalizer grid")
    p.add_argument("--normalizer", type=_normalizer, default=NormalizerKind.rmsnorm())
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--warmup", type=int, default=bench.MIN_WARMUP)

    p = sub.add_parser("robustness", help="shifted-mean initialization probe")
    _common(p)
    _run_flags(p)
    p.add_argument("--center", type=float, default=0.2)
    return parser


# -- config assembly -------------------------------------------------------

def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def run_config(args) -> RunConfig:
    """Flags first, then the ``--config`` file on top."""
    if args.task == "copy":
        task = TaskSpec.copy(args.length, args.vocab, seed=args.seed)
    elif args.task == "adding":
        task = TaskSpec.adding(args.length, seed=args.seed)
    else:
        task = TaskSpec.spiral(args.classes, args.points, seed=args.seed)
    model = args.model or ("mlp" if args.task == "spiral" else "gru")
    seeds = getattr(args, "seeds", None) or [args.seed]
    flags = {
        "task": task.to_dict(),
        "model": {"type": model, "hidden": args.hidden, "layers": args.layers},
        "normalizer": args.normalizer.to_dict() if args.normalizer else None,
        "optimizer": {"lr": args.lr, "clip_norm": args.clip_norm},
        "steps": args.steps,
        "eval_every": args.eval_every,
        "batch_size": args.batch_size,
        "seeds": seeds,
        "init_center": args.init_center,
    }
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        if isinstance(file_cfg.get("task"), dict) and "kind" in file_cfg["task"]:
            flags.pop("task")  # a task with its own kind replaces the flag-built one wholesale
        flags = _merge(flags, file_cfg)
    try:
        return RunConfig.from_dict(flags)
    except ConfigError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


# -- artifacts -------------------------------------------------------------

def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _rows_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _write(args, text: str) -> None:
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)


def _curves_csv(reports: list, timing: bool, key: str = "seed") -> str:
    if len(reports) == 1:
        return reports[0].curve_csv(timing)
    lines = [f"{key},step,loss,wallclock_s"]
    for r in reports:
        tag = r.seed if key == "seed" else r.label
        for line in r.curve_csv(timing).splitlines()[1:]:
            lines.append(f"{tag},{line}")
    return "\n".join(lines) + "\n"


# -- commands --------------------------------------------------------------

def cmd_check_invariance(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    result = verify.check_full_table(args.trials, args.seed, prms_p=args.p, delta=args.delta)
    print(verify.format_table(result))
    print(f"{len(result.verdicts) - len(result.mismatches)}/{len(result.verdicts)} cells match the expected table")
    rows = result.to_dict()
    if args.format == "csv":
        _write(args, _rows_csv(rows, list(rows[0])))
    else:
        _write(args, _dump_json({"trials": args.trials, "seed": args.seed, "delta": args.delta, "p": args.p,
                                 "ok": result.ok, "cells": rows}))
    return EXIT_OK if result.ok else EXIT_FAIL


def cmd_check_grad(args) -> int:
    reports = [verify.check_grad_invariance(d, args.seed, args.normalizer) for d in args.deltas]
    for r in reports:
        worst = max(r.errors.values())
        print(f"delta={r.delta:<6g} dW ratio {r.ratio_observed:.12g} (expected {r.expected:.12g})  "
              f"max rel err {worst:.2e}  {'PASS' if r.pass_ else 'FAIL'}")
    checks = [] if args.no_fd else verify.gradient_checks(args.dims, args.draws, args.seed)
    by_target: dict = {}
    for c in checks:
        by_target.setdefault((c.target, c.dim), []).append(c)
    for (target, dim), group in by_target.items():
        worst = max(c.rel_error for c in group)
        ok = all(c.passed for c in group)
        print(f"{target:<18} n={dim:<3} max rel err {worst:.2e} (< {group[0].tolerance:g})  "
              f"{'PASS' if ok else 'FAIL'}")
    ok = all(r.pass_ for r in reports) and all(c.passed for c in checks)
    if args.format == "csv":
        rows = [{"kind": "scaling", "target": (args.normalizer or NormalizerKind.rmsnorm()).label,
                 "dim": "", "draw": "", "delta": r.delta, "rel_error": max(r.errors.values()),
                 "pass": r.pass_} for r in reports]
        rows += [{"kind": "finite_difference", "delta": "", **c.to_dict()} for c in checks]
        _write(args, _rows_csv(rows, ["kind", "target", "dim", "draw", "delta", "rel_error", "pass"]))
    else:
        _write(args, _dump_json({"seed": args.seed, "ok": ok, "scaling": [r.to_dict() for r in reports],
                                 "finite_difference": [c.to_dict() for c in checks]}))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train(args) -> int:
    config = run_config(args)
    reports = train_seeds(config, keep_models=bool(args.checkpoint))
    for r in reports:
        status = f"DIVERGED at step {r.diverged_at}: {r.reason}" if r.diverged else "ok"
        print(f"{config.name} seed={r.seed} final train loss {r.final_train_loss:.5f} "
              f"eval {r.final_eval_loss:.5f}  {status}")
        for w in r.warnings:
            print(f"  warning: {w}")
    if len(reports) > 1:
        print(f"median final train loss {median_final_loss(reports):.5f}")
    if args.checkpoint and not reports[0].diverged:
        save_checkpoint(args.checkpoint, reports[0].model.params())
    if args.format == "csv":
        _write(args, _curves_csv(reports, args.timing))
    else:
        _write(args, _dump_json({"config": config.to_dict(),
                                 "runs": [r.to_dict(args.timing) for r in reports]}))
    return EXIT_FAIL if any(r.diverged for r in reports) else EXIT_OK


def cmd_sweep_p(args) -> int:
    config = run_config(args)
    try:
        reports = p_sweep(config, args.p_values, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(sweep_table(reports))
    band = loss_band(reports)
    ok = math.isfinite(band) and band <= args.max_band  # NaN when every run diverged
    if args.format == "csv":
        _write(args, _curves_csv(reports, args.timing, key="run"))
    else:
        _write(args, _dump_json({"config": config.to_dict(), "p_values": args.p_values,
                                 "band": band if math.isfinite(band) else None, "max_band": args.max_band,
                                 "ok": ok, "runs": [r.to_dict(args.timing) for r in reports]}))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_stats(args) -> int:
    config = run_config(args)
    if config.model.type != "gru":
        raise UsageError("stats needs a GRU on a sequential task")
    if args.checkpoint:
        model = build_model(config, np.random.default_rng([args.seed, 0]))
        try:
            restore(model, load_checkpoint(args.checkpoint))
        except (OSError, CheckpointError) as exc:
            raise UsageError(f"cannot load checkpoint: {exc}") from None
        diverged = False
    else:
        report = train(config, args.seed)
        model, diverged = report.model, report.diverged
    data = sample_batch(config.task, np.random.default_rng([args.seed, 3]), args.cases)
    try:
        tables = stats_mod.collect_stats_pair(model, data, args.positions)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{config.name}: {stats_mod.PROBE}")
    for stage, table in tables.items():
        print(table.format(stage))
        print(f"  S spread across positions {table.s_spread():.2%}")
    if args.format == "csv":
        rows = []
        for stage, t in tables.items():
            for i, (m, s) in enumerate(zip(t.mean, t.std), start=1):
                rows.append({"stage": stage, "position": i, "M": m, "S": s})
            rows.append({"stage": stage, "position": "ALL", "M": t.all_mean, "S": t.all_std})
        _write(args, _rows_csv(rows, ["stage", "position", "M", "S"]))
    else:
        _write(args, _dump_json({"config": config.to_dict(), "seed": args.seed, "diverged": diverged,
                                 "tables": {k: t.to_dict() for k, t in tables.items()}}))
    return EXIT_FAIL if diverged else EXIT_OK


def cmd_bench(args) -> int:
    try:
        if args.suite:
            results = bench.bench_suite(batch=args.batch, iters=args.iters, warmup_iters=args.warmup,
                                        seed=args.seed)
        else:
            if args.normalizer is None:
                raise UsageError("bench needs a normalizer")
            results = [bench.run_bench(bench.BenchCase(args.normalizer, args.n, args.batch, args.precision,
                                                       args.iters, args.warmup, args.seed))]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(bench.format_results(results))
    _write(args, bench.to_csv(results) if args.format == "csv" else bench.to_json(results) + "\n")
    cells = bench.ordering_cells(results)
    # one flaky cell per suite is tolerated
    return EXIT_OK if not cells or sum(cells.values()) >= len(cells) - 1 else EXIT_FAIL


def cmd_robustness(args) -> int:
    config = run_config(args)
    result = robustness_probe(config, args.center, args.seed)
    for name in ("layernorm", "rmsnorm", "control_layernorm", "control_rmsnorm"):
        r = getattr(result, name)
        if r is not None:
            print(f"{name:<18} center={r.config.init_center:<5g} final loss {r.final_train_loss:.5f}  "
                  f"diverged={r.diverged}")
    print("PASS" if result.ok else "FAIL: RMSNorm diverged while its centered control did not")
    reports = [getattr(result, n) for n in ("layernorm", "rmsnorm")]
    if args.format == "csv":
        _write(args, _curves_csv(reports, args.timing, key="run"))
    else:
        _write(args, _dump_json({"config": config.to_dict(), **result.to_dict(args.timing)}))
    return EXIT_OK if result.ok else EXIT_FAIL


COMMANDS = {
    "check-invariance": cmd_check_invariance,
    "check-grad": cmd_check_grad,
    "train": cmd_train,
    "sweep-p": cmd_sweep_p,
    "stats": cmd_stats,
    "bench": cmd_bench,
    "robustness": cmd_robustness,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"normkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"normkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
