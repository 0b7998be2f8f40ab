"""Command line entry point ``sim``.

Exit codes: 0 all acceptance checks passed, 1 some check failed, 2 error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import io
from .config import ConfigError, config_from_data, config_hash, load_config, read_json, run_dict, set_path, to_dict
from .protocols import ExperimentSummary, execute, patient_amplitude, scenario_config, summarize
from .report import report

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
SCENARIO_CHOICES = ("f1", "f2", "f3", "f4", "f5", "f6", "rate", "custom")
SWEEP_KEYS = {"base", "grid", "out"}

log = logging.getLogger("rehabsim")


def _print_acceptance(summary: ExperimentSummary) -> None:
    for name, item in summary.acceptance.items():
        flag = "PASS" if item["pass"] else "FAIL"
        value = item["value"]
        shown = f"{value:.4g}" if isinstance(value, float) else str(value)
        print(f"  [{flag}] {name}: {shown} (threshold {item['threshold']})")


def run_config(cfg, out_dir: Path, quiet: bool = False) -> ExperimentSummary:
    """Run a protocol and persist everything under ``out_dir``."""
    t0 = time.perf_counter()

    def progress(spec):
        if not quiet:
            log.info("episode %s seed %d", spec.tag, spec.seed)

    episodes = execute(cfg, progress=progress)
    summary = summarize(cfg, episodes)
    io.write_run(out_dir, cfg, episodes, summary, patient_amplitude(cfg))
    io.dump_json(Path(out_dir) / "config.json", run_dict(cfg))
    log.info("%s done in %.1f s -> %s", cfg.scenario, time.perf_counter() - t0, out_dir)
    return summary


def _cmd_run(args) -> int:
    if args.config:
        cfg = load_config(args.config, scenario_config)
    else:
        if args.scenario is None or args.seed is None:
            raise ConfigError("run needs --scenario and --seed (or --config)")
        cfg = scenario_config(args.scenario, seed=args.seed)
    updates = {}
    if args.config and args.seed is not None:
        updates["seed"] = args.seed
    if args.n_seeds is not None:
        updates["n_seeds"] = args.n_seeds
    if args.cycles is not None:
        updates["cycles"] = args.cycles
    if args.dt_phys is not None:
        updates["dt_phys"] = args.dt_phys
    if args.preset:
        if cfg.scenario not in ("f1", "rate", "custom"):
            raise ConfigError(f"--preset does not apply to {cfg.scenario}")
        updates["presets"] = list(args.preset)
    if updates:
        cfg = config_from_data({**to_dict(cfg), **updates})
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"{cfg.scenario}_s{cfg.seed}"
    cfg = replace(cfg, output_dir=str(out))
    summary = run_config(cfg, out, args.quiet)
    print(f"{cfg.scenario} seeds {summary.seeds[0]}..{summary.seeds[-1]} config {summary.config_hash}")
    _print_acceptance(summary)
    return EXIT_PASS if summary.passed else EXIT_FAIL


def _grid_points(grid: dict):
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigError("sweep grid must map dotted keys to non-empty lists")
    keys = sorted(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, values))


def _cmd_sweep(args) -> int:
    spec = read_json(args.config)
    if not isinstance(spec, dict):
        raise ConfigError("sweep file must be a JSON object")
    unknown = sorted(set(spec) - SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"sweep: unknown key(s) {', '.join(unknown)}")
    if "base" not in spec:
        raise ConfigError("sweep: missing 'base'")
    root = Path(args.out or spec.get("out") or "runs/sweep")
    points = list(_grid_points(spec.get("grid", {})))
    configs = []
    for params in points:
        data = spec["base"]
        for key, value in params.items():
            data = set_path(data, key, value)
        configs.append(config_from_data(data, scenario_config))
    rows, all_passed = [], True
    for i, (params, cfg) in enumerate(zip(points, configs)):
        out = root / f"point_{i:03d}"
        cfg = replace(cfg, output_dir=str(out))
        summary = run_config(cfg, out, args.quiet)
        all_passed &= summary.passed
        rows.append({"point": i, "params": params, "config_hash": config_hash(cfg), "out": str(out),
                     "passed": summary.passed, "acceptance": summary.acceptance})
        print(f"point {i:03d} {json.dumps(params, sort_keys=True)} {'PASS' if summary.passed else 'FAIL'}")
        _print_acceptance(summary)
    io.dump_json(root / "sweep.json", {"points": rows})
    return EXIT_PASS if all_passed else EXIT_FAIL


def _cmd_report(args) -> int:
    summary, identical, problems = report(args.input, args.allow_hash_mismatch)
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    print(f"{summary.scenario} config {summary.config_hash}")
    if identical is not None:
        print("  summary matches in-run summary byte for byte" if identical else "  summary DIFFERS from in-run summary")
    _print_acceptance(summary)
    return EXIT_PASS if summary.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sim", description="Adaptive impedance rehabilitation simulator")
    ap.add_argument("-q", "--quiet", action="store_true", help="no progress logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one protocol")
    run.add_argument("--scenario", choices=SCENARIO_CHOICES)
    run.add_argument("--config", help="JSON config (fields left out take the scenario defaults)")
    run.add_argument("--seed", type=int, help="first seed")
    run.add_argument("--n-seeds", type=int)
    run.add_argument("--cycles", type=int)
    run.add_argument("--dt-phys", type=float, help="physics step (s)")
    run.add_argument("--preset", action="append", choices=("rigid", "soft", "adaptive"), help="repeatable")
    run.add_argument("--out", help="output directory")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="run a protocol over a parameter grid")
    sweep.add_argument("--config", required=True, help='JSON {"base": {...}, "grid": {"a.b": [...]}, "out": DIR}')
    sweep.add_argument("--out", help="overrides the file's output directory")
    sweep.set_defaults(func=_cmd_sweep)

    rep = sub.add_parser("report", help="recompute a run's summary from its CSVs")
    rep.add_argument("--in", dest="input", required=True, help="run directory")
    rep.add_argument("--allow-hash-mismatch", action="store_true")
    rep.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, io.SchemaError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - any crash is exit code 2
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
