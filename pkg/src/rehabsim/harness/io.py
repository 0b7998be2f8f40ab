"""Persistence: tick/cycle CSVs, the run manifest and summary JSON.

Floats are written with ``repr`` so every value reads back bit-exact, which
is what lets ``report`` reproduce the in-run summary byte for byte. Each CSV
starts with a ``# config_hash: ...`` line.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_hash, from_dict, run_dict
from .episode import TICK_COLUMNS, EpisodeLog

CYCLE_COLUMNS = (
    "index", "E_cycle", "E_diss", "baseline", "r", "moment_var", "traj_rms", "peak_force",
    "phase_lag", "k", "c", "committed", "context_truth", "context_label",
)  # fmt: skip
_CYCLE_INT = {"index"}
_CYCLE_BOOL = {"committed"}
_CYCLE_STR = {"context_truth", "context_label"}

MANIFEST = "manifest.json"
SUMMARY = "summary.json"
REPORT_SUMMARY = "report_summary.json"
HASH_PREFIX = "# config_hash: "


class SchemaError(ValueError):
    """A persisted file lacks a required column or is malformed."""


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def jsonable(obj):
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dump_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(jsonable(data), indent=2, allow_nan=False) + "\n")


def episode_stem(tag: str, seed: int) -> str:
    return f"{tag}_s{seed}"


def write_ticks(path: Path, ticks: dict[str, np.ndarray], chash: str) -> None:
    cols = [ticks[name].tolist() for name in TICK_COLUMNS]
    with open(path, "w", newline="") as fh:
        fh.write(HASH_PREFIX + chash + "\n")
        fh.write(",".join(TICK_COLUMNS) + "\n")
        for row in zip(*cols):
            fh.write(",".join(map(repr, row)) + "\n")


def write_cycles(path: Path, cycles: list[dict], chash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(HASH_PREFIX + chash + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CYCLE_COLUMNS)
        for row in cycles:
            w.writerow([_fmt(row[name]) for name in CYCLE_COLUMNS])


def _read_table(path: Path, required) -> tuple[str | None, list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        chash = None
        if first.startswith(HASH_PREFIX):
            chash = first[len(HASH_PREFIX):].strip()
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        rows = list(reader)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i + 1} has {len(row)} fields, expected {len(header)}")
    return chash, header, rows


def read_ticks(path: Path) -> tuple[str | None, dict[str, np.ndarray]]:
    chash, header, rows = _read_table(path, TICK_COLUMNS)
    idx = {name: header.index(name) for name in TICK_COLUMNS}
    try:
        data = {name: np.array([float(r[j]) for r in rows]) for name, j in idx.items()}
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return chash, data


def read_cycles(path: Path) -> tuple[str | None, list[dict]]:
    chash, header, rows = _read_table(path, CYCLE_COLUMNS)
    idx = {name: header.index(name) for name in CYCLE_COLUMNS}
    out = []
    try:
        for r in rows:
            rec = {}
            for name, j in idx.items():
                s = r[j]
                if name in _CYCLE_INT:
                    rec[name] = int(s)
                elif name in _CYCLE_BOOL:
                    rec[name] = s == "1"
                elif name in _CYCLE_STR:
                    rec[name] = s
                else:
                    rec[name] = float(s)
            out.append(rec)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return chash, out


def write_run(out_dir: Path, cfg: ExperimentConfig, episodes, summary, x_amp: float) -> Path:
    """Persist every episode plus manifest.json and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    listing = []
    for spec, log in episodes:
        stem = episode_stem(spec.tag, spec.seed)
        entry = {"tag": spec.tag, "preset": spec.preset, "seed": spec.seed, "diverged": log is None}
        if log is not None:
            write_ticks(out / f"{stem}_ticks.csv", log.ticks, chash)
            write_cycles(out / f"{stem}_cycles.csv", log.cycles, chash)
            entry.update(ticks=f"{stem}_ticks.csv", cycles=f"{stem}_cycles.csv", dt_phys=log.dt_phys)
        listing.append(entry)
    manifest = {"config_hash": chash, "x_amp": x_amp, "config": run_dict(cfg), "episodes": listing}
    dump_json(out / MANIFEST, manifest)
    dump_json(out / SUMMARY, summary.to_json())
    return out


def read_manifest(in_dir: Path) -> dict:
    path = Path(in_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found")
    data = json.loads(path.read_text())
    for key in ("config_hash", "config", "episodes"):
        if key not in data:
            raise SchemaError(f"{path}: missing key {key!r}")
    return data


def load_run(in_dir: Path, allow_hash_mismatch: bool = False):
    """Rebuild (config, episodes, problems) from a run directory.

    ``problems`` lists hash mismatches; unless ``allow_hash_mismatch`` any
    mismatch raises ConfigError.
    """
    from .protocols import EpisodeSpec

    root = Path(in_dir)
    manifest = read_manifest(root)
    cfg = from_dict(ExperimentConfig, manifest["config"])
    chash = config_hash(cfg)
    problems = []
    if manifest["config_hash"] != chash:
        problems.append(f"manifest records {manifest['config_hash']} but its config hashes to {chash}")
    episodes = []
    for entry in manifest["episodes"]:
        spec = EpisodeSpec(entry["tag"], entry["preset"], int(entry["seed"]))
        if entry.get("diverged"):
            episodes.append((spec, None))
            continue
        t_hash, ticks = read_ticks(root / entry["ticks"])
        c_hash, cycles = read_cycles(root / entry["cycles"])
        for name, h in ((entry["ticks"], t_hash), (entry["cycles"], c_hash)):
            if h != chash:
                problems.append(f"{name}: config_hash {h} != {chash}")
        log = EpisodeLog(spec.preset, spec.seed, float(entry.get("dt_phys", cfg.dt_phys)), ticks, cycles)
        log.x_amp = float(manifest.get("x_amp") or 0.0)
        episodes.append((spec, log))
    if problems and not allow_hash_mismatch:
        raise ConfigError("config hash mismatch: " + "; ".join(problems))
    return cfg, episodes, problems
