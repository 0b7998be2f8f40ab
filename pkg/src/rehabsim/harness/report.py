"""Rebuild a run's summary from its persisted CSVs and write plot data."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io
from .protocols import ExperimentSummary, cycle_table, summarize, variant

FIGURE_COLUMNS = ("E_cycle", "E_diss", "r", "traj_rms", "peak_force", "moment_var", "k", "c")


def aggregate_cycles(tables) -> dict[str, np.ndarray]:
    """Per-cycle mean over episodes, truncated to the shortest episode."""
    n = min(len(t["k"]) for t in tables)
    return {col: np.mean([t[col][:n] for t in tables], axis=0) for col in FIGURE_COLUMNS}


def write_figure_data(out_dir: Path, cfg, episodes, chash: str) -> list[Path]:
    """One columnar file per episode tag: cycle index and mean curves."""
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(exist_ok=True)
    groups: dict[str, list] = {}
    for spec, log in episodes:
        if log is not None:
            groups.setdefault(spec.tag, []).append(cycle_table(variant(cfg, spec.tag), log))
    written = []
    for tag, tables in sorted(groups.items()):
        agg = aggregate_cycles(tables)
        path = fig_dir / f"{tag}_cycles.csv"
        with open(path, "w") as fh:
            fh.write(io.HASH_PREFIX + chash + "\n")
            fh.write(",".join(("index", *FIGURE_COLUMNS)) + "\n")
            for i in range(len(agg["k"])):
                fh.write(",".join([str(i)] + [repr(float(agg[c][i])) for c in FIGURE_COLUMNS]) + "\n")
        written.append(path)
    return written


def report(in_dir, allow_hash_mismatch: bool = False) -> tuple[ExperimentSummary, bool | None, list[str]]:
    """Recompute the summary from ``in_dir``.

    Returns (summary, identical, problems): ``identical`` says whether the
    rebuilt summary.json matches the in-run one byte for byte (None when
    the run wrote none).
    """
    root = Path(in_dir)
    cfg, episodes, problems = io.load_run(root, allow_hash_mismatch)
    summary = summarize(cfg, episodes)
    out = root / io.REPORT_SUMMARY
    io.dump_json(out, summary.to_json())
    write_figure_data(root, cfg, episodes, summary.config_hash)
    original = root / io.SUMMARY
    identical = original.read_bytes() == out.read_bytes() if original.is_file() else None
    return summary, identical, problems
