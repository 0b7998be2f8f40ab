#!/usr/bin/env python3
"""One-time calibration of the context thresholds.

Runs the context scenario on seeds disjoint from the evaluation seeds,
collects the features per true mode and places each threshold at the
midpoint between the medians of the two modes it separates:

    var_thr  Stable vs Unstable phase variance
    lag_thr  Stable vs Fatigued lag
    dE_thr   Stable vs Fatigued energy drop

Features depend on the labels (baselines are built from cycles judged
Stable), so the procedure repeats until the thresholds settle.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import replace

import numpy as np

from rehabsim import context as ctx
from rehabsim.harness import protocols
from rehabsim.harness.episode import run_episode
from rehabsim.patient import PatientMode


def collect(cfg, seeds, amp):
    feats: dict[str, list[tuple[float, float, float]]] = {m.value: [] for m in PatientMode}
    decisions = []
    for s in seeds:
        log = run_episode(cfg, "adaptive", s, x_amp=amp)
        decisions.extend(log.decisions)
        for d in log.decisions:
            f = d.features
            feats[d.truth.value].append((f.dE_rel, f.phase_lag, f.phase_var))
    return {m: np.array(v) for m, v in feats.items()}, decisions


def midpoints(feats) -> ctx.ContextThresholds:
    med = {m: np.median(a, axis=0) for m, a in feats.items()}
    st, fa, un = med["Stable"], med["Fatigued"], med["Unstable"]
    return ctx.ContextThresholds(
        lag_thr=float(0.5 * (st[1] + fa[1])),
        dE_thr=float(-0.5 * (st[0] + fa[0])),
        var_thr=float(0.5 * (st[2] + un[2])),
    )


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1000, help="first calibration seed")
    ap.add_argument("--n-seeds", type=int, default=8)
    ap.add_argument("--rounds", type=int, default=4)
    ap.add_argument("--no-policy", action="store_true", help="calibrate with the behaviour policy off")
    args = ap.parse_args(argv)

    cfg = protocols.scenario_config("f6")
    cfg = replace(cfg, context=replace(cfg.context, policy=not args.no_policy))
    amp = protocols.patient_amplitude(cfg)
    seeds = range(args.seed, args.seed + args.n_seeds)
    th = cfg.context.thresholds
    for r in range(args.rounds):
        cfg = replace(cfg, context=replace(cfg.context, thresholds=th))
        feats, decisions = collect(cfg, seeds, amp)
        acc = ctx.evaluate_accuracy(decisions).accuracy
        print(f"round {r}: lag_thr={th.lag_thr:.4f} dE_thr={th.dE_thr:.4f} var_thr={th.var_thr:.5f} accuracy={acc:.3f}")
        for m, a in feats.items():
            q = np.percentile(a, [10, 50, 90], axis=0)
            print(f"  {m:9s} n={len(a):4d} dE {np.round(q[:, 0], 3)} lag {np.round(q[:, 1], 4)} var {np.round(q[:, 2], 5)}")
        new = midpoints(feats)
        if np.allclose([new.lag_thr, new.dE_thr, new.var_thr], [th.lag_thr, th.dE_thr, th.var_thr], rtol=0.02):
            th = new
            break
        th = new
    print(json.dumps({"lag_thr": round(th.lag_thr, 4), "dE_thr": round(th.dE_thr, 3), "var_thr": round(th.var_thr, 5)}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
