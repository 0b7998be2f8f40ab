"""Acceptance criteria 1-9, each over 10 seeds (median per protocol).

Every test records one PASS/FAIL line per criterion plus its sub-checks;
the lines are repeated in the terminal summary.
"""

from __future__ import annotations

import math

import numpy as np

from rehabsim import adaptation as ad
from rehabsim import dynamics as dyn
from rehabsim import metrics
from rehabsim.control import adaptive_preset
from rehabsim.harness import io
from rehabsim.harness.cli import main
from rehabsim.harness.protocols import (
    run_f1,
    run_f2,
    run_f3,
    run_f4,
    run_f5,
    run_f6,
    run_rate_check,
)

N_SEEDS = 10


def _fmt(value):
    if value is None:
        return "n/a"
    return f"{value:.4g}" if isinstance(value, float) else str(value)


def _verdict(record, number: int, title: str, checks: dict) -> bool:
    ok = all(c["pass"] for c in checks.values())
    record(f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}")
    for name, c in checks.items():
        flag = "pass" if c["pass"] else "FAIL"
        record(f"    {name}: {_fmt(c['value'])} (needs {c['threshold']}) {flag}")
    return ok


def _protocol(record, number, title, runner):
    summary, _ = runner(seed=0, n_seeds=N_SEEDS)
    assert len(summary.seeds) >= 10
    assert summary.acceptance, "protocol produced no checks"
    assert _verdict(record, number, title, summary.acceptance)


def test_criterion_1_learning_curve(acceptance_line):
    _protocol(acceptance_line, 1, "learning curve (F4)", run_f4)


def test_criterion_2_resonance(acceptance_line):
    _protocol(acceptance_line, 2, "resonance (F2)", run_f2)


def test_criterion_3_embodiment(acceptance_line):
    _protocol(acceptance_line, 3, "embodiment comparison (F1)", run_f1)


def test_criterion_4_motor_competence(acceptance_line):
    _protocol(acceptance_line, 4, "motor competence (F3)", run_f3)


def test_criterion_5_autonomy(acceptance_line):
    _protocol(acceptance_line, 5, "autonomy (F5)", run_f5)


def test_criterion_6_context(acceptance_line):
    _protocol(acceptance_line, 6, "context (F6)", run_f6)


def test_criterion_7_rate_sensitivity(acceptance_line):
    _protocol(acceptance_line, 7, "rate sensitivity", run_rate_check)


# --- criterion 8: numerical oracles ---------------------------------------------------

def _free_decay_error(dt: float) -> float:
    k, c, m, x0 = 5000.0, 20.0, 1.0, 0.02
    cfg = dyn.PlantConfig(m_eff=m, dt_phys=dt)
    s = dyn.BodyState(x0, 0.0, 0.0)
    n = int(round(1.0 / dt))
    xs = np.empty(n + 1)
    xs[0] = x0
    for i in range(n):
        s = dyn.step(s, -k * s.x - c * s.v, cfg)
        xs[i + 1] = s.x
    t = np.arange(n + 1) * dt
    return float(np.max(np.abs(xs - dyn.damped_free_response(t, x0, 0.0, k, c, m)))) / x0


def _convex_scaffold(seeds=range(20)) -> float:
    """Worst (best-so-far / grid minimum) over seeds after 60 cycles."""

    def objective(k, c):
        return 1.0 + ((k - 6000.0) / 2500.0) ** 2 + ((c - 30.0) / 15.0) ** 2

    p = adaptive_preset().params
    kk, cc = np.meshgrid(np.linspace(p.k_min, p.k_max, 501), np.linspace(p.c_min, p.c_max, 301))
    e_min = float(objective(kk, cc).min())
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        s = ad.AdaptState(adaptive_preset(8000.0, 40.0).params, delta_k=800.0, delta_c=2.0)
        best = math.inf
        for _ in range(60):
            base = ad.baseline(s.history, s.window) if s.history else None
            s, th = ad.perturb(s, rng)
            e = objective(th.k, th.c)
            best = min(best, e)
            s, _ = ad.update(s, e, base)
        worst = max(worst, best / e_min)
    return worst


def test_criterion_8_numerical_oracles(acceptance_line):
    checks = {}
    err = _free_decay_error(1e-3)
    checks["integrator_free_decay_dt1ms"] = {"value": err, "threshold": "< 0.01 of x0", "pass": err < 0.01}
    e = dyn.spring_energy(5000.0, 0.02)
    checks["spring_energy"] = {"value": e, "threshold": "== 1.0 J", "pass": e == 1.0}

    x = np.random.default_rng(0).normal(size=20_000)
    rep = metrics.spectral_bands(x, 1000.0)
    ratio = float(np.trapezoid(rep.psd, rep.freqs)) / float(np.var(x))
    checks["parseval"] = {"value": ratio, "threshold": "within 5%", "pass": abs(ratio - 1.0) <= 0.05}

    v = np.sin(np.linspace(0.0, 20.0, 5000))
    r = metrics.force_velocity_correlation(3.7 * v, v)
    checks["pearson_proportional"] = {"value": abs(1.0 - r), "threshold": "|1 - r| <= 1e-12", "pass": abs(1.0 - r) <= 1e-12}

    worst = _convex_scaffold()
    checks["adaptation_convex_scaffold"] = {"value": worst, "threshold": "<= 1.10 x grid minimum", "pass": worst <= 1.10}
    assert _verdict(acceptance_line, 8, "numerical oracles", checks)


# --- criterion 9: determinism -----------------------------------------------------------

def test_criterion_9_determinism(acceptance_line, tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        main(["-q", "run", "--scenario", "f6", "--seed", "0", "--n-seeds", str(N_SEEDS), "--out", str(d)])
    names = sorted(p.name for p in dirs[0].iterdir() if p.is_file())
    identical = names == sorted(p.name for p in dirs[1].iterdir() if p.is_file()) and all(
        (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names
    )
    main(["-q", "report", "--in", str(dirs[0])])
    same_report = (dirs[0] / io.REPORT_SUMMARY).read_bytes() == (dirs[0] / io.SUMMARY).read_bytes()
    checks = {
        "repeat_run_byte_identical": {"value": f"{len(names)} files", "threshold": "identical bytes", "pass": identical},
        "report_equals_run_summary": {"value": same_report, "threshold": "identical bytes", "pass": same_report},
    }
    assert _verdict(acceptance_line, 9, "determinism", checks)
