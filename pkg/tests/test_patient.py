from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rehabsim import patient as pt
from rehabsim.context import cross_correlation_lag
from rehabsim.harness.config import ExperimentConfig, ModeSpan
from rehabsim.harness.episode import calibrated_amplitude, run_episode, ticks_per_cycle
from rehabsim.rng import stream

PURE = pt.PatientParams(k_p=2500.0, X_amp=0.02, harmonic_weights=(), sigma_phase=0.0, phase_lead=0.0)


def test_pure_sinusoid_at_origin():
    x, v = pt.intended_trajectory(0.0, PURE)
    assert float(x) == pytest.approx(0.0, abs=1e-15)
    assert float(v) == pytest.approx(2 * math.pi * PURE.f0 * PURE.X_amp)


@given(st.floats(0.0, 50.0))
def test_intent_periodic_without_jitter(t):
    p = replace(PURE, harmonic_weights=(0.2, 0.1), phase_lead=2.2)
    a, _ = pt.intended_trajectory(t, p)
    b, _ = pt.intended_trajectory(t + 1.0 / p.f0, p)
    assert float(a) == pytest.approx(float(b), abs=1e-12)


def test_intent_velocity_is_exact_derivative():
    p = replace(PURE, harmonic_weights=(0.2, 0.1), phase_lead=0.7)
    phases = pt.draw_cycle_phases(stream(1, "patient"), np.full(6, 0.3))
    t = np.linspace(0.1, 9.9, 4001)
    h = 1e-6
    xp, vp = pt.intended_trajectory(t, p, phases)
    xa, _ = pt.intended_trajectory(t + h, p, phases)
    xb, _ = pt.intended_trajectory(t - h, p, phases)
    # away from the cycle boundaries the phase path is smooth
    inside = np.abs(t * p.f0 - np.round(t * p.f0)) > 1e-3
    assert np.allclose(vp[inside], ((xa - xb) / (2 * h))[inside], rtol=1e-5, atol=1e-9)


def test_cycle_phase_std():
    draws = pt.draw_cycle_phases(stream(11, "patient"), np.full(200, 0.3))
    assert abs(np.std(draws) - 0.3) < 0.05


def test_contact_force_examples():
    assert pt.contact_force(0.004, 0.0, 0.0, 0.0, PURE) == pytest.approx(10.0)
    assert pt.contact_force(0.01, 0.2, 0.01, 0.2, PURE) == 0.0
    fat = pt.apply_mode(PURE, pt.PatientMode.FATIGUED)
    assert pt.contact_force(0.004, 0.0, 0.0, 0.0, fat) == pytest.approx(8.0)


def test_apply_mode_examples():
    assert pt.apply_mode(PURE, "Stable") == PURE
    fat = pt.apply_mode(PURE, pt.PatientMode.FATIGUED)
    assert fat.k_p == pytest.approx(2000.0) and fat.tau == pytest.approx(0.080)
    uns = pt.apply_mode(PURE, pt.PatientMode.UNSTABLE)
    assert uns.sigma_phase == PURE.sigma_phase_unstable
    assert (uns.k_p, uns.tau) == (PURE.k_p, PURE.tau)


def test_params_validation():
    with pytest.raises(ValueError):
        pt.PatientParams(k_p=0.0)
    with pytest.raises(ValueError):
        pt.PatientParams(force_target=20.0)
    with pytest.raises(ValueError):
        pt.PatientParams(tau=-0.1)


def test_impulses():
    cfg = pt.DisturbanceConfig(enabled=True)
    sched = pt.draw_impulse_schedule(stream(3, "disturbance"), cfg, horizon=200.0, f0=0.5)
    on = sched.onsets[0]
    assert pt.impulse_disturbance(on - 1e-3, sched) == 0.0 or np.any(
        (sched.onsets < on) & (sched.onsets + sched.duration > on - 1e-3)
    )
    assert abs(pt.impulse_disturbance(on + 0.01, sched)) == 8.0
    assert pt.impulse_disturbance(on + sched.duration + 1e-9, sched) == 0.0 or len(sched) > 1


@pytest.mark.parametrize("seed", range(5))
def test_impulse_count_is_poisson(seed):
    cfg = pt.DisturbanceConfig(enabled=True, mean_rate=0.5)
    sched = pt.draw_impulse_schedule(stream(seed, "disturbance"), cfg, horizon=200.0, f0=0.5)
    assert 35 <= len(sched) <= 65


def test_impulses_disabled_are_zero():
    sched = pt.draw_impulse_schedule(stream(0, "disturbance"), pt.DisturbanceConfig(enabled=False), 100.0, 0.5)
    t = np.linspace(0, 100, 1001)
    assert not np.any(pt.impulse_disturbance(t, sched))


def test_latency_shifts_force_by_80ms_open_loop():
    # robot held still: the force is the delayed intent scaled by k_p
    t = np.arange(0, 4.0, 1 / 120)
    lags = {}
    for mode in (pt.PatientMode.STABLE, pt.PatientMode.FATIGUED):
        p = pt.apply_mode(PURE, mode)
        xp, vp = pt.intended_trajectory(t - p.tau, p)
        f = pt.contact_force(xp, vp, 0.0, 0.0, p)
        xp0, _ = pt.intended_trajectory(t, PURE)
        lags[mode] = cross_correlation_lag(f, xp0, 1 / 120)
    shift = lags[pt.PatientMode.FATIGUED] - lags[pt.PatientMode.STABLE]
    assert abs(shift - 0.080) <= 1 / 120


def _flat_cfg(**kw):
    return ExperimentConfig(cycles=6, **kw)


def test_calibration_hits_target_against_rigid():
    cfg = _flat_cfg()
    amp = calibrated_amplitude(cfg)
    log = run_episode(replace(cfg, presets=("rigid",)), "rigid", 0, x_amp=amp, noise=False, jitter=False, disturb=False)
    tpc = ticks_per_cycle(cfg.patient.f0)
    assert 9.8 <= np.max(np.abs(log.ticks["F_contact"][tpc:])) <= 10.2


def test_calibration_monotone_in_target():
    lo = calibrated_amplitude(_flat_cfg(patient=replace(pt.PatientParams(), force_target=8.0)))
    hi = calibrated_amplitude(_flat_cfg(patient=replace(pt.PatientParams(), force_target=15.0)))
    assert lo < hi


def test_calibration_below_floor_is_reported():
    # with a 2 mm reference the coupling spring alone already carries ~6.7 N
    with pytest.raises(pt.CalibrationError, match="unreachable"):
        calibrated_amplitude(_flat_cfg(patient=replace(pt.PatientParams(), force_target=5.0)))


def test_calibration_stiffer_coupling_needs_less_mismatch():
    tpc = ticks_per_cycle(0.5)
    out = {}
    for kp in (5000.0, 10000.0):
        cfg = _flat_cfg(patient=replace(pt.PatientParams(), k_p=kp))
        amp = calibrated_amplitude(cfg)
        log = run_episode(cfg, "rigid", 0, x_amp=amp, noise=False, jitter=False, disturb=False)
        peak = np.max(np.abs(log.ticks["F_contact"][tpc:]))
        out[kp] = (peak, peak / kp)
    assert out[10000.0][0] == pytest.approx(out[5000.0][0], rel=0.04)
    assert out[10000.0][1] < out[5000.0][1]


def test_calibration_reports_non_convergence():
    with pytest.raises(pt.CalibrationError):
        pt.calibrate_amplitude(pt.PatientParams(), lambda a: 100.0 + a, 0.002)


def test_stable_peak_force_in_band():
    cfg = _flat_cfg(presets=("adaptive",))
    amp = calibrated_amplitude(cfg)
    tpc = ticks_per_cycle(0.5)
    for seed in range(3):
        log = run_episode(cfg, "rigid", seed, x_amp=amp, disturb=False)
        peaks = np.abs(log.ticks["F_contact"]).reshape(-1, tpc).max(axis=1)
        assert np.all((peaks >= 5 * 0.98) & (peaks <= 15 * 1.02))


def test_fatigue_lowers_peak_force():
    stable = _flat_cfg()
    fatigued = _flat_cfg(schedule=(ModeSpan("Fatigued", 0, 6),))
    amp = calibrated_amplitude(stable)
    lower = 0
    for seed in range(20):
        a = run_episode(stable, "rigid", seed, x_amp=amp)
        b = run_episode(fatigued, "rigid", seed, x_amp=amp)
        lower += np.max(np.abs(b.ticks["F_contact"])) < np.max(np.abs(a.ticks["F_contact"]))
    assert lower == 20
