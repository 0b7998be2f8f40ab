from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rehabsim import context as ctx
from rehabsim.control import ADAPTIVE_C, ADAPTIVE_K, ControlMode, adaptive_preset
from rehabsim.harness.config import ContextSettings, ExperimentConfig
from rehabsim.harness.episode import run_episode
from rehabsim.patient import PatientMode, PatientParams, intended_trajectory

TICK = 1.0 / 120.0
SPEC_THRESHOLDS = ctx.ContextThresholds(lag_thr=0.04, dE_thr=0.05, var_thr=0.01)


def _features(dE=0.0, lag=0.0, var=0.0):
    return ctx.ContextFeatures(dE, lag, var, 0)


# --- features ----------------------------------------------------------------

def test_three_tick_shift_gives_three_tick_lag():
    t = np.arange(240) * TICK
    v = np.cos(math.pi * t) + 0.3 * np.sin(3 * math.pi * t)
    force = np.roll(v, 3)  # force trails velocity by 3 ticks
    assert ctx.cross_correlation_lag(force, v, TICK) == pytest.approx(3 * TICK, abs=1e-12)
    assert ctx.motion_lag(v, force, TICK) == pytest.approx(3 * TICK, abs=1e-12)


@given(st.floats(-20.0, 20.0))
def test_refined_lag_resolves_sub_tick_shift(shift_ticks):
    t = np.arange(240) * TICK
    w = math.pi
    v_ref = np.cos(w * t)
    force = np.cos(w * (t - shift_ticks * TICK))
    assert ctx.reference_lag(force, v_ref, TICK) == pytest.approx(shift_ticks * TICK, abs=0.05 * TICK)


def test_reference_lag_sees_fatigue_latency_open_loop():
    # robot held still: the contact force is the partner's delayed intent
    base = PatientParams(X_amp=0.02)
    dt = 1.0 / 1000.0
    t = np.arange(2000) * dt
    v_ref = np.cos(2 * math.pi * 0.5 * t)
    lags = {}
    for name, tau in (("stable", base.tau), ("fatigued", base.tau + 0.080)):
        xp, _ = intended_trajectory(t - tau, base, np.zeros(4))
        lags[name] = ctx.reference_lag(base.k_p * xp, v_ref, dt)
    assert lags["fatigued"] - lags["stable"] == pytest.approx(0.080, abs=TICK)


def test_coupling_energy():
    f = np.array([3.0, -3.0, 3.0, -3.0])
    assert ctx.coupling_energy(f, 4500.0) == pytest.approx(9.0 / 9000.0)
    with pytest.raises(ValueError):
        ctx.coupling_energy([], 4500.0)


def test_conditioned_baseline():
    assert ctx.conditioned_baseline([], [], 5000.0) is None
    assert ctx.conditioned_baseline([5000, 5010], [1.0, 3.0], 9000.0) == 2.0
    ks = np.array([4000.0, 5000.0, 6000.0, 7000.0])
    vals = 0.5 + 1e-4 * ks
    assert ctx.conditioned_baseline(ks, vals, 8000.0) == pytest.approx(1.3, rel=1e-9)
    # narrow stiffness spread falls back to the mean
    assert ctx.conditioned_baseline([5000, 5050, 5100], [1.0, 2.0, 3.0], 9000.0) == 2.0


def test_fundamental_phase_and_circular_variance():
    t = np.arange(240) * TICK
    for phi in (-2.5, 0.0, 1.0, 3.0):
        s = np.sin(math.pi * t + phi)
        assert ctx.fundamental_phase(s, TICK, 0.5) == pytest.approx(phi, abs=1e-9)
    assert ctx.circular_variance_rad2([1.0, 1.0, 1.0]) == 0.0
    # wraps across +-pi instead of seeing a 2 pi spread
    assert ctx.circular_variance_rad2([math.pi - 0.1, -math.pi + 0.1]) == pytest.approx(0.01, rel=1e-9)


def test_extract_features():
    f = ctx.extract_features(0.9, 0.03, [0.1, 0.1, 0.1], 1.0, 0.01, 7)
    assert f.valid and f.dE_rel == pytest.approx(-0.1) and f.phase_lag == pytest.approx(0.02)
    assert f.phase_var == 0.0 and f.window_id == 7
    assert not ctx.extract_features(0.9, 0.0, [0.1] * 3, 0.0, 0.0, 0).valid
    assert not ctx.extract_features(0.9, 0.0, [0.1] * 3, None, 0.0, 0).valid
    assert not ctx.extract_features(0.9, 0.0, [0.1] * 2, 1.0, 0.0, 0).valid


def test_noiseless_stable_steady_state_is_quiet():
    cfg = ExperimentConfig(
        cycles=20, context=ContextSettings(enabled=True), calibrate=False,
    )
    cfg = replace(cfg, sensors=replace(cfg.sensors, enabled=False),
                  disturbance=replace(cfg.disturbance, enabled=False))
    log = run_episode(cfg, "adaptive", 0, jitter=False, adapt_enabled=False)
    late = [d for d in log.decisions if d.features.window_id >= 10]
    assert late
    for d in late:
        assert abs(d.features.dE_rel) < 1e-3
        assert d.features.phase_var < 1e-6
        assert d.label is PatientMode.STABLE


# --- classifier --------------------------------------------------------------

def test_classify_examples():
    assert ctx.classify(_features(), SPEC_THRESHOLDS) is PatientMode.STABLE
    assert ctx.classify(_features(dE=-0.15, lag=0.07), SPEC_THRESHOLDS) is PatientMode.FATIGUED
    assert ctx.classify(_features(dE=-0.15, lag=0.07, var=0.5), SPEC_THRESHOLDS) is PatientMode.UNSTABLE
    # lag alone or energy drop alone is not fatigue
    assert ctx.classify(_features(dE=-0.15), SPEC_THRESHOLDS) is PatientMode.STABLE
    assert ctx.classify(_features(lag=0.07), SPEC_THRESHOLDS) is PatientMode.STABLE


def test_thresholds_must_be_positive():
    with pytest.raises(ValueError):
        ctx.ContextThresholds(lag_thr=0.0)


@given(st.floats(-10, 10), st.floats(-1, 1), st.floats(0, 10))
def test_classify_total_and_pure(dE, lag, var):
    f = _features(dE, lag, var)
    label = ctx.classify(f)
    assert label in tuple(PatientMode)
    assert ctx.classify(f) is label
    if var > ctx.ContextThresholds().var_thr:
        assert label is PatientMode.UNSTABLE


# --- behaviour policy ----------------------------------------------------------

def test_fatigued_policy_converges_to_target():
    theta = adaptive_preset(7000, 15).params
    for _ in range(20):
        theta = ctx.behavior_policy(PatientMode.FATIGUED, theta, ControlMode.ADAPTIVE)
    assert abs(theta.k - 4500) <= 500
    assert abs(theta.c - 30) <= 5


def test_stable_policy_raises_k_to_bound_then_holds():
    theta = adaptive_preset(6000, 20).params
    ks = []
    for _ in range(40):
        theta = ctx.behavior_policy(PatientMode.STABLE, theta, ControlMode.ADAPTIVE)
        ks.append(theta.k)
    assert all(b >= a for a, b in zip(ks, ks[1:]))
    assert ks[-1] == ADAPTIVE_K[1]
    at_bound = ctx.behavior_policy(PatientMode.STABLE, theta, ControlMode.ADAPTIVE)
    assert (at_bound.k, at_bound.c) == (theta.k, theta.c)


def test_unstable_policy_raises_damping_and_holds_k():
    theta = adaptive_preset(6000, 20).params
    nxt = ctx.behavior_policy(PatientMode.UNSTABLE, theta, ControlMode.ADAPTIVE)
    assert nxt.k == 6000 and nxt.c == 22


def test_policy_ignored_for_fixed_presets():
    theta = adaptive_preset(6000, 20).params
    assert ctx.behavior_policy(PatientMode.FATIGUED, theta, ControlMode.RIGID) is None


@given(
    st.sampled_from(list(PatientMode)),
    st.floats(ADAPTIVE_K[0], ADAPTIVE_K[1]),
    st.floats(ADAPTIVE_C[0], ADAPTIVE_C[1]),
    st.floats(0, 5000),
    st.floats(0, 50),
)
def test_policy_stays_in_rectangle(label, k, c, step_k, step_c):
    settings = ctx.PolicySettings(step_k=step_k, step_c=step_c)
    theta = ctx.behavior_policy(label, adaptive_preset(k, c).params, ControlMode.ADAPTIVE, settings)
    assert ADAPTIVE_K[0] <= theta.k <= ADAPTIVE_K[1]
    assert ADAPTIVE_C[0] <= theta.c <= ADAPTIVE_C[1]


# --- accuracy --------------------------------------------------------------------

def _decisions(truths, labels):
    return [ctx.ContextDecision(lab, tru, _features()) for tru, lab in zip(truths, labels)]


def test_accuracy_all_correct():
    modes = [PatientMode.STABLE, PatientMode.FATIGUED, PatientMode.UNSTABLE] * 100
    rep = ctx.evaluate_accuracy(_decisions(modes, modes))
    assert rep.accuracy == 1.0 and rep.ci_half_width == 0.0 and not rep.underpowered


def test_accuracy_279_of_300():
    truths = [PatientMode.STABLE] * 300
    labels = [PatientMode.STABLE] * 279 + [PatientMode.FATIGUED] * 21
    rep = ctx.evaluate_accuracy(_decisions(truths, labels))
    assert rep.accuracy == pytest.approx(0.93)
    assert rep.ci_half_width == pytest.approx(0.029, abs=0.001)
    assert rep.n == 300 and not rep.underpowered


def test_shuffled_labels_near_chance():
    rng = np.random.default_rng(5)
    modes = list(PatientMode) * 1000
    labels = [modes[i] for i in rng.permutation(len(modes))]
    rep = ctx.evaluate_accuracy(_decisions(modes, labels))
    assert rep.accuracy == pytest.approx(1 / 3, abs=0.03)


def test_small_sample_flagged_and_empty_rejected():
    rep = ctx.evaluate_accuracy(_decisions([PatientMode.STABLE] * 10, [PatientMode.STABLE] * 10))
    assert rep.underpowered
    with pytest.raises(ValueError):
        ctx.evaluate_accuracy([])


def test_confusion_counts():
    d = _decisions([PatientMode.STABLE, PatientMode.STABLE, PatientMode.FATIGUED],
                   [PatientMode.STABLE, PatientMode.UNSTABLE, PatientMode.FATIGUED])
    assert ctx.confusion(d) == {("Stable", "Stable"): 1, ("Stable", "Unstable"): 1, ("Fatigued", "Fatigued"): 1}
