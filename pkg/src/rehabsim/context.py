"""Three-class partner-state classifier and the impedance bias it drives."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .control import ADAPTIVE_C, ADAPTIVE_K, ControlMode
from .dynamics import ImpedanceParams
from .patient import PatientMode

MIN_WINDOWS = 300


@dataclass(frozen=True)
class ContextFeatures:
    dE_rel: float
    phase_lag: float
    phase_var: float
    window_id: int
    valid: bool = True


@dataclass(frozen=True)
class ContextThresholds:
    # calibrated on seeds 1000-1007 (scripts/calibrate_context.py)
    lag_thr: float = 0.0113
    dE_thr: float = 0.16
    var_thr: float = 0.00233

    def __post_init__(self) -> None:
        if not (self.lag_thr > 0 and self.dE_thr > 0 and self.var_thr > 0):
            raise ValueError("context thresholds must be positive")


@dataclass(frozen=True)
class ContextDecision:
    label: PatientMode
    truth: PatientMode
    features: ContextFeatures


@dataclass(frozen=True)
class PolicySettings:
    """Per-cycle increments and targets of the state-dependent bias."""

    fatigued_k: float = 4500.0
    fatigued_c: float = 30.0
    unstable_c: float = 35.0
    step_k: float = 200.0
    step_c: float = 2.0


@dataclass(frozen=True)
class AccuracyReport:
    accuracy: float
    ci_half_width: float
    n: int
    underpowered: bool


def cross_correlation_lag(a, b, dt: float, max_lag: float | None = None, refine: bool = False) -> float:
    """Lag (s) at which series ``a`` best lines up with series ``b``.

    Positive when ``a`` trails ``b``: a(t) ~ b(t - lag). The search is
    bounded to +-half the series length (or ``max_lag``). Uses the circular
    normalized cross-correlation, which suits series spanning whole cycles.
    With ``refine`` the peak is located between samples by a parabola
    through the best lag and its two neighbours.
    """
    f = np.asarray(a, dtype=float)
    v = np.asarray(b, dtype=float)
    if f.shape != v.shape or f.size < 2:
        raise ValueError("need equal-length series")
    f = f - f.mean()
    v = v - v.mean()
    denom = math.sqrt(float(np.dot(f, f)) * float(np.dot(v, v)))
    if denom == 0.0:
        return 0.0
    n = f.size
    # corr[s] = sum_t a[t] b[t - s]
    corr = np.fft.irfft(np.fft.rfft(f) * np.conj(np.fft.rfft(v)), n) / denom
    lags = np.arange(n)
    lags = np.where(lags > n // 2, lags - n, lags)
    limit = n // 2 if max_lag is None else min(n // 2, int(round(max_lag / dt)))
    mask = np.abs(lags) <= limit
    best = int(lags[mask][np.argmax(corr[mask])])
    if not refine or n < 3:
        return best * dt
    y0, y1, y2 = corr[(best - 1) % n], corr[best % n], corr[(best + 1) % n]
    curv = y0 - 2.0 * y1 + y2
    frac = 0.5 * (y0 - y2) / curv if curv < 0 else 0.0
    return (best + float(np.clip(frac, -0.5, 0.5))) * dt


def motion_lag(force, velocity, dt: float) -> float:
    """How long the end-effector motion trails the contact force (s)."""
    return cross_correlation_lag(velocity, force, dt)


def reference_lag(force, v_ref, dt: float) -> float:
    """How long the contact force trails the commanded velocity (s).

    Unlike the lag against measured velocity this does not move with the
    controller stiffness, so it isolates the partner's timing.
    """
    return cross_correlation_lag(force, v_ref, dt, refine=True)


def coupling_energy(force, k_p: float) -> float:
    """Mean elastic energy F**2 / (2 k_p) held in the partner coupling (J)."""
    f = np.asarray(force, dtype=float)
    if f.size == 0 or not k_p > 0:
        raise ValueError("need a non-empty force series and k_p > 0")
    return float(np.mean(f * f)) / (2.0 * k_p)


def conditioned_baseline(ks, values, k: float) -> float | None:
    """Expected value at stiffness ``k`` from past (k, value) pairs.

    A straight-line fit in k when the pool spans more than 5 % of its mean
    stiffness, else the plain mean. None for an empty pool.
    """
    ks = np.asarray(ks, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return None
    if vals.size < 3 or np.ptp(ks) <= 0.05 * abs(float(np.mean(ks))):
        return float(np.mean(vals))
    slope, icpt = np.polyfit(ks, vals, 1)
    return float(icpt + slope * k)


def fundamental_phase(series, dt: float, f0: float) -> float:
    """Phase (rad) of the f0 component of a series covering whole cycles."""
    x = np.asarray(series, dtype=float)
    t = np.arange(x.size) * dt
    w = 2.0 * math.pi * f0
    return math.atan2(float(np.dot(x, np.cos(w * t))), float(np.dot(x, np.sin(w * t))))


def circular_variance_rad2(phases) -> float:
    """Variance of phases after unwrapping around their circular mean."""
    ph = np.asarray(phases, dtype=float)
    if ph.size < 2:
        return 0.0
    mean = math.atan2(float(np.mean(np.sin(ph))), float(np.mean(np.cos(ph))))
    d = np.angle(np.exp(1j * (ph - mean)))
    return float(np.var(d))


def extract_features(
    energy: float,
    lag: float,
    phases,
    energy_baseline: float | None,
    lag_baseline: float,
    window_id: int,
    var_cycles: int = 3,
) -> ContextFeatures:
    """Features of the cycle just completed.

    ``energy`` and ``lag`` belong to that cycle and are expressed against
    baselines from cycles judged Stable. ``phases`` holds the per-cycle
    force phases, newest last; their spread over the newest ``var_cycles``
    is the variance feature. Invalid until that many cycles exist.
    """
    phases = list(phases)
    if energy_baseline is None or not energy_baseline > 0 or len(phases) < var_cycles:
        return ContextFeatures(math.nan, math.nan, math.nan, window_id, valid=False)
    var = circular_variance_rad2(phases[-var_cycles:])
    return ContextFeatures((energy - energy_baseline) / energy_baseline, lag - lag_baseline, var, window_id)


def classify(features: ContextFeatures, thresholds: ContextThresholds = ContextThresholds()) -> PatientMode:
    if features.phase_var > thresholds.var_thr:
        return PatientMode.UNSTABLE
    if features.phase_lag > thresholds.lag_thr and features.dE_rel < -thresholds.dE_thr:
        return PatientMode.FATIGUED
    return PatientMode.STABLE


def _toward(value: float, target: float, step: float) -> float:
    if value < target:
        return min(target, value + step)
    return max(target, value - step)


def behavior_policy(
    label: PatientMode,
    theta: ImpedanceParams,
    mode: ControlMode,
    settings: PolicySettings = PolicySettings(),
) -> ImpedanceParams | None:
    """Biased base parameters for the next cycle, or None when not adaptive."""
    if ControlMode(mode) is not ControlMode.ADAPTIVE:
        return None
    label = PatientMode(label)
    k, c = theta.k, theta.c
    if label is PatientMode.FATIGUED:
        k = _toward(k, settings.fatigued_k, settings.step_k)
        c = _toward(c, settings.fatigued_c, settings.step_c)
    elif label is PatientMode.UNSTABLE:
        c = _toward(c, settings.unstable_c, settings.step_c)
    else:
        k = k + settings.step_k
    k = min(max(k, ADAPTIVE_K[0]), ADAPTIVE_K[1])
    c = min(max(c, ADAPTIVE_C[0]), ADAPTIVE_C[1])
    return theta.clamped(k, c)


def evaluate_accuracy(decisions) -> AccuracyReport:
    decisions = list(decisions)
    n = len(decisions)
    if n == 0:
        raise ValueError("no decisions to evaluate")
    correct = sum(1 for d in decisions if PatientMode(d.label) is PatientMode(d.truth))
    acc = correct / n
    half = 1.96 * math.sqrt(acc * (1.0 - acc) / n)
    return AccuracyReport(acc, half, n, n < MIN_WINDOWS)


def confusion(decisions) -> dict[tuple[str, str], int]:
    """Counts keyed by (truth, label)."""
    return dict(Counter((PatientMode(d.truth).value, PatientMode(d.label).value) for d in decisions))
