"""Simulated patient arm: intended movement, compliant coupling, impulses."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

TWO_PI = 2.0 * math.pi


class PatientMode(str, enum.Enum):
    STABLE = "Stable"
    FATIGUED = "Fatigued"
    UNSTABLE = "Unstable"


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PatientParams:
    """Baseline (Stable) patient description.

    ``phase_lead`` is a constant advance of the patient's intent over the
    robot reference, in radians of the fundamental; harmonics are shifted
    consistently (h * lead). ``phase_drift`` adds a deterministic per-cycle
    increment to the lead.
    """

    k_p: float = 5000.0
    c_p: float = 0.0
    tau: float = 0.0
    f0: float = 0.5
    X_amp: float = 0.001
    harmonic_weights: tuple[float, ...] = (0.2, 0.1)
    sigma_phase: float = 0.05
    force_target: float = 10.0
    phase_lead: float = 2.2
    phase_drift: float = 0.0
    # mode deltas
    fatigue_stiffness_scale: float = 0.8
    fatigue_extra_latency: float = 0.080
    sigma_phase_unstable: float = 0.60

    def __post_init__(self) -> None:
        if not self.k_p > 0:
            raise ValueError("k_p must be positive")
        if self.c_p < 0 or self.tau < 0 or self.sigma_phase < 0:
            raise ValueError("c_p, tau and sigma_phase must be non-negative")
        if not self.f0 > 0:
            raise ValueError("f0 must be positive")
        if not 5.0 <= self.force_target <= 15.0:
            raise ValueError(f"force_target must lie in [5, 15] N, got {self.force_target}")
        object.__setattr__(self, "harmonic_weights", tuple(float(w) for w in self.harmonic_weights))

    @property
    def period(self) -> float:
        return 1.0 / self.f0


def apply_mode(params: PatientParams, mode: PatientMode) -> PatientParams:
    """Effective parameters for ``mode``; ``params`` must be the Stable baseline."""
    mode = PatientMode(mode)
    if mode is PatientMode.STABLE:
        return params
    if mode is PatientMode.FATIGUED:
        return replace(
            params,
            k_p=params.k_p * params.fatigue_stiffness_scale,
            tau=params.tau + params.fatigue_extra_latency,
        )
    return replace(params, sigma_phase=params.sigma_phase_unstable)


def draw_cycle_phases(rng: np.random.Generator, sigmas) -> np.ndarray:
    """Per-cycle phase offsets, one N(0, sigma_n**2) draw per cycle start.

    ``sigmas`` has one entry per cycle boundary (n_cycles + 1). Standard
    normals are drawn first so changing a mode schedule rescales, but never
    reorders, the stream.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    return rng.standard_normal(sigmas.shape[0]) * sigmas


def phase_path(t, f0: float, cycle_phases: np.ndarray):
    """Continuous phase offset and its rate at times ``t``.

    The offset interpolates linearly between the per-cycle draws, so the
    intended trajectory never jumps at a cycle boundary.
    """
    t = np.asarray(t, dtype=float)
    period = 1.0 / f0
    n_last = cycle_phases.shape[0] - 1
    pos = np.clip(t / period, 0.0, float(n_last))
    idx = np.minimum(np.floor(pos).astype(int), max(n_last - 1, 0))
    if n_last == 0:
        return np.full_like(t, cycle_phases[0]), np.zeros_like(t)
    frac = pos - idx
    lo = cycle_phases[idx]
    hi = cycle_phases[idx + 1]
    phi = lo + (hi - lo) * frac
    rate = np.where((t >= 0.0) & (t / period < n_last), (hi - lo) / period, 0.0)
    return phi, rate


def intended_trajectory(t, params: PatientParams, cycle_phases: np.ndarray | None = None):
    """Patient intent x_p(t) and its exact derivative v_p(t).

    x_p = X_amp * [sin(w t + psi) + sum_h w_h sin(h (w t + psi))] with
    psi = lead + drift + per-cycle jitter.
    """
    t = np.asarray(t, dtype=float)
    w = TWO_PI * params.f0
    if cycle_phases is None:
        jitter, jitter_rate = np.zeros_like(t), np.zeros_like(t)
    else:
        jitter, jitter_rate = phase_path(t, params.f0, cycle_phases)
    drift_rate = params.phase_drift * params.f0
    psi = params.phase_lead + drift_rate * t + jitter
    theta = w * t + psi
    theta_dot = w + drift_rate + jitter_rate
    x = np.sin(theta)
    dx = np.cos(theta)
    for h, weight in enumerate(params.harmonic_weights, start=2):
        x = x + weight * np.sin(h * theta)
        dx = dx + weight * h * np.cos(h * theta)
    return params.X_amp * x, params.X_amp * dx * theta_dot


def contact_force(x_p, v_p, x, v, params: PatientParams):
    """Bidirectional series-compliance force from the (delayed) intent.

    ``params`` holds the effective values for the active mode; the caller
    evaluates the intent at t - tau.
    """
    return params.k_p * (x_p - x) + params.c_p * (v_p - v)


@dataclass(frozen=True)
class DisturbanceConfig:
    magnitude: float = 8.0
    duration: float = 0.05
    mean_rate: float = 0.5  # events per movement cycle
    enabled: bool = False

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError("impulse duration must be positive")
        if self.magnitude < 0 or self.mean_rate < 0:
            raise ValueError("magnitude and mean_rate must be non-negative")


@dataclass(frozen=True)
class ImpulseSchedule:
    onsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    signs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duration: float = 0.05
    magnitude: float = 8.0

    def __len__(self) -> int:
        return int(self.onsets.shape[0])


def draw_impulse_schedule(
    rng: np.random.Generator, config: DisturbanceConfig, horizon: float, f0: float
) -> ImpulseSchedule:
    """Poisson onsets over [0, horizon); onsets inside an active pulse are dropped."""
    if not config.enabled or config.mean_rate == 0:
        return ImpulseSchedule(duration=config.duration, magnitude=config.magnitude)
    rate = config.mean_rate * f0  # events per second
    onsets, signs = [], []
    t = 0.0
    busy_until = -math.inf
    while True:
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if t < busy_until:
            continue
        onsets.append(t)
        signs.append(sign)
        busy_until = t + config.duration
    return ImpulseSchedule(np.array(onsets), np.array(signs), config.duration, config.magnitude)


def impulse_disturbance(t, schedule: ImpulseSchedule):
    """+-magnitude inside a pulse window [onset, onset + duration), else 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    if len(schedule) == 0:
        return out if out.ndim else float(out)
    idx = np.searchsorted(schedule.onsets, t, side="right") - 1
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    active = valid & (t < schedule.onsets[safe] + schedule.duration)
    out = np.where(active, schedule.magnitude * schedule.signs[safe], 0.0)
    return out if out.ndim else float(out)


def calibrate_amplitude(
    params: PatientParams,
    peak_force: Callable[[float], float],
    reference_amplitude: float,
    tolerance: float = 0.02,
    max_steps: int = 40,
) -> float:
    """Find X_amp whose steady peak |contact force| hits ``params.force_target``.

    ``peak_force(X_amp)`` runs the closed loop and returns the peak over the
    calibration cycles. The search stays on the branch where peak force
    grows with amplitude, i.e. above the amplitude that best matches the
    robot reference.
    """
    target = params.force_target
    span = max(reference_amplitude, 1e-3)
    grid = np.linspace(0.0, 2.0 * span, 17)
    peaks = [peak_force(float(a)) for a in grid]
    i_min = int(np.argmin(peaks))
    lo, f_lo = float(grid[i_min]), peaks[i_min]
    if f_lo > target * (1.0 + tolerance):
        raise CalibrationError(
            f"force target {target} N unreachable: minimum peak {f_lo:.2f} N at X_amp={lo:.4f} m"
        )
    hi = lo + span
    f_hi = peak_force(hi)
    grow = 0
    while f_hi < target:
        hi += span
        f_hi = peak_force(hi)
        grow += 1
        if grow > 20:
            raise CalibrationError("could not bracket the force target")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        f_mid = peak_force(mid)
        if abs(f_mid - target) <= tolerance * target:
            return mid
        if f_mid < target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"bisection did not converge within {max_steps} steps")
