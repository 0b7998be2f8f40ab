"""Multi-rate noisy sensors, zero-order-hold fusion and the state estimator.

Three channels are simulated on one clock: contact force at 1 kHz, IMU
linear acceleration at 500 Hz and a depth-camera position proxy at 60 Hz.
Each reading is the true value times (1 + n_t), where n_t is a stationary
AR(1) process, so noise is multiplicative and temporally correlated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Channel(str, enum.Enum):
    FORCE = "force"
    ACCEL = "accel"
    POSITION = "position"


@dataclass(frozen=True)
class SensorSpec:
    rate: float
    noise_rel: float = 0.05
    corr_time: float = 0.05

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ValueError("sensor rate must be positive")
        if not 0.0 <= self.noise_rel < 0.5:
            raise ValueError(f"noise_rel must lie in [0, 0.5), got {self.noise_rel}")
        if not self.corr_time > 0:
            raise ValueError("corr_time must be positive")

    @property
    def period(self) -> float:
        return 1.0 / self.rate

    @property
    def rho(self) -> float:
        return math.exp(-self.period / self.corr_time)


FORCE_SENSOR = SensorSpec(rate=1000.0)
IMU = SensorSpec(rate=500.0)
DEPTH_CAMERA = SensorSpec(rate=60.0)

DEFAULT_SPECS = {Channel.FORCE: FORCE_SENSOR, Channel.ACCEL: IMU, Channel.POSITION: DEPTH_CAMERA}


@dataclass(frozen=True)
class SensorFrame:
    t: float
    channel: Channel
    value: float
    clean_value: float


def ar1_noise_factor(rng: np.random.Generator, spec: SensorSpec, dt: float, prev_state: float | None):
    """One step of the multiplicative AR(1) noise.

    n_t = rho * n_{t-1} + sqrt(1 - rho**2) * eps_t, eps_t ~ N(0, noise_rel**2),
    rho = exp(-dt / corr_time). ``prev_state=None`` starts from the
    stationary distribution. Returns (1 + n_t, n_t).
    """
    z = rng.standard_normal()
    if prev_state is None:
        state = spec.noise_rel * z
    else:
        rho = math.exp(-dt / spec.corr_time)
        state = rho * prev_state + math.sqrt(1.0 - rho * rho) * spec.noise_rel * z
    return 1.0 + state, state


def ar1_noise_series(rng: np.random.Generator, spec: SensorSpec, n: int, dt: float | None = None) -> np.ndarray:
    """``n`` consecutive factors, identical to iterating ``ar1_noise_factor``."""
    dt = spec.period if dt is None else dt
    if n <= 0:
        return np.ones(0)
    z = rng.standard_normal(n).tolist()
    rho = math.exp(-dt / spec.corr_time)
    gain = math.sqrt(1.0 - rho * rho) * spec.noise_rel
    out = [0.0] * n
    state = spec.noise_rel * z[0]
    out[0] = 1.0 + state
    for i in range(1, n):
        state = rho * state + gain * z[i]
        out[i] = 1.0 + state
    return np.asarray(out)


def sample(channel: Channel, true_value: float, t: float, spec: SensorSpec, factor: float) -> SensorFrame:
    """Noisy reading of ``true_value``; ``factor`` comes from the channel's AR(1) stream."""
    return SensorFrame(t, Channel(channel), true_value * factor, true_value)


@dataclass
class FusedObservation:
    """Control-tick snapshot.

    ``position``/``velocity_est`` are the zero-order-held camera reading and
    its two-frame finite difference. ``state_position``/``state_velocity``
    come from the IMU-propagated estimator, predicted to the middle of the
    coming hold interval; the impedance law uses these.
    """

    t: float
    force: float = 0.0
    accel: float = 0.0
    position: float = 0.0
    velocity_est: float = 0.0
    state_position: float = 0.0
    state_velocity: float = 0.0
    staleness: dict = field(default_factory=dict)
    valid: bool = False


def fuse(latest: dict, tick_t: float, estimate: tuple[float, float] | None = None) -> FusedObservation:
    """Zero-order hold of the newest frame per channel at ``tick_t``.

    ``latest`` maps Channel -> list of frames (oldest first, at most the two
    newest are used). Frames stamped after ``tick_t`` are ignored.
    """
    obs = FusedObservation(t=tick_t)
    held = {}
    for ch in Channel:
        frames = [f for f in latest.get(ch, ()) if f.t <= tick_t + 1e-12]
        if not frames:
            return obs
        held[ch] = frames
    obs.force = held[Channel.FORCE][-1].value
    obs.accel = held[Channel.ACCEL][-1].value
    pos_frames = held[Channel.POSITION]
    obs.position = pos_frames[-1].value
    if len(pos_frames) >= 2:
        a, b = pos_frames[-2], pos_frames[-1]
        obs.velocity_est = (b.value - a.value) / (b.t - a.t)
    obs.staleness = {ch.value: tick_t - held[ch][-1].t for ch in Channel}
    if estimate is None:
        obs.state_position, obs.state_velocity = obs.position, obs.velocity_est
    else:
        obs.state_position, obs.state_velocity = estimate
    obs.valid = True
    return obs


class StateEstimator:
    """Complementary filter: IMU dead reckoning corrected by camera frames.

    Between camera frames the state is propagated with the held IMU
    acceleration. Each camera frame pulls the estimate toward the measured
    position with a second-order correction (bandwidth ``omega_c``).
    """

    def __init__(self, camera_period: float = 1.0 / 60.0, omega_c: float = 10.0, zeta: float = 0.7):
        self.gain_x = 2.0 * zeta * omega_c * camera_period
        self.gain_v = omega_c * omega_c * camera_period
        self.x = 0.0
        self.v = 0.0
        self.t = 0.0
        self.a = 0.0
        self.initialized = False

    def reset(self, t: float, position: float, velocity: float) -> None:
        """Start from a known state instead of the first camera frame."""
        self.x, self.v, self.t = position, velocity, t
        self.initialized = True

    def _propagate(self, t: float) -> None:
        dt = t - self.t
        if dt > 0:
            self.x += self.v * dt + 0.5 * self.a * dt * dt
            self.v += self.a * dt
            self.t = t

    def on_accel(self, t: float, accel: float) -> None:
        if self.initialized:
            self._propagate(t)
        self.a = accel

    def on_position(self, t: float, position: float) -> None:
        if not self.initialized:
            self.x, self.v, self.t = position, 0.0, t
            self.initialized = True
            return
        self._propagate(t)
        err = position - self.x
        self.x += self.gain_x * err
        self.v += self.gain_v * err

    def predict(self, t: float) -> tuple[float, float]:
        dt = t - self.t
        return (self.x + self.v * dt + 0.5 * self.a * dt * dt, self.v + self.a * dt)
