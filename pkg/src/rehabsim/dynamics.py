"""Plant model: effective point mass, semi-implicit Euler, modal formulas.

The bare plant is a pure mass. Stiffness and damping live in the
impedance law of the controller; the modal helpers below describe the
closed spring-damper that the law creates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Largest physics step accepted; equals one 120 Hz control period so that the
# coarse-step sensitivity runs stay admissible.
MAX_DT_PHYS = 1.0 / 120.0


class NonFiniteStateError(FloatingPointError):
    """Raised when the integrator meets a non-finite force or state."""


@dataclass(frozen=True)
class PlantConfig:
    m_eff: float = 1.0
    dt_phys: float = 1e-3
    x0: float = 0.0
    v0: float = 0.0

    def __post_init__(self) -> None:
        if not self.m_eff > 0:
            raise ValueError(f"m_eff must be positive, got {self.m_eff}")
        if not 0 < self.dt_phys <= MAX_DT_PHYS + 1e-15:
            raise ValueError(f"dt_phys must lie in (0, 1/120] s, got {self.dt_phys}")
        if not (math.isfinite(self.x0) and math.isfinite(self.v0)):
            raise ValueError("initial state must be finite")


@dataclass(frozen=True)
class ImpedanceParams:
    """Stiffness/damping pair with its admissible rectangle."""

    k: float
    c: float
    k_min: float
    k_max: float
    c_min: float
    c_max: float

    def __post_init__(self) -> None:
        if min(self.k_min, self.c_min) <= 0:
            raise ValueError("impedance bounds must be positive")
        if self.k_min > self.k_max or self.c_min > self.c_max:
            raise ValueError("impedance bounds are inverted")
        if not (self.k_min <= self.k <= self.k_max and self.c_min <= self.c <= self.c_max):
            raise ValueError(
                f"(k={self.k}, c={self.c}) outside [{self.k_min}, {self.k_max}] x [{self.c_min}, {self.c_max}]"
            )

    @classmethod
    def fixed(cls, k: float, c: float) -> ImpedanceParams:
        return cls(k, c, k, k, c, c)

    def clamped(self, k: float, c: float) -> ImpedanceParams:
        """Same bounds, (k, c) clipped into the rectangle."""
        k = min(max(k, self.k_min), self.k_max)
        c = min(max(c, self.c_min), self.c_max)
        return ImpedanceParams(k, c, self.k_min, self.k_max, self.c_min, self.c_max)

    def contains(self, k: float, c: float) -> bool:
        return self.k_min <= k <= self.k_max and self.c_min <= c <= self.c_max


@dataclass(frozen=True)
class BodyState:
    x: float = 0.0
    v: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class ModalProperties:
    omega_n: float
    f_n: float
    zeta: float


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def natural_frequency(k: float, m: float) -> float:
    """Undamped natural frequency sqrt(k/m) in rad/s."""
    _require_positive(k=k, m=m)
    return math.sqrt(k / m)


def damping_ratio(k: float, c: float, m: float) -> float:
    _require_positive(k=k, c=c, m=m)
    return c / (2.0 * math.sqrt(k * m))


def modal_properties(k: float, c: float, m: float) -> ModalProperties:
    omega_n = natural_frequency(k, m)
    return ModalProperties(omega_n, omega_n / (2.0 * math.pi), damping_ratio(k, c, m))


def spring_energy(k: float, amplitude: float) -> float:
    """Elastic energy 0.5*k*A**2 stored at deflection ``amplitude``."""
    _require_positive(k=k)
    return 0.5 * k * amplitude * amplitude


def instantaneous_power(force: float, velocity: float) -> float:
    """Signed power F*v; positive means energy flows into the plant."""
    return force * velocity


def step(state: BodyState, total_force: float, config: PlantConfig, tick: int | None = None) -> BodyState:
    """Advance one physics step with semi-implicit (symplectic) Euler.

    Velocity is kicked first and the drift uses the new velocity.
    ``tick`` only decorates the error message.
    """
    if not math.isfinite(total_force):
        where = f" at tick {tick}" if tick is not None else ""
        raise NonFiniteStateError(f"non-finite force {total_force!r}{where} (state {state})")
    dt = config.dt_phys
    v = state.v + (total_force / config.m_eff) * dt
    x = state.x + v * dt
    return BodyState(x, v, state.t + dt)


def damped_free_response(t, x0: float, v0: float, k: float, c: float, m: float):
    """Closed-form unforced response of m*x'' + c*x' + k*x = 0 (underdamped).

    Accepts scalar or numpy ``t``; used as an oracle for the integrator.
    """
    import numpy as np

    zeta = damping_ratio(k, c, m)
    if zeta >= 1.0:
        raise ValueError("closed form implemented for the underdamped case only")
    wn = natural_frequency(k, m)
    wd = wn * math.sqrt(1.0 - zeta * zeta)
    sigma = zeta * wn
    t = np.asarray(t, dtype=float)
    b = (v0 + sigma * x0) / wd
    return np.exp(-sigma * t) * (x0 * np.cos(wd * t) + b * np.sin(wd * t))
