"""Impedance controller, reference trajectory and the three embodiment presets."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

from .dynamics import ImpedanceParams
from .sensing import FusedObservation

log = logging.getLogger(__name__)


class ControlMode(str, enum.Enum):
    RIGID = "Rigid"
    SOFT = "Soft"
    ADAPTIVE = "Adaptive"


@dataclass(frozen=True)
class ControlPreset:
    mode: ControlMode
    params: ImpedanceParams

    @property
    def fixed(self) -> bool:
        return self.mode is not ControlMode.ADAPTIVE


RIGID = ControlPreset(ControlMode.RIGID, ImpedanceParams.fixed(10_000.0, 40.0))
SOFT = ControlPreset(ControlMode.SOFT, ImpedanceParams.fixed(2_000.0, 20.0))
ADAPTIVE_K = (3_000.0, 8_000.0)
ADAPTIVE_C = (10.0, 40.0)


def adaptive_preset(k0: float = 8_000.0, c0: float = 40.0) -> ControlPreset:
    return ControlPreset(
        ControlMode.ADAPTIVE, ImpedanceParams(k0, c0, ADAPTIVE_K[0], ADAPTIVE_K[1], ADAPTIVE_C[0], ADAPTIVE_C[1])
    )


def preset_by_name(name: str, **adaptive_start: float) -> ControlPreset:
    key = name.strip().lower()
    if key == "rigid":
        return RIGID
    if key == "soft":
        return SOFT
    if key == "adaptive":
        return adaptive_preset(**adaptive_start)
    raise ValueError(f"unknown preset {name!r} (expected rigid, soft or adaptive)")


@dataclass(frozen=True)
class ReferenceTrajectory:
    amplitude: float = 0.002
    f_ref: float = 0.5
    offset: float = 0.0

    def __post_init__(self) -> None:
        if self.amplitude < 0 or not self.f_ref > 0:
            raise ValueError("reference needs amplitude >= 0 and f_ref > 0")


def reference(t: float, traj: ReferenceTrajectory) -> tuple[float, float]:
    w = 2.0 * math.pi * traj.f_ref
    return traj.offset + traj.amplitude * math.sin(w * t), traj.amplitude * w * math.cos(w * t)


def impedance_force(position: float, velocity: float, x_ref: float, v_ref: float, params: ImpedanceParams) -> float:
    """u = -k (x - x_ref) - c (v - v_ref)."""
    return -params.k * (position - x_ref) - params.c * (velocity - v_ref)


class ImpedanceController:
    """Holds the active (k, c) and the last command.

    ``apply_params`` takes effect at the next control tick. Requests outside
    the preset rectangle are clamped and counted; fixed presets ignore them.
    """

    def __init__(self, preset: ControlPreset, saturation: float | None = None):
        self.preset = preset
        self.params = preset.params
        self.saturation = saturation
        self.u = 0.0
        self.clamp_count = 0
        self.rejected_count = 0

    def apply_params(self, k: float, c: float) -> ImpedanceParams:
        if self.preset.fixed:
            if (k, c) != (self.params.k, self.params.c):
                self.rejected_count += 1
            return self.params
        applied = self.params.clamped(k, c)
        if (applied.k, applied.c) != (k, c):
            self.clamp_count += 1
            log.debug("clamped (k=%g, c=%g) to (%g, %g)", k, c, applied.k, applied.c)
        self.params = applied
        return applied

    def command(self, obs: FusedObservation, x_ref: float, v_ref: float) -> float:
        """New actuator force for the coming hold interval; holds on invalid input."""
        if not obs.valid:
            return self.u
        u = impedance_force(obs.state_position, obs.state_velocity, x_ref, v_ref, self.params)
        if self.saturation is not None:
            u = max(-self.saturation, min(self.saturation, u))
        self.u = u
        return u
