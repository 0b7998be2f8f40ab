"""Energy-feedback adaptation of (k, c).

Once per movement cycle the learner runs the cycle under a sign
perturbation of its base parameters, compares the measured cycle energy
with the moving baseline of the previous cycles, and either commits the
probed direction (energy went down) or backs away from it (energy went up).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ImpedanceParams


@dataclass(frozen=True)
class AdaptState:
    theta_base: ImpedanceParams
    delta_k: float = 200.0
    delta_c: float = 2.0
    eta: float = 1.0
    rho: float = 0.5
    window: int = 10
    history: tuple[float, ...] = ()
    frozen: bool = False
    p: tuple[int, int] = (0, 0)
    # optional decay of the step scales with cycle count n:
    # delta_n = delta * max(anneal_floor, (1 + n / anneal_cycles) ** -anneal_power)
    anneal_cycles: float | None = None
    anneal_power: float = 1.0
    anneal_floor: float = 0.0

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.eta > 0 or not 0 < self.rho <= 1:
            raise ValueError("need eta > 0 and 0 < rho <= 1")
        if self.delta_k < 0 or self.delta_c < 0:
            raise ValueError("perturbation scales must be non-negative")
        if self.anneal_cycles is not None and not self.anneal_cycles > 0:
            raise ValueError("anneal_cycles must be positive when set")
        if self.anneal_power < 0 or not 0 <= self.anneal_floor <= 1:
            raise ValueError("need anneal_power >= 0 and anneal_floor in [0, 1]")

    @property
    def step_scale(self) -> float:
        if self.anneal_cycles is None:
            return 1.0
        decay = (1.0 + len(self.history) / self.anneal_cycles) ** -self.anneal_power
        return max(self.anneal_floor, decay)


@dataclass(frozen=True)
class CycleEnergy:
    index: int
    E_cycle: float
    E_diss: float
    baseline: float


def cycle_energy(force, velocity, dt: float) -> float:
    """Trapezoidal integral of F*v over one cycle (signed work into the plant)."""
    f = np.asarray(force, dtype=float)
    v = np.asarray(velocity, dtype=float)
    if f.size == 0 or f.shape != v.shape:
        raise ValueError("cycle_energy needs two non-empty series of equal length")
    return float(np.trapezoid(f * v, dx=dt)) if f.size > 1 else 0.0


def baseline(history, window: int) -> float:
    """Mean of the newest min(window, len(history)) cycle energies."""
    if len(history) == 0:
        raise ValueError("baseline of an empty history")
    recent = list(history)[-window:]
    return float(np.mean(recent))


def _probe(state: AdaptState, sign: float, gain: float) -> ImpedanceParams:
    th = state.theta_base
    pk, pc = state.p
    g = sign * gain * state.step_scale
    return th.clamped(th.k + g * pk * state.delta_k, th.c + g * pc * state.delta_c)


def perturb(state: AdaptState, rng: np.random.Generator) -> tuple[AdaptState, ImpedanceParams]:
    """Draw p in {-1, +1}^2 and return (state with p, params to run next cycle)."""
    if state.frozen:
        return replace(state, p=(0, 0)), state.theta_base
    draws = rng.integers(0, 2, size=2)
    p = (int(2 * draws[0] - 1), int(2 * draws[1] - 1))
    state = replace(state, p=p)
    return state, _probe(state, +1.0, 1.0)


def update(state: AdaptState, energy: float, base: float | None) -> tuple[AdaptState, bool]:
    """Commit or back off after a cycle; returns (new state, committed?).

    ``base`` is the baseline before this cycle (None on the very first
    cycle, which only seeds the history).
    """
    history = state.history + (float(energy),)
    if state.frozen or base is None or state.p == (0, 0):
        return replace(state, history=history), False
    if energy < base:
        theta = _probe(state, +1.0, state.eta)
        committed = True
    else:
        theta = _probe(state, -1.0, state.rho * state.eta)
        committed = False
    return replace(state, theta_base=theta, history=history), committed


def freeze(state: AdaptState) -> AdaptState:
    return replace(state, frozen=True, p=(0, 0))


def unfreeze(state: AdaptState) -> AdaptState:
    return replace(state, frozen=False)
