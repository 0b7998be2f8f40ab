"""Measurement kernels over logged series. All functions are pure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

DEFAULT_LEVER = 0.15  # m, converts end-effector force to a joint moment


@dataclass(frozen=True)
class CycleReport:
    index: int
    E_cycle: float
    E_diss: float
    r: float
    moment_var: float
    traj_rms: float
    peak_force: float
    phase_lag: float


@dataclass(frozen=True)
class SpectralReport:
    freqs: np.ndarray
    psd: np.ndarray
    band_low: float
    band_high: float

    @property
    def total(self) -> float:
        df = self.freqs[1] - self.freqs[0] if self.freqs.size > 1 else 0.0
        return float(np.sum(self.psd) * df)

    @property
    def high_fraction(self) -> float:
        tot = self.total
        return self.band_high / tot if tot > 0 else math.nan


def force_velocity_correlation(force, velocity) -> float:
    """Pearson r between force and velocity; NaN when either is constant."""
    f = np.asarray(force, dtype=float)
    v = np.asarray(velocity, dtype=float)
    if f.shape != v.shape or f.size < 2:
        raise ValueError("need two equal-length series with at least 2 samples")
    fc = f - f.mean()
    vc = v - v.mean()
    denom = math.sqrt(float(np.dot(fc, fc)) * float(np.dot(vc, vc)))
    if denom == 0.0:
        return math.nan
    return max(-1.0, min(1.0, float(np.dot(fc, vc)) / denom))


def moment_variance(u, lever: float = DEFAULT_LEVER) -> float:
    if not lever > 0:
        raise ValueError("lever arm must be positive")
    return float(np.var(np.asarray(u, dtype=float) * lever))


def trajectory_rms(x, x_ref) -> float:
    e = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def dissipated_energy(v, c, dt: float) -> float:
    """Sum of c_t * v_t**2 * dt; ``c`` may be a scalar or a series."""
    v = np.asarray(v, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), v.shape)
    return float(np.sum(c * v * v) * dt)


def return_time(deviation, dt: float, onset_index: int, band: float = 0.10, hold: float = 0.2, horizon: float = 3.0):
    """Time after ``onset_index`` until |deviation| stays below ``band`` for ``hold`` s.

    ``deviation`` is the relative energy deviation series sampled every
    ``dt``. Returns None when the band is not re-entered within ``horizon``.
    """
    dev = np.abs(np.asarray(deviation, dtype=float))
    n_hold = int(round(hold / dt))
    n_horizon = int(round(horizon / dt))
    outside = dev >= band
    for lag in range(0, n_horizon + 1):
        start = onset_index + lag
        stop = start + n_hold + 1
        if stop > dev.size:
            return None
        if not outside[start:stop].any():
            return lag * dt
    return None


def stability_rate(deviations, band: float = 0.10) -> float:
    """Fraction of cycles whose relative energy deviation stays inside ``band``."""
    d = np.abs(np.asarray(deviations, dtype=float))
    d = d[np.isfinite(d)]
    if d.size == 0:
        return math.nan
    return float(np.mean(d < band))


def spectral_bands(series, sample_rate: float, low_edge: float = 20.0, high_edge: float = 30.0) -> SpectralReport:
    """Averaged windowed periodogram: 1 s Hann segments, 50 % overlap.

    band_low integrates the density below ``low_edge``; band_high from
    ``high_edge`` up to Nyquist.
    """
    x = np.asarray(series, dtype=float)
    nseg = int(round(sample_rate))
    if x.size < 2 * nseg:
        raise ValueError(f"need at least 2 s of samples ({2 * nseg}), got {x.size}")
    freqs, psd = signal.welch(x, fs=sample_rate, window="hann", nperseg=nseg, noverlap=nseg // 2, detrend="constant")
    df = freqs[1] - freqs[0]
    low = float(np.sum(psd[freqs < low_edge]) * df)
    high = float(np.sum(psd[freqs >= high_edge]) * df)
    return SpectralReport(freqs, psd, low, high)


def phase_randomized_surrogate(series, rng: np.random.Generator) -> np.ndarray:
    """Same amplitude spectrum, uniformly random Fourier phases.

    The mean (DC) and, for even lengths, the Nyquist bin keep their phase so
    the surrogate stays real with the original mean.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    spec = np.fft.rfft(x)
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.size)
    phases[0] = 0.0
    if n % 2 == 0:
        phases[-1] = 0.0
    surrogate = np.abs(spec) * np.exp(1j * (np.angle(spec) * (np.arange(spec.size) == 0) + phases))
    if n % 2 == 0:
        surrogate[-1] = spec[-1]
    return np.fft.irfft(surrogate, n)


def force_fluctuation(force, n_harmonics: int = 3) -> float:
    """RMS of one cycle of force after removing its mean and first harmonics.

    The removed part is the smooth movement-rate content; what is left is
    the cycle's fluctuation around it.
    """
    f = np.asarray(force, dtype=float)
    spec = np.fft.rfft(f)
    spec[: n_harmonics + 1] = 0.0
    resid = np.fft.irfft(spec, f.size)
    return float(np.sqrt(np.mean(resid * resid)))


def relative_deviations(energies, window: int = 10) -> np.ndarray:
    """|E_n - B_n| / B_n with B_n the mean of the previous ``window`` cycles.

    The first cycle has no baseline and yields NaN.
    """
    e = np.asarray(energies, dtype=float)
    out = np.full(e.shape, math.nan)
    for n in range(1, e.size):
        base = float(np.mean(e[max(0, n - window) : n]))
        if base > 0:
            out[n] = abs(e[n] - base) / base
    return out


def phase_aligned_deviation(energy, samples_per_cycle: int, onset: int, history: int = 5, exclude=None) -> np.ndarray | None:
    """Relative deviation of a tick-level energy signal after ``onset``.

    The baseline at each tick is the mean of the same cycle phase over the
    ``history`` cycles before the onset's cycle; ticks flagged in ``exclude``
    are left out of it. The deviation is normalized by the mean baseline
    level. Returns the deviation from ``onset`` on, or None if there is not
    enough clean history.
    """
    e = np.asarray(energy, dtype=float)
    n = samples_per_cycle
    start = (onset // n - history) * n
    if start < 0:
        return None
    block = e[start : start + history * n].reshape(history, n)
    if exclude is not None:
        mask = ~np.asarray(exclude[start : start + history * n], dtype=bool).reshape(history, n)
        counts = mask.sum(axis=0)
        if np.any(counts == 0):
            return None
        prof = np.where(mask, block, 0.0).sum(axis=0) / counts
    else:
        prof = block.mean(axis=0)
    scale = float(np.mean(prof))
    if not scale > 0:
        return None
    tail = e[onset:]
    base = np.resize(np.roll(prof, -(onset % n)), tail.size)
    return np.abs(tail - base) / scale
