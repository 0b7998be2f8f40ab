"""One closed-loop episode on an integer clock.

Time is counted in units of 1/30000 s so that the physics step, the 120 Hz
control tick and the 1 kHz / 500 Hz / 60 Hz sensor grids are all exact.
Physics state s_i lives at T_i = i * dt. A sensor sample or control tick
stamped in [T_i, T_i+dt) sees s_i (sample and hold). A command computed at
T_i drives step i; one computed strictly inside the step drives step i+1.
At equal timestamps sensors are sampled before the tick is processed.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import adaptation as adapt
from .. import context as ctx
from .. import metrics
from ..control import ImpedanceController, adaptive_preset, preset_by_name
from ..dynamics import NonFiniteStateError
from ..patient import (
    PatientMode,
    PatientParams,
    apply_mode,
    calibrate_amplitude,
    draw_cycle_phases,
    draw_impulse_schedule,
    impulse_disturbance,
    intended_trajectory,
)
from ..rng import Streams
from ..sensing import Channel, SensorFrame, SensorSpec, StateEstimator, ar1_noise_series, fuse
from .config import ConfigError, ExperimentConfig

CLOCK_HZ = 30_000
CONTROL_HZ = 120
SENSOR_HZ = {Channel.FORCE: 1000, Channel.ACCEL: 500, Channel.POSITION: 60}
CALIBRATION_CYCLES = 5
# plant positions beyond this are a numerical blow-up, not motion
MAX_EXCURSION = 10.0

TICK_COLUMNS = (
    "t", "x", "v", "x_ref", "v_ref", "F_contact", "F_disturb", "u", "k", "c",
    "sens_force", "sens_force_clean", "sens_accel", "sens_accel_clean", "sens_pos", "sens_pos_clean",
)  # fmt: skip


@dataclass
class EpisodeLog:
    preset: str
    seed: int
    dt_phys: float
    ticks: dict[str, np.ndarray]
    cycles: list[dict]
    decisions: list[ctx.ContextDecision] = field(default_factory=list)
    impulse_onsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_amp: float = 0.0
    physics_steps: int = 0

    @property
    def n_ticks(self) -> int:
        return self.ticks["t"].shape[0]


def clock_units(seconds: float, what: str) -> int:
    units = round(seconds * CLOCK_HZ)
    if units <= 0 or abs(units - seconds * CLOCK_HZ) > 1e-6:
        raise ConfigError(f"{what}={seconds!r} s is not a multiple of 1/{CLOCK_HZ} s")
    return units


def _tick_period_units() -> int:
    return CLOCK_HZ // CONTROL_HZ


def ticks_per_cycle(f0: float) -> int:
    cyc = clock_units(1.0 / f0, "movement period")
    if cyc % _tick_period_units():
        raise ConfigError("movement period must be a whole number of control ticks")
    return cyc // _tick_period_units()


@dataclass(frozen=True)
class _Run:
    """Resolved inputs for the inner loop."""

    cfg: ExperimentConfig
    preset: str
    seed: int
    patient: PatientParams
    noise: bool
    jitter: bool
    disturb: bool
    adapt: bool
    surrogate: bool


def _cycle_metrics(index: int, tk: dict[str, np.ndarray], lo: int, hi: int, dt: float, f0: float, lever: float) -> dict:
    F = tk["F_contact"][lo:hi]
    v = tk["v"][lo:hi]
    return {
        "index": index,
        "E_cycle": adapt.cycle_energy(F, v, dt),
        "E_diss": metrics.dissipated_energy(v, tk["c"][lo:hi], dt),
        "r": metrics.force_velocity_correlation(F, v),
        "moment_var": metrics.moment_variance(tk["u"][lo:hi], lever),
        "traj_rms": metrics.trajectory_rms(tk["x"][lo:hi], tk["x_ref"][lo:hi]),
        "peak_force": float(np.max(np.abs(F))),
        "phase_lag": ctx.motion_lag(F, v, dt),
    }


def cycle_metrics_from_ticks(tk: dict[str, np.ndarray], f0: float, lever: float) -> list[dict]:
    """Per-cycle truth metrics recomputed from tick columns."""
    tpc = ticks_per_cycle(f0)
    n = tk["t"].shape[0] // tpc
    dt = 1.0 / CONTROL_HZ
    return [_cycle_metrics(i, tk, i * tpc, (i + 1) * tpc, dt, f0, lever) for i in range(n)]


def run_episode(
    cfg: ExperimentConfig,
    preset: str | None = None,
    seed: int | None = None,
    *,
    x_amp: float | None = None,
    noise: bool | None = None,
    jitter: bool = True,
    disturb: bool | None = None,
    adapt_enabled: bool = True,
) -> EpisodeLog:
    preset = preset or cfg.presets[0]
    seed = cfg.seed if seed is None else seed
    patient = cfg.patient
    if x_amp is None and cfg.calibrate:
        x_amp = calibrated_amplitude(cfg)
    if x_amp is not None:
        patient = replace(patient, X_amp=x_amp)
    run = _Run(
        cfg=cfg,
        preset=preset,
        seed=seed,
        patient=patient,
        noise=cfg.sensors.enabled if noise is None else noise,
        jitter=jitter,
        disturb=cfg.disturbance.enabled if disturb is None else disturb,
        adapt=adapt_enabled,
        surrogate=cfg.adaptation.surrogate,
    )
    return _simulate(run)


def _simulate(run: _Run) -> EpisodeLog:
    cfg = run.cfg
    patient = run.patient
    streams = Streams(run.seed)
    f0 = patient.f0
    if abs(cfg.reference.f_ref - f0) > 1e-12:
        raise ConfigError("reference and patient fundamentals must match (cycle alignment)")

    dtu = clock_units(cfg.dt_phys, "dt_phys")
    tick_u = _tick_period_units()
    tpc = ticks_per_cycle(f0)
    cycle_u = tpc * tick_u
    total_u = cfg.cycles * cycle_u
    if total_u % dtu:
        raise ConfigError("episode length must be a whole number of physics steps")
    n_steps = total_u // dtu
    n_ticks = cfg.cycles * tpc
    dt = dtu / CLOCK_HZ
    m = cfg.m_eff

    # --- precomputed exogenous inputs on the physics grid ---------------
    step_u = np.arange(n_steps, dtype=np.int64) * dtu
    t_phys = step_u / CLOCK_HZ
    modes = cfg.mode_per_cycle()
    eff = {md: apply_mode(patient, md) for md in PatientMode}
    cycle_of_step = step_u // cycle_u
    kp_cycle = np.array([eff[md].k_p for md in modes])
    tau_cycle = np.array([eff[md].tau for md in modes])
    kp_step = kp_cycle[cycle_of_step]
    tau_step = tau_cycle[cycle_of_step]
    sig = np.array([eff[md].sigma_phase for md in modes] + [eff[modes[-1]].sigma_phase])
    phases = draw_cycle_phases(streams["patient"], sig if run.jitter else np.zeros_like(sig))
    # a whole cycle of lookback so delayed intent is defined from t = 0
    xp, vp = intended_trajectory(t_phys - tau_step, patient, phases)
    cp = patient.c_p
    if run.disturb:
        schedule = draw_impulse_schedule(streams["disturbance"], cfg.disturbance, total_u / CLOCK_HZ, f0)
        t_start = cfg.disturbance_start / f0
        keep = schedule.onsets >= t_start
        schedule = replace(schedule, onsets=schedule.onsets[keep], signs=schedule.signs[keep])
        fd = impulse_disturbance(t_phys, schedule)
        onsets = schedule.onsets
    else:
        fd = np.zeros(n_steps)
        onsets = np.zeros(0)

    period_u = {ch: CLOCK_HZ // hz for ch, hz in SENSOR_HZ.items()}
    specs = {
        ch: SensorSpec(rate=hz, noise_rel=cfg.sensors.noise_rel, corr_time=cfg.sensors.corr_time)
        for ch, hz in SENSOR_HZ.items()
    }
    stream_name = {Channel.FORCE: "sensors.force", Channel.ACCEL: "sensors.imu", Channel.POSITION: "sensors.pos"}
    factors = {}
    for ch in Channel:
        n_samples = total_u // period_u[ch] + 1
        if run.noise and cfg.sensors.noise_rel > 0:
            factors[ch] = ar1_noise_series(streams[stream_name[ch]], specs[ch], n_samples)
        else:
            factors[ch] = np.ones(n_samples)
    f_force, f_imu, f_cam = factors[Channel.FORCE], factors[Channel.ACCEL], factors[Channel.POSITION]
    pf, pi_, pc = period_u[Channel.FORCE], period_u[Channel.ACCEL], period_u[Channel.POSITION]

    # --- controller and learner ----------------------------------------
    a_cfg = cfg.adaptation
    if run.preset == "adaptive":
        preset = adaptive_preset(a_cfg.k0, a_cfg.c0)
    else:
        preset = preset_by_name(run.preset)
    controller = ImpedanceController(preset)
    learning = run.adapt and run.preset == "adaptive"
    state = adapt.AdaptState(
        theta_base=preset.params,
        delta_k=a_cfg.delta_k,
        delta_c=a_cfg.delta_c,
        eta=a_cfg.eta,
        rho=a_cfg.rho,
        window=a_cfg.window,
        anneal_cycles=a_cfg.anneal_cycles,
        anneal_power=a_cfg.anneal_power,
        anneal_floor=a_cfg.anneal_floor,
    )
    adapt_rng = streams["adaptation"]
    surrogate_rng = streams["surrogate"]
    c_cfg = cfg.context
    ref = cfg.reference
    w_ref = 2.0 * math.pi * ref.f_ref
    estimator = StateEstimator(camera_period=pc / CLOCK_HZ, omega_c=cfg.estimator.omega_c, zeta=cfg.estimator.zeta)
    lead = cfg.estimator.lead_fraction / CONTROL_HZ

    def frozen_at(n: int) -> bool:
        lo, hi = a_cfg.freeze_start, a_cfg.freeze_stop
        return lo is not None and hi is not None and lo <= n < hi

    def schedule_cycle(n: int) -> None:
        nonlocal state
        if not learning:
            return
        if frozen_at(n):
            if not state.frozen:
                state = adapt.freeze(state)
        elif state.frozen:
            state = adapt.unfreeze(state)
        state, probe = adapt.perturb(state, adapt_rng)
        controller.apply_params(probe.k, probe.c)

    # --- logs -------------------------------------------------------------
    cols = {name: np.empty(n_ticks) for name in TICK_COLUMNS}
    c_t, c_x, c_v = cols["t"], cols["x"], cols["v"]
    c_xr, c_vr, c_fc, c_fd = cols["x_ref"], cols["v_ref"], cols["F_contact"], cols["F_disturb"]
    c_u, c_k, c_c = cols["u"], cols["k"], cols["c"]
    c_sf, c_sfc, c_sa, c_sac, c_sp, c_spc = (
        cols["sens_force"], cols["sens_force_clean"], cols["sens_accel"],
        cols["sens_accel_clean"], cols["sens_pos"], cols["sens_pos_clean"],
    )  # fmt: skip
    est_v = np.empty(n_ticks)
    cycle_rows: list[dict] = []
    decisions: list[ctx.ContextDecision] = []
    # context pools: (k, coupling energy, lag) of every cycle and of Stable-judged ones
    seen: list[tuple[float, float, float]] = []
    stable: list[tuple[float, float, float]] = []
    force_phases: list[float] = []
    tick_dt = 1.0 / CONTROL_HZ

    def close_cycle(n: int) -> None:
        """Bookkeeping for completed cycle n (rows [n*tpc, (n+1)*tpc))."""
        nonlocal state
        lo, hi = n * tpc, (n + 1) * tpc
        row = _cycle_metrics(n, cols, lo, hi, tick_dt, f0, cfg.lever)
        sf = c_sf[lo:hi]
        ve = est_v[lo:hi]
        if run.surrogate:
            sf_obj = metrics.phase_randomized_surrogate(sf, surrogate_rng)
        else:
            sf_obj = sf
        e_sensed = adapt.cycle_energy(sf_obj, ve, tick_dt)
        base = adapt.baseline(state.history, state.window) if state.history else None
        committed = False
        if learning:
            state, committed = adapt.update(state, e_sensed, base)
        else:
            state = replace(state, history=state.history + (e_sensed,))
        truth = modes[n]
        label = None
        if c_cfg.enabled:
            k_n = float(c_k[lo])
            force_phases.append(ctx.fundamental_phase(sf, tick_dt, f0))
            e_c = ctx.coupling_energy(sf, cfg.patient.k_p)
            lag = ctx.reference_lag(sf, c_vr[lo:hi], tick_dt)
            wb = c_cfg.baseline_window
            # baselines come from cycles judged Stable (all past cycles until one is)
            pool = stable[-wb:] or seen[-wb:]
            e_base = ctx.conditioned_baseline([p[0] for p in pool], [p[1] for p in pool], k_n)
            l_base = float(np.mean([p[2] for p in pool])) if pool else lag
            seen.append((k_n, e_c, lag))
            feats = ctx.extract_features(e_c, lag, force_phases, e_base, l_base, n, c_cfg.var_cycles)
            if feats.valid:
                label = ctx.classify(feats, c_cfg.thresholds)
                decisions.append(ctx.ContextDecision(label, truth, feats))
                if label is PatientMode.STABLE:
                    stable.append(seen[-1])
                if c_cfg.policy and learning:
                    biased = ctx.behavior_policy(label, state.theta_base, preset.mode, c_cfg.policy_settings)
                    if biased is not None and not state.frozen:
                        state = replace(state, theta_base=biased)
        row.update(
            baseline=math.nan if base is None else base,
            k=float(c_k[lo]),
            c=float(c_c[lo]),
            committed=bool(committed),
            context_truth=truth.value,
            context_label="" if label is None else label.value,
            E_sensed=e_sensed,
        )
        cycle_rows.append(row)

    # --- main loop ----------------------------------------------------------
    # start on the quasi-static interaction path so cycle 0 is not a run-in
    k0 = controller.params.k
    x = (k0 * ref.offset + kp_step[0] * xp[0]) / (k0 + kp_step[0])
    v = (k0 * ref.amplitude * w_ref + kp_step[0] * vp[0]) / (k0 + kp_step[0])
    estimator.reset(0.0, x, v)
    u_active = 0.0
    u_pending = None
    next_f = next_i = next_c = 0
    next_t = 0
    force_frame = imu_frame = None
    cam_frames: list[SensorFrame] = []
    j = 0
    schedule_cycle(0)
    for i in range(n_steps):
        T0 = i * dtu
        T1 = T0 + dtu
        if u_pending is not None:
            u_active = u_pending
            u_pending = None
        kp = kp_step[i]
        F_c = kp * (xp[i] - x) + cp * (vp[i] - v)
        F_d = fd[i]
        a = (u_active + F_c + F_d) / m
        while True:
            t_ev = min(next_f, next_i, next_c, next_t)
            if t_ev >= T1:
                break
            if next_f == t_ev:
                force_frame = SensorFrame(t_ev / CLOCK_HZ, Channel.FORCE, F_c * f_force[t_ev // pf], F_c)
                next_f += pf
            elif next_i == t_ev:
                ts = t_ev / CLOCK_HZ
                imu_frame = SensorFrame(ts, Channel.ACCEL, a * f_imu[t_ev // pi_], a)
                estimator.on_accel(ts, imu_frame.value)
                next_i += pi_
            elif next_c == t_ev:
                ts = t_ev / CLOCK_HZ
                frame = SensorFrame(ts, Channel.POSITION, x * f_cam[t_ev // pc], x)
                cam_frames = [cam_frames[-1], frame] if cam_frames else [frame]
                estimator.on_position(ts, frame.value)
                next_c += pc
            else:
                ts = t_ev / CLOCK_HZ
                if j > 0 and j % tpc == 0:
                    close_cycle(j // tpc - 1)
                    schedule_cycle(j // tpc)
                latest = {Channel.FORCE: [force_frame], Channel.ACCEL: [imu_frame], Channel.POSITION: cam_frames}
                estimate = estimator.predict(ts + lead) if estimator.initialized else None
                obs = fuse(latest, ts, estimate)
                x_ref = ref.offset + ref.amplitude * math.sin(w_ref * ts)
                v_ref = ref.amplitude * w_ref * math.cos(w_ref * ts)
                u_new = controller.command(obs, x_ref, v_ref)
                c_t[j], c_x[j], c_v[j], c_xr[j], c_vr[j] = ts, x, v, x_ref, v_ref
                c_fc[j], c_fd[j], c_u[j] = F_c, F_d, u_new
                c_k[j], c_c[j] = controller.params.k, controller.params.c
                c_sf[j], c_sfc[j] = force_frame.value, force_frame.clean_value
                c_sa[j], c_sac[j] = imu_frame.value, imu_frame.clean_value
                c_sp[j], c_spc[j] = cam_frames[-1].value, cam_frames[-1].clean_value
                est_v[j] = obs.state_velocity
                if t_ev == T0:
                    u_active = u_new
                else:
                    u_pending = u_new
                j += 1
                next_t += tick_u
        F = u_active + F_c + F_d
        if not math.isfinite(F):
            raise NonFiniteStateError(f"non-finite force at step {i} (t={T0 / CLOCK_HZ:.6f} s, x={x}, v={v})")
        v += F / m * dt
        x += v * dt
        if not (abs(x) < MAX_EXCURSION and math.isfinite(v)):
            raise NonFiniteStateError(f"state diverged at step {i} (t={T0 / CLOCK_HZ:.6f} s)")
    close_cycle(cfg.cycles - 1)

    return EpisodeLog(
        preset=run.preset,
        seed=run.seed,
        dt_phys=cfg.dt_phys,
        ticks=cols,
        cycles=cycle_rows,
        decisions=decisions,
        impulse_onsets=np.asarray(onsets, dtype=float),
        x_amp=patient.X_amp,
        physics_steps=n_steps,
    )


def _calibration_key(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace(
        cfg,
        scenario="custom",
        seed=0,
        cycles=CALIBRATION_CYCLES,
        presets=("rigid",),
        schedule=(),
        output_dir="",
        calibrate=False,
        disturbance_start=0,
        context=replace(cfg.context, enabled=False, policy=False),
        adaptation=replace(cfg.adaptation, freeze_start=None, freeze_stop=None, surrogate=False),
    )


@functools.lru_cache(maxsize=64)
def _calibrate(key: ExperimentConfig) -> float:
    tpc = ticks_per_cycle(key.patient.f0)

    def peak(amp: float) -> float:
        log = run_episode(key, "rigid", 0, x_amp=amp, noise=False, jitter=False, disturb=False, adapt_enabled=False)
        steady = log.ticks["F_contact"][tpc:]
        return float(np.max(np.abs(steady)))

    return calibrate_amplitude(key.patient, peak, key.reference.amplitude)


def calibrated_amplitude(cfg: ExperimentConfig) -> float:
    """Patient amplitude giving the target peak force against the Rigid preset.

    Noise-free, jitter-free and disturbance-free, so it depends only on the
    configuration, never on the seed. Cached per configuration.
    """
    return _calibrate(_calibration_key(cfg))
