"""Servo electronics and lock supervision.

The controller is a positional PID with trapezoidal integration, a
moving-average-smoothed derivative, an output offset, and clamping
anti-windup (the integrator freezes whenever integrating would push a
saturated output further into its rail, and is itself bounded so the
quiescent output always lies inside the output range).

Lock acquisition is a four-phase supervisor:

    sweeping -> engaging -> locked -> lost -> sweeping (relock)

During `sweeping` the ramp scans the spectrum and the PID is held at its
quiescent output. `engaging` disables the ramp, snaps the laser to the lock
point and closes the loop; `locked` is declared once the filtered error has
stayed inside the lock threshold for the hold time. Loss is declared when
the filtered error exceeds the loss threshold for the loss time, or
immediately when the supervisor sees the laser escape the lock point's
neighborhood (an off-feature laser produces a near-zero error signal, so an
error threshold alone cannot detect that escape). After a relock delay the
supervisor sweeps again.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .atomic_data import find_feature
from .errors import ModeHopError, SaslockError, UnlockableError
from .lineshape import saturation_broadened_width
from .plant import initial_state, step_plant
from .spectrum import NoiseConfig, error_signal, synthesize_sweep

LOCKLOG_FORMAT_VERSION = "sas-locklog/1"

PHASES = ("sweeping", "engaging", "locked", "lost")
LEGAL_TRANSITIONS = {
    "sweeping": ("sweeping", "engaging"),
    "engaging": ("engaging", "locked"),
    "locked": ("locked", "lost"),
    "lost": ("lost", "sweeping"),
}


# ---------------------------------------------------------------------------
# PID
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PidConfig:
    kp: float = 0.006     # V/V
    ki: float = 40.0      # V/(V s)
    kd: float = 0.0       # V s/V
    offset: float = 0.0   # V
    output_min: float = -10.0
    output_max: float = 10.0
    derivative_smoothing: int = 5  # samples

    def __post_init__(self):
        if not self.output_min < self.output_max:
            raise ValueError(
                f"output_min must be < output_max, got [{self.output_min}, {self.output_max}]"
            )
        if self.derivative_smoothing < 1:
            raise ValueError(
                f"derivative_smoothing must be >= 1, got {self.derivative_smoothing}"
            )


@dataclass(frozen=True)
class PidState:
    integrator: float = 0.0
    prev_error: float = None    # None until the first step
    last_output: float = 0.0
    error_window: tuple = ()    # recent errors for the smoothed derivative
    prev_smoothed: float = None


def pid_step(cfg: PidConfig, st: PidState, error, dt):
    """One controller update; returns (new state, clamped control output).

    The first step integrates rectangle-style (prev error taken equal to the
    current one), so a constant error integrates exactly from step one.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")

    window = (st.error_window + (error,))[-cfg.derivative_smoothing:]
    smoothed = sum(window) / len(window)
    prev_smoothed = smoothed if st.prev_smoothed is None else st.prev_smoothed
    derivative = (smoothed - prev_smoothed) / dt

    prev_error = error if st.prev_error is None else st.prev_error
    candidate = st.integrator + cfg.ki * 0.5 * (error + prev_error) * dt
    # Quiescent output (zero error) must stay inside the rails.
    candidate = min(max(candidate, cfg.output_min - cfg.offset), cfg.output_max - cfg.offset)

    raw = cfg.kp * error + candidate + cfg.kd * derivative + cfg.offset
    control = min(max(raw, cfg.output_min), cfg.output_max)

    if control == raw:
        integrator = candidate
    else:
        # Saturated: integrate only when it pulls the output off the rail.
        pushes_further = (raw > cfg.output_max and candidate > st.integrator) or (
            raw < cfg.output_min and candidate < st.integrator
        )
        integrator = st.integrator if pushes_further else candidate

    new_state = PidState(
        integrator=integrator,
        prev_error=error,
        last_output=control,
        error_window=window,
        prev_smoothed=smoothed,
    )
    return new_state, control


# ---------------------------------------------------------------------------
# Lock point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LockPoint:
    detuning: float        # Hz where the conditioned error crosses zero
    slope_sign: int        # sign of d(error)/d(detuning) at the crossing
    slope: float           # V/Hz at the crossing
    required_offset: float  # V added to the raw error signal
    amplitude: float       # peak |conditioned error| of the feature, V


def conditioned_error_curve(trace, mode, derivative_scale_hz, required_offset=0.0,
                            smoothing_window=1):
    """Error signal in volts over a sweep trace.

    Differential mode adds the servo offset; derivative mode multiplies the
    finite-difference derivative by `derivative_scale_hz` so its magnitude is
    comparable to the differential's.
    """
    raw = error_signal(trace, mode, smoothing_window)
    if mode == "derivative":
        return raw * derivative_scale_hz
    return raw + required_offset


def find_lock_point(trace, table, target_feature, mode="derivative",
                    derivative_scale_hz=None, min_slope_frac=0.02) -> LockPoint:
    """Locate the zero crossing of the conditioned error on a named feature.

    Derivative mode locks to the feature's center (the derivative of a
    symmetric dip crosses zero there, no offset needed). Differential mode
    locks to the low-frequency half-height side, with required_offset equal
    to minus half the dip amplitude. Raises UnlockableError when the feature
    is absent from the trace or its slope is unusably small.
    """
    feature = find_feature(table, target_feature)
    if derivative_scale_hz is None:
        derivative_scale_hz = feature.gamma_natural

    axis = trace.detuning_axis
    if not (axis[0] <= feature.detuning <= axis[-1]):
        raise UnlockableError(
            f"feature {target_feature!r} at {feature.detuning / 1e6:.1f} MHz "
            "outside the swept range"
        )
    span = 6.0 * derivative_scale_hz
    sl = trace.window_slice(feature.detuning - span, feature.detuning + span)
    if sl.stop - sl.start < 5:
        raise UnlockableError("too few samples across the target feature")

    if mode == "differential":
        segment = trace.differential[sl]
        baseline = float(np.median(np.concatenate([segment[:3], segment[-3:]])))
        k = int(np.argmax(np.abs(segment - baseline)))
        dip_amplitude = float(segment[k] - baseline)
        required_offset = -(baseline + dip_amplitude / 2.0)
        curve = trace.differential + required_offset
        amplitude = abs(dip_amplitude / 2.0)
    elif mode == "derivative":
        required_offset = 0.0
        curve = conditioned_error_curve(trace, mode, derivative_scale_hz)
        amplitude = float(np.abs(curve[sl]).max())
    else:
        raise ValueError(f"unknown lock mode {mode!r}")

    if amplitude < 1e-9:
        raise UnlockableError(f"feature {target_feature!r} produces no error signal")

    # Zero crossings inside the feature window, nearest the nominal center;
    # differential mode restricts to the low-frequency side of the extremum.
    y = curve[sl]
    x = axis[sl]
    crossings = []
    limit = len(y) - 1
    if mode == "differential":
        limit = int(np.argmax(np.abs(y - np.median(y))))
    for i in range(limit):
        if y[i] == 0.0 or (y[i] < 0) != (y[i + 1] < 0):
            frac = y[i] / (y[i] - y[i + 1]) if y[i] != y[i + 1] else 0.0
            x0 = x[i] + frac * (x[i + 1] - x[i])
            slope = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
            crossings.append((x0, slope))
    min_slope = min_slope_frac * amplitude / derivative_scale_hz
    crossings = [(x0, sl_) for x0, sl_ in crossings if abs(sl_) >= min_slope]
    if not crossings:
        raise UnlockableError(
            f"no usable zero crossing on {target_feature!r} (slope below threshold)"
        )
    x0, slope = min(crossings, key=lambda c: abs(c[0] - feature.detuning))
    return LockPoint(
        detuning=float(x0),
        slope_sign=int(math.copysign(1.0, slope)),
        slope=float(slope),
        required_offset=float(required_offset),
        amplitude=amplitude,
    )


# ---------------------------------------------------------------------------
# Lock-acquisition state machine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LockConfig:
    target_feature: str = "Rb87:F2->co(2,3)"
    mode: str = "derivative"          # error-signal mode
    polarity: str = "auto"            # "auto", "+1", "-1" (flip for testing)
    lock_threshold_frac: float = 0.02  # of the feature error amplitude
    loss_threshold_frac: float = 0.50
    hold_time: float = 0.020          # s inside threshold before locked
    loss_time: float = 0.010          # s outside threshold before lost
    relock_delay: float = 0.100       # s frozen before re-sweeping
    sweep_time: float = 0.004         # s of ramped sweeping before engage
    filter_time: float = 0.005        # s, lock-detector error filter
    escape_span_hz: float = None      # None -> 5x broadened dip FWHM
    lock_threshold_v: float = None    # resolved by the runner
    loss_threshold_v: float = None

    def __post_init__(self):
        if self.mode not in ("derivative", "differential"):
            raise ValueError(f"unknown lock mode {self.mode!r}")
        if self.polarity not in ("auto", "+1", "-1"):
            raise ValueError(f"polarity must be auto/+1/-1, got {self.polarity!r}")
        for name in ("hold_time", "loss_time", "relock_delay", "sweep_time", "filter_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class LockState:
    phase: str = "sweeping"
    target_feature: str = ""
    lock_point_detuning: float = float("nan")
    time_in_phase: float = 0.0
    qualify_time: float = 0.0   # time the transition condition has held
    error_filter: float = None  # first-order filtered error, V


def lock_step(lock: LockState, pid: PidState, pid_cfg: PidConfig, lock_cfg: LockConfig,
              measurement, dt):
    """Advance supervisor and controller one step.

    measurement: {"error": V (loop-polarity applied), "force_lost": bool}.
    Returns (LockState, PidState, control V, ramp_enable).
    """
    if lock_cfg.lock_threshold_v is None or lock_cfg.loss_threshold_v is None:
        raise SaslockError("lock thresholds not resolved; use resolve_thresholds()")
    error = measurement["error"]
    force_lost = measurement.get("force_lost", False)

    prev_filter = 0.0 if lock.error_filter is None else lock.error_filter
    alpha = min(1.0, dt / lock_cfg.filter_time)
    filtered = prev_filter + alpha * (error - prev_filter)

    phase = lock.phase
    time_in_phase = lock.time_in_phase + dt
    qualify = lock.qualify_time

    if phase == "sweeping":
        control = pid_cfg.offset
        if time_in_phase >= lock_cfg.sweep_time:
            phase, time_in_phase, qualify = "engaging", 0.0, 0.0
            pid = PidState()      # closed loop starts clean
            filtered = 0.0
    elif phase == "engaging":
        pid, control = pid_step(pid_cfg, pid, error, dt)
        if abs(filtered) < lock_cfg.lock_threshold_v:
            qualify += dt
        else:
            qualify = 0.0
        if qualify >= lock_cfg.hold_time:
            phase, time_in_phase, qualify = "locked", 0.0, 0.0
    elif phase == "locked":
        pid, control = pid_step(pid_cfg, pid, error, dt)
        if force_lost:
            phase, time_in_phase, qualify = "lost", 0.0, 0.0
        else:
            if abs(filtered) > lock_cfg.loss_threshold_v:
                qualify += dt
            else:
                qualify = 0.0
            if qualify >= lock_cfg.loss_time:
                phase, time_in_phase, qualify = "lost", 0.0, 0.0
    elif phase == "lost":
        control = pid.last_output  # frozen
        if time_in_phase >= lock_cfg.relock_delay:
            phase, time_in_phase, qualify = "sweeping", 0.0, 0.0
            pid = PidState()
            filtered = 0.0
    else:
        raise SaslockError(f"unknown lock phase {lock.phase!r}")
    ramp_enable = phase == "sweeping"

    new_lock = LockState(
        phase=phase,
        target_feature=lock.target_feature,
        lock_point_detuning=lock.lock_point_detuning,
        time_in_phase=time_in_phase,
        qualify_time=qualify,
        error_filter=filtered,
    )
    return new_lock, pid, control, ramp_enable


def validate_phase_sequence(phases):
    """Raise if a logged phase sequence contains an illegal transition."""
    for a, b in zip(phases, phases[1:]):
        if b not in LEGAL_TRANSITIONS[a]:
            raise SaslockError(f"illegal lock transition {a} -> {b}")


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Disturbances:
    temp_step_k: float = 0.0
    temp_step_time_s: float = None
    detuning_step_hz: float = 0.0
    detuning_step_time_s: float = None


@dataclass
class TimeSeriesLog:
    t: np.ndarray
    detuning: np.ndarray
    error: np.ndarray
    control: np.ndarray
    temperature: np.ndarray
    phase: list
    meta: dict

    def __len__(self):
        return len(self.t)

    def phase_slice(self, name):
        mask = np.asarray([p == name for p in self.phase])
        return mask


def resolve_thresholds(lock_cfg: LockConfig, lock_point: LockPoint, dip_fwhm_hz):
    """Fill in volt-valued thresholds and the escape span from the lock point.

    The default escape span (2x the broadened dip width) sits inside the
    differential's local minima flanking the target dip, where a
    wrong-polarity loop finds spurious zero crossings to rest on, so a loop
    settling anywhere other than the true lock point is treated as lost
    rather than reported as a false lock.
    """
    return replace(
        lock_cfg,
        lock_threshold_v=lock_cfg.lock_threshold_frac * lock_point.amplitude,
        loss_threshold_v=lock_cfg.loss_threshold_frac * lock_point.amplitude,
        escape_span_hz=(
            lock_cfg.escape_span_hz
            if lock_cfg.escape_span_hz is not None
            else 2.0 * dip_fwhm_hz
        ),
    )


def build_error_map(table, medium, plant_cfg, ramp_cfg, lock_cfg, map_step_hz=0.5e6,
                    margin_hz=50e6):
    """Noise-free conditioned error vs detuning over the ramp-covered range."""
    lo = plant_cfg.base_detuning - ramp_cfg.span / 2.0 - margin_hz
    hi = plant_cfg.base_detuning + ramp_cfg.span / 2.0 + margin_hz
    n = max(64, int((hi - lo) / map_step_hz))
    trace = synthesize_sweep(table, medium, (lo, hi, n), NoiseConfig(enabled=False))

    feature = find_feature(table, lock_cfg.target_feature)
    dip_fwhm = saturation_broadened_width(feature.gamma_natural, medium.saturation_s)
    scale = dip_fwhm / 2.0
    lock_point = find_lock_point(
        trace, table, lock_cfg.target_feature, lock_cfg.mode, derivative_scale_hz=scale
    )
    curve = conditioned_error_curve(
        trace, lock_cfg.mode, scale, required_offset=lock_point.required_offset
    )
    return trace.detuning_axis, curve, lock_point, dip_fwhm


def closed_loop_run(
    table,
    medium,
    plant_cfg,
    ramp_cfg,
    pid_cfg,
    lock_cfg,
    *,
    duration,
    dt=1e-4,
    seed=0,
    detector_noise_v=0.002,
    noise_enabled=True,
    disturbances: Disturbances = Disturbances(),
    start_locked=False,
) -> TimeSeriesLog:
    """Step plant and servo on a shared clock; returns the full time series.

    The spectroscopy readout is quasi-static: at every step the conditioned
    error is interpolated from a precomputed noise-free error map at the
    plant's instantaneous detuning, plus detector noise. A mode-hop fault
    aborts the scenario with a partial log (meta["aborted"]).
    """
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")

    map_axis, curve, lock_point, dip_fwhm = build_error_map(
        table, medium, plant_cfg, ramp_cfg, lock_cfg
    )
    lock_cfg = resolve_thresholds(lock_cfg, lock_point, dip_fwhm)

    net_gain = plant_cfg.k_ctrl * plant_cfg.k_current  # Hz per control volt
    polarity = -math.copysign(1.0, net_gain * lock_point.slope)
    if lock_cfg.polarity == "-1":
        polarity = -polarity

    sweep_lo = plant_cfg.base_detuning - ramp_cfg.span / 2.0
    sweep_hi = plant_cfg.base_detuning + ramp_cfg.span / 2.0
    swept = (map_axis >= sweep_lo) & (map_axis <= sweep_hi)
    pre_lock_error_peak = float(np.abs(curve[swept]).max())

    seq = np.random.SeedSequence(seed).spawn(2)
    plant_rng = np.random.default_rng(seq[0])
    meas_rng = np.random.default_rng(seq[1])
    plant_noise_rng = plant_rng if noise_enabled else None
    meas_sigma = detector_noise_v * math.sqrt(2.0) if noise_enabled else 0.0

    n = int(round(duration / dt))
    log_t = np.empty(n)
    log_detuning = np.empty(n)
    log_error = np.empty(n)
    log_control = np.empty(n)
    log_temperature = np.empty(n)
    log_phase = []

    state = initial_state(plant_cfg)
    pid = PidState()
    lock = LockState(
        phase="locked" if start_locked else "sweeping",
        target_feature=lock_cfg.target_feature,
        lock_point_detuning=lock_point.detuning,
    )
    if start_locked:
        plant_cfg = replace(plant_cfg, base_detuning=lock_point.detuning)
        state = initial_state(plant_cfg)

    temp_disturbance = 0.0
    aborted = False
    abort_reason = ""
    steps_done = 0

    for k in range(n):
        t = k * dt
        if (
            disturbances.temp_step_time_s is not None
            and t >= disturbances.temp_step_time_s
        ):
            temp_disturbance = disturbances.temp_step_k

        error_raw = float(np.interp(state.detuning, map_axis, curve))
        if meas_sigma > 0:
            error_raw += meas_rng.normal(0.0, meas_sigma)

        force_lost = lock.phase in ("engaging", "locked") and (
            abs(state.detuning - lock_point.detuning) > lock_cfg.escape_span_hz
        )

        prev_phase = lock.phase
        lock, pid, control, ramp_enable = lock_step(
            lock, pid, pid_cfg, lock_cfg, {"error": polarity * error_raw, "force_lost": force_lost}, dt
        )

        if prev_phase == "sweeping" and lock.phase == "engaging":
            # Engage: park the laser on the lock point before closing the loop.
            snap = (
                lock_point.detuning
                - net_gain * control
                - plant_cfg.k_temp * (state.temperature - plant_cfg.temp_reference)
            )
            plant_cfg = replace(plant_cfg, base_detuning=snap)

        inputs = {
            "temp_setpoint": plant_cfg.temp_reference,
            "disturbance": temp_disturbance,
            "control_voltage": control,
            "ramp_enabled": ramp_enable,
        }
        try:
            state = step_plant(state, plant_cfg, ramp_cfg, inputs, dt, plant_noise_rng)
        except ModeHopError as exc:
            aborted = True
            abort_reason = str(exc)
            steps_done = k
            break

        if (
            disturbances.detuning_step_time_s is not None
            and t < disturbances.detuning_step_time_s <= t + dt
        ):
            plant_cfg = replace(
                plant_cfg,
                base_detuning=plant_cfg.base_detuning + disturbances.detuning_step_hz,
            )

        log_t[k] = t
        log_detuning[k] = state.detuning
        log_error[k] = error_raw
        log_control[k] = control
        log_temperature[k] = state.temperature
        log_phase.append(lock.phase)
        steps_done = k + 1

    meta = {
        "format": LOCKLOG_FORMAT_VERSION,
        "seed": seed,
        "dt": dt,
        "lock_point_hz": lock_point.detuning,
        "lock_amplitude_v": lock_point.amplitude,
        "pre_lock_error_peak_v": pre_lock_error_peak,
        "lock_threshold_v": lock_cfg.lock_threshold_v,
        "loss_threshold_v": lock_cfg.loss_threshold_v,
        "escape_span_hz": lock_cfg.escape_span_hz,
        "polarity": polarity,
        "aborted": aborted,
        "abort_reason": abort_reason,
    }
    return TimeSeriesLog(
        t=log_t[:steps_done],
        detuning=log_detuning[:steps_done],
        error=log_error[:steps_done],
        control=log_control[:steps_done],
        temperature=log_temperature[:steps_done],
        phase=log_phase[:steps_done],
        meta=meta,
    )


def write_locklog_csv(log: TimeSeriesLog, fileobj):
    w = fileobj.write
    w(f"# format={LOCKLOG_FORMAT_VERSION}\n")
    for key in ("seed", "dt", "lock_point_hz", "polarity", "aborted"):
        w(f"# {key}={log.meta.get(key)}\n")
    w("t_s,detuning_hz,error_v,control_v,temperature_k,phase\n")
    for i in range(len(log)):
        w(
            f"{float(log.t[i])!r},{float(log.detuning[i])!r},{float(log.error[i])!r},"
            f"{float(log.control[i])!r},{float(log.temperature[i])!r},{log.phase[i]}\n"
        )
