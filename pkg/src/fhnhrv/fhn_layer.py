"""Modified FitzHugh-Nagumo oscillators driven by RR-interval impulse trains.

The membrane/recovery pair per neuron follows

    dv/dt = v - v^3/3 - p1*w*v + I(t)
    dw/dt = p2*(v - p3*w)

integrated by fixed-step forward Euler with h = dt_ms / time_unit_ms.  The
drive I(t) is a train of rectangular pulses of height A starting at each
beat.  A neuron's scalar output is the sum of supra-threshold membrane
values over the trajectory (hard rule at evaluation, sigmoid-smoothed during
training so the threshold receives a gradient).

All operations run in two modes sharing one code path shape: plain floats
(fast evaluation) and tape Vars (training); the arithmetic per step is
identical, so both modes produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import diffgraph
from .diffgraph import Tape, Var
from .errors import DivergenceError, ValidationError
from .rr_data import RRSegment

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class FHNParams:
    """Per-neuron parameters: coupling, recovery rate, leak, firing threshold.

    Fields may hold tape Vars instead of floats during training.
    """

    p1: float
    p2: float
    p3: float
    p4: float
    v0: float = 0.0
    w0: float = 0.0

    def validate(self) -> None:
        for name in ("p1", "p2", "p3", "p4", "v0", "w0"):
            x = getattr(self, name)
            if not math.isfinite(x):
                raise ValidationError(f"FHN parameter {name} is not finite: {x!r}")
        if self.p2 < 0:
            raise ValidationError(f"recovery timescale p2 must be >= 0, got {self.p2!r}")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.p1, self.p2, self.p3, self.p4, self.v0, self.w0)


@dataclass(frozen=True)
class DriveConfig:
    """Shared drive and integration settings for an oscillator population."""

    dt_ms: float = 10.0
    amplitude: float = 0.5
    pulse_width_ms: float = 20.0
    time_unit_ms: float = 100.0  # ms of data per model time unit


@dataclass(frozen=True)
class DriveSignal:
    """Sampled input current: `samples[k]` is I at t = k*dt_ms, always 0 or A."""

    samples: np.ndarray
    dt_ms: float
    amplitude: float
    pulse_width_ms: float
    pulse_mask: np.ndarray  # boolean, True where a pulse is active

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class Trajectory:
    """Membrane and recovery series, one entry per step plus the initial state.

    Arrays of floats in evaluation mode, lists of tape Vars in training mode.
    """

    v: Union[np.ndarray, list]
    w: Union[np.ndarray, list]

    def __len__(self) -> int:
        return len(self.v)


def rr_to_drive(
    rr: Union[RRSegment, Sequence[float]],
    dt_ms: float = 10.0,
    amplitude: float = 0.5,
    pulse_width_ms: float = 20.0,
) -> DriveSignal:
    """Encode an RR series as a rectangular impulse train.

    A beat occurs at t=0 and after each interval; I(t) = A for
    t in [beat, beat + pulse_width_ms).  Total duration is
    sum(rr) + pulse_width_ms so the final pulse fits.
    """
    intervals = np.asarray(rr.intervals if isinstance(rr, RRSegment) else rr, dtype=float)
    if dt_ms <= 0:
        raise ValidationError("dt_ms must be positive")
    if pulse_width_ms < dt_ms:
        raise ValidationError("pulse_width_ms must be >= dt_ms")
    total = float(intervals.sum()) + pulse_width_ms
    n = int(math.ceil(total / dt_ms))
    beats = np.concatenate([[0.0], np.cumsum(intervals)])
    mask = np.zeros(n, dtype=bool)
    for b in beats:
        k0 = int(math.ceil(b / dt_ms))
        k1 = int(math.ceil((b + pulse_width_ms) / dt_ms))
        mask[k0:min(k1, n)] = True
    samples = np.where(mask, float(amplitude), 0.0)
    return DriveSignal(samples, dt_ms, float(amplitude), pulse_width_ms, mask)


def integrate(
    params: FHNParams,
    drive: DriveSignal,
    time_unit_ms: float = 100.0,
    amplitude: Union[float, Var, None] = None,
) -> Trajectory:
    """Unroll the oscillator over the drive with fixed-step forward Euler.

    When params hold tape Vars the unrolling is recorded on their tape
    (fused step nodes); `amplitude` can then be a Var so the pulse height
    stays trainable.  Raises DivergenceError naming the step where |v| or
    |w| exceeds 1e6.
    """
    if len(drive) == 0:
        raise ValidationError("empty drive signal")
    h = drive.dt_ms / time_unit_ms
    if isinstance(params.p1, Var):
        return _integrate_tape(params, drive, h, amplitude)

    params.validate()
    amp = drive.amplitude if amplitude is None else float(amplitude)
    p1, p2, p3 = params.p1, params.p2, params.p3
    v, w = float(params.v0), float(params.w0)
    vs = [v]
    ws = [w]
    limit = DIVERGENCE_LIMIT
    for step, m in enumerate(drive.pulse_mask.tolist()):
        i_t = amp if m else 0.0
        v, w = (
            v + h * (v - v * v * v / 3.0 - p1 * w * v + i_t),
            w + h * p2 * (v - p3 * w),
        )
        if not (-limit < v < limit) or not (-limit < w < limit):
            raise DivergenceError(f"state exceeded {limit:g} at step {step + 1}", step=step + 1)
        vs.append(v)
        ws.append(w)
    return Trajectory(np.array(vs), np.array(ws))


def _integrate_tape(params: FHNParams, drive: DriveSignal, h: float, amplitude) -> Trajectory:
    tape: Tape = params.p1.tape
    amp = amplitude if isinstance(amplitude, Var) else tape.const(
        drive.amplitude if amplitude is None else float(amplitude)
    )
    v = params.v0 if isinstance(params.v0, Var) else tape.const(float(params.v0))
    w = params.w0 if isinstance(params.w0, Var) else tape.const(float(params.w0))
    vs = [v]
    ws = [w]
    limit = DIVERGENCE_LIMIT
    fhn_step = tape.fhn_step
    p1, p2, p3 = params.p1, params.p2, params.p3
    for step, m in enumerate(drive.pulse_mask.tolist()):
        v, w = fhn_step(v, w, p1, p2, p3, amp, 1.0 if m else 0.0, h)
        if not (-limit < v.value < limit) or not (-limit < w.value < limit):
            raise DivergenceError(f"state exceeded {limit:g} at step {step + 1}", step=step + 1)
        vs.append(v)
        ws.append(w)
    return Trajectory(vs, ws)


def firing_rate(
    traj: Trajectory,
    p4: Union[float, Var],
    mode: str = "hard",
    temperature: float = 0.1,
) -> Union[float, Var]:
    """Scalar neuron output: sum of supra-threshold membrane values.

    hard:   f = sum_t v(t) * [v(t) >= p4]          (evaluation rule)
    smooth: f = sum_t v(t) * sigmoid((v(t)-p4)/T)  (training surrogate)
    """
    if len(traj) == 0:
        raise ValidationError("empty trajectory")
    if mode not in ("hard", "smooth"):
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == "smooth" and temperature <= 0:
        raise ValidationError("temperature must be positive in smooth mode")

    if isinstance(traj.v[0], Var):
        return _firing_rate_tape(traj, p4, mode, temperature)

    p4 = float(p4)
    acc = 0.0
    if mode == "hard":
        for v in traj.v.tolist():
            if v >= p4:
                acc += v
    else:
        inv_t = 1.0 / temperature
        for v in traj.v.tolist():
            acc += v * diffgraph._sigmoid_value((v - p4) * inv_t)
    return acc


def _firing_rate_tape(traj: Trajectory, p4, mode: str, temperature: float):
    tape: Tape = traj.v[0].tape
    if not isinstance(p4, Var):
        p4 = tape.const(float(p4))
    acc = tape.const(0.0)
    if mode == "smooth":
        inv_t = 1.0 / temperature
        rate_step = tape.rate_step_smooth
        for v in traj.v:
            acc = rate_step(acc, v, p4, inv_t)
    else:
        for v in traj.v:
            acc = acc + diffgraph.select_ge(v, p4, v, 0.0)
    return acc


def fhn_forward(
    population: Sequence[FHNParams],
    rr: Union[RRSegment, Sequence[float]],
    cfg: DriveConfig = DriveConfig(),
    mode: str = "hard",
    temperature: float = 0.1,
    amplitude: Union[float, Var, None] = None,
):
    """Drive every neuron with the segment's impulse train; return firing rates.

    Output order matches population order.  Returns a float array in
    evaluation mode, a list of Vars when the population holds tape Vars.
    """
    if not population:
        raise ValidationError("empty population")
    drive = rr_to_drive(rr, cfg.dt_ms, cfg.amplitude, cfg.pulse_width_ms)
    rates = []
    for i, params in enumerate(population):
        try:
            traj = integrate(params, drive, cfg.time_unit_ms, amplitude)
        except DivergenceError as err:
            raise DivergenceError(f"neuron {i}: {err}", step=err.step, neuron=i) from err
        rates.append(firing_rate(traj, params.p4, mode, temperature))
    if rates and isinstance(rates[0], Var):
        return rates
    return np.array(rates)
