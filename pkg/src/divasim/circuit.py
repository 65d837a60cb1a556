"""Transient model of one cell on an RC-ladder bitline.

The bitline is a chain of ``segments`` RC sections with the sense amplifier
and the precharge equalizer at node 0.  The cell taps the node at its
bitline distance through an access transistor whose gate follows the
wordline, itself an RC ladder driven from column 0 (Elmore delay per
column).  Phases:

* charge sharing: wordline rises at ACT; the cell shares charge with the bitline
* sensing: 5 ns after ACT the sense amp pulls node 0 toward the rail
  it leans to, with a drive that grows with the developed signal, so a
  smaller charge-sharing signal senses more slowly
* precharge: at PRE the wordline falls, the sense amp turns off and the
  equalizer pulls node 0 to vdd/2.

Integration is backward Euler by default (unconditionally stable; the cell
node is eliminated so each step is one tridiagonal solve).  Forward Euler is
available for small ladders and refuses timesteps beyond its stability
bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded

from .device import MAT_COLS, MAT_ROWS, bitline_distance, wordline_distance

NOT_READY = math.inf
PHASES = ("charge_sharing", "sensing", "precharge")
_NS = 1e-9


class NumericalStabilityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class CircuitParams:
    cell_cap: float = 24e-15
    bitline_cap_total: float = 144e-15
    segments: int = 512
    bitline_res_per_segment: float = 20.0
    wordline_res_per_segment: float = 100.0
    wordline_cap_per_segment: float = 0.5e-15
    wordline_driver_res: float = 2000.0
    vdd: float = 1.2
    v_wordline: float = 3.0
    v_precharge: float = 0.6
    v_ready: float = 0.9
    access_res: float = 10e3
    sense_res: float = 100e3
    sense_delay: float = 5e-9
    # the sense amp is regenerative: its drive grows with the bitline's
    # distance from vdd/2 and saturates once that reaches sense_full_swing
    sense_full_swing: float = 0.3
    equalizer_res: float = 30e3
    timestep: float = 10e-12

    def __post_init__(self):
        for name in ("cell_cap", "bitline_cap_total", "access_res", "sense_res",
                     "equalizer_res", "timestep", "vdd", "sense_full_swing"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("bitline_res_per_segment", "wordline_res_per_segment",
                     "wordline_cap_per_segment", "wordline_driver_res", "sense_delay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if abs(self.v_precharge - self.vdd / 2) > 1e-9:
            raise ValueError("v_precharge must equal vdd/2")
        if not self.v_precharge < self.v_ready < self.vdd:
            raise ValueError("v_ready must lie between v_precharge and vdd")
        if self.v_wordline <= self.vdd:
            raise ValueError("v_wordline must exceed vdd")

    def replace(self, **changes) -> "CircuitParams":
        return replace(self, **changes)

    @property
    def lumped(self) -> bool:
        return self.bitline_res_per_segment == 0.0 or self.segments == 1


@dataclass
class Waveform:
    """Bitline voltage at the cell's tap (``voltage``) and the cell's own
    storage-node voltage, sampled every step."""

    time_ns: np.ndarray
    voltage: np.ndarray
    cell_voltage: np.ndarray
    phase: np.ndarray
    markers: dict

    def __post_init__(self):
        if len(self.time_ns) > 1 and not np.all(np.diff(self.time_ns) > 0):
            raise ValueError("waveform times must be strictly increasing")

    def to_csv(self, path_or_file) -> None:
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_ns", "voltage_v", "phase"])
            for t, v, p in zip(self.time_ns, self.voltage, self.phase):
                w.writerow([f"{t:.6f}", f"{v:.9f}", PHASES[p]])
        finally:
            if own:
                fh.close()


def wordline_delay(col: int, params: CircuitParams) -> float:
    """Elmore delay (s) from the local wordline driver to column ``col``."""
    n = params.segments
    j = int(round(wordline_distance(col) * (n - 1))) + 1
    r, c = params.wordline_res_per_segment, params.wordline_cap_per_segment
    # sum_{i=1..j} r * c * (n - i + 1)
    ladder = r * c * (j * (n + 1) - j * (j + 1) / 2)
    return params.wordline_driver_res * c * n + ladder


def _gate(t, act, pre, tau):
    """Fraction of full access-transistor conductance at time ``t``."""
    if t < act:
        return 0.0
    rise = 1.0 if tau == 0 else 1.0 - math.exp(-(min(t, pre) - act) / tau)
    if t < pre:
        return rise
    return 0.0 if tau == 0 else rise * math.exp(-(t - pre) / tau)


def _explicit_bound(p: CircuitParams, n: int) -> float:
    """Largest stable forward-Euler step (Gershgorin bound on the ladder)."""
    c_node = p.bitline_cap_total / n
    g_seg = 0.0 if n == 1 else 1.0 / p.bitline_res_per_segment
    g_acc = 1.0 / p.access_res
    g_src = max(1.0 / p.sense_res, 1.0 / p.equalizer_res)
    lam = max(2 * (2 * g_seg + g_acc + g_src) / c_node, 2 * g_acc / p.cell_cap)
    return 2.0 / lam


def simulate_access(cell_row: int, cell_col: int, act_time: float = 0.0,
                    pre_time: float = 30.0, params: CircuitParams = CircuitParams(),
                    end_time: float | None = None, method: str = "implicit") -> Waveform:
    """Simulate ACT at ``act_time`` and PRE at ``pre_time`` (ns) for a cell
    initially holding vdd on a bitline precharged to vdd/2."""
    if not (0 <= cell_row < MAT_ROWS and 0 <= cell_col < MAT_COLS):
        raise IndexError(f"cell ({cell_row}, {cell_col}) outside the mat")
    if not pre_time > act_time:
        raise ValueError("pre_time must be after act_time")
    end_time = pre_time + 20.0 if end_time is None else end_time
    if not end_time > pre_time:
        raise ValueError("end_time must be after pre_time")
    if method not in ("implicit", "explicit"):
        raise ValueError(f"unknown method {method!r}")
    p = params
    n = 1 if p.lumped else p.segments
    dt = p.timestep
    tap = int(round(float(bitline_distance(cell_row, cell_col)) * (n - 1)))
    tau_wl = wordline_delay(cell_col, p)
    act, pre, end = act_time * _NS, pre_time * _NS, end_time * _NS
    # sense-amp and equalizer enables run alongside the wordline and arrive
    # with the same propagation delay
    t_sense = act + p.sense_delay + tau_wl
    t_eq = pre + tau_wl
    if method == "explicit" and dt > _explicit_bound(p, n):
        raise NumericalStabilityError(
            f"timestep {dt:g} s exceeds the forward-Euler stability bound "
            f"{_explicit_bound(p, n):.3g} s")

    c_node = p.bitline_cap_total / n
    c_cell = p.cell_cap
    g_seg = 0.0 if n == 1 else 1.0 / p.bitline_res_per_segment
    steps = int(math.ceil((end - act) / dt - 1e-9))
    v = np.full(n, p.v_precharge)
    vc = p.vdd
    times = np.empty(steps + 1)
    out_v = np.empty(steps + 1)
    out_c = np.empty(steps + 1)
    phase = np.empty(steps + 1, dtype=np.int8)
    times[0], out_v[0], out_c[0], phase[0] = act, v[tap], vc, 0
    rail = None
    # static tridiagonal part: ladder conductances
    diag0 = np.full(n, 2 * g_seg)
    if n > 1:
        diag0[0] = diag0[-1] = g_seg
    off = np.full(n - 1, -g_seg)
    lo_bound, hi_bound = -1e-6, p.vdd + 1e-6

    for k in range(1, steps + 1):
        t = act + k * dt
        # sources at node 0: sense amp while sensing, equalizer after PRE
        if t_sense <= t < t_eq:
            if rail is None:
                rail = p.vdd if v[0] >= p.v_precharge else 0.0
            drive = min(1.0, abs(v[0] - p.v_precharge) / p.sense_full_swing)
            g_src, v_src = drive / p.sense_res, rail
        elif t >= t_eq:
            g_src, v_src = 1.0 / p.equalizer_res, p.v_precharge
        else:
            g_src, v_src = 0.0, 0.0
        if method == "implicit":
            g = _gate(t, act, pre, tau_wl) / p.access_res
            a = c_cell / dt
            diag = diag0 + c_node / dt
            rhs = v * (c_node / dt)
            diag[0] += g_src
            rhs[0] += g_src * v_src
            # eliminate the cell node: vc_new = (a*vc + g*v_tap) / (a + g)
            diag[tap] += g - g * g / (a + g)
            rhs[tap] += g * a * vc / (a + g)
            ab = np.zeros((3, n))
            ab[0, 1:] = off
            ab[1] = diag
            ab[2, :-1] = off
            v = solve_banded((1, 1), ab, rhs, check_finite=False)
            vc = (a * vc + g * v[tap]) / (a + g)
        else:
            g = _gate(t - dt, act, pre, tau_wl) / p.access_res
            i = -diag0 * v
            if n > 1:
                i[:-1] -= off * v[1:]
                i[1:] -= off * v[:-1]
            i[0] += g_src * (v_src - v[0])
            i_cell = g * (vc - v[tap])
            i[tap] += i_cell
            v = v + dt * i / c_node
            vc = vc - dt * i_cell / c_cell
        if not (lo_bound <= v.min() and v.max() <= hi_bound and lo_bound <= vc <= hi_bound):
            raise NumericalStabilityError(
                f"voltage left [0, vdd] at t={t / _NS:.4f} ns with timestep {dt:g} s")
        times[k], out_v[k], out_c[k] = t, v[tap], vc
        phase[k] = 0 if t < t_sense else (1 if t < t_eq else 2)
    markers = {"charge_sharing": act_time, "sensing": t_sense / _NS, "precharge": t_eq / _NS}
    return Waveform(times / _NS, out_v, out_c, phase, markers)


def time_to_ready(waveform: Waveform, params: CircuitParams = CircuitParams()) -> float:
    """First time (ns) the bitline at the cell reaches ``v_ready``, linearly
    interpolated; ``NOT_READY`` if it never does."""
    v, t = waveform.voltage, waveform.time_ns
    above = np.nonzero(v >= params.v_ready)[0]
    if not len(above):
        return NOT_READY
    k = int(above[0])
    if k == 0:
        return float(t[0])
    v0, v1 = v[k - 1], v[k]
    return float(t[k - 1] + (params.v_ready - v0) * (t[k] - t[k - 1]) / (v1 - v0))


def _sample(waveform: Waveform, at: float, node: str) -> float:
    t = waveform.time_ns
    if not t[0] <= at <= t[-1]:
        raise IndexError(f"t={at} ns outside the waveform [{t[0]}, {t[-1]}]")
    series = waveform.voltage if node == "bitline" else waveform.cell_voltage
    return float(np.interp(at, t, series))


def restored_voltage(waveform: Waveform, at: float, node: str = "bitline") -> float:
    return _sample(waveform, at, node)


def precharge_residual(waveform: Waveform, at: float, node: str = "bitline",
                       params: CircuitParams = CircuitParams()) -> float:
    return abs(_sample(waveform, at, node) - params.vdd / 2)


@dataclass
class OrderingReport:
    values: dict
    holds: dict

    def all_hold(self) -> bool:
        return all(self.holds.values())


def check_orderings(params: CircuitParams = CircuitParams(), act_time: float = 0.0,
                    pre_time: float = 30.0, residual_at: float = 40.0,
                    near=(MAT_ROWS - 1, 0), far_bitline=(0, 0),
                    far_wordline=(MAT_ROWS - 1, MAT_COLS - 2)) -> OrderingReport:
    """The five near/far comparisons.

    Defaults pick even columns (top sense amp), so row 511 is nearest the
    sense amp and row 0 farthest; columns 0 and 510 are nearest and
    farthest from the wordline driver.

    A: near cell's bitline reaches v_ready earlier
    B: near cell is restored higher at PRE
    C: near cell's bitline is closer to vdd/2 after precharge
    D: near-driver cell is restored higher at PRE
    E: near-driver cell's bitline is closer to vdd/2 after precharge
    """
    run = lambda rc: simulate_access(rc[0], rc[1], act_time, pre_time, params)  # noqa: E731
    wn, wb, ww = run(near), run(far_bitline), run(far_wordline)
    v = {
        "ready_near": time_to_ready(wn, params), "ready_far": time_to_ready(wb, params),
        "restored_near": restored_voltage(wn, pre_time),
        "restored_far": restored_voltage(wb, pre_time),
        "residual_near": precharge_residual(wn, residual_at, params=params),
        "residual_far": precharge_residual(wb, residual_at, params=params),
        "restored_wl_near": restored_voltage(wn, pre_time, "cell"),
        "restored_wl_far": restored_voltage(ww, pre_time, "cell"),
        "residual_wl_near": precharge_residual(wn, residual_at, params=params),
        "residual_wl_far": precharge_residual(ww, residual_at, params=params),
    }
    holds = {
        "A": v["ready_near"] < v["ready_far"],
        "B": v["restored_near"] > v["restored_far"],
        "C": v["residual_near"] < v["residual_far"],
        "D": v["restored_wl_near"] > v["restored_wl_far"],
        "E": v["residual_wl_near"] < v["residual_wl_far"],
    }
    return OrderingReport(v, holds)


def convergence(cell_row: int = 0, cell_col: int = 0,
                params: CircuitParams = CircuitParams(), refine: int = 2) -> float:
    """Relative change in time-to-ready when the timestep is divided by ``refine``."""
    coarse = time_to_ready(simulate_access(cell_row, cell_col, params=params), params)
    fine_p = params.replace(timestep=params.timestep / refine)
    fine = time_to_ready(simulate_access(cell_row, cell_col, params=fine_p), fine_p)
    return abs(coarse - fine) / fine
