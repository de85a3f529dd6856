"""Decentralized max-pressure phase selection in four flavors.

Every variant follows the same scheme at each decision instant (every T
seconds): compute a per-movement weight as the movement's own metric minus
the turning-ratio-weighted sum of the same metric over the downstream link's
outgoing movements; sum saturation-flow-weighted weights over each phase's
served movements to get the phase pressure; activate the argmax.

The variants differ only in the metric:

* ``qmp``  - vehicle count on the movement at the decision instant
* ``hmp``  - stopped (halting) vehicle count at the decision instant
* ``ttmp`` - vehicle-seconds accumulated over the last period (equals the
  operation step times the summed per-step counts, i.e. period-average
  queue length up to a constant factor)
* ``dmp``  - delay accumulated over the last period: vehicle-seconds minus
  distance covered divided by free-flow speed, clamped at zero per movement

A candidate phase other than the currently active one pays the switch lost
time through an effective saturation factor (T - lost) / T; the active phase
keeps its full saturation flow.  Ties break toward the active phase first,
then the lowest phase index.  Weight and pressure sums run in ascending
movement index so independent re-computation can match bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from numba import njit

VARIANTS = ("qmp", "hmp", "ttmp", "dmp")
VARIANT_CODE = {name: i for i, name in enumerate(VARIANTS)}
# per-variant decision periods (s) that performed best in calibration sweeps
DEFAULT_T = {"qmp": 9.0, "hmp": 5.0, "ttmp": 9.0, "dmp": 5.0}
DEFAULT_LOST_TIME = 3.0


@dataclass(frozen=True)
class ControllerSpec:
    """Which metric feeds the weight, plus decision timing."""

    variant: str
    T: float | None = None  # defaults to the variant's calibrated period
    lost_time: float = DEFAULT_LOST_TIME
    tie_break: str = "active-then-lowest"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.T is None:
            object.__setattr__(self, "T", DEFAULT_T[self.variant])
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.tie_break != "active-then-lowest":
            raise ValueError("only the active-then-lowest tie break is defined")

    @property
    def code(self) -> int:
        return VARIANT_CODE[self.variant]

    def with_T(self, T: float) -> "ControllerSpec":
        return replace(self, T=T)


@dataclass
class MetricWindow:
    """Per-movement accumulators over the current decision period.

    ``sum_count`` is vehicle-steps; travel time follows as dt * sum_count
    (each vehicle present for a step accrues exactly one step of travel
    time), which keeps the travel-time/average-queue equivalence structural
    rather than numerical.
    """

    dt: float
    steps: int = 0
    sum_count: int = 0
    sum_stopped: int = 0
    sum_distance: float = 0.0
    snapshot_count: int = 0
    snapshot_stopped: int = 0

    @property
    def sum_travel_time(self) -> float:
        return self.dt * self.sum_count

    def delay(self, v_f: float) -> float:
        return max(0.0, self.sum_travel_time - self.sum_distance / v_f)


def update_windows(windows: Mapping[str, MetricWindow],
                   step_counts: Mapping[str, int],
                   step_stopped: Mapping[str, int],
                   step_distance: Mapping[str, float],
                   reset: bool = False) -> None:
    """Accumulate one operation step into each movement's window.

    ``reset=True`` zeroes the accumulators first (decision instant).
    Snapshots are overwritten with the step's counts.
    """
    for mid, w in windows.items():
        if reset:
            w.steps = 0
            w.sum_count = 0
            w.sum_stopped = 0
            w.sum_distance = 0.0
        w.steps += 1
        w.sum_count += step_counts.get(mid, 0)
        w.sum_stopped += step_stopped.get(mid, 0)
        w.sum_distance += step_distance.get(mid, 0.0)
        w.snapshot_count = step_counts.get(mid, 0)
        w.snapshot_stopped = step_stopped.get(mid, 0)


# ---------------------------------------------------------------------------
# njit cores (shared with the simulation kernel)
# ---------------------------------------------------------------------------

@njit(cache=True)
def metric_values(variant, dt, scale,
                  win_count, win_stopped, win_dist,
                  snap_count, snap_stopped,
                  mov_up, link_vf, out):
    """Per-movement metric for the given variant, written into ``out``."""
    n = win_count.shape[0]
    for m in range(n):
        if variant == 0:      # qmp: instantaneous count
            v = float(snap_count[m])
        elif variant == 1:    # hmp: instantaneous stopped count
            v = float(snap_stopped[m])
        elif variant == 2:    # ttmp: windowed travel time
            v = dt * float(win_count[m])
        else:                 # dmp: windowed delay, clamped at zero
            v = dt * float(win_count[m]) - win_dist[m] / link_vf[mov_up[m]]
            if v < 0.0:
                v = 0.0
        out[m] = v * scale


@njit(cache=True)
def weights_from_metrics(metric, link_out_start, link_out_mov,
                         mov_down, mov_ratio, out):
    """weight(l,m) = metric(l,m) - sum over (m,n) of metric(m,n)*H(m,n).

    Downstream sums run in ascending movement index.  Movements into exit
    links have no outgoing movements, so their downstream term is zero.
    """
    n = metric.shape[0]
    for m in range(n):
        down = mov_down[m]
        acc = 0.0
        for k in range(link_out_start[down], link_out_start[down + 1]):
            j = link_out_mov[k]
            acc += metric[j] * mov_ratio[j]
        out[m] = metric[m] - acc


@njit(cache=True)
def phase_pressures(weights, mov_sat, phase_mov_start, phase_mov,
                    phase_int, int_active, T, lost_time, out):
    """Saturation-weighted weight sums; candidates pay (T - lost)/T."""
    n_phases = phase_mov_start.shape[0] - 1
    factor = (T - lost_time) / T
    for g in range(n_phases):
        active = int_active[phase_int[g]] == g
        acc = 0.0
        for k in range(phase_mov_start[g], phase_mov_start[g + 1]):
            m = phase_mov[k]
            c_eff = mov_sat[m] if active else mov_sat[m] * factor
            acc += c_eff * weights[m]
        out[g] = acc


@njit(cache=True)
def select_phases(pressures, int_phase_start, int_active, out):
    """Argmax per intersection; active phase wins ties, then lowest index."""
    n_int = int_phase_start.shape[0] - 1
    for i in range(n_int):
        lo, hi = int_phase_start[i], int_phase_start[i + 1]
        best = int_active[i]
        for g in range(lo, hi):
            if pressures[g] > pressures[best]:
                best = g
        out[i] = best


# ---------------------------------------------------------------------------
# python-facing single-shot wrappers
# ---------------------------------------------------------------------------

def weight(spec: ControllerSpec, movement_id: str,
           windows: Mapping[str, MetricWindow], network,
           v_f: float | None = None) -> float:
    """Weight of one movement from explicit windows.

    ``windows`` must cover the movement and every outgoing movement of its
    downstream link, all with the same accumulation horizon.
    """
    if movement_id not in network.movements:
        raise KeyError(f"unknown movement {movement_id}")
    mv = network.movements[movement_id]
    need = [movement_id] + [m.id for m in network.outgoing(mv.downstream)]
    horizons = set()
    for mid in need:
        if mid not in windows:
            raise KeyError(f"window missing for movement {mid}")
        horizons.add(windows[mid].steps)
    if len(horizons) > 1:
        raise ValueError(f"mismatched window horizons {sorted(horizons)}")

    def metric(mid: str) -> float:
        w = windows[mid]
        if spec.variant == "qmp":
            return float(w.snapshot_count)
        if spec.variant == "hmp":
            return float(w.snapshot_stopped)
        if spec.variant == "ttmp":
            return w.sum_travel_time
        vf = v_f if v_f is not None else network.links[network.movements[mid].upstream].free_flow_speed
        return w.delay(vf)

    down = 0.0
    for m in sorted(network.outgoing(mv.downstream), key=lambda m: m.id):
        down += metric(m.id) * m.turning_ratio
    return metric(movement_id) - down


def pressure(phase_movements, weights: Mapping[str, float], spec: ControllerSpec,
             is_active: bool) -> float:
    """Pressure of one phase given per-movement weights.

    ``phase_movements`` is an iterable of Movement objects (their
    ``saturation_flow_mean`` supplies the effective saturation).
    """
    factor = 1.0 if is_active else (spec.T - spec.lost_time) / spec.T
    total = 0.0
    for m in sorted(phase_movements, key=lambda m: m.id):
        total += m.saturation_flow_mean * factor * weights[m.id]
    return total


def select_phase(pressures, active: int) -> int:
    """Argmax with active-first, lowest-index tie-breaking."""
    if len(pressures) == 0:
        raise ValueError("at least one phase required")
    best = active
    for j, p in enumerate(pressures):
        if p > pressures[best]:
            best = j
    return best
