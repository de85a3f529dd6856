"""Demand profiles, analytic link flows, saturation degrees, run metrics.

Demand is stated as the north-south entry rate; east-west entries always
carry half of it.  The trapezoid profile runs a four-hour pattern: low for
half an hour, a one-hour linear climb to the peak, one hour held at the
peak, a one-hour descent, and low again for the final half hour.

``analytic_flows`` solves the steady-state conservation system for mean
link flows given entry demands and turning ratios, and
``degree_of_saturation`` turns those into the per-intersection feasibility
index (sum over phases of the critical flow-to-saturation ratio; below 1
means some fixed-time plan can serve the demand).

``RunLedger`` collects everything a run reports: per-minute series (the
CSV rows) and the scalar summary metrics.  ``stability_diagnostic`` fits a
slope to the tail of the vehicles-in-network series to classify a run as
bounded or growing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .network import ENTRY, EXIT, INTERNAL, Network

LOW_DEMAND = 600.0     # veh/h on north-south entries
MEDIUM_DEMAND = 750.0
HIGH_DEMAND = 900.0
TRAPEZOID_HORIZON_S = 4 * 3600.0


def trapezoid_demand(t: float) -> float:
    """North-south entry rate (veh/h) of the four-hour trapezoid pattern."""
    if not 0.0 <= t <= TRAPEZOID_HORIZON_S:
        raise ValueError(f"t={t}s outside the trapezoid horizon [0, {TRAPEZOID_HORIZON_S}]")
    m = t / 60.0
    if m <= 30.0:
        return LOW_DEMAND
    if m <= 90.0:
        return LOW_DEMAND + (HIGH_DEMAND - LOW_DEMAND) * (m - 30.0) / 60.0
    if m <= 150.0:
        return HIGH_DEMAND
    if m <= 210.0:
        return HIGH_DEMAND - (HIGH_DEMAND - LOW_DEMAND) * (m - 150.0) / 60.0
    return LOW_DEMAND


@dataclass(frozen=True)
class ConstantDemand:
    """Time-invariant demand: NS entries at ``ns_rate`` veh/h, EW at half."""

    ns_rate: float

    def ns(self, t: float) -> float:
        return self.ns_rate

    def rate_table(self, n_steps: int, dt: float) -> np.ndarray:
        r = np.empty((n_steps, 2))
        r[:, 0] = self.ns_rate / 3600.0
        r[:, 1] = self.ns_rate / 7200.0
        return r

    def describe(self) -> dict:
        return {"kind": "constant", "ns_rate_veh_h": self.ns_rate}


@dataclass(frozen=True)
class TrapezoidDemand:
    """The four-hour low/climb/peak/descend/low pattern."""

    def ns(self, t: float) -> float:
        return trapezoid_demand(t)

    def rate_table(self, n_steps: int, dt: float) -> np.ndarray:
        if n_steps * dt > TRAPEZOID_HORIZON_S + 1e-9:
            raise ValueError("horizon exceeds the trapezoid pattern definition")
        r = np.empty((n_steps, 2))
        for k in range(n_steps):
            ns = trapezoid_demand(k * dt)
            r[k, 0] = ns / 3600.0
            r[k, 1] = ns / 7200.0
        return r

    def describe(self) -> dict:
        return {"kind": "trapezoid", "low_veh_h": LOW_DEMAND, "high_veh_h": HIGH_DEMAND}


def demand_from_spec(spec) -> ConstantDemand | TrapezoidDemand:
    """'trapezoid' or a number (NS veh/h) or an already-built profile."""
    if hasattr(spec, "rate_table"):
        return spec
    if isinstance(spec, str):
        if spec == "trapezoid":
            return TrapezoidDemand()
        return ConstantDemand(float(spec))
    return ConstantDemand(float(spec))


# ---------------------------------------------------------------------------
# analytic flows and saturation
# ---------------------------------------------------------------------------

def entry_demand_map(net: Network, demand) -> dict[str, float]:
    """Entry-link demand (veh/h) for a profile's peak-independent mean.

    For time-varying profiles use the rate at a representative instant or a
    scaled constant; callers doing feasibility checks pass constants.
    """
    if isinstance(demand, Mapping):
        return dict(demand)
    out = {}
    for l in net.entry_links:
        ns = demand.ns(0.0) if hasattr(demand, "ns") else float(demand)
        out[l.id] = ns if l.bearing in ("N", "S") else ns / 2.0
    return out


def analytic_flows(net: Network, entry_demand: Mapping[str, float]) -> dict[str, float]:
    """Mean flow (veh/h) per internal and exit link from conservation.

    Internal flows satisfy f = R f + b where R routes internal->internal and
    b is the entry inflow; the linear system (I - R) f = b is solved
    directly.  Exit flows follow by one more application of the ratios.
    """
    internal = [l.id for l in net.internal_links]
    idx = {lid: i for i, lid in enumerate(internal)}
    n = len(internal)
    R = np.zeros((n, n))
    b = np.zeros(n)
    for m in net.movements.values():
        up_kind = net.links[m.upstream].kind
        down = m.downstream
        if down not in idx:
            continue
        if up_kind == INTERNAL:
            R[idx[down], idx[m.upstream]] += m.turning_ratio
        elif up_kind == ENTRY:
            b[idx[down]] += entry_demand[m.upstream] * m.turning_ratio
    if n:
        rho = max(abs(np.linalg.eigvals(R))) if n <= 256 else None
        if rho is not None and rho >= 1.0 - 1e-12:
            raise ValueError(f"internal routing is not substochastic (spectral radius {rho:.6f})")
        try:
            f = np.linalg.solve(np.eye(n) - R, b)
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular routing system") from exc
    else:
        f = np.zeros(0)

    flows: dict[str, float] = {lid: float(entry_demand[lid]) for lid in entry_demand}
    flows.update({lid: float(f[idx[lid]]) for lid in internal})
    for l in net.exit_links:
        total = 0.0
        for m in net.incoming(l.id):
            up = m.upstream
            upflow = flows.get(up)
            if upflow is None:
                raise ValueError(f"no flow available for link {up}")
            total += upflow * m.turning_ratio
        flows[l.id] = total
    return flows


def degree_of_saturation(net: Network, intersection_id: str,
                         flows: Mapping[str, float]) -> float:
    """Sum over the intersection's phases of the critical flow ratio.

    The flow of a movement is its upstream link flow times the turning
    ratio; the critical ratio of a phase is the maximum over its served
    movements of flow / saturation flow.
    """
    inter = net.intersections[intersection_id]
    total = 0.0
    for ph in inter.phases:
        crit = 0.0
        for mid in ph.served_movements:
            m = net.movements[mid]
            mflow = flows[m.upstream] * m.turning_ratio / 3600.0  # veh/s
            if m.saturation_flow_mean > 0:
                crit = max(crit, mflow / m.saturation_flow_mean)
        total += crit
    return total


def degrees_of_saturation(net: Network, entry_demand: Mapping[str, float]) -> dict[str, float]:
    flows = analytic_flows(net, entry_demand)
    return {iid: degree_of_saturation(net, iid, flows) for iid in net.intersection_order}


# ---------------------------------------------------------------------------
# run ledger
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("t_min", "delay_veh_s", "vehicles", "blocked",
               "entered_cum", "exited_cum", "waiting_s_cum")


@dataclass
class RunLedger:
    """Per-minute series plus scalar performance metrics for one run."""

    minutes: np.ndarray          # bin index, 0-based
    delay_veh_s: np.ndarray      # internal delay accrued in the bin
    vehicles: np.ndarray         # mean vehicles in network over the bin
    blocked: np.ndarray          # mean boundary-blocked count over the bin
    entered_cum: np.ndarray
    exited_cum: np.ndarray
    waiting_s_cum: np.ndarray
    created: int
    entered: int
    exited: int
    blocked_final: int
    horizon_s: float
    n_links: int
    internal_delay_total: float  # veh*s over the run
    waiting_total: float         # veh*s at the boundary
    exit_delay_total: float      # sum of per-vehicle delays at exit
    stopped_step_sum: float      # sum over steps of network stopped count
    n_steps: int
    dt: float

    @classmethod
    def from_sim(cls, sim) -> "RunLedger":
        led = sim.led
        n_min = len(led[0])
        steps = np.maximum(led[3], 1)
        nonexit = sum(1 for l in sim.network.links.values() if l.kind != EXIT)
        return cls(
            minutes=np.arange(n_min),
            delay_veh_s=led[0].copy(),
            vehicles=led[1] / steps,
            blocked=led[2] / steps,
            entered_cum=led[4].copy(),
            exited_cum=led[5].copy(),
            waiting_s_cum=led[6].copy(),
            created=sim.created, entered=sim.entered, exited=sim.exited,
            blocked_final=sim.blocked, horizon_s=sim.horizon, n_links=nonexit,
            internal_delay_total=float(sim.fctr[1]),
            waiting_total=float(sim.fctr[0]),
            exit_delay_total=float(sim.fctr[2]),
            stopped_step_sum=float(sim.fctr[3]),
            n_steps=sim.n_steps, dt=sim.dt,
        )

    # scalar metrics ---------------------------------------------------------

    @property
    def avg_internal_delay_s(self) -> float:
        """Mean internal delay per vehicle, over vehicles that exited."""
        return self.exit_delay_total / self.exited if self.exited else 0.0

    @property
    def avg_waiting_s(self) -> float:
        """Mean boundary waiting over all vehicles created so far."""
        return self.waiting_total / self.created if self.created else 0.0

    @property
    def avg_total_delay_s(self) -> float:
        return self.avg_internal_delay_s + self.avg_waiting_s

    @property
    def avg_queue_per_link(self) -> float:
        """Time-mean stopped vehicles per (non-exit) link."""
        if self.n_steps == 0 or self.n_links == 0:
            return 0.0
        return self.stopped_step_sum / self.n_steps / self.n_links

    @property
    def throughput_veh_h(self) -> float:
        return self.exited / (self.horizon_s / 3600.0) if self.horizon_s else 0.0

    def scalars(self) -> dict[str, float]:
        return {
            "avg_internal_delay_s": self.avg_internal_delay_s,
            "avg_waiting_s": self.avg_waiting_s,
            "avg_total_delay_s": self.avg_total_delay_s,
            "avg_queue_per_link": self.avg_queue_per_link,
            "throughput_veh_h": self.throughput_veh_h,
            "internal_delay_total_veh_s": self.internal_delay_total,
            "created": self.created,
            "entered": self.entered,
            "exited": self.exited,
            "blocked_final": self.blocked_final,
        }

    # persistence ------------------------------------------------------------

    def write_csv(self, path, config_echo: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if config_echo is not None:
                fh.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i in range(len(self.minutes)):
                w.writerow([
                    int(self.minutes[i]),
                    f"{self.delay_veh_s[i]:.6f}",
                    f"{self.vehicles[i]:.6f}",
                    f"{self.blocked[i]:.6f}",
                    int(self.entered_cum[i]),
                    int(self.exited_cum[i]),
                    f"{self.waiting_s_cum[i]:.6f}",
                ])


@dataclass(frozen=True)
class StabilityVerdict:
    slope_veh_min: float
    verdict: str  # bounded | growing


def stability_diagnostic(vehicles_series, window_min: int = 5,
                         threshold: float = 0.05) -> StabilityVerdict:
    """Classify a per-minute vehicles-in-network series.

    Takes the final half of the series, smooths it with a rolling mean of
    ``window_min`` minutes, and fits a least-squares line; slopes above
    ``threshold`` (veh/min) read as growing.
    """
    series = np.asarray(vehicles_series, float)
    if series.size < 2 * window_min:
        raise ValueError(f"series of {series.size} minutes is shorter than two "
                         f"{window_min}-minute windows")
    tail = series[series.size // 2:]
    kernel = np.ones(window_min) / window_min
    smooth = np.convolve(tail, kernel, mode="valid")
    x = np.arange(smooth.size, dtype=float)
    slope = float(np.polyfit(x, smooth, 1)[0]) if smooth.size > 1 else 0.0
    return StabilityVerdict(slope, "growing" if slope > threshold else "bounded")
