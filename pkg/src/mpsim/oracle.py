"""Independent brute-force verifiers for controllers and dynamics.

``recompute_pressure`` re-derives a decision's weights and pressures from
raw vehicle records and the per-vehicle event log, bypassing the kernel's
cached accumulators entirely.  Both paths fix the same summation order
(ascending movement id, event order within a movement), so agreement is
exact, not approximate.

``exhaustive_best_schedule`` enumerates every phase sequence of a tiny
instance at the decision resolution and simulates each one against the
identical demand realization (turn choices are a pure function of vehicle
identity, so the "world" is schedule-invariant).  Any max-pressure variant
run on the same instance realizes a total delay no smaller than the
enumerated minimum, since its own schedule is in the enumerated set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .controllers import ControllerSpec, VARIANT_CODE
from .dynamics import FixedSchedule, Simulation, TraceConfig
from .network import Network, build_grid
from .scenario import ConstantDemand


@dataclass(frozen=True)
class DecisionOracle:
    """Independently recomputed decision inputs and outputs."""

    weights: dict[str, float]
    pressures: dict[tuple[str, int], float]
    selection: dict[str, int]


def recompute_pressure(sim: Simulation, spec: ControllerSpec,
                       observed: bool | None = None) -> DecisionOracle:
    """Re-derive the upcoming decision from first principles.

    ``sim`` must be paused at a decision instant (a multiple of T) with an
    event trace enabled.  Windows are rebuilt by direct summation over the
    vehicle-step event log of the current period; snapshots by recounting
    the vehicle records.  Pass ``observed`` to override the simulation's
    own probe-visibility setting.
    """
    net, tb = sim.network, sim.tables
    if sim.T_steps and sim.k % sim.T_steps != 0:
        raise ValueError("simulation is not paused at a decision instant")
    use_cv = sim.use_cv if observed is None else observed
    scale = (1.0 / sim.p) if (use_cv and sim.inv_scale) else 1.0

    window_start = max(0, sim.k - sim.T_steps) if sim.T_steps else 0
    ev = sim.events()
    win_cnt = {mid: 0 for mid in net.movement_order}
    win_stop = dict(win_cnt)
    win_dist = {mid: 0.0 for mid in net.movement_order}
    mask = ev["step"] >= window_start
    if use_cv:
        mask &= ev["is_cv"]
    for i in np.nonzero(mask)[0]:  # index order preserves attribution order
        mid = net.movement_order[ev["movement"][i]]
        win_cnt[mid] += 1
        win_stop[mid] += int(ev["stopped"][i])
        win_dist[mid] += float(ev["distance"][i])

    snap_x = {mid: 0 for mid in net.movement_order}
    snap_xs = dict(snap_x)
    for v in sim.vehicles():
        if use_cv and not v.is_cv:
            continue
        snap_x[v.movement] += 1
        snap_xs[v.movement] += int(v.stopped)

    def metric(mid: str) -> float:
        if spec.variant == "qmp":
            v = float(snap_x[mid])
        elif spec.variant == "hmp":
            v = float(snap_xs[mid])
        elif spec.variant == "ttmp":
            v = sim.dt * float(win_cnt[mid])
        else:
            vf = net.links[net.movements[mid].upstream].free_flow_speed
            v = sim.dt * float(win_cnt[mid]) - win_dist[mid] / vf
            if v < 0.0:
                v = 0.0
        return v * scale

    metrics = {mid: metric(mid) for mid in net.movement_order}
    weights = {}
    for mid in net.movement_order:
        m = net.movements[mid]
        acc = 0.0
        for out in sorted(net.outgoing(m.downstream), key=lambda o: o.id):
            acc += metrics[out.id] * out.turning_ratio
        weights[mid] = metrics[mid] - acc

    T_sec = round(spec.T / sim.dt) * sim.dt
    factor = (T_sec - spec.lost_time) / T_sec
    active = {s.intersection: s.active_phase for s in sim.signals()}
    pressures: dict[tuple[str, int], float] = {}
    selection: dict[str, int] = {}
    for iid in net.intersection_order:
        inter = net.intersections[iid]
        for ph in inter.phases:
            f = 1.0 if ph.id == active[iid] else factor
            acc = 0.0
            for mid in sorted(ph.served_movements):
                acc += net.movements[mid].saturation_flow_mean * f * weights[mid]
            pressures[(iid, ph.id)] = acc
        best = active[iid]
        for ph in inter.phases:
            if pressures[(iid, ph.id)] > pressures[(iid, best)]:
                best = ph.id
        selection[iid] = best
    return DecisionOracle(weights, pressures, selection)


def recount(sim: Simulation, movement_id: str) -> tuple[int, int, int]:
    """Brute-force (x, x_s, x_m) for a movement from the vehicle records."""
    x = xs = 0
    for v in sim.vehicles():
        if v.movement == movement_id:
            x += 1
            xs += int(v.stopped)
    return x, xs, x - xs


# ---------------------------------------------------------------------------
# tiny instances and exhaustive search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TinyInstance:
    """A 1x1 grid small enough to enumerate every phase sequence."""

    seed: int
    T: float = 5.0
    n_decisions: int = 5
    ns_rate: float = 500.0  # veh/h
    dt: float = 1.0
    initial_vehicles: tuple = ()  # (link_id, movement_id, position, stopped)

    @property
    def horizon(self) -> float:
        return self.n_decisions * self.T

    def network(self) -> Network:
        return build_grid(1, 1)

    def _seed_initial(self, sim: Simulation) -> None:
        for link_id, mov_id, pos, stopped in self.initial_vehicles:
            sim.seed_vehicle(link_id, mov_id, pos, stopped=stopped)

    def simulate_schedule(self, net: Network, phases: np.ndarray) -> float:
        """Total delay (internal + boundary waiting, veh*s) under a schedule."""
        sim = Simulation(net, ControllerSpec("dmp", T=self.T),
                         fixed_schedule=FixedSchedule(self.T, phases),
                         demand=ConstantDemand(self.ns_rate), seed=self.seed,
                         dt=self.dt, horizon=self.horizon, mode="meso", pool=8192)
        self._seed_initial(sim)
        sim.run()
        return float(sim.fctr[1] + sim.fctr[0])

    def simulate_controller(self, net: Network, variant: str) -> float:
        sim = Simulation(net, ControllerSpec(variant, T=self.T),
                         demand=ConstantDemand(self.ns_rate), seed=self.seed,
                         dt=self.dt, horizon=self.horizon, mode="meso", pool=8192)
        self._seed_initial(sim)
        sim.run()
        return float(sim.fctr[1] + sim.fctr[0])


def exhaustive_best_schedule(instance: TinyInstance,
                             n_decisions: int | None = None
                             ) -> tuple[float, tuple[int, ...]]:
    """Minimum total delay over all phase sequences, with the argmin.

    Enumerates 4^n sequences at the decision resolution; refuses more than
    12 decisions.
    """
    n = instance.n_decisions if n_decisions is None else n_decisions
    if n > 12:
        raise ValueError(f"{n} decisions is too many to enumerate (max 12)")
    if n != instance.n_decisions:
        instance = TinyInstance(instance.seed, instance.T, n, instance.ns_rate,
                                instance.dt, instance.initial_vehicles)
    net = instance.network()
    n_phases = len(next(iter(net.intersections.values())).phases)
    best = np.inf
    best_seq: tuple[int, ...] = ()
    sched = np.zeros((n, 1), np.int32)
    for seq in itertools.product(range(n_phases), repeat=n):
        sched[:, 0] = seq
        total = instance.simulate_schedule(net, sched)
        if total < best:
            best = total
            best_seq = seq
    return float(best), best_seq
