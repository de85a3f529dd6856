"""Per-vehicle mesoscopic traffic state and the simulation driver.

``Simulation`` owns the flat state arrays, advances them through the
compiled kernel, and exposes typed views (vehicles, per-movement counts,
metric windows, signal assignments) for tests, oracles and the CLI.

Vehicles on a link live in per-lane FIFO queues ordered by position; each
vehicle carries the movement it will execute at the downstream stop line,
sampled from the turning ratios the moment it enters the link.  Entry links
have finite storage: arrivals that do not fit wait in an unbounded boundary
queue, accrue waiting time, and are admitted first-in-first-out when space
frees.  Vehicles crossing into an exit link leave the network immediately
and count toward throughput.

Kinematics follow the run mode:

* ``analytic``: moving vehicles cover exactly one free-flow step or join
  the stop-line queue (infinite internal storage, all-or-nothing step
  accounting).  Windowed delay is then identically the operation step times
  the summed stopped counts.
* ``meso`` (default): vehicles advance by their feasible distance, keep jam
  spacing behind stopped predecessors, and count as stopped below 0.1 m/s;
  internal links enforce finite storage and spillback suppresses discharge.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .controllers import ControllerSpec, MetricWindow
from .network import JAM_SPACING_M, Network

HALT_SPEED = 0.1  # m/s; slower counts as stopped


@dataclass(frozen=True)
class Counts:
    x: int
    x_s: int
    x_m: int


@dataclass(frozen=True)
class VehicleView:
    id: int
    link: str
    lane: int
    position: float
    movement: str
    stopped: bool
    ever_stopped: bool
    is_cv: bool
    entered_network_at: float


@dataclass(frozen=True)
class SignalAssignment:
    intersection: str
    active_phase: int  # local phase index
    steps_since_switch: int
    lost_time_remaining: float


@dataclass(frozen=True)
class FixedSchedule:
    """Externally supplied phase sequence (local indices per intersection)."""

    T: float
    phases: np.ndarray  # (n_decisions, n_intersections) int32


@dataclass
class TraceConfig:
    decisions: bool = False  # per-decision pressures and weights
    windows: bool = False    # per-decision window/snapshot values
    steps: bool = False      # per-step per-movement count/stopped/distance
    events: int = 0          # vehicle-step event log capacity (0 = off)


class Simulation:
    def __init__(self, network: Network, controller: ControllerSpec | None = None,
                 demand=None, seed: int = 0, mode: str = "meso",
                 penetration=None, dt: float = 1.0, horizon: float = 3600.0,
                 fixed_schedule: FixedSchedule | None = None,
                 all_green: bool = False, internal_capacity: str | None = None,
                 trace: TraceConfig | None = None, pool: int | None = None):
        if mode not in ("analytic", "meso"):
            raise ValueError(f"mode must be analytic or meso, got {mode!r}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        n_steps = round(horizon / dt)
        if n_steps <= 0 or abs(n_steps * dt - horizon) > 1e-9:
            raise ValueError(f"horizon {horizon} is not a positive multiple of dt {dt}")

        self.network = network
        self.tables = network.compiled()
        self.controller = controller
        self.demand = demand
        self.seed = int(seed)
        self.mode = mode
        self.dt = float(dt)
        self.horizon = float(horizon)
        self.n_steps = n_steps
        self.fixed_schedule = fixed_schedule
        self.all_green = bool(all_green)
        self.trace = trace or TraceConfig()

        if internal_capacity is None:
            internal_capacity = "infinite" if mode == "analytic" else "finite"
        if internal_capacity not in ("finite", "infinite"):
            raise ValueError("internal_capacity must be finite or infinite")
        if mode == "analytic" and internal_capacity == "finite":
            raise ValueError("analytic mode requires infinite internal capacity")
        self.internal_capacity = internal_capacity

        if all_green:
            self.T_steps = 0
            self.lost_time = 0.0
            self.variant_code = 0
        elif fixed_schedule is not None:
            self.T_steps = self._steps_of(fixed_schedule.T, "schedule period")
            self.lost_time = (controller.lost_time if controller
                              else ControllerSpec("dmp").lost_time)
            self.variant_code = 0
        else:
            if controller is None:
                raise ValueError("a controller, fixed schedule, or all_green is required")
            self.T_steps = self._steps_of(controller.T, "controller period T")
            self.lost_time = controller.lost_time
            self.variant_code = controller.code

        # penetration: when configured, controllers read probe-only windows
        if penetration is None:
            self.p = 1.0
            self.inv_scale = False
            self.use_cv = False
        else:
            self.p = float(penetration.p)
            if not 0.0 <= self.p <= 1.0:
                raise ValueError(f"penetration {self.p} outside [0, 1]")
            self.inv_scale = penetration.scaling == "inverse-p"
            if self.inv_scale and self.p == 0.0:
                raise ValueError("inverse-p scaling undefined at p = 0")
            self.use_cv = True

        tb = self.tables
        if demand is not None:
            self.rates = np.asarray(demand.rate_table(n_steps, dt), np.float64)
            if self.rates.shape != (n_steps, 2):
                raise ValueError("demand rate table must be (n_steps, 2)")
        else:
            self.rates = np.zeros((n_steps, 2), np.float64)

        n_entry_ns = int(tb.entry_is_ns.sum())
        n_entry_ew = len(tb.entry_links) - n_entry_ns
        expect = float(self.rates[:, 0].sum() * dt * n_entry_ns
                       + self.rates[:, 1].sum() * dt * n_entry_ew)
        self.pool = pool or int(expect + 6.0 * math.sqrt(expect + 1.0) + 1024)

        self._alloc_state()
        self.k = 0  # steps completed

    # ------------------------------------------------------------------ setup

    def _steps_of(self, seconds: float, what: str) -> int:
        steps = round(seconds / self.dt)
        if steps < 1 or abs(steps * self.dt - seconds) > 1e-9:
            raise ValueError(f"{what} {seconds}s is not a positive multiple of dt {self.dt}")
        return steps

    def _alloc_state(self):
        tb, nv = self.tables, self.pool
        nm, ni, nph = tb.n_mov, tb.n_int, tb.n_phases
        n_min = max(1, math.ceil(self.horizon / 60.0))
        self.n_decisions = (0 if self.T_steps == 0
                            else (self.n_steps + self.T_steps - 1) // self.T_steps)

        self.veh = (np.zeros(nv), np.zeros(nv, np.int32), np.full(nv, -1, np.int32),
                    np.full(nv, -1, np.int32), np.zeros(nv, np.bool_),
                    np.zeros(nv, np.bool_), np.zeros(nv, np.bool_),
                    np.zeros(nv, np.int64), np.zeros(nv, np.int32),
                    np.zeros(nv), np.zeros(nv), np.zeros(nv),
                    np.full(nv, -1, np.int64))
        self.lanes = (np.full(tb.n_lanes, -1, np.int32), np.full(tb.n_lanes, -1, np.int32),
                      np.zeros(tb.n_links, np.int32), np.full(tb.n_links, -1, np.int32),
                      np.full(tb.n_links, -1, np.int32), np.zeros(tb.n_links, np.int32),
                      np.zeros(tb.n_lanes))
        self.movs = (np.zeros(nm, np.int32), np.zeros(nm, np.int32),
                     np.zeros(nm, np.int32), np.zeros(nm, np.int32),
                     np.zeros(nm, np.int64), np.zeros(nm, np.int64), np.zeros(nm),
                     np.zeros(nm, np.int64), np.zeros(nm, np.int64), np.zeros(nm),
                     np.zeros(nm, np.bool_), np.zeros(nm, np.bool_),
                     np.zeros(nm, np.int64))
        self.ints = (tb.int_phase_start[:-1].astype(np.int32).copy(),
                     np.zeros(ni), np.zeros(ni, np.int64))
        self.scr = (np.zeros(nm), np.zeros(nm), np.zeros(nph), np.zeros(ni, np.int32))
        self.ctr = np.zeros(K.N_CTR, np.int64)
        self.fctr = np.zeros(K.N_FCTR)
        self.fs = np.zeros(nv, np.int32)
        self.led = (np.zeros(n_min), np.zeros(n_min), np.zeros(n_min),
                    np.zeros(n_min, np.int32), np.zeros(n_min, np.int64),
                    np.zeros(n_min, np.int64), np.zeros(n_min))
        self.ser = (np.zeros(self.n_steps, np.int64), np.zeros(self.n_steps, np.int64),
                    np.zeros(self.n_steps, np.int64), np.zeros(self.n_steps, np.int64))

        nd = self.n_decisions
        t = self.trace
        self.tr = (
            np.zeros((nd, ni), np.int32),
            np.zeros((nd if t.decisions else 0, nph)),
            np.zeros((nd if t.decisions else 0, nm)),
            np.zeros((nd if t.windows else 0, nm, 6)),
            np.zeros((nd if t.windows else 0, nm, 4), np.int32),
            np.zeros((self.n_steps if t.steps else 0, nm, 3)),
            np.zeros(t.events, np.int32), np.zeros(t.events, np.int64),
            np.zeros(t.events, np.int32), np.zeros(t.events),
            np.zeros(t.events, np.bool_), np.zeros(t.events, np.bool_),
        )

        if self.fixed_schedule is not None:
            sched = np.ascontiguousarray(self.fixed_schedule.phases, np.int32)
            if sched.ndim != 2 or sched.shape[1] != ni:
                raise ValueError("schedule must be (n_decisions, n_intersections)")
        else:
            sched = np.zeros((1, ni), np.int32)
        self._sched = sched

        self.prm = (np.uint64(self.seed), self.dt, self.T_steps, self.lost_time,
                    self.variant_code, self.mode == "analytic",
                    self.internal_capacity == "infinite", self.p, self.inv_scale,
                    self.use_cv, self.all_green, self.fixed_schedule is not None,
                    JAM_SPACING_M, n_min)

    # ------------------------------------------------------------------ running

    def step(self, n: int = 1) -> None:
        end = min(self.k + n, self.n_steps)
        if end <= self.k:
            return
        reached = K.run_steps(self.k, end, self.prm, self.tables.as_tuple(),
                              self.rates, self._sched, self.veh, self.lanes,
                              self.movs, self.ints, self.scr, self.ctr, self.fctr,
                              self.fs, self.led, self.ser, self.tr)
        self.k = int(reached)
        if self.ctr[K.C_OVERFLOW] == 1:
            raise RuntimeError(f"vehicle pool exhausted at step {self.k} "
                               f"(pool={self.pool}); pass a larger pool")
        if self.ctr[K.C_OVERFLOW] == 2:
            raise RuntimeError("event trace capacity exhausted; raise TraceConfig.events")

    def run(self) -> "Simulation":
        self.step(self.n_steps - self.k)
        return self

    def run_to_next_decision(self) -> None:
        """Advance so the next step is a decision instant (windows full)."""
        if self.T_steps == 0:
            raise ValueError("no decisions in this configuration")
        target = ((self.k // self.T_steps) + 1) * self.T_steps
        self.step(min(target, self.n_steps) - self.k)

    @property
    def time(self) -> float:
        return self.k * self.dt

    @property
    def done(self) -> bool:
        return self.k >= self.n_steps

    # ------------------------------------------------------------------ state views

    @property
    def created(self) -> int:
        return int(self.ctr[K.C_CREATED])

    @property
    def entered(self) -> int:
        return int(self.ctr[K.C_ENTERED])

    @property
    def exited(self) -> int:
        return int(self.ctr[K.C_EXITED])

    @property
    def blocked(self) -> int:
        return int(self.ctr[K.C_BLOCKED])

    @property
    def live(self) -> int:
        return int(self.ctr[K.C_LIVE])

    @property
    def conservation_ok(self) -> bool:
        return int(self.ctr[K.C_VIOL]) == 0

    @property
    def decision_trace(self) -> np.ndarray:
        done = 0 if self.k == 0 or self.T_steps == 0 else (self.k - 1) // self.T_steps + 1
        return self.tr[0][:done]

    def counts(self, movement_id: str) -> Counts:
        j = self.tables.mov_index.get(movement_id)
        if j is None:
            raise KeyError(f"unknown movement {movement_id}")
        x, xs = int(self.movs[0][j]), int(self.movs[1][j])
        return Counts(x, xs, x - xs)

    def window(self, movement_id: str, observed: bool = False) -> MetricWindow:
        j = self.tables.mov_index.get(movement_id)
        if j is None:
            raise KeyError(f"unknown movement {movement_id}")
        steps = self.k if self.T_steps == 0 else self.k - (self.k - 1) // self.T_steps * self.T_steps if self.k else 0
        if observed:
            cnt, stop, dist = self.movs[7][j], self.movs[8][j], self.movs[9][j]
            snap, snap_s = self.movs[2][j], self.movs[3][j]
        else:
            cnt, stop, dist = self.movs[4][j], self.movs[5][j], self.movs[6][j]
            snap, snap_s = self.movs[0][j], self.movs[1][j]
        return MetricWindow(dt=self.dt, steps=int(steps), sum_count=int(cnt),
                            sum_stopped=int(stop), sum_distance=float(dist),
                            snapshot_count=int(snap), snapshot_stopped=int(snap_s))

    def windows(self, observed: bool = False) -> dict[str, MetricWindow]:
        return {mid: self.window(mid, observed) for mid in self.network.movement_order}

    def vehicles(self) -> list[VehicleView]:
        """On-link vehicles, in lane order front to back."""
        tb = self.tables
        v_pos, v_mov, _, v_next, v_stop, v_ever, v_cv, v_seq, _, v_tnet, _, _, _ = self.veh
        out = []
        for lane in range(tb.n_lanes):
            link = tb.lane_link[lane]
            lid = self.network.link_order[link]
            lane_local = lane - tb.link_lane0[link]
            x = self.lanes[0][lane]
            while x >= 0:
                out.append(VehicleView(
                    int(v_seq[x]), lid, lane_local, float(v_pos[x]),
                    self.network.movement_order[v_mov[x]], bool(v_stop[x]),
                    bool(v_ever[x]), bool(v_cv[x]), float(v_tnet[x])))
                x = v_next[x]
        return out

    def boundary_queue(self, link_id: str) -> int:
        return int(self.lanes[5][self.tables.link_index[link_id]])

    def signals(self) -> list[SignalAssignment]:
        tb = self.tables
        out = []
        for i, iid in enumerate(self.network.intersection_order):
            out.append(SignalAssignment(
                iid, int(self.ints[0][i] - tb.int_phase_start[i]),
                int(self.ints[2][i]), float(self.ints[1][i])))
        return out

    def seed_vehicle(self, link_id: str, movement_id: str, position: float,
                     stopped: bool = False, is_cv: bool = False) -> int:
        """Place a vehicle directly (tests and hand-built states).

        Lanes are FIFO by position: within a lane, insert in descending
        position order.
        """
        tb = self.tables
        link = tb.link_index[link_id]
        j = tb.mov_index[movement_id]
        if tb.mov_up[j] != link:
            raise ValueError(f"movement {movement_id} does not start on {link_id}")
        lane = tb.mov_lane[j]
        (v_pos, v_mov, v_lane, v_next, v_stop, v_ever, v_cv, v_seq,
         v_hops, v_tnet, v_tcre, v_fft, v_last) = self.veh
        tail = self.lanes[1][lane]
        if tail >= 0 and position > v_pos[tail]:
            raise ValueError("insert vehicles in descending position order per lane")
        slot = int(self.ctr[K.C_HWM])
        if slot >= self.pool:
            raise RuntimeError("vehicle pool exhausted")
        self.ctr[K.C_HWM] += 1
        vid = int(self.ctr[K.C_CREATED])
        self.ctr[K.C_CREATED] += 1
        v_pos[slot] = position
        v_mov[slot] = j
        v_lane[slot] = lane
        v_next[slot] = -1
        v_stop[slot] = stopped
        v_ever[slot] = stopped
        v_cv[slot] = is_cv
        v_seq[slot] = vid
        v_hops[slot] = 0
        v_tnet[slot] = self.time
        v_tcre[slot] = self.time
        v_fft[slot] = 0.0
        v_last[slot] = -1
        if tail < 0:
            self.lanes[0][lane] = slot
        else:
            v_next[tail] = slot
        self.lanes[1][lane] = slot
        self.lanes[2][link] += 1
        self.movs[0][j] += 1
        self.ctr[K.C_LIVE] += 1
        self.ctr[K.C_ENTERED] += 1
        if stopped:
            self.movs[1][j] += 1
            self.ctr[K.C_NSTOP] += 1
        if is_cv:
            self.movs[2][j] += 1
            if stopped:
                self.movs[3][j] += 1
        return vid

    def served(self, movement_id: str) -> int:
        """Vehicles that have crossed the stop line via this movement."""
        return int(self.movs[12][self.tables.mov_index[movement_id]])

    def decision_preview(self, spec: ControllerSpec | None = None,
                         observed: bool | None = None):
        """Weights, pressures and selections the controller computes now.

        Runs the controller cores on the live accumulators, exactly as the
        kernel does at a decision instant.  Lets tests evaluate any variant
        against the current state without advancing it.
        """
        from .controllers import (metric_values, phase_pressures, select_phases,
                                  weights_from_metrics)
        spec = spec or self.controller
        if spec is None:
            raise ValueError("no controller spec available")
        tb = self.tables
        use_cv = self.use_cv if observed is None else observed
        scale = (1.0 / self.p) if (use_cv and self.inv_scale) else 1.0
        if use_cv:
            cnt, stop, dist = self.movs[7], self.movs[8], self.movs[9]
            x, xs = self.movs[2], self.movs[3]
        else:
            cnt, stop, dist = self.movs[4], self.movs[5], self.movs[6]
            x, xs = self.movs[0], self.movs[1]
        mtr = np.zeros(tb.n_mov)
        wgt = np.zeros(tb.n_mov)
        prs = np.zeros(tb.n_phases)
        sel = np.zeros(tb.n_int, np.int32)
        metric_values(spec.code, self.dt, scale, cnt, stop, dist, x, xs,
                      tb.mov_up, tb.link_vf, mtr)
        weights_from_metrics(mtr, tb.link_out_start, tb.link_out_mov,
                             tb.mov_down, tb.mov_ratio, wgt)
        T_sec = self._steps_of(spec.T, "controller period T") * self.dt
        phase_pressures(wgt, tb.mov_sat, tb.phase_mov_start, tb.phase_mov,
                        tb.phase_int, self.ints[0], T_sec, spec.lost_time, prs)
        select_phases(prs, tb.int_phase_start, self.ints[0], sel)
        weights = {mid: float(wgt[j]) for j, mid in enumerate(self.network.movement_order)}
        pressures = {}
        selection = {}
        for i, iid in enumerate(self.network.intersection_order):
            lo, hi = tb.int_phase_start[i], tb.int_phase_start[i + 1]
            for g in range(lo, hi):
                pressures[(iid, g - lo)] = float(prs[g])
            selection[iid] = int(sel[i] - lo)
        return weights, pressures, selection

    def state_digest(self) -> str:
        """Hash of the live state; equal digests mean identical trajectories."""
        h = hashlib.sha256()
        for v in self.vehicles():
            h.update(repr((v.id, v.link, v.lane, round(v.position, 9), v.movement,
                           v.stopped, v.is_cv)).encode())
        for s in self.signals():
            h.update(repr((s.intersection, s.active_phase, s.steps_since_switch)).encode())
        h.update(repr((self.created, self.entered, self.exited, self.blocked)).encode())
        return h.hexdigest()

    # ------------------------------------------------------------------ events

    def events(self) -> dict[str, np.ndarray]:
        """Vehicle-step attribution log (requires TraceConfig.events)."""
        n = int(self.ctr[K.C_EVN])
        steps, veh, mov, e, stop, cv = self.tr[6:12]
        return {"step": steps[:n], "vehicle": veh[:n], "movement": mov[:n],
                "distance": e[:n], "stopped": stop[:n], "is_cv": cv[:n]}
