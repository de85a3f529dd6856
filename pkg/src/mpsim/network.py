"""Signalized grid network model: links, movements, phases, intersections.

A network is a directed graph of links (entry, internal, exit) joined by
movements at intersections.  Each movement carries a turning ratio and a
saturation flow; each intersection owns an ordered list of phases, and every
movement is served by exactly one phase.  Networks are immutable after
construction and safe to share across concurrent runs.

``build_grid`` constructs the rectangular arterial grids used throughout:
bidirectional streets, entry/exit links on the boundary, and four protected
phases per intersection (north-south left, north-south through+right,
east-west left, east-west through+right).  The left lane of every approach
serves the left turn; the remaining lane is shared by through and right.
Saturation flow is stated per lane; movements sharing a lane split the lane
rate in proportion to their turning ratios so the lane total is preserved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

JAM_SPACING_M = 7.5  # 5 m vehicle + 2.5 m standstill gap

ENTRY, INTERNAL, EXIT = "entry", "internal", "exit"
_KIND_CODE = {ENTRY: 0, INTERNAL: 1, EXIT: 2}

TURNS = ("left", "through", "right")

# bearing of travel -> (drow, dcol); left/right successors for a driver
_BEARING_VEC = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
_LEFT_OF = {"N": "W", "W": "S", "S": "E", "E": "N"}
_RIGHT_OF = {"N": "E", "E": "S", "S": "W", "W": "N"}


@dataclass(frozen=True)
class Link:
    id: str
    kind: str  # entry | internal | exit
    length: float  # m
    lanes: int
    free_flow_speed: float  # m/s
    bearing: str  # direction of travel: N/S/E/W

    @property
    def storage_capacity(self) -> int:
        return int(self.length // JAM_SPACING_M) * self.lanes

    @property
    def free_flow_time(self) -> float:
        return self.length / self.free_flow_speed


@dataclass(frozen=True)
class Movement:
    upstream: str
    downstream: str
    turn: str  # left | through | right
    turning_ratio: float
    saturation_flow_mean: float  # veh/s
    saturation_flow_max: float  # veh/s
    lane: int  # lane index on the upstream link that serves this movement
    intersection: str

    @property
    def id(self) -> str:
        return f"{self.upstream}>{self.downstream}"


@dataclass(frozen=True)
class Phase:
    id: int  # index within its intersection
    served_movements: tuple[str, ...]  # movement ids, ascending


@dataclass(frozen=True)
class Intersection:
    id: str
    phases: tuple[Phase, ...]


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return f"{self.entity}: {self.rule}"


class Network:
    """Immutable link/movement/phase topology."""

    def __init__(self, links: Iterable[Link], movements: Iterable[Movement],
                 intersections: Iterable[Intersection]):
        self.links: dict[str, Link] = {l.id: l for l in links}
        movs = sorted(movements, key=lambda m: (m.upstream, m.downstream))
        self.movements: dict[str, Movement] = {m.id: m for m in movs}
        self.intersections: dict[str, Intersection] = {i.id: i for i in intersections}
        self.link_order: list[str] = sorted(self.links)
        self.movement_order: list[str] = [m.id for m in movs]
        self.intersection_order: list[str] = sorted(self.intersections)
        self._out: dict[str, list[str]] = {lid: [] for lid in self.links}
        self._in: dict[str, list[str]] = {lid: [] for lid in self.links}
        for m in movs:
            self._out[m.upstream].append(m.id)
            self._in[m.downstream].append(m.id)
        self._tables = None

    # -- adjacency ---------------------------------------------------------

    def outgoing(self, link_id: str) -> list[Movement]:
        return [self.movements[mid] for mid in self._out[link_id]]

    def incoming(self, link_id: str) -> list[Movement]:
        return [self.movements[mid] for mid in self._in[link_id]]

    def phase_of(self, movement_id: str) -> tuple[str, int]:
        """(intersection id, phase index) serving the movement."""
        m = self.movements[movement_id]
        for ph in self.intersections[m.intersection].phases:
            if movement_id in ph.served_movements:
                return m.intersection, ph.id
        raise KeyError(f"movement {movement_id} not served by any phase")

    @property
    def entry_links(self) -> list[Link]:
        return [self.links[i] for i in self.link_order if self.links[i].kind == ENTRY]

    @property
    def exit_links(self) -> list[Link]:
        return [self.links[i] for i in self.link_order if self.links[i].kind == EXIT]

    @property
    def internal_links(self) -> list[Link]:
        return [self.links[i] for i in self.link_order if self.links[i].kind == INTERNAL]

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "links": [
                {"id": l.id, "kind": l.kind, "length": l.length, "lanes": l.lanes,
                 "free_flow_speed": l.free_flow_speed, "bearing": l.bearing}
                for l in (self.links[i] for i in self.link_order)
            ],
            "movements": [
                {"upstream": m.upstream, "downstream": m.downstream, "turn": m.turn,
                 "turning_ratio": m.turning_ratio,
                 "saturation_flow_mean": m.saturation_flow_mean,
                 "saturation_flow_max": m.saturation_flow_max,
                 "lane": m.lane, "intersection": m.intersection}
                for m in (self.movements[i] for i in self.movement_order)
            ],
            "intersections": [
                {"id": i.id,
                 "phases": [{"id": p.id, "movements": list(p.served_movements)}
                            for p in i.phases]}
                for i in (self.intersections[k] for k in self.intersection_order)
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Network":
        links = [Link(**lk) for lk in d["links"]]
        movements = [Movement(**mv) for mv in d["movements"]]
        intersections = [
            Intersection(i["id"], tuple(Phase(p["id"], tuple(p["movements"]))
                                        for p in i["phases"]))
            for i in d["intersections"]
        ]
        return cls(links, movements, intersections)

    @classmethod
    def from_json(cls, path) -> "Network":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    # -- compiled arrays for the kernel -------------------------------------

    def compiled(self) -> "NetTables":
        if self._tables is None:
            self._tables = NetTables(self)
        return self._tables


class NetTables:
    """Flat array view of a network, consumed by the simulation kernel.

    Index assignment follows the sorted orders of the parent network, so the
    ascending-movement-id summation contract holds for anything iterating
    these arrays in index order.
    """

    def __init__(self, net: Network):
        self.net = net
        self.link_index = {lid: i for i, lid in enumerate(net.link_order)}
        self.mov_index = {mid: i for i, mid in enumerate(net.movement_order)}
        self.int_index = {iid: i for i, iid in enumerate(net.intersection_order)}

        nl, nm, ni = len(net.links), len(net.movements), len(net.intersections)
        self.n_links, self.n_mov, self.n_int = nl, nm, ni

        self.link_kind = np.zeros(nl, np.int8)
        self.link_len = np.zeros(nl, np.float64)
        self.link_vf = np.zeros(nl, np.float64)
        self.link_cap = np.zeros(nl, np.int32)
        self.link_nlanes = np.zeros(nl, np.int32)
        self.link_lane0 = np.full(nl, -1, np.int32)
        lane_count = 0
        for i, lid in enumerate(net.link_order):
            l = net.links[lid]
            self.link_kind[i] = _KIND_CODE[l.kind]
            self.link_len[i] = l.length
            self.link_vf[i] = l.free_flow_speed
            self.link_cap[i] = l.storage_capacity
            self.link_nlanes[i] = l.lanes
            if l.kind != EXIT:
                self.link_lane0[i] = lane_count
                lane_count += l.lanes
        self.n_lanes = lane_count
        self.lane_link = np.zeros(lane_count, np.int32)
        for i in range(nl):
            if self.link_lane0[i] >= 0:
                for k in range(self.link_nlanes[i]):
                    self.lane_link[self.link_lane0[i] + k] = i

        self.mov_up = np.zeros(nm, np.int32)
        self.mov_down = np.zeros(nm, np.int32)
        self.mov_ratio = np.zeros(nm, np.float64)
        self.mov_sat = np.zeros(nm, np.float64)
        self.mov_lane = np.zeros(nm, np.int32)  # global lane id
        self.mov_int = np.zeros(nm, np.int32)
        self.mov_phase = np.zeros(nm, np.int32)  # global phase id
        self.mov_to_exit = np.zeros(nm, np.bool_)

        # phases, globally indexed in intersection order
        self.int_phase_start = np.zeros(ni + 1, np.int32)
        phases = []
        for k, iid in enumerate(net.intersection_order):
            self.int_phase_start[k + 1] = self.int_phase_start[k] + len(net.intersections[iid].phases)
            phases.extend((iid, p) for p in net.intersections[iid].phases)
        self.n_phases = len(phases)
        self.phase_int = np.zeros(self.n_phases, np.int32)

        phase_movs: list[list[int]] = [[] for _ in range(self.n_phases)]
        mov_phase_map = {}
        for g, (iid, p) in enumerate(phases):
            self.phase_int[g] = self.int_index[iid]
            for mid in p.served_movements:
                mov_phase_map[mid] = g

        for j, mid in enumerate(net.movement_order):
            m = net.movements[mid]
            self.mov_up[j] = self.link_index[m.upstream]
            self.mov_down[j] = self.link_index[m.downstream]
            self.mov_ratio[j] = m.turning_ratio
            self.mov_sat[j] = m.saturation_flow_mean
            self.mov_lane[j] = self.link_lane0[self.mov_up[j]] + m.lane
            self.mov_int[j] = self.int_index[m.intersection]
            self.mov_to_exit[j] = net.links[m.downstream].kind == EXIT
            g = mov_phase_map[mid]
            self.mov_phase[j] = g
            phase_movs[g].append(j)

        self.phase_mov_start = np.zeros(self.n_phases + 1, np.int32)
        for g in range(self.n_phases):
            phase_movs[g].sort()
            self.phase_mov_start[g + 1] = self.phase_mov_start[g] + len(phase_movs[g])
        self.phase_mov = np.array([j for g in range(self.n_phases) for j in phase_movs[g]],
                                  np.int32) if self.n_phases else np.zeros(0, np.int32)

        # outgoing movements per link, ascending movement index
        outs: list[list[int]] = [[] for _ in range(nl)]
        for j in range(nm):
            outs[self.mov_up[j]].append(j)
        self.link_out_start = np.zeros(nl + 1, np.int32)
        for i in range(nl):
            outs[i].sort()
            self.link_out_start[i + 1] = self.link_out_start[i] + len(outs[i])
        self.link_out_mov = np.array([j for i in range(nl) for j in outs[i]],
                                     np.int32) if nm else np.zeros(0, np.int32)

        # movements per lane, and the lane's aggregate saturation rate (the
        # shared through/right lane discharges at the full lane rate whichever
        # movement heads the queue)
        lmv: list[list[int]] = [[] for _ in range(lane_count)]
        for j in range(nm):
            lmv[self.mov_lane[j]].append(j)
        self.lane_mov_start = np.zeros(lane_count + 1, np.int32)
        for k in range(lane_count):
            lmv[k].sort()
            self.lane_mov_start[k + 1] = self.lane_mov_start[k] + len(lmv[k])
        self.lane_mov = np.array([j for k in range(lane_count) for j in lmv[k]],
                                 np.int32) if nm else np.zeros(0, np.int32)
        self.lane_rate = np.zeros(lane_count)
        for k in range(lane_count):
            self.lane_rate[k] = sum(self.mov_sat[j] for j in lmv[k])

        entries = [i for i in range(nl) if self.link_kind[i] == 0]
        self.entry_links = np.array(entries, np.int32)
        self.entry_is_ns = np.array(
            [net.links[net.link_order[i]].bearing in ("N", "S") for i in entries],
            np.bool_)

    def as_tuple(self):
        """Argument tuple for the njit kernel."""
        return (self.link_kind, self.link_len, self.link_vf, self.link_cap,
                self.link_lane0, self.lane_link,
                self.mov_up, self.mov_down, self.mov_ratio, self.mov_sat,
                self.mov_lane, self.mov_int, self.mov_phase, self.mov_to_exit,
                self.int_phase_start, self.phase_int,
                self.phase_mov_start, self.phase_mov,
                self.link_out_start, self.link_out_mov,
                self.lane_mov_start, self.lane_mov, self.lane_rate,
                self.entry_links, self.entry_is_ns)


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------

def build_grid(rows: int, cols: int, link_length: float = 300.0,
               lanes_per_link: int = 2,
               turning_ratios: Mapping[str, float] | None = None,
               v_f: float = 20.0, sat_flow: float = 1800.0) -> Network:
    """Build a rows x cols signalized grid.

    ``turning_ratios`` maps left/through/right to fractions summing to 1
    (default 0.2 / 0.5 / 0.3).  ``sat_flow`` is veh/h/lane.  Every boundary
    approach of the grid gets one entry and one exit link; every interior
    edge gets one internal link per direction.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {rows}x{cols}")
    if lanes_per_link != 2:
        raise ValueError("grid construction supports exactly 2 lanes per link "
                         "(dedicated left lane + shared through/right lane)")
    if link_length <= 0 or v_f <= 0 or sat_flow <= 0:
        raise ValueError("link_length, v_f and sat_flow must be positive")
    ratios = dict(turning_ratios or {"left": 0.2, "through": 0.5, "right": 0.3})
    if set(ratios) != set(TURNS):
        raise ValueError(f"turning_ratios must have keys {TURNS}")
    if any(r < 0 for r in ratios.values()):
        raise ValueError("turning ratios must be non-negative")
    if not math.isclose(sum(ratios.values()), 1.0, abs_tol=1e-9):
        raise ValueError(f"turning ratios sum to {sum(ratios.values())}, expected 1")

    def inside(r: int, c: int) -> bool:
        return 0 <= r < rows and 0 <= c < cols

    links: dict[str, Link] = {}

    def add_link(lid: str, kind: str, bearing: str) -> str:
        if lid not in links:
            links[lid] = Link(lid, kind, link_length, lanes_per_link, v_f, bearing)
        return lid

    def incoming_link(r: int, c: int, bearing: str) -> str:
        """Link arriving at (r, c) travelling toward ``bearing``."""
        dr, dc = _BEARING_VEC[bearing]
        ur, uc = r - dr, c - dc  # upstream intersection
        if inside(ur, uc):
            return add_link(f"ln:r{ur}c{uc}:{bearing}", INTERNAL, bearing)
        return add_link(f"en:r{r}c{c}:{bearing}", ENTRY, bearing)

    def outgoing_link(r: int, c: int, bearing: str) -> str:
        """Link leaving (r, c) travelling toward ``bearing``."""
        dr, dc = _BEARING_VEC[bearing]
        if inside(r + dr, c + dc):
            return add_link(f"ln:r{r}c{c}:{bearing}", INTERNAL, bearing)
        return add_link(f"ex:r{r}c{c}:{bearing}", EXIT, bearing)

    shared = ratios["through"] + ratios["right"]
    lane_rate = sat_flow / 3600.0  # veh/s
    sat_of = {
        "left": lane_rate,
        "through": lane_rate * (ratios["through"] / shared) if shared > 0 else 0.0,
        "right": lane_rate * (ratios["right"] / shared) if shared > 0 else 0.0,
    }
    lane_of = {"left": 0, "through": 1, "right": 1}

    movements: list[Movement] = []
    intersections: list[Intersection] = []
    for r in range(rows):
        for c in range(cols):
            iid = f"i:r{r}c{c}"
            by_group: dict[str, list[str]] = {"NSL": [], "NST": [], "EWL": [], "EWT": []}
            for bearing in ("N", "S", "E", "W"):
                up = incoming_link(r, c, bearing)
                targets = {
                    "through": bearing,
                    "left": _LEFT_OF[bearing],
                    "right": _RIGHT_OF[bearing],
                }
                for turn in TURNS:
                    down = outgoing_link(r, c, targets[turn])
                    mv = Movement(up, down, turn, ratios[turn], sat_of[turn],
                                  sat_of[turn], lane_of[turn], iid)
                    movements.append(mv)
                    axis = "NS" if bearing in ("N", "S") else "EW"
                    group = axis + ("L" if turn == "left" else "T")
                    by_group[group].append(mv.id)
            phases = tuple(
                Phase(i, tuple(sorted(by_group[g])))
                for i, g in enumerate(("NSL", "NST", "EWL", "EWT"))
            )
            intersections.append(Intersection(iid, phases))

    return Network(links.values(), movements, intersections)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def default_conflicts(net: Network, a: Movement, b: Movement) -> bool:
    """Receiving-lane conflict: distinct approaches merging into one link."""
    return a.downstream == b.downstream and a.upstream != b.upstream


def validate(net: Network, conflicts=default_conflicts) -> list[Violation]:
    """Check every structural invariant; violations are data, not errors."""
    out: list[Violation] = []

    for lid in net.link_order:
        l = net.links[lid]
        if l.length <= 0:
            out.append(Violation(lid, f"length {l.length} <= 0"))
        if l.lanes < 1:
            out.append(Violation(lid, f"lanes {l.lanes} < 1"))
        if l.free_flow_speed <= 0:
            out.append(Violation(lid, f"free_flow_speed {l.free_flow_speed} <= 0"))
        if l.length > 0 and l.lanes >= 1 and l.storage_capacity < 1:
            out.append(Violation(lid, f"storage capacity {l.storage_capacity} < 1"))
        if l.kind == EXIT and net._out[lid]:
            out.append(Violation(lid, "exit link has outgoing movements"))
        if l.kind == ENTRY and net._in[lid]:
            out.append(Violation(lid, "entry link has incoming movements"))

    for lid in net.link_order:
        l = net.links[lid]
        if l.kind == EXIT:
            continue
        movs = net.outgoing(lid)
        total = sum(m.turning_ratio for m in movs)
        if abs(total - 1.0) > 1e-9:
            out.append(Violation(lid, f"ratios sum {total:.10g} != 1"))
        for m in movs:
            if not 0.0 <= m.turning_ratio <= 1.0:
                out.append(Violation(m.id, f"turning ratio {m.turning_ratio} outside [0,1]"))
            if not 0.0 < m.saturation_flow_mean <= m.saturation_flow_max:
                out.append(Violation(
                    m.id, f"saturation flow mean {m.saturation_flow_mean} "
                          f"outside (0, {m.saturation_flow_max}]"))

    served: dict[str, list[str]] = {}
    for iid in net.intersection_order:
        inter = net.intersections[iid]
        for ph in inter.phases:
            tag = f"{iid}/phase{ph.id}"
            if not ph.served_movements:
                out.append(Violation(tag, "phase serves zero movements"))
            pm = [net.movements[m] for m in ph.served_movements if m in net.movements]
            for x in range(len(pm)):
                for y in range(x + 1, len(pm)):
                    if conflicts(net, pm[x], pm[y]):
                        out.append(Violation(
                            tag, f"conflicting movements {pm[x].id} and {pm[y].id}"))
            for mid in ph.served_movements:
                served.setdefault(mid, []).append(tag)

    for mid in net.movement_order:
        owners = served.get(mid, [])
        if len(owners) != 1:
            out.append(Violation(mid, f"served by {len(owners)} phases, expected 1"))
        m = net.movements[mid]
        down_int = m.intersection
        # movement must be controlled where its upstream link terminates
        for owner in owners:
            if not owner.startswith(down_int + "/"):
                out.append(Violation(mid, f"served at {owner}, expected {down_int}"))

    # connectivity: every entry link must reach some exit link
    reach: set[str] = set()
    frontier = [l.id for l in net.entry_links]
    while frontier:
        lid = frontier.pop()
        if lid in reach:
            continue
        reach.add(lid)
        frontier.extend(m.downstream for m in net.outgoing(lid))
    if net.entry_links and not any(net.links[l].kind == EXIT for l in reach):
        out.append(Violation("network", "no exit link reachable from entry links"))

    return out
