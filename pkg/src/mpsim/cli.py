"""Command-line experiment drivers.

Subcommands:

* ``run``               simulate one scenario over a seed list; per-seed
                        minute CSV + summary JSON, plus an aggregate CSV
* ``sweep-t``           delay/queue/throughput versus the decision period
* ``sweep-penetration`` delay versus probe penetration, with full-information
                        benchmark rows
* ``network``           build, validate, and dump a grid to JSON

Configuration comes from a JSON file (``--config``) overridden by flags;
flags win.  Exit codes: 0 all runs completed, 2 invalid configuration
(field-level messages on stderr), 3 unwritable output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import ControllerSpec, DEFAULT_T, VARIANTS
from .dynamics import Simulation, TraceConfig
from .network import Network, build_grid, validate
from .scenario import (ConstantDemand, RunLedger, TrapezoidDemand,
                       demand_from_spec, stability_diagnostic)
from .sensing import PenetrationConfig


class ConfigError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class ScenarioConfig:
    rows: int = 4
    cols: int = 4
    link_length_m: float = 300.0
    lanes: int = 2
    turning_ratios: tuple[float, float, float] = (0.2, 0.5, 0.3)  # left, through, right
    v_f_m_s: float = 20.0
    sat_flow_veh_h_lane: float = 1800.0
    network_file: str | None = None
    demand: str | float = "trapezoid"
    controller: str = "dmp"
    T: float | None = None
    lost_time: float = 3.0
    dt: float = 1.0
    horizon_s: float = 14400.0
    seeds: tuple[int, ...] = tuple(range(1, 11))
    penetration: float | None = None
    scaling: str = "raw"
    mode: str = "meso"
    out_dir: str = "out"
    snapshot_stream: str | None = None
    jobs: int = 1

    def errors(self) -> list[str]:
        errs = []
        if self.rows < 1 or self.cols < 1:
            errs.append(f"rows/cols: must be >= 1, got {self.rows}x{self.cols}")
        if self.horizon_s <= 0 or abs(self.horizon_s / 60.0 - round(self.horizon_s / 60.0)) > 1e-9:
            errs.append(f"horizon_s: must be a positive multiple of 60, got {self.horizon_s}")
        if not self.seeds:
            errs.append("seeds: must be nonempty")
        if self.controller not in VARIANTS:
            errs.append(f"controller: unknown variant {self.controller!r}")
        if self.dt <= 0:
            errs.append(f"dt: must be positive, got {self.dt}")
        T = self.T if self.T is not None else DEFAULT_T.get(self.controller)
        if T is not None and self.dt > 0:
            steps = round(T / self.dt)
            if steps < 1 or abs(steps * self.dt - T) > 1e-9:
                errs.append(f"T: {T} is not a positive multiple of dt={self.dt}")
        if self.penetration is not None and not 0.0 <= self.penetration <= 1.0:
            errs.append(f"penetration: {self.penetration} outside [0, 1]")
        if self.scaling not in ("raw", "inverse-p"):
            errs.append(f"scaling: unknown {self.scaling!r}")
        if self.mode not in ("meso", "analytic"):
            errs.append(f"mode: unknown {self.mode!r}")
        if isinstance(self.demand, str) and self.demand != "trapezoid":
            try:
                float(self.demand)
            except ValueError:
                errs.append(f"demand: expected 'trapezoid' or veh/h number, got {self.demand!r}")
        return errs

    def spec(self) -> ControllerSpec:
        return ControllerSpec(self.controller, T=self.T, lost_time=self.lost_time)

    def build_network(self) -> Network:
        if self.network_file:
            return Network.from_json(self.network_file)
        return build_grid(self.rows, self.cols, self.link_length_m, self.lanes,
                          {"left": self.turning_ratios[0],
                           "through": self.turning_ratios[1],
                           "right": self.turning_ratios[2]},
                          self.v_f_m_s, self.sat_flow_veh_h_lane)

    def build_demand(self):
        return demand_from_spec(self.demand)

    def build_penetration(self) -> PenetrationConfig | None:
        if self.penetration is None:
            return None
        return PenetrationConfig(self.penetration, self.scaling)

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["seeds"] = list(self.seeds)
        d["turning_ratios"] = list(self.turning_ratios)
        d.pop("snapshot_stream")
        d.pop("jobs")
        d.pop("out_dir")
        return d

    def tag(self) -> str:
        T = self.T if self.T is not None else DEFAULT_T[self.controller]
        p = 1.0 if self.penetration is None else self.penetration
        dem = self.demand if isinstance(self.demand, str) else f"{self.demand:g}"
        return f"{self.controller}_T{T:g}_p{p:.2f}_{dem}"


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------

def simulate(cfg: ScenarioConfig, seed: int, net: Network | None = None,
             snapshot_path: str | None = None) -> tuple[RunLedger, dict]:
    net = net or cfg.build_network()
    sim = Simulation(net, cfg.spec(), demand=cfg.build_demand(), seed=seed,
                     mode=cfg.mode, penetration=cfg.build_penetration(),
                     dt=cfg.dt, horizon=cfg.horizon_s)
    if snapshot_path:
        with open(snapshot_path, "w") as fh:
            while not sim.done:
                sim.step(1)
                fh.write(json.dumps({
                    "t": sim.time, "vehicles": sim.live, "blocked": sim.blocked,
                    "exited": sim.exited,
                    "phases": [s.active_phase for s in sim.signals()],
                }, sort_keys=True) + "\n")
    else:
        sim.run()
    if not sim.conservation_ok:
        raise RuntimeError(f"conservation violated (seed {seed})")
    ledger = RunLedger.from_sim(sim)
    trace = hashlib.sha256(np.ascontiguousarray(sim.decision_trace).tobytes()).hexdigest()
    summary = {
        "config": cfg.echo(),
        "seed": seed,
        "metrics": ledger.scalars(),
        "decision_trace_sha256": trace,
    }
    if len(ledger.minutes) >= 10:
        verdict = stability_diagnostic(ledger.vehicles)
        summary["stability"] = {"slope_veh_min": verdict.slope_veh_min,
                                "verdict": verdict.verdict}
    return ledger, summary


def _run_one(args):
    cfg, seed = args
    return seed, simulate(cfg, seed)


def run_scenario(cfg: ScenarioConfig, out_dir: str | None = None) -> list[dict]:
    """Run all seeds, write per-run CSV/JSON and the aggregate CSV."""
    out = out_dir or cfg.out_dir
    runs_dir = os.path.join(out, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    tag = cfg.tag()

    jobs = max(1, cfg.jobs)
    results = []
    if jobs == 1 or len(cfg.seeds) == 1:
        for i, seed in enumerate(cfg.seeds):
            snap = None
            if cfg.snapshot_stream and i == 0:
                snap = cfg.snapshot_stream
            results.append((seed, simulate(cfg, seed, snapshot_path=snap)))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, [(cfg, s) for s in cfg.seeds]))
    results.sort(key=lambda r: r[0])

    summaries = []
    for seed, (ledger, summary) in results:
        base = os.path.join(runs_dir, f"{tag}_seed{seed}")
        ledger.write_csv(base + ".csv", config_echo={**cfg.echo(), "seed": seed})
        with open(base + ".json", "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
        summaries.append(summary)

    metrics = sorted(summaries[0]["metrics"])
    with open(os.path.join(out, f"aggregate_{tag}.csv"), "w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std"] + [f"seed{s}" for s in cfg.seeds])
        for mname in metrics:
            vals = np.array([s["metrics"][mname] for s in summaries], float)
            w.writerow([mname, f"{vals.mean():.6f}", f"{vals.std():.6f}"]
                       + [f"{v:.6f}" for v in vals])
    return summaries


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep_T(cfg: ScenarioConfig, t_values, demands, out_path: str | None = None) -> list[dict]:
    """Mean and stdev of the three headline metrics per (T, demand)."""
    net = cfg.build_network()
    rows = []
    for demand in demands:
        for T in t_values:
            c = replace(cfg, T=float(T), demand=demand)
            per_seed = [simulate(c, s, net=net)[0] for s in cfg.seeds]
            row = {"controller": cfg.controller, "demand_veh_h": demand, "T_s": T}
            for name, get in (("avg_total_delay_s", lambda l: l.avg_total_delay_s),
                              ("avg_queue_per_link", lambda l: l.avg_queue_per_link),
                              ("throughput_veh_h", lambda l: l.throughput_veh_h)):
                vals = np.array([get(l) for l in per_seed])
                row[name + "_mean"] = vals.mean()
                row[name + "_std"] = vals.std()
            rows.append(row)
    if out_path:
        _write_rows(out_path, rows, cfg)
    return rows


def sweep_penetration(cfg: ScenarioConfig, p_values, demands,
                      out_path: str | None = None) -> list[dict]:
    """Delay versus penetration for the configured controller, plus
    full-information benchmark rows for the other variants."""
    net = cfg.build_network()
    rows = []
    for demand in demands:
        for p in p_values:
            c = replace(cfg, penetration=float(p), demand=demand)
            per_seed = [simulate(c, s, net=net)[0] for s in cfg.seeds]
            vals = np.array([l.avg_total_delay_s for l in per_seed])
            rows.append({"model": cfg.controller, "demand_veh_h": demand,
                         "penetration": p, "avg_total_delay_s_mean": vals.mean(),
                         "avg_total_delay_s_std": vals.std()})
        for variant in VARIANTS:
            if variant == cfg.controller:
                continue
            c = replace(cfg, controller=variant, T=None, penetration=None, demand=demand)
            per_seed = [simulate(c, s, net=net)[0] for s in cfg.seeds]
            vals = np.array([l.avg_total_delay_s for l in per_seed])
            rows.append({"model": f"{variant}-benchmark", "demand_veh_h": demand,
                         "penetration": 1.0, "avg_total_delay_s_mean": vals.mean(),
                         "avg_total_delay_s_std": vals.std()})
    if out_path:
        _write_rows(out_path, rows, cfg)
    return rows


def _write_rows(path: str, rows: list[dict], cfg: ScenarioConfig) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.echo(), sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                        for k, v in r.items()})


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s)


def _parse_floats(text: str) -> list[float]:
    if ":" in text:  # start:stop:step inclusive
        a, b, s = (float(x) for x in text.split(":"))
        n = int(round((b - a) / s)) + 1
        return [round(a + i * s, 10) for i in range(n)]
    return [float(x) for x in text.split(",") if x]


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--controller", choices=VARIANTS)
    p.add_argument("--T", type=float, help="decision period (s)")
    p.add_argument("--penetration", type=float, help="probe penetration in (0, 1]")
    p.add_argument("--scaling", choices=("raw", "inverse-p"))
    p.add_argument("--seeds", type=_parse_seeds, help="comma-separated seed list")
    p.add_argument("--mode", choices=("meso", "analytic"))
    p.add_argument("--demand", help="'trapezoid' or NS entry rate in veh/h")
    p.add_argument("--horizon", type=float, dest="horizon_s", help="run length (s)")
    p.add_argument("--dt", type=float)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--network-file", dest="network_file")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--jobs", type=int)
    p.add_argument("--snapshot-stream", dest="snapshot_stream",
                   help="write per-step JSON lines for the first seed")


def load_config(ns: argparse.Namespace) -> ScenarioConfig:
    data: dict = {}
    if ns.config:
        with open(ns.config) as fh:
            data.update(json.load(fh))
    for key in ("controller", "T", "penetration", "scaling", "seeds", "mode",
                "demand", "horizon_s", "dt", "rows", "cols", "network_file",
                "out_dir", "jobs", "snapshot_stream"):
        v = getattr(ns, key, None)
        if v is not None:
            data[key] = v
    if "seeds" in data:
        data["seeds"] = tuple(int(s) for s in data["seeds"])
    if "turning_ratios" in data and not isinstance(data["turning_ratios"], tuple):
        tr = data["turning_ratios"]
        if isinstance(tr, dict):
            data["turning_ratios"] = (tr["left"], tr["through"], tr["right"])
        else:
            data["turning_ratios"] = tuple(tr)
    if "demand" in data and not isinstance(data["demand"], str):
        data["demand"] = float(data["demand"])
    unknown = set(data) - set(ScenarioConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError([f"{k}: unknown config field" for k in sorted(unknown)])
    cfg = ScenarioConfig(**data)
    errs = cfg.errors()
    if errs:
        raise ConfigError(errs)
    return cfg


def _prepare_out(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise PermissionError(f"output directory {path!r} is not writable: {exc}") from exc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mpsim",
                                 description="max-pressure signal control experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario over its seeds")
    _common_flags(p_run)

    p_st = sub.add_parser("sweep-t", help="decision-period sweep")
    _common_flags(p_st)
    p_st.add_argument("--t-values", type=_parse_floats, default=list(range(1, 13)))
    p_st.add_argument("--demands", type=_parse_floats, default=[600.0, 750.0, 900.0])

    p_sp = sub.add_parser("sweep-penetration", help="probe-penetration sweep")
    _common_flags(p_sp)
    p_sp.add_argument("--p-values", type=_parse_floats, default=[round(0.2 + 0.1 * i, 1) for i in range(9)])
    p_sp.add_argument("--demands", type=_parse_floats, default=[600.0, 750.0, 900.0])

    p_net = sub.add_parser("network", help="build/validate/dump a grid network")
    _common_flags(p_net)
    p_net.add_argument("--dump", help="write the network JSON here")

    ns = ap.parse_args(argv)
    try:
        cfg = load_config(ns)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if ns.cmd == "network":
            net = cfg.build_network()
            problems = validate(net)
            for v in problems:
                print(f"violation: {v}", file=sys.stderr)
            if ns.dump:
                net.to_json(ns.dump)
                print(f"wrote {ns.dump}")
            return 0 if not problems else 1

        _prepare_out(cfg.out_dir)
        if ns.cmd == "run":
            run_scenario(cfg)
        elif ns.cmd == "sweep-t":
            sweep_T(cfg, ns.t_values, ns.demands,
                    out_path=os.path.join(cfg.out_dir, "sweep_t.csv"))
        elif ns.cmd == "sweep-penetration":
            sweep_penetration(cfg, ns.p_values, ns.demands,
                              out_path=os.path.join(cfg.out_dir, "sweep_penetration.csv"))
        return 0
    except PermissionError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
