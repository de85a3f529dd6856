"""Acceptance suite: one test per criterion, each printing a pass line.

The heavy experiment batteries (stability, the controller comparison, the
period and penetration sweeps) run at desk scale on the 4x4 grid with ten
seeds, mirroring the experiment drivers' defaults.
"""

import hashlib
import os
import random
import time

import numpy as np
import pytest

from mpsim import (ControllerSpec, FixedSchedule, PenetrationConfig, Simulation,
                   TraceConfig, build_grid)
from mpsim.controllers import (DEFAULT_T, metric_values, weights_from_metrics)
from mpsim.cli import ScenarioConfig, run_scenario
from mpsim.oracle import TinyInstance, exhaustive_best_schedule, recompute_pressure
from mpsim.scenario import (ConstantDemand, RunLedger, TrapezoidDemand,
                            degrees_of_saturation, entry_demand_map,
                            stability_diagnostic)

SEEDS = tuple(range(1, 11))


def report(num, text):
    print(f"PASS criterion {num}: {text}")


@pytest.fixture(scope="module")
def g22():
    return build_grid(2, 2)


@pytest.fixture(scope="module")
def g44():
    return build_grid(4, 4)


@pytest.fixture(scope="module", autouse=True)
def kernel_warm(g22):
    # compile (or load the cached) kernel outside any timed section
    Simulation(g22, ControllerSpec("dmp"), demand=ConstantDemand(100.0),
               seed=0, horizon=60.0).run()


@pytest.fixture(scope="module")
def analytic_traced_run(g22):
    """Criteria 1 and 2 share this seeded one-hour analytic 2x2 run."""
    t0 = time.time()
    sim = Simulation(g22, ControllerSpec("dmp"), demand=ConstantDemand(600.0),
                     seed=7, mode="analytic", horizon=3600.0,
                     trace=TraceConfig(windows=True, steps=True))
    sim.run()
    assert sim.conservation_ok
    return sim, time.time() - t0


def test_criterion_1_delay_equals_stopped_sum(analytic_traced_run, g22):
    # analytic mode: windowed delay == dt * summed stopped counts, exactly,
    # for every movement at every step and every full window
    sim, elapsed = analytic_traced_run
    tb = g22.compiled()
    vf = tb.link_vf[tb.mov_up]

    steps = sim.tr[5]  # (n_steps, n_mov, [count, stopped, distance])
    step_delay = sim.dt * steps[:, :, 0] - steps[:, :, 2] / vf[None, :]
    assert np.array_equal(step_delay, sim.dt * steps[:, :, 1])

    wins = sim.tr[3]  # (n_dec, n_mov, [cnt, stop, dist, cnt_cv, stop_cv, dist_cv])
    win_delay = sim.dt * wins[:, :, 0] - wins[:, :, 2] / vf[None, :]
    assert np.array_equal(win_delay, sim.dt * wins[:, :, 1])

    assert elapsed < 10.0
    report(1, f"window delay == dt * stopped-count sum, zero tolerance, "
              f"{steps.shape[0]} steps x {steps.shape[1]} movements "
              f"({elapsed:.2f}s < 10s)")


def test_criterion_2_travel_time_weight_equivalence(analytic_traced_run, g22):
    # the travel-time weight equals dt times the queue-style weight applied
    # to the per-step count sums, exactly
    sim, _ = analytic_traced_run
    tb = g22.compiled()
    steps = sim.tr[5]
    wins = sim.tr[3]
    n_dec, n_mov = wins.shape[0], wins.shape[1]
    T = sim.T_steps
    zeros64 = np.zeros(n_mov, np.int64)
    zeros32 = np.zeros(n_mov, np.int32)
    checked = 0
    for d in range(1, n_dec):
        lo, hi = (d - 1) * T, d * T
        step_counts = steps[lo:hi, :, 0].sum(axis=0)  # integer-valued
        assert np.array_equal(step_counts, wins[d, :, 0])

        # controller path: the travel-time metric over the traced window
        mtr = np.zeros(n_mov)
        wgt = np.zeros(n_mov)
        metric_values(2, sim.dt, 1.0, wins[d, :, 0].astype(np.int64), zeros64,
                      np.zeros(n_mov), zeros32, zeros32, tb.mov_up, tb.link_vf, mtr)
        weights_from_metrics(mtr, tb.link_out_start, tb.link_out_mov,
                             tb.mov_down, tb.mov_ratio, wgt)
        # per-step queue-style counts, summed first (integer regrouping),
        # then pushed through the same weight expression
        mtr2 = np.zeros(n_mov)
        wgt2 = np.zeros(n_mov)
        metric_values(2, sim.dt, 1.0, step_counts.astype(np.int64), zeros64,
                      np.zeros(n_mov), zeros32, zeros32, tb.mov_up, tb.link_vf, mtr2)
        weights_from_metrics(mtr2, tb.link_out_start, tb.link_out_mov,
                             tb.mov_down, tb.mov_ratio, wgt2)
        assert np.array_equal(wgt, wgt2)

        # and the naive per-step float accumulation agrees to rounding
        per_step = np.zeros(n_mov)
        for k in range(lo, hi):
            d_k = np.zeros(n_mov)
            weights_from_metrics(steps[k, :, 0].copy(), tb.link_out_start,
                                 tb.link_out_mov, tb.mov_down, tb.mov_ratio, d_k)
            per_step += d_k
        assert np.allclose(sim.dt * per_step, wgt, atol=1e-9)
        checked += 1
    assert checked >= 10
    report(2, f"travel-time weight == dt x summed count differences over "
              f"{checked} windows, exact")


def test_criterion_3_conservation(g22, g44):
    checked = 0
    for net, demand in ((g22, 600.0), (g44, 750.0)):
        for mode in ("meso", "analytic"):
            for variant in ("qmp", "dmp"):
                for seed in (1, 2, 3):
                    sim = Simulation(net, ControllerSpec(variant),
                                     demand=ConstantDemand(demand), seed=seed,
                                     mode=mode, horizon=1200.0)
                    sim.run()
                    created, live, exited, blocked = sim.ser
                    assert np.array_equal(created, live + exited + blocked)
                    assert sim.conservation_ok
                    checked += 1
    report(3, f"created == in-network + exited + blocked at every step, "
              f"{checked} runs x 1200 steps, exact integers")


def test_criterion_4_byte_identical_outputs(tmp_path):
    def tree_hash(root):
        h = hashlib.sha256()
        for dirpath, _, files in sorted(os.walk(root)):
            for name in sorted(files):
                h.update(name.encode())
                h.update(open(os.path.join(dirpath, name), "rb").read())
        return h.hexdigest()

    hashes = []
    for d in ("first", "second"):
        cfg = ScenarioConfig(rows=2, cols=2, demand=600.0, horizon_s=900.0,
                             seeds=(42,), controller="dmp",
                             out_dir=str(tmp_path / d))
        run_scenario(cfg)
        hashes.append(tree_hash(tmp_path / d))
    assert hashes[0] == hashes[1]
    report(4, f"two executions hash to {hashes[0][:16]}..., byte-identical")


def test_criterion_5_oracle_equivalence(g22):
    states = 0
    for seed in range(25):
        sim = Simulation(g22, ControllerSpec("dmp"), demand=ConstantDemand(700.0),
                         seed=seed, mode="meso", horizon=300.0,
                         trace=TraceConfig(events=400_000))
        for _ in range(10):
            sim.run_to_next_decision()
            if sim.done:
                break
            for variant in ("qmp", "hmp", "ttmp", "dmp"):
                spec = ControllerSpec(variant)
                w, p, s = sim.decision_preview(spec)
                orc = recompute_pressure(sim, spec)
                assert w == orc.weights
                assert p == orc.pressures
                assert s == orc.selection
                states += 1
    assert states >= 1000
    report(5, f"controller pressures == first-principles recomputation on "
              f"{states} (state, variant) pairs, exact")


def _stability_battery(g44, demand_ns, mode, horizon):
    # threshold sized for this network: the stationary fluctuation of a
    # ~300-vehicle grid wanders by up to ~0.5 veh/min over a two-hour tail,
    # while infeasible demand accumulates at tens of veh/min; 1 veh/min
    # separates the regimes by more than an order of magnitude each way
    verdicts = {}
    for variant in ("qmp", "hmp", "ttmp", "dmp"):
        verdicts[variant] = []
        for seed in SEEDS:
            sim = Simulation(g44, ControllerSpec(variant),
                             demand=ConstantDemand(demand_ns), seed=seed,
                             mode=mode, horizon=horizon)
            sim.run()
            assert sim.conservation_ok
            led = RunLedger.from_sim(sim)
            verdicts[variant].append(
                stability_diagnostic(led.vehicles, window_min=10,
                                     threshold=1.0).verdict)
    return verdicts


def test_criterion_6_stability_under_feasible_demand(g44):
    dos = degrees_of_saturation(g44, entry_demand_map(g44, ConstantDemand(600.0)))
    assert max(dos.values()) < 1.0
    t0 = time.time()
    verdicts = _stability_battery(g44, 600.0, "analytic", 4 * 3600.0)
    elapsed = time.time() - t0
    for variant, vs in verdicts.items():
        assert vs.count("bounded") >= 9, (variant, vs)
    assert elapsed < 120.0
    report(6, f"all four controllers bounded in >= 9/10 seeds at max "
              f"saturation degree {max(dos.values()):.2f} "
              f"({elapsed:.0f}s < 120s for 40 four-hour runs)")


def test_criterion_7_instability_detection(g44):
    scale = 2.6
    dos = degrees_of_saturation(
        g44, entry_demand_map(g44, ConstantDemand(600.0 * scale)))
    assert max(dos.values()) > 1.2
    verdicts = _stability_battery(g44, 600.0 * scale, "analytic", 3600.0)
    for variant, vs in verdicts.items():
        assert vs.count("growing") >= 9, (variant, vs)
    report(7, f"all four controllers growing in >= 9/10 seeds at max "
              f"saturation degree {max(dos.values()):.2f}")


@pytest.fixture(scope="module")
def controller_comparison(g44):
    """Trapezoid scenario, per-variant calibrated periods, ten seeds each."""
    totals = {}
    for variant in ("qmp", "hmp", "ttmp", "dmp"):
        totals[variant] = []
        for seed in SEEDS:
            sim = Simulation(g44, ControllerSpec(variant), demand=TrapezoidDemand(),
                             seed=seed, mode="meso", horizon=4 * 3600.0)
            sim.run()
            assert sim.conservation_ok
            totals[variant].append(RunLedger.from_sim(sim).avg_total_delay_s)
    return {k: np.array(v) for k, v in totals.items()}


def test_criterion_8_delay_ordering(controller_comparison):
    tt = controller_comparison
    d_lt_q = int(np.sum(tt["dmp"] < tt["qmp"]))
    d_lt_tt = int(np.sum(tt["dmp"] < tt["ttmp"]))
    d_lt_h = int(np.sum(tt["dmp"] < tt["hmp"]))
    means = {k: v.mean() for k, v in tt.items()}
    assert d_lt_q >= 9, (d_lt_q, means)
    assert d_lt_tt >= 8, (d_lt_tt, means)
    report(8, "mean total delay (s): "
              + ", ".join(f"{k} {v:.1f}" for k, v in sorted(means.items()))
              + f"; D<Q in {d_lt_q}/10 seeds, D<TT in {d_lt_tt}/10, "
                f"D<H in {d_lt_h}/10 (H not gated)")


def test_criterion_9_period_u_shape(g44):
    means = {}
    for T in range(1, 13):
        delays = []
        for seed in SEEDS:
            sim = Simulation(g44, ControllerSpec("dmp", T=float(T)),
                             demand=ConstantDemand(750.0), seed=seed,
                             mode="meso", horizon=3600.0)
            sim.run()
            delays.append(RunLedger.from_sim(sim).avg_total_delay_s)
        means[T] = float(np.mean(delays))
    best = min(means.values())
    best_T = min(means, key=means.get)
    assert means[1] >= 1.05 * best, means
    assert means[12] >= 1.05 * best, means
    report(9, f"delay at T=1 ({means[1]:.0f}s) and T=12 ({means[12]:.0f}s) "
              f"exceed the minimum {best:.0f}s at T={best_T} by >= 5%")


def test_criterion_10_penetration_trend(g44):
    means = {}
    for demand in (600.0, 750.0, 900.0):
        for p in (0.2, 1.0):
            delays = []
            for seed in SEEDS:
                sim = Simulation(g44, ControllerSpec("dmp"),
                                 demand=ConstantDemand(demand), seed=seed,
                                 mode="meso", horizon=3600.0,
                                 penetration=PenetrationConfig(p, "raw"))
                sim.run()
                delays.append(RunLedger.from_sim(sim).avg_total_delay_s)
            means[(demand, p)] = float(np.mean(delays))
    for demand in (600.0, 750.0, 900.0):
        assert means[(demand, 0.2)] > means[(demand, 1.0)], means

    # probes at full penetration reproduce the full-information run exactly
    full = Simulation(g44, ControllerSpec("dmp"), demand=ConstantDemand(750.0),
                      seed=1, mode="meso", horizon=3600.0)
    full.run()
    cv = Simulation(g44, ControllerSpec("dmp"), demand=ConstantDemand(750.0),
                    seed=1, mode="meso", horizon=3600.0,
                    penetration=PenetrationConfig(1.0, "raw"))
    cv.run()
    assert np.array_equal(full.decision_trace, cv.decision_trace)
    assert full.state_digest() == cv.state_digest()
    pairs = ", ".join(f"{int(d)}veh/h: {means[(d, 0.2)]:.0f}s > {means[(d, 1.0)]:.0f}s"
                      for d in (600.0, 750.0, 900.0))
    report(10, f"delay at p=0.2 exceeds p=1.0 at every demand level ({pairs}); "
               f"p=1.0 decision trace identical to full information")


def test_criterion_11_exhaustive_lower_bound():
    rng = random.Random(2024)
    checked = 0
    for i in range(20):
        inst = TinyInstance(seed=rng.randrange(10_000),
                            n_decisions=rng.choice((4, 5)),
                            ns_rate=rng.uniform(300.0, 900.0), T=5.0)
        best, _ = exhaustive_best_schedule(inst)
        net = inst.network()
        for variant in ("qmp", "hmp", "ttmp", "dmp"):
            realized = inst.simulate_controller(net, variant)
            assert realized >= best - 1e-9, (i, variant, realized, best)
        checked += 1
    assert checked == 20
    report(11, "every controller's realized delay >= exhaustive minimum on "
               "20 random tiny instances x 4 variants")
