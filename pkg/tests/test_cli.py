import hashlib
import json
import os
import subprocess
import sys

import pytest

from mpsim.cli import (ConfigError, ScenarioConfig, load_config, main,
                       run_scenario, sweep_T, sweep_penetration)


def tiny_cfg(**kw):
    base = dict(rows=1, cols=1, demand=500.0, horizon_s=300.0, seeds=(1,),
                controller="dmp", out_dir="out")
    base.update(kw)
    return ScenarioConfig(**base)


def tree_hash(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(name.encode())
            h.update(open(path, "rb").read())
    return h.hexdigest()


def test_run_outputs(tmp_path):
    cfg = tiny_cfg(seeds=(1, 2), out_dir=str(tmp_path / "o"))
    summaries = run_scenario(cfg)
    assert len(summaries) == 2
    runs = sorted(os.listdir(tmp_path / "o" / "runs"))
    assert len(runs) == 4  # csv + json per seed
    agg = [f for f in os.listdir(tmp_path / "o") if f.startswith("aggregate_")]
    assert len(agg) == 1
    s = summaries[0]
    assert s["config"]["controller"] == "dmp"
    assert "avg_total_delay_s" in s["metrics"]
    assert "decision_trace_sha256" in s


def test_run_byte_identical(tmp_path):
    for d in ("a", "b"):
        cfg = tiny_cfg(seeds=(42,), out_dir=str(tmp_path / d))
        run_scenario(cfg)
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_summary_reconstructs_run(tmp_path):
    cfg = tiny_cfg(seeds=(7,), out_dir=str(tmp_path / "o"))
    run_scenario(cfg)
    summary = json.load(open(tmp_path / "o" / "runs" / f"{cfg.tag()}_seed7.json"))
    echoed = dict(summary["config"])
    echoed["seeds"] = (7,)
    echoed["turning_ratios"] = tuple(echoed["turning_ratios"])
    cfg2 = ScenarioConfig(**{**echoed, "out_dir": str(tmp_path / "re")})
    rerun = run_scenario(cfg2)
    assert rerun[0]["metrics"] == summary["metrics"]


def test_invalid_config_exit_2(tmp_path, capsys):
    rc = main(["run", "--rows", "0", "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "rows/cols" in capsys.readouterr().err
    rc = main(["run", "--horizon", "90.5", "--out", str(tmp_path / "x")])
    assert rc == 2
    rc = main(["run", "--seeds", "", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_unwritable_out_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rc = main(["run", "--rows", "1", "--cols", "1", "--demand", "400",
               "--horizon", "120", "--seeds", "1",
               "--out", str(blocker / "sub")])
    assert rc == 3


def test_config_file_and_flag_override(tmp_path):
    cfgfile = tmp_path / "c.json"
    json.dump({"rows": 1, "cols": 1, "demand": 400, "horizon_s": 120,
               "seeds": [5], "controller": "qmp"}, open(cfgfile, "w"))
    import argparse
    ns = argparse.Namespace(config=str(cfgfile), controller="hmp", T=None,
                            penetration=None, scaling=None, seeds=None,
                            mode=None, demand=None, horizon_s=None, dt=None,
                            rows=None, cols=None, network_file=None,
                            out_dir=str(tmp_path / "o"), jobs=None,
                            snapshot_stream=None)
    cfg = load_config(ns)
    assert cfg.controller == "hmp"  # flag wins
    assert cfg.rows == 1 and cfg.seeds == (5,)


def test_unknown_config_field_rejected(tmp_path):
    cfgfile = tmp_path / "c.json"
    json.dump({"rowz": 2}, open(cfgfile, "w"))
    import argparse
    ns = argparse.Namespace(config=str(cfgfile), controller=None, T=None,
                            penetration=None, scaling=None, seeds=None,
                            mode=None, demand=None, horizon_s=None, dt=None,
                            rows=None, cols=None, network_file=None,
                            out_dir=None, jobs=None, snapshot_stream=None)
    with pytest.raises(ConfigError):
        load_config(ns)


def test_network_dump_and_reload(tmp_path):
    netfile = tmp_path / "net.json"
    rc = main(["network", "--rows", "2", "--cols", "2", "--dump", str(netfile)])
    assert rc == 0 and netfile.exists()
    cfg = tiny_cfg(network_file=str(netfile), out_dir=str(tmp_path / "o"))
    summaries = run_scenario(cfg)
    assert summaries[0]["metrics"]["exited"] > 0


def test_snapshot_stream(tmp_path):
    stream = tmp_path / "steps.jsonl"
    cfg = tiny_cfg(out_dir=str(tmp_path / "o"), snapshot_stream=str(stream),
                   horizon_s=120.0)
    run_scenario(cfg)
    lines = stream.read_text().splitlines()
    assert len(lines) == 120
    rec = json.loads(lines[10])
    assert set(rec) == {"t", "vehicles", "blocked", "exited", "phases"}


def test_sweep_T_rows(tmp_path):
    cfg = tiny_cfg(out_dir=str(tmp_path / "o"), horizon_s=180.0)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = sweep_T(cfg, t_values=[5, 10], demands=[400.0, 600.0],
                   out_path=os.path.join(cfg.out_dir, "sweep_t.csv"))
    assert len(rows) == 4
    text = open(os.path.join(cfg.out_dir, "sweep_t.csv")).read().splitlines()
    assert len(text) == 2 + 4  # config echo + header + rows
    single = sweep_T(cfg, t_values=[5], demands=[400.0])
    assert len(single) == 1
    assert single[0]["T_s"] == 5


def test_sweep_penetration_rows(tmp_path):
    cfg = tiny_cfg(out_dir=str(tmp_path / "o"), horizon_s=180.0)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = sweep_penetration(cfg, p_values=[0.5, 1.0], demands=[400.0],
                             out_path=os.path.join(cfg.out_dir, "sweep_p.csv"))
    # 2 penetration rows + 3 benchmark rows
    assert len(rows) == 5
    models = {r["model"] for r in rows}
    assert models == {"dmp", "qmp-benchmark", "hmp-benchmark", "ttmp-benchmark"}


def test_cli_entrypoint_subprocess(tmp_path):
    rc = subprocess.run(
        [sys.executable, "-m", "mpsim.cli", "run", "--rows", "1", "--cols", "1",
         "--demand", "400", "--horizon", "120", "--seeds", "3",
         "--out", str(tmp_path / "o")],
        capture_output=True, text=True)
    assert rc.returncode == 0, rc.stderr
    assert (tmp_path / "o" / "runs").exists()
