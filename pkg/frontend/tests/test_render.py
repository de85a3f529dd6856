"""Renderer tests, including the secondary acceptance criterion: all figure
analogs render from simulator outputs with exit code 0, nonzero sizes, and
byte-identical re-renders.

Fixtures are produced by invoking the mpsim CLI (the simulator is consumed
only through its command line and file formats).
"""

import hashlib
import os
import subprocess
import sys

import pytest

from mpfigs import FigureSpec, MissingColumnError, render, render_all
from mpfigs.cli import main
from mpfigs.figures import run_config


def mpsim(*args):
    proc = subprocess.run([sys.executable, "-m", "mpsim.cli", *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def results_dir(tmp_path_factory):
    """A small controller-comparison battery plus both sweeps."""
    out = str(tmp_path_factory.mktemp("results"))
    for controller in ("dmp", "ttmp", "hmp", "qmp"):
        mpsim("run", "--rows", "2", "--cols", "2", "--demand", "600",
              "--horizon", "600", "--seeds", "1,2", "--controller", controller,
              "--out", out)
    mpsim("sweep-t", "--rows", "1", "--cols", "1", "--demand", "500",
          "--horizon", "300", "--seeds", "1,2", "--controller", "dmp",
          "--t-values", "4,6", "--demands", "400,600", "--out", out)
    mpsim("sweep-penetration", "--rows", "1", "--cols", "1", "--demand", "500",
          "--horizon", "300", "--seeds", "1,2", "--controller", "dmp",
          "--p-values", "0.5,1.0", "--demands", "500", "--out", out)
    return out


def dir_digest(path):
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        h.update(name.encode())
        h.update(open(os.path.join(path, name), "rb").read())
    return h.hexdigest()


def test_acceptance_criterion_12(results_dir, tmp_path):
    out1 = tmp_path / "figs1"
    rc = main(["--in", results_dir, "--out", str(out1)])
    assert rc == 0
    files = sorted(os.listdir(out1))
    # five run figures + per-controller sweep figure + penetration figure
    assert len(files) >= 7
    for name in files:
        assert name.endswith(".svg")
        assert os.path.getsize(out1 / name) > 0
    out2 = tmp_path / "figs2"
    rc = main(["--in", results_dir, "--out", str(out2)])
    assert rc == 0
    assert dir_digest(out1) == dir_digest(out2)
    print("PASS criterion 12: "
          f"{len(files)} figures rendered, nonzero sizes, re-render byte-identical")


def test_expected_figures_present(results_dir, tmp_path):
    written = render_all(results_dir, str(tmp_path / "f"))
    names = {os.path.basename(p) for p in written}
    assert {"delay_per_minute.svg", "cumulative_delay.svg",
            "vehicles_in_network.svg", "blocked_and_waiting.svg",
            "flow_difference.svg", "sweep_t_dmp.svg",
            "penetration.svg"} <= names


def test_figure_subset(results_dir, tmp_path):
    written = render_all(results_dir, str(tmp_path / "f"), ["delay_per_minute"])
    assert [os.path.basename(p) for p in written] == ["delay_per_minute.svg"]


def test_unknown_figure_rejected(results_dir, tmp_path):
    rc = main(["--in", results_dir, "--out", str(tmp_path / "f"),
               "--figures", "delay_per_minute", "vehicles_in_network"])
    assert rc == 0
    with pytest.raises(ValueError):
        render_all(results_dir, str(tmp_path / "f"), ["nope"])


def test_missing_column_is_named(results_dir, tmp_path):
    bad = tmp_path / "bad"
    (bad / "runs").mkdir(parents=True)
    (bad / "runs" / "x.csv").write_text("t_min,delay_veh_s\n0,1.0\n")
    with pytest.raises(MissingColumnError) as err:
        render_all(str(bad), str(tmp_path / "f"))
    assert "vehicles" in str(err.value)
    rc = main(["--in", str(bad), "--out", str(tmp_path / "f")])
    assert rc == 1


def test_single_seed_zero_width_shading(results_dir, tmp_path):
    # a single-seed input renders fine; the std band collapses to zero width
    single = tmp_path / "single"
    (single / "runs").mkdir(parents=True)
    src = sorted(os.listdir(os.path.join(results_dir, "runs")))
    picked = next(n for n in src if n.endswith("seed1.csv") and n.startswith("dmp"))
    data = open(os.path.join(results_dir, "runs", picked)).read()
    (single / "runs" / picked).write_text(data)
    written = render_all(str(single), str(tmp_path / "f"), ["delay_per_minute"])
    assert len(written) == 1 and os.path.getsize(written[0]) > 0


def test_run_config_parsing(results_dir):
    runs = os.path.join(results_dir, "runs")
    path = os.path.join(runs, sorted(os.listdir(runs))[0])
    cfg = run_config(path)
    assert cfg["controller"] in ("dmp", "ttmp", "hmp", "qmp")
    assert "seed" in cfg


def test_empty_results_dir(tmp_path):
    rc = main(["--in", str(tmp_path / "nothing"), "--out", str(tmp_path / "f")])
    assert rc == 1
