import csv
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conncbf.cli import main
from conncbf.config import parse_config, serialize
from conncbf.plotdata import TraceError, load_trace, plot_rows
from conncbf.sim_engine import ConfigError, SimConfig, run_trial
from conncbf.sweep import (SweepSpec, aggregate_from_summary, cell_key, cell_seeds, parse_sweep,
                           run_sweep)

TINY_SWEEP = """
[sim]
duration = 2
[sweep]
n_robots = 3, 4
epsilon = 0.3
delay_max = 0, 0.1
delay_variable = false
heuristic = true
trials = 2
base_seed = 1
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- config -----------------------------------------------------------------

def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "c.ini", ""))
    assert cfg == SimConfig()
    assert (cfg.comm_radius, cfg.d_min, cfg.u_max, cfg.dt, cfg.kappa, cfg.epsilon) == \
        (1.0, 0.25, 0.2, 0.1, 0.04, 0.3)
    assert cfg.sigma is None and cfg.sigma_value == pytest.approx(1 / math.log(2))


def test_invalid_value_names_field(tmp_path):
    with pytest.raises(ConfigError, match="epsilon"):
        parse_config(write(tmp_path, "c.ini", "[swarm]\nepsilon = -0.1\n"))


def test_unknown_key_has_line_number(tmp_path):
    with pytest.raises(ConfigError, match=r"c\.ini:3: unknown key 'speed'"):
        parse_config(write(tmp_path, "c.ini", "[swarm]\nn_robots = 4\nspeed = 2\n"))


def test_key_in_wrong_section_and_bad_syntax(tmp_path):
    with pytest.raises(ConfigError, match="belongs in \\[delay\\]"):
        parse_config(write(tmp_path, "a.ini", "[swarm]\nkappa = 0.1\n"))
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(write(tmp_path, "b.ini", "n_robots = 3\n"))
    with pytest.raises(ConfigError, match="a.ini:2: field 'n_robots'"):
        parse_config(write(tmp_path, "a.ini", "[swarm]\nn_robots = three\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(write(tmp_path, "c.ini", "[swarms]\nn_robots = 3\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.ini")


def test_overrides(tmp_path):
    p = write(tmp_path, "c.ini", "[swarm]\nn_robots = 4\n")
    cfg = parse_config(p, ["n_robots=7", "delay.heuristic=yes", "sim.arena = -1, 1, -2, 2"])
    assert cfg.n_robots == 7 and cfg.heuristic and cfg.arena == (-1.0, 1.0, -2.0, 2.0)
    with pytest.raises(ConfigError):
        parse_config(p, ["nope=1"])
    with pytest.raises(ConfigError):
        parse_config(p, ["swarm.kappa=1"])


configs = st.builds(
    SimConfig,
    n_robots=st.integers(2, 12), epsilon=st.floats(0.01, 1.0), dt=st.floats(0.01, 0.5),
    delay_max=st.floats(0.0, 0.5), delay_variable=st.booleans(), heuristic=st.booleans(),
    heuristic_tau=st.none() | st.floats(0.0, 1.0), sigma=st.none() | st.floats(0.1, 5.0),
    behavior=st.sampled_from(["disconnecting", "coverage"]),
    arena=st.none() | st.just((-1.0, 1.5, -0.7, 2.0)),
    initial_positions=st.none(), mode_band=st.floats(0.0, 0.2))


@given(configs)
def test_serialize_round_trip(tmp_path_factory, cfg):
    p = tmp_path_factory.mktemp("rt") / "c.ini"
    p.write_text(serialize(cfg))
    assert parse_config(p) == cfg


def test_round_trip_with_positions(tmp_path):
    cfg = SimConfig(n_robots=2, initial_positions=((0.1, 0.2), (0.3, -0.4)))
    assert parse_config(write(tmp_path, "c.ini", serialize(cfg))) == cfg


# --- run --------------------------------------------------------------------

def test_run_writes_files_and_is_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", "[swarm]\nn_robots = 4\n[sim]\nduration = 3\n")
    assert main(["run", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "trace.csv").read_bytes(), (tmp_path / "b" / "trace.csv").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "summary.csv").exists()
    assert "min lambda2" in capsys.readouterr().out


def test_run_matches_library(tmp_path):
    cfg = write(tmp_path, "c.ini", "[swarm]\nn_robots = 4\n[sim]\nduration = 2\n")
    main(["run", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path)])
    lib = run_trial(parse_config(cfg), 3)
    with open(tmp_path / "summary.csv") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["min_lambda2"]) == float(f"{lib.min_lambda2:.9g}")


def test_run_exit_codes(tmp_path, monkeypatch):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 1
    bad = write(tmp_path, "bad.ini", "[swarm]\nepsilon = -1\n")
    assert main(["validate", "--config", str(bad)]) == 1

    import conncbf.cli as cli

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "run_trial", boom)
    ok = write(tmp_path, "ok.ini", "[sim]\nduration = 1\n")
    assert main(["run", "--config", str(ok), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o" / "trace.csv").exists()


def test_validate_prints_resolved_config(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", "[swarm]\nn_robots = 4\n")
    assert main(["validate", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "n_robots = 4" in out and "sigma = auto" in out


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "c.ini", "")
    proc = subprocess.run([sys.executable, "-m", "conncbf.cli", "validate", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "[swarm]" in proc.stdout


# --- sweep ------------------------------------------------------------------

def test_sweep_table_and_cell_summaries(tmp_path):
    spec_path = write(tmp_path, "s.ini", TINY_SWEEP)
    assert main(["sweep", "--config", str(spec_path), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "table.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert list(rows[0]) == ["N", "epsilon", "delay_max", "delay_variable", "heuristic",
                             "mean", "std", "min"]
    spec = parse_sweep(spec_path)
    for row, cell in zip(rows, spec.cells()):
        mean, std, mn = aggregate_from_summary(tmp_path / "o" / "cells" / cell_key(cell) / "summary.csv")
        assert float(row["mean"]) == pytest.approx(mean, abs=1e-8)
        assert float(row["std"]) == pytest.approx(std, abs=1e-8)
        assert float(row["min"]) == pytest.approx(mn, abs=1e-8)


def test_sweep_single_cell(tmp_path):
    text = "[sim]\nduration = 1\n[sweep]\nn_robots = 3\nepsilon = 0.3\ndelay_max = 0\n" \
           "delay_variable = false\nheuristic = false\ntrials = 1\n"
    main(["sweep", "--config", str(write(tmp_path, "s.ini", text)), "--out", str(tmp_path)])
    with open(tmp_path / "table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert float(rows[0]["std"]) == 0.0  # one trial
    assert rows[0]["min"] == rows[0]["mean"]


def test_sweep_independent_of_jobs(tmp_path):
    spec_path = write(tmp_path, "s.ini", TINY_SWEEP)
    main(["sweep", "--config", str(spec_path), "--out", str(tmp_path / "j1")])
    main(["sweep", "--config", str(spec_path), "--out", str(tmp_path / "j2"), "--jobs", "2"])
    assert (tmp_path / "j1" / "table.csv").read_bytes() == (tmp_path / "j2" / "table.csv").read_bytes()


def test_cell_seeds_do_not_shift():
    base = SimConfig()
    small = SweepSpec(base, n_robots=(5,), epsilon=(0.1,), delay_max=(0.0,), delay_variable=(False,))
    big = SweepSpec(base, n_robots=(5, 10), epsilon=(0.1, 0.3))
    cell = small.cells()[0]
    assert cell in big.cells()
    assert cell_seeds(cell, 5, 0) == cell_seeds(cell, 5, 0)
    assert cell_seeds(cell, 5, 0) != cell_seeds(big.cells()[-1], 5, 0)


def test_sweep_cell_failure_exit_code(tmp_path, monkeypatch):
    import conncbf.sweep as sw

    real = sw.run_trial

    def flaky(config, seed):
        if config.n_robots == 4:
            raise RuntimeError("bad cell")
        return real(config, seed)

    monkeypatch.setattr(sw, "run_trial", flaky)
    code = main(["sweep", "--config", str(write(tmp_path, "s.ini", TINY_SWEEP)),
                 "--out", str(tmp_path)])
    assert code == 2
    rows = list(csv.DictReader(open(tmp_path / "table.csv")))
    assert rows[0]["mean"] != "" and rows[2]["mean"] == ""


def test_sweep_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        parse_sweep(write(tmp_path, "s.ini", "[sweep]\ntrials = 0\n"))
    with pytest.raises(ConfigError):
        parse_sweep(write(tmp_path, "s.ini", "[sweep]\nn_robots =\n"))
    with pytest.raises(ConfigError):
        parse_sweep(write(tmp_path, "s.ini", "[sweep]\ncolour = red\n"))


def test_run_sweep_library_equals_cli_table(tmp_path):
    spec_path = write(tmp_path, "s.ini", TINY_SWEEP)
    outcomes = run_sweep(parse_sweep(spec_path))
    assert all(not o.failed for o in outcomes)
    assert [len(o.rows) for o in outcomes] == [2, 2, 2, 2]


# --- plotdata ---------------------------------------------------------------

def test_plotdata_downsampling(tmp_path):
    cfg = write(tmp_path, "config.ini", "[swarm]\nn_robots = 3\nepsilon = 0.25\n[sim]\nduration = 2.3\n")
    main(["run", "--config", str(cfg), "--out", str(tmp_path)])
    assert main(["plotdata", str(tmp_path / "trace.csv"), "--every", "10"]) == 0
    with open(tmp_path / "plotdata.csv") as fh:
        rows = list(csv.DictReader(fh))
    series = [r for r in rows if r["kind"] == "series"]
    assert len(series) == math.ceil(23 / 10)
    t = [float(r["t"]) for r in series]
    assert t == sorted(t)
    eps = [r for r in rows if r["kind"] == "epsilon"]
    assert len(eps) == 1 and float(eps[0]["lambda2"]) == 0.25


def test_plotdata_coverage_reference(tmp_path):
    cfg = SimConfig(n_robots=3, behavior="coverage", duration=1.0)
    r = run_trial(cfg, 0)
    from conncbf.sim_engine import export_trial

    trace, _ = export_trial(r, tmp_path)
    rows = plot_rows(load_trace(trace), 0.3, every=3, max_area=3.68)
    assert rows[-1] == ["max_area", "", "", "3.68"]
    assert all(r[3] != "" for r in rows if r[0] == "series")


def test_plotdata_malformed_trace(tmp_path):
    bad = write(tmp_path, "trace.csv", "t,lambda2_gt,covered_area\n0,0.5\n")
    assert main(["plotdata", str(bad)]) == 1
    with pytest.raises(TraceError):
        load_trace(write(tmp_path, "t2.csv", "a,b\n1,2\n"))
    with pytest.raises(TraceError):
        load_trace(write(tmp_path, "t3.csv", "t,lambda2_gt,covered_area\n0.1,1,\n0.0,1,\n"))
    with pytest.raises(TraceError):
        load_trace(write(tmp_path, "t4.csv", ""))
    assert main(["plotdata", str(tmp_path / "none.csv")]) == 1


def test_plot_rows_counts():
    cols = {"t": list(np.arange(95) * 0.1), "lambda2_gt": [0.5] * 95, "covered_area": [None] * 95}
    for k in (1, 7, 10, 95, 200):
        rows = plot_rows(cols, 0.3, every=k)
        assert sum(r[0] == "series" for r in rows) == math.ceil(95 / k)


def test_overrides_apply_without_config_file(tmp_path, capsys):
    assert main(["validate", "--override", "epsilon=0.2", "--override", "sim.duration=3"]) == 0
    text = capsys.readouterr().out
    assert "epsilon = 0.2" in text and "duration = 3.0" in text
    assert main(["run", "--override", "n_robots=3", "--override", "duration=1",
                 "--out", str(tmp_path)]) == 0
    header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[-1] == "qp_status3"
