import json
import math
import subprocess
import sys

import pytest

from lzbath import cli, neqb
from lzbath.model import ModelParams, coherent_probability


def test_parse_grid():
    assert cli.parse_grid("v-grid", "0.01:1:3", log_default=True) == (0.01, 0.1, 1.0)
    assert cli.parse_grid("theta", "0:1:3") == (0.0, 0.5, 1.0)
    assert cli.parse_grid("theta", "1:100:3:log") == (1.0, 10.0, 100.0)
    assert cli.parse_grid("temperature", "6.4,25.6") == (6.4, 25.6)
    assert cli.parse_grid("temperature", "3") == (3.0,)
    for bad in ("1,0.5", "", "1:2", "0:1:3:cubic", "0:1:0", "x"):
        with pytest.raises(cli.ConfigError):
            cli.parse_grid("theta", bad)
    with pytest.raises(cli.ConfigError):
        cli.parse_grid("v-grid", "0:1:3", log_default=True)


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# two-temperature scan\nengine = neqb\nv_grid = 0.1:1:2\ngamma = 0\ntemperature = 6.4, 25.6\n")
    raw = cli.read_config_file(cfg)
    raw["gamma"] = "5e-4"
    c = cli.build_config(raw)
    assert c.v_grid == (0.1, 1.0) and c.temperature_grid == (6.4, 25.6) and c.gamma == 5e-4


def test_config_errors_name_the_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("omega-c = 5\nvelocity = 3\n")
    with pytest.raises(cli.ConfigError) as info:
        cli.read_config_file(cfg)
    assert info.value.key == "velocity"
    assert cli.main(["sweep", "--config", str(cfg)]) == cli.EXIT_CONFIG
    assert "velocity" in capsys.readouterr().err
    for argv, key in ((["--gamma", "-1"], "gamma"), (["--v-grid", "1,0.5"], "v-grid"),
                      (["--theta", "2"], "theta"), (["--temperature", "1", "--t-grid", "1,2"], "t_grid")):
        assert cli.main(["sweep", *argv]) == cli.EXIT_CONFIG
        assert key in capsys.readouterr().err


def test_quapi_cap_rejected_before_compute(monkeypatch, capsys):
    def boom(*a, **k):
        raise AssertionError("computation started")
    monkeypatch.setattr(cli.quapi, "converge", boom)
    assert cli.main(["sweep", "--engine", "quapi", "--k-max", "13"]) == cli.EXIT_CONFIG
    assert "k_max" in capsys.readouterr().err
    assert cli.main(["sweep", "--engine", "both", "--k-max", "12"]) == cli.EXIT_CONFIG


def test_coherent_sweep_matches_closed_form():
    c = cli.build_config({"engine": "neqb", "v_grid": "0.5:5:4", "gamma": "0", "initial": "ground",
                          "workers": "1", "no_timing": True})
    rows = cli.run_sweep(c)
    assert [r["v"] for r in rows] == list(c.v_grid)
    for r in rows:
        assert r["status"] == cli.CONVERGED and r["wall_ms"] is None
        assert r["probability"] == pytest.approx(coherent_probability(ModelParams(sweep_speed=r["v"])), abs=1e-3)


def _rows():
    c = cli.build_config({"engine": "neqb", "v_grid": "1:2:2", "temperature": "0,1", "s": "1",
                          "gamma": "0.01", "workers": "1"})
    return cli.run_sweep(c)


def test_row_count_ordering_and_bounds():
    rows = _rows()
    assert len(rows) == 2 * 2 * 2  # v x T x initial
    keys = [(r["v"], r["T"], neqb.INITIAL_STATES.index(r["initial"])) for r in rows]
    assert keys == sorted(keys)
    for r in rows:
        assert -1e-6 <= r["probability"] <= 1 + 1e-6
        assert r["status"] in (cli.CONVERGED, cli.BUDGET_EXCEEDED)
        assert r["wall_ms"] > 0


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_emit_round_trip(tmp_path, fmt):
    rows = _rows()
    rows[0] = dict(rows[0], probability=None, status=cli.BUDGET_EXCEEDED)
    rows[1] = dict(rows[1], engine="quapi", dt=0.05, k_max=7)
    path = tmp_path / f"out.{fmt}"
    cli.emit(rows, fmt, path)
    assert cli.load_table(path, fmt) == rows
    if fmt == "csv":
        assert path.read_text().splitlines()[0] == ",".join(cli.HEADER)
    else:
        assert all(list(obj) == list(cli.HEADER) for obj in json.loads(path.read_text()))


def test_nine_significant_digits():
    text = cli.format_table([{"v": 1 / 3, "probability": math.pi}], "csv")
    line = text.splitlines()[1].split(",")
    assert line[0] == "0.333333333" and line[8] == "3.14159265"


def test_header_identical_across_engines():
    a = cli.format_table([{"engine": "neqb"}]).splitlines()[0]
    b = cli.format_table([{"engine": "quapi"}]).splitlines()[0]
    assert a == b == ",".join(cli.HEADER)


def test_deterministic_and_worker_independent(tmp_path):
    base = ["sweep", "--engine", "neqb", "--v-grid", "0.5:2:3", "--s", "1", "--gamma", "0.01",
            "--temperature", "0.5", "--no-timing"]
    outs = []
    for workers, name in (("1", "a"), ("1", "b"), ("2", "c")):
        path = tmp_path / f"{name}.csv"
        assert cli.main(base + ["--workers", workers, "--out", str(path)]) == cli.EXIT_OK
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_failed_points_are_flagged_not_fabricated(monkeypatch, tmp_path):
    real = neqb.run_converged

    def flaky(p, b, initial, **kw):
        run = real(p, b, initial, **kw)
        if p.sweep_speed > 1.5:
            run.converged = False
        return run
    monkeypatch.setattr(cli.neqb, "run_converged", flaky)
    path = tmp_path / "out.csv"
    code = cli.main(["sweep", "--v-grid", "1,2", "--gamma", "0", "--initial", "ground",
                     "--workers", "1", "--out", str(path)])
    assert code == cli.EXIT_PARTIAL
    rows = cli.load_table(path)
    assert rows[0]["status"] == "converged" and rows[1]["status"] == "budget-exceeded"
    assert rows[1]["probability"] is None


def test_window_and_converge_commands(tmp_path, capsys):
    out = tmp_path / "w.csv"
    assert cli.main(["window", "--s", "3", "--theta", "0", "--gamma", "1e-3", "--times=-40:40:81",
                     "--out", str(out)]) == 0
    rows = cli.load_table(out)
    assert len(rows) == 81 and set(rows[0]) == {"t", "gamma1"}
    err = capsys.readouterr().err
    assert "xi=51.265" in err and "peak_gaps=[5.0" in err
    out = tmp_path / "c.json"
    assert cli.main(["converge", "--v-grid", "1", "--gamma", "0", "--initial", "ground", "--format", "json",
                     "--no-timing", "--out", str(out)]) == 0
    table = json.loads(out.read_text())
    assert table[0]["stage"] == "t_max" and table[0]["wall_ms"] is None


def test_trace_command(tmp_path):
    out = tmp_path / "t.csv"
    assert cli.main(["trace", "--engine", "both", "--v-grid", "1", "--gamma", "0", "--initial", "ground",
                     "--t-max", "20", "--dt", "0.1", "--k-max", "2", "--out", str(out)]) == 0
    rows = cli.load_table(out)
    final = {r["engine"]: r for r in rows if r["t"] == 10.0}
    assert final["neqb"]["p_ground"] == pytest.approx(final["quapi"]["p_ground"], abs=5e-3)
    assert all(r["trace"] == pytest.approx(1.0) for r in rows)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lzbath", "sweep", "--v-grid", "1", "--gamma", "0",
                          "--initial", "ground", "--no-timing", "--workers", "1"],
                         capture_output=True, text=True, check=True)
    header, row = res.stdout.splitlines()
    assert header == ",".join(cli.HEADER) and row.endswith(",converged,")
