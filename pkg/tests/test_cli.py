import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpne import cli, csvio
from fedpne.config import ConfigParseError, from_dict, load_config, parse_text
from fedpne.harness import (ObjectiveConfig, RunAggregate, RunSetup, RunTrace, aggregate_runs,
                            run_experiment)
from fedpne.plotting import PlotError, render_regret_plot
from fedpne.protocol import ConfigError, ServerConfig


def write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- configuration -------------------------------------------------------------


def test_empty_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    s = cfg.server
    assert cfg.algorithm == "fedpne" and cfg.objective.name == "garland"
    assert (s.M, s.T, s.nu1, s.rho, s.c, s.c1) == (10, 2000, 1.0, 0.5, 0.1, 1.0)
    assert s.delta == pytest.approx(0.1)
    assert cfg.seeds == tuple(range(10))
    assert cfg.dp is None and cfg.fstar_resolution == 1_000_000


def test_theory_preset(tmp_path):
    cfg = load_config(write(tmp_path, 'preset = "theory"\n[server]\nM = 10\n'))
    assert cfg.server.c == 2.0 and cfg.server.c1 == pytest.approx(20 ** 0.125, abs=1e-15)
    explicit = from_dict({"preset": "theory", "server": {"c": 0.5}})
    assert explicit.server.c == 0.5


def test_rho_out_of_range(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, "[server]\nrho = 1.5\n"))
    assert str(err.value) == "server.rho: ρ must lie in (0,1)"


@pytest.mark.parametrize("raw, key", [
    ({"bogus": 1}, "bogus"),
    ({"server": {"MM": 3}}, "server.MM"),
    ({"objective": {"seir": {"betta": 0.3}}}, "objective.seir.betta"),
    ({"server": {"M": 2.5}}, "server.M"),
    ({"server": {"T": 0}}, "server.T"),
    ({"objective": {"noise": "pink"}}, "objective.noise"),
    ({"seeds": []}, "seeds"),
    ({"seeds": [1, 1]}, "seeds"),
    ({"dp": {"enabled": True, "epsilon": 0.0}}, "dp.epsilon"),
    ({"algorithm": "dp-fedpne", "dp": {"enabled": False}}, "dp.enabled"),
    ({"grid": {"arms_per_axis": 0}}, "grid.arms_per_axis"),
    ({"server": 3}, "server"),
    ({"partition": {"split_policy": "diag"}}, "partition.split_policy"),
])
def test_validation_names_key(raw, key):
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    assert err.value.key == key
    assert str(err.value).startswith(key + ": ")


def test_parse_error_has_line_number(tmp_path):
    p = write(tmp_path, "[server]\nM = 10\nT = = 5\n")
    with pytest.raises(ConfigParseError) as err:
        load_config(p)
    assert err.value.line == 3 and f"{p}:3:" in str(err.value)


def test_dp_config_and_aliases():
    cfg = from_dict({"algorithm": "dp-fedpne", "dp": {"epsilon": 2.0}})
    assert cfg.dp.epsilon == 2.0 and cfg.dp.sigma2 == pytest.approx(math.log(25) / 2)
    assert from_dict({"dp": {"enabled": True}}).algorithm == "dp-fedpne"
    assert from_dict({"algorithm": "grid"}).algorithm == "grid-baseline"
    with pytest.raises(ConfigError):
        from_dict({"algorithm": "grid", "dp": {"enabled": True}})


def test_seir_defaults_to_coarser_oracle():
    cfg = from_dict({"objective": {"name": "seir", "seir": {"beta": 0.3}}})
    assert cfg.fstar_resolution == 2000
    assert cfg.objective.seir_params().beta == 0.3


def test_resolved_is_json_and_reloadable():
    cfg = from_dict({"server": {"M": 4}, "seeds": [3, 1]})
    res = cfg.resolved()
    text = json.dumps(res)
    back = json.loads(text)
    assert back["server"]["delta"] == 0.25 and back["seeds"] == [3, 1]
    back.pop("dp")
    back["objective"].pop("seir")
    back["fstar"].pop("value")
    assert from_dict(back) == cfg


# -- CSV -----------------------------------------------------------------------


def test_empty_trace_header_only(tmp_path):
    p = csvio.emit_trace(RunTrace.empty(2), tmp_path / "t.csv")
    assert p.read_text() == "client,round,phase,depth,node_index,x0,x1,reward,regret_increment\n"
    assert csvio.read_trace(p).n_pulls == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1,
                                   max_size=40))
def test_trace_round_trip(tmp_path_factory, D, vals):
    n = len(vals)
    v = np.asarray(vals)
    tr = RunTrace(np.arange(1, n + 1), np.arange(1, n + 1), np.ones(n, int), np.full(n, 7),
                  np.arange(n) + 1, np.tile(v[:, None], (1, D)) / 3.0, v, -v / 7.0, M=n)
    p = csvio.emit_trace(tr, tmp_path_factory.mktemp("csv") / "t.csv")
    back = csvio.read_trace(p)
    for name in ("client", "round", "phase", "depth", "node_index", "x", "reward", "regret"):
        assert np.array_equal(getattr(back, name), getattr(tr, name)), name


def test_real_trace_round_trip(tmp_path):
    tr = run_experiment(RunSetup(ServerConfig(M=3, T=120)), 2)
    back = csvio.read_trace(csvio.emit_trace(tr, tmp_path / "t.csv"))
    assert np.array_equal(back.reward, tr.reward) and np.array_equal(back.x, tr.x)
    assert np.array_equal(back.regret, tr.regret)


def test_summary_shape_and_round_trip(tmp_path):
    s = RunSetup(ServerConfig(M=2, T=150))
    agg = aggregate_runs([run_experiment(s, seed) for seed in range(10)])
    p = csvio.emit_summary(agg, tmp_path / "summary.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "round,mean_avg_regret,std_avg_regret,n_seeds"
    assert len(lines) == 151 and lines[1].startswith("1,") and lines[1].endswith(",10")
    back = csvio.read_summary(p)
    assert np.array_equal(back.mean, agg.mean) and np.array_equal(back.std, agg.std)


def test_communication_csv(tmp_path):
    tr = run_experiment(RunSetup(ServerConfig(M=3, T=200)), 0)
    rows = csvio.read_communication(csvio.emit_communication(tr, tmp_path / "c.csv"))
    assert len(rows) == len(tr.phases)
    assert all(r[4] == 6 for r in rows)
    assert rows[0][:3] == (1, tr.phases[0].depth, tr.phases[0].n_active)


def test_csv_errors_carry_path(tmp_path):
    with pytest.raises(csvio.CsvError, match="missing.csv"):
        csvio.read_trace(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("round,oops\n")
    with pytest.raises(csvio.CsvError, match="bad.csv"):
        csvio.read_summary(bad)


# -- plotting -----------------------------------------------------------------------


def fake_summary(scale):
    r = np.arange(1, 101)
    return RunAggregate(r, scale * np.sqrt(r), 0.1 * scale * np.ones(100), 10)


def test_plot_is_byte_identical(tmp_path):
    a = render_regret_plot([fake_summary(1.0)], tmp_path / "a.svg")
    b = render_regret_plot([fake_summary(1.0)], tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_plot_sweep_legend(tmp_path):
    p = render_regret_plot([fake_summary(1.0), fake_summary(0.5)], tmp_path / "m.svg",
                           labels=["M=5", "M=50"])
    text = p.read_text()
    assert "M=5" in text and "M=50" in text
    assert text.count("<path") > 4


def test_plot_needs_a_summary(tmp_path):
    with pytest.raises(PlotError):
        render_regret_plot([], tmp_path / "x.svg")


# -- command line --------------------------------------------------------------------


def test_cli_run_and_plot(tmp_path, capsys):
    cfgp = write(tmp_path, "seeds = [0, 1]\n[server]\nM = 3\nT = 150\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfgp), "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].startswith("seed=0 algorithm=fedpne phases=")
    for name in ("config.json", "summary.csv", "regret.svg", "trace_seed0.csv",
                 "trace_seed1.csv", "communication_seed1.csv"):
        assert (out / name).exists(), name
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["server"]["c"] == 0.1 and resolved["server"]["delta"] == pytest.approx(1 / 3)
    assert cli.main(["plot", "--in", str(out), "--out", str(tmp_path / "p.svg")]) == 0
    assert "M=3" in (tmp_path / "p.svg").read_text()


def test_cli_overrides(tmp_path, capsys):
    cfgp = write(tmp_path, "[server]\nM = 2\nT = 60\n")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfgp), "--out", str(out), "--seed-override", "7",
                     "--algo", "grid", "--preset", "theory"]) == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["seeds"] == [7] and resolved["algorithm"] == "grid-baseline"
    assert resolved["server"]["c"] == 2.0
    assert "algorithm=grid-baseline" in capsys.readouterr().out
    assert cli.main(["run", "--config", str(cfgp), "--out", str(out), "--seed-override", "1",
                     "--algo", "dp-fedpne"]) == 0
    assert json.loads((out / "config.json").read_text())["dp"]["enabled"] is True


@pytest.mark.parametrize("argv_tail, text, kind", [
    (["run"], "[server]\nrho = 1.5\n", "config"),
    (["run"], "[server\n", "config"),
    (["run"], "what = 1\n", "config"),
    (["bogus"], "", "usage"),
])
def test_cli_errors_are_one_line(tmp_path, capsys, argv_tail, text, kind):
    cfgp = write(tmp_path, text)
    argv = argv_tail + (["--config", str(cfgp), "--out", str(tmp_path / "o")]
                        if argv_tail == ["run"] else [])
    code = cli.main(argv)
    err = capsys.readouterr().err
    assert code != 0
    assert err.count("\n") == 1 and err.startswith(f"fedpne: error: {kind}: ")


def test_cli_missing_config(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "none.toml")]) != 0
    assert "none.toml" in capsys.readouterr().err


def test_cli_oracle(capsys):
    assert cli.main(["oracle", "--objective", "double_sine", "--resolution", "1001"]) == 0
    out = capsys.readouterr().out.strip()
    assert out == "fstar=1 argmax=0.5"
