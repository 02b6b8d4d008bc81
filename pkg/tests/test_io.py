import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detangle import cli
from detangle import io as dio

TIM_MIN = {"experiment": "tim-pt", "rates": {"g_h": 50, "g_d": 100}, "sweep": {"values": [0.0, 1.0]}}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj), encoding="utf-8")
    return p


def test_minimal_config_gets_defaults(tmp_path):
    cfg = dio.load_config(write(tmp_path, TIM_MIN))
    assert cfg.rates.theta_t == 10.0 and cfg.rates.eps_floor == 1e-12
    assert cfg.variant == "gradient" and cfg.seed == 0
    assert cfg.sweep.values == (0.0, 1.0)


def test_unknown_key_is_named(tmp_path):
    bad = json.loads(json.dumps(TIM_MIN))
    bad["rates"]["gama_h"] = 1
    with pytest.raises(dio.UnknownKeyError, match="gama_h"):
        dio.load_config(write(tmp_path, bad))
    with pytest.raises(dio.UnknownKeyError, match="colour"):
        dio.load_config(write(tmp_path, {**TIM_MIN, "colour": "red"}))


@pytest.mark.parametrize(
    "patch",
    [
        {"rates": {"g_h": 1, "g_d": 1, "theta_t": -1}},
        {"rates": {"g_h": -1, "g_d": 1}},
        {"rates": {"g_h": 1, "g_d": "lots"}},
        {"sweep": {"values": [1.0, 0.5]}},
        {"sweep": {"values": []}},
        {"variant": "cubic"},
        {"seed": 1.5},
    ],
)
def test_range_violations(tmp_path, patch):
    with pytest.raises(dio.RangeError):
        dio.load_config(write(tmp_path, {**TIM_MIN, **patch}))


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(dio.ConfigParseError, match=r"line 2, column"):
        dio.load_config(write(tmp_path, '{"experiment": "tim-pt",\n  oops}'))


def test_missing_sections(tmp_path):
    with pytest.raises(dio.MissingKeyError, match="rates"):
        dio.load_config(write(tmp_path, {"experiment": "ring5"}))
    with pytest.raises(dio.MissingKeyError, match="g_d"):
        dio.load_config(write(tmp_path, {"experiment": "ring5", "rates": {"g_h": 1}}))
    with pytest.raises(dio.MissingKeyError, match="experiment"):
        dio.load_config(write(tmp_path, {"rates": {"g_h": 1, "g_d": 1}}))


def test_experiment_mismatch(tmp_path):
    with pytest.raises(dio.ConfigError):
        dio.load_config(write(tmp_path, TIM_MIN), experiment="pump")
    cfg = dio.load_config(write(tmp_path, {"seed": 4}), experiment="identities")
    assert cfg.experiment == "identities"


def test_error_types_are_distinct():
    kinds = {dio.ConfigParseError, dio.UnknownKeyError, dio.MissingKeyError, dio.RangeError}
    assert len(kinds) == 4 and all(issubclass(k, dio.ConfigError) for k in kinds)


@settings(max_examples=40, deadline=None)
@given(
    g_h=st.floats(0, 1e3), g_d=st.floats(0, 1e3), theta_t=st.floats(1e-3, 1e3),
    values=st.lists(st.floats(0, 10), min_size=1, max_size=6, unique=True),
    variant=st.sampled_from(["gradient", "quadratic", "linear"]), seed=st.integers(0, 2**31),
)
def test_config_round_trip(g_h, g_d, theta_t, values, variant, seed):
    cfg = dio.parse_config(json.dumps({
        "experiment": "pump", "rates": {"g_h": g_h, "g_d": g_d, "theta_t": theta_t},
        "sweep": {"values": sorted(values)}, "variant": variant, "seed": seed,
    }))
    assert dio.parse_config(dio.dump_config(cfg)) == cfg


# results


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(dio.fmt(x)) == x


def test_csv_header_only_and_schema_check(tmp_path):
    p = dio.write_results([], dio.TIM_SCHEMA, tmp_path / "a.csv")
    assert p.read_text() == ",".join(dio.TIM_SCHEMA) + "\n"
    with pytest.raises(ValueError):
        dio.csv_text([(1, 2)], ("a",))


def test_write_results_deterministic(tmp_path):
    rows = [(0.1, "plus", 1 / 3, None, True)]
    a = dio.write_results(rows, ("x", "b", "y", "z", "f"), tmp_path / "a.csv").read_bytes()
    b = dio.write_results(rows, ("x", "b", "y", "z", "f"), tmp_path / "b.csv").read_bytes()
    assert a == b == b"x,b,y,z,f\n0.10000000000000001,plus,0.33333333333333331,,true\n"
    assert not list(tmp_path.glob(".*"))  # no temp files left behind


def test_branch_rows_sorted_by_grid_then_branch():
    from detangle.experiments import BranchRecord

    def rec(v, b):
        return BranchRecord(v, b, 0.0, 0.0, np.zeros(4), np.full(4, 0.25), "fixed_point")

    recs = [rec(1.0, "minus"), rec(0.5, "plus"), rec(1.0, "symmetric"), rec(0.5, "symmetric")]
    order = [(r[0], r[1]) for r in dio.branch_rows(recs)]
    assert order == [(0.5, "symmetric"), (0.5, "plus"), (1.0, "symmetric"), (1.0, "minus")]


def test_landscape_plot_data():
    from detangle.experiments import run_landscape

    files = dio.emit_plot_data(run_landscape(1.0, [0.0, 0.5], n_s=21), "landscape")
    assert set(files) == {"landscape.csv", "plot.py"}
    head = files["landscape.csv"].splitlines()
    assert head[0] == "ratio,s,U_eff" and len(head) == 1 + 2 * 20


def test_trajectory_plot_data(rng):
    from detangle import engine as E
    from detangle.disentangle import PairTopology
    from detangle.experiments import Ring5Result, ring_initial_state
    from detangle.models import TimParams, tim_hamiltonian

    # a very short ring run is enough for the file structure
    nn, snn = PairTopology.ring(5), PairTopology.neighbours(5, 2)
    p = E.EvolutionParams(5, 100, 10)
    tr = E.integrate(ring_initial_state(), tim_hamiltonian(TimParams(5, 1, 2)), p, 0.002, nn,
                     record_every=0.001, observe_pairs=nn.pairs + snn.pairs)
    res = Ring5Result(tr, None, E.classify_asymptotics(tr, p), nn.pairs, snn.pairs, 0.0, 0.0)
    files = dio.emit_plot_data(res, "ring5", p)
    assert sorted(files) == ["bloch_spin1.csv", "bloch_spin2.csv", "bloch_spin3.csv", "bloch_spin4.csv",
                             "bloch_spin5.csv", "plot.py", "tau.csv"]
    assert files["bloch_spin1.csv"].splitlines()[0] == "t,kx,ky,kz"
    tau = files["tau.csv"].splitlines()
    assert tau[0] == "gamma_D_t,pair,pair_kind,tau"
    kinds = [line.split(",")[2] for line in tau[1:]]
    assert kinds.count("NN") == kinds.count("SNN") == 5 * len(tr.times)
    pump = dio.emit_plot_data(tr, "pump")
    assert "bloch_spin1.csv" in pump and "tau.csv" not in pump


# runner and CLI


def test_identities_experiment(tmp_path):
    rows = dio.identity_checks(seed=1)
    assert [r[0] for r in rows] == ["trace", "hermiticity", "purity", "variance", "gibbs_fixed_point",
                                    "logdet_order"]
    assert all(r[3] for r in rows)


def test_cli_identities(tmp_path, capsys):
    cfg = write(tmp_path, {"seed": 2})
    out = tmp_path / "out"
    assert cli.main(["identities", "--config", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["identities.csv", "manifest.json"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["content_hash"] == dio.content_hash({"identities.csv": (out / "identities.csv").read_text()})
    assert man["version"] and "wall_time_s" in man


def test_cli_invalid_config_exit_2_no_output(tmp_path, capsys):
    cfg = write(tmp_path, {**TIM_MIN, "rates": {"g_h": 1, "g_d": 1, "theta_t": -1}})
    out = tmp_path / "out"
    assert cli.main(["tim-pt", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "theta_t" in capsys.readouterr().err
    assert cli.main(["tim-pt", "--config", str(tmp_path / "nope.json")]) == 2
    assert cli.main(["bogus", "--config", str(cfg)]) == 2


def test_cli_runtime_failure_exit_1(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(dio, "execute", boom)
    cfg = write(tmp_path, {"seed": 0})
    out = tmp_path / "out"
    assert cli.main(["identities", "--config", str(cfg), "--out", str(out)]) == 1
    assert "solver exploded" in capsys.readouterr().err
    assert not out.exists()


def test_cli_landscape_deterministic(tmp_path):
    cfg = write(tmp_path, {"sweep": {"values": [0.0, 0.2, 0.4]}, "model": {"J_over_B": 1.0},
                           "options": {"s_points": 101}})
    outs = []
    for name in ("a", "b"):
        assert cli.main(["landscape", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    for f in ("landscape.csv", "minima.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["summary"]["critical_status"] == "ok"
    assert 0.2 < man["summary"]["critical_ratio"] < 0.4


def test_cli_tim_pt_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("DETANGLE_WORKERS", "1")
    cfg = write(tmp_path, {**TIM_MIN, "sweep": {"values": [0.0, 1.5]}})
    out = tmp_path / "o"
    assert cli.main(["tim-pt", "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["integrator"]["repair_rate"] < 0.01
    assert man["raw_rates"] == {"gamma_h": 50.0, "beta": 10.0, "gamma_d": 1000.0}
    lines = (out / "tim_pt.csv").read_text().splitlines()
    assert lines[0] == ",".join(dio.TIM_SCHEMA) and len(lines) == 7
    assert (out / "mfa.csv").exists() and (out / "plot.py").exists()


def test_cli_pump_files(tmp_path):
    cfg = write(tmp_path, {"experiment": "pump", "rates": {"g_h": 5, "g_d": 100}, "sweep": {"values": [0.0]},
                           "options": {"t_end": 0.5, "window": 0.2, "featured": 0.0}})
    out = tmp_path / "o"
    assert cli.main(["pump", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["bloch_spin1.csv", "bloch_spin2.csv", "manifest.json", "plot.py", "pump.csv"]
    header = (out / "pump.csv").read_text().splitlines()[0]
    assert header == ",".join(dio.PUMP_SCHEMA)
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["featured"]["ratio"] == 0.0
