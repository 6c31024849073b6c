import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from mnariv import cli
from mnariv.data import Dataset
from mnariv.errors import ConsistencyError, ParseError, SchemaError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_small_file(tmp_path):
    f = write(tmp_path / "a.csv", "x1,z,r,y\n1,0,1,1\n0,1,0,\n1,1,1,0\n")
    d = cli.load_csv(f)
    assert d.n == 3 and d.r.tolist() == [1, 0, 1]
    assert np.isnan(d.y[1])
    assert d.covariate_names == ("x1",)


def test_na_token(tmp_path):
    d = cli.load_csv(write(tmp_path / "a.csv", "x1,z,r,y\n1,0,0,NA\n1,1,1,1\n"))
    assert np.isnan(d.y[0])


@pytest.mark.parametrize("text, error", [
    ("x1,z,r,y\n1,0,1,\n", ConsistencyError),
    ("x1,z,r,y\n1,0,0,1\n", ConsistencyError),
    ("x1,z,r\n1,0,1\n", SchemaError),
    ("x1,z,r,y\n1,0,2,1\n", ParseError),
    ("x1,z,r,y\nabc,0,1,1\n", ParseError),
    ("x1,z,r,y\n1,0,1\n", ParseError),
])
def test_load_errors(tmp_path, text, error):
    with pytest.raises(error):
        cli.load_csv(write(tmp_path / "bad.csv", text))


def test_consistency_error_names_row(tmp_path):
    with pytest.raises(ConsistencyError, match="row 1"):
        cli.load_csv(write(tmp_path / "bad.csv", "x1,z,r,y\n1,0,1,1\n0,0,1,\n"))


def test_column_mapping(tmp_path):
    f = write(tmp_path / "a.csv", "age,iv,seen,out,junk\n3.5,1,1,1,9\n2,0,0,,9\n")
    d = cli.load_csv(f, cli.ColumnMapping(("iv",), ("age",), "seen", "out"))
    assert d.covariate_names == ("age",) and d.instrument_names == ("iv",)


rows = st.lists(st.tuples(st.integers(0, 1), st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 3)),
                          st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=30)


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(rows)
def test_round_trip_byte_identical(tmp_path, rows):
    x = np.array([[a, b] for a, b, *_ in rows], float)
    z = np.array([c for _, _, c, _, _ in rows], float)
    r = np.array([e for *_, e in rows])
    y = np.array([d if e else np.nan for *_, d, e in rows])
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.save_csv(Dataset(x, z, r, y, ("x1", "x2"), ("z",)), first)
    cli.save_csv(cli.load_csv(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    conf = write(tmp_path / "run.conf", "# settings\nn = 300\nreps = 2\nseed = 9\nestimators = IPW\n")
    args = cli.build_parser().parse_args(["simulate", "--config", str(conf), "--seed", "4"])
    cfg = cli.resolve(args)
    assert cfg["n"] == 300 and cfg["reps"] == 2 and cfg["seed"] == 4 and cfg["estimators"] == "IPW"


def test_bad_config_key(tmp_path):
    conf = write(tmp_path / "run.conf", "colour = red\n")
    assert cli.run(["simulate", "--config", str(conf)]) == cli.EXIT_USAGE


def test_usage_errors():
    assert cli.run([]) == cli.EXIT_USAGE
    assert cli.run(["estimate"]) == cli.EXIT_USAGE
    assert cli.run(["simulate", "--n", "ten"]) == cli.EXIT_USAGE
    assert cli.run(["simulate", "--estimators", "XYZ", "--reps", "1", "--n", "200"]) == cli.EXIT_USAGE


def test_data_error_exit(tmp_path):
    bad = write(tmp_path / "bad.csv", "x1,z,r,y\n1,0,1,\n")
    out = tmp_path / "out.json"
    assert cli.run(["estimate", "--input", str(bad), "--output", str(out)]) == cli.EXIT_DATA
    assert json.loads(out.read_text())["diagnostics"]["error"]["kind"] == "ConsistencyError"
    assert cli.run(["estimate", "--input", str(tmp_path / "missing.csv")]) == cli.EXIT_DATA


def test_numerical_failure_exit(tmp_path):
    # no variation in the instrument: the zeta equation has no information
    text = "x1,z,r,y\n" + "".join(f"{i % 2},1,{int(i % 3 > 0)},{i % 2 if i % 3 else ''}\n" for i in range(60))
    f = write(tmp_path / "flat.csv", text)
    out = tmp_path / "out.json"
    code = cli.run(["estimate", "--input", str(f), "--estimators", "IPW", "--output", str(out)])
    assert code == cli.EXIT_NUMERIC
    doc = json.loads(out.read_text())
    assert "error" in doc["results"]["IV_IPW"]


def test_estimate_table_shape(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert cli.run(["simulate", "--n", "3000", "--seed", "2", "--write-data", str(data)]) == 0
    out = tmp_path / "e.json"
    code = cli.run(["estimate", "--input", str(data), "--output", str(out),
                    "--baseline-design", "1, z, x1, x2", "--iv-design", "1, x1, x2, x1:x2"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {"config", "results", "diagnostics", "version"}
    assert list(doc["results"]) == ["CC", "MAR_IPW", "IV_IPW", "IV_OR", "IV_DR", "IV_EFF"]
    for name in ("IV_IPW", "IV_OR", "IV_DR", "IV_EFF"):
        r = doc["results"][name]
        assert r["ci_phi"][0] < r["phi_hat"] < r["ci_phi"][1]
        assert 0 <= r["p_value_zeta"] <= 1
    assert doc["config"]["solver"]["tol_residual"] == 1e-9
    header = capsys.readouterr().out.splitlines()[-7]
    assert header.split() == ["estimator", "phi", "95%", "CI", "zeta", "95%", "CI", "p-value"]


def test_simulate_report(tmp_path):
    out = tmp_path / "s.json"
    assert cli.run(["simulate", "--n", "400", "--reps", "3", "--estimators", "IPW,DR",
                    "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["results"]["scenario"]["replications"] == 3
    assert set(doc["results"]["summaries"]) == {"IV_IPW", "IV_DR"}
    assert doc["config"]["seed"] == 0


def test_identify_reproduces_example(tmp_path):
    out = tmp_path / "i.json"
    assert cli.run(["identify", "--output", str(out)]) == 0
    doc = json.loads(out.read_text())["results"]
    np.testing.assert_allclose(doc["saturated_example"]["equivalent"], (-0.3, 0.41, 0.91, 1.37, -0.28),
                               atol=5e-3)
    assert doc["no_interaction_probe"]["all_violated"]
    assert doc["no_interaction_grid_search"]["identified"]
