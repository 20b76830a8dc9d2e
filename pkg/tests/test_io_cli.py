import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opra import LoggedDataset, TabularPolicy, fixture, sample_dataset
from opra.cli import main
from opra.io import (
    FormatError,
    read_classification_csv,
    read_dataset_csv,
    read_policy_json,
    write_classification_csv,
    write_dataset_csv,
    write_policy_json,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 12).flatmap(
        lambda n: st.tuples(
            st.lists(st.lists(finite, min_size=2, max_size=2), min_size=n, max_size=n),
            st.lists(st.integers(0, 2), min_size=n, max_size=n),
            st.lists(st.floats(0.0, 2.0), min_size=n, max_size=n),
            st.lists(st.floats(1e-6, 1.0), min_size=n, max_size=n),
        )
    )
)
def test_dataset_csv_round_trip(tmp_path_factory, cols):
    x, a, r, p = cols
    ds = LoggedDataset(x, a, r, 2.0, 3, p)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset_csv(ds, path)
    back = read_dataset_csv(path, 2.0, 3)
    np.testing.assert_array_equal(back.contexts, ds.contexts)
    np.testing.assert_array_equal(back.actions, ds.actions)
    np.testing.assert_array_equal(back.rewards, ds.rewards)
    np.testing.assert_array_equal(back.propensities, ds.propensities)


def test_csv_line_endings_and_policy_round_trip(tmp_path, e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 20, seed=3)
    write_dataset_csv(ds, tmp_path / "d.csv")
    assert b"\r\n" not in (tmp_path / "d.csv").read_bytes()
    write_policy_json(pi, tmp_path / "p.json")
    back = read_policy_json(tmp_path / "p.json")
    np.testing.assert_array_equal(back.probabilities(env.context_features), pi.probabilities(env.context_features))


def test_classification_csv_round_trip(tmp_path):
    x = np.array([[0.5, 1.0], [-2.0, 3.25]])
    y = np.array([1, 0])
    write_classification_csv(x, y, tmp_path / "c.csv")
    bx, by = read_classification_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(bx, x)
    np.testing.assert_array_equal(by, y)


def test_malformed_dataset_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,action,reward\n0.0,0,0.5\n0.0,x,0.5\n")
    with pytest.raises(FormatError, match="line 3"):
        read_dataset_csv(path)


@pytest.fixture
def e1_files(tmp_path, e1):
    _, pi, beta = e1
    ds = LoggedDataset([[0.0], [0.0]], [0, 1], [0.0, 1.0], 1.0, 2)
    write_dataset_csv(ds, tmp_path / "e1.csv")
    write_policy_json(pi, tmp_path / "pi.json")
    write_policy_json(beta, tmp_path / "beta.json")
    return tmp_path


def _assess(d, *extra):
    return main(["assess", "--data", str(d / "e1.csv"), "--target", str(d / "pi.json"), *extra])


def test_assess_e1_three_entries(e1_files):
    d = e1_files
    rc = _assess(d, "--behavior", str(d / "beta.json"), "--estimator", "is-clip", "--band", "hoeffding",
                 "--delta", "0.1", "--risks", "mean,cvar:0.5,variance", "--out", str(d / "r.json"))
    assert rc == 0
    report = json.loads((d / "r.json").read_text())
    eps = report["band"]["epsilon"]
    assert [e["name"] for e in report["risks"]] == ["mean", "cvar_0.5", "variance"]
    for entry, value, lip in zip(report["risks"], (0.8, 0.6, 0.16), (1, 2, 3)):
        assert entry["estimate"] == pytest.approx(value, abs=1e-12)
        assert entry["lipschitz"] == lip
        assert entry["half_width"] == pytest.approx(lip * eps, abs=1e-15)
    assert (d / "r.txt").exists()
    manifest = json.loads((d / "r.json.manifest.json").read_text())
    assert report["metadata"]["manifest"] == "r.json.manifest.json"
    assert set(manifest) >= {"config", "seed", "version", "created", "inputs", "outputs"}
    assert str(d / "e1.csv") in manifest["inputs"]


def test_assess_var_has_null_half_width(e1_files):
    d = e1_files
    assert _assess(d, "--behavior", str(d / "beta.json"), "--risks", "var:0.5", "--out", str(d / "r.json")) == 0
    assert '"half_width": null' in (d / "r.json").read_text()


def test_assess_unresolved_behavior(e1_files, capsys):
    assert _assess(e1_files) == 2
    assert "behavior source unresolved" in capsys.readouterr().err


def test_assess_absolute_continuity_exit_3(tmp_path, capsys):
    ds = LoggedDataset([[0.0], [0.0], [0.0]], [0, 0, 1], [0.0, 0.5, 1.0], 1.0, 2)
    write_dataset_csv(ds, tmp_path / "e1.csv")
    write_policy_json(TabularPolicy({(0.0,): [0.5, 0.5]}), tmp_path / "pi.json")
    write_policy_json(TabularPolicy({(0.0,): [1.0, 0.0]}), tmp_path / "beta.json")
    assert _assess(tmp_path, "--behavior", str(tmp_path / "beta.json")) == 3
    assert "row 2" in capsys.readouterr().err


def test_assess_bad_config_exit_2(e1_files):
    d = e1_files
    assert _assess(d, "--behavior", str(d / "beta.json"), "--band", "dr") == 2
    assert _assess(d, "--behavior", str(d / "beta.json"), "--risks", "cvar:1.5") == 2


def test_sweep_row_count_and_determinism(tmp_path):
    args = ["sweep", "--env", "e2", "--ns", "50,100", "--reps", "3", "--estimators", "is-clip,wis,dm,dr",
            "--delta", "0.1", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(a.decode().splitlines()))
    assert len(rows) == 2 * 3 * 4
    assert list(rows[0])[:5] == ["n", "rep", "estimator", "sup_err", "band_eps"]
    assert (tmp_path / "a.csv.manifest.json").exists()


def _toy_classification(path, n=60, k=2, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, k, n)
    x = np.column_stack([y + rng.normal(0, 0.7, n), rng.normal(0, 1, n)])
    write_classification_csv(np.round(x, 1), y, path)


def test_sweep_alpha_grid(tmp_path):
    _toy_classification(tmp_path / "c.csv", k=3)
    rc = main(["sweep", "--data", str(tmp_path / "c.csv"), "--ns", "40", "--reps", "2", "--estimators",
               "is-clip,dr", "--alpha-grid", "0.05,0.1,0.3,0.5,1.0", "--out", str(tmp_path / "s.csv")])
    assert rc == 0
    rows = list(csv.DictReader((tmp_path / "s.csv").read_text().splitlines()))
    assert len(rows) == 5 * 2 * 2
    assert sorted({float(r["alpha"]) for r in rows}) == [0.05, 0.1, 0.3, 0.5, 1.0]


def test_make_bandit_mixture_bounds(tmp_path):
    _toy_classification(tmp_path / "c.csv")
    assert main(["make-bandit", "--data", str(tmp_path / "c.csv"), "--alpha", "0.5", "--seed", "1",
                 "--out-dir", str(tmp_path)]) == 0
    ds = read_dataset_csv(tmp_path / "dataset.csv")
    assert ds.propensities is not None
    assert np.all((ds.propensities >= 0.25) & (ds.propensities <= 0.75))
    assert (tmp_path / "manifest.json").exists()


def test_make_bandit_alpha_one_copies_target(tmp_path):
    _toy_classification(tmp_path / "c.csv")
    assert main(["make-bandit", "--data", str(tmp_path / "c.csv"), "--alpha", "1", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "behavior.json").read_bytes() == (tmp_path / "target.json").read_bytes()


def test_make_bandit_errors(tmp_path, capsys):
    (tmp_path / "nolabel.csv").write_text("f0,f1\n1,2\n")
    assert main(["make-bandit", "--data", str(tmp_path / "nolabel.csv"), "--alpha", "0.5"]) == 2
    (tmp_path / "bad.csv").write_text("f0,label\n1.0,0\n2.0\n3.0,1\n")
    assert main(["make-bandit", "--data", str(tmp_path / "bad.csv"), "--alpha", "0.5"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_fixtures_listing(capsys):
    assert main(["fixtures"]) == 0
    out = capsys.readouterr().out
    assert "e1:" in out and "e2:" in out


def test_fixtures_export_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert main(["fixtures", "--export", "e2", "--n", "30", "--seed", "4", "--out-dir", str(tmp_path / sub)]) == 0
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()
    env, _, _ = fixture("e2")
    assert read_dataset_csv(tmp_path / "a" / "data.csv").n == 30
