import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gwformation import cli
from gwformation.errors import InputError, NumericError
from gwformation.harness import (
    DEFAULTS,
    ExperimentReport,
    certify_report,
    cluster_diagnostics,
    dumps_json,
    exit_code_for,
    export,
    grouping_experiment,
    load_config,
    run_experiment,
    sample_uniform,
    sweep_epsilon,
)
from gwformation.mmspace import GroupSpec

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, "..", "configs")
SMALL = os.path.join(CONFIGS, "small.json")
REPLICA = os.path.join(CONFIGS, "replica.json")

DYNAMICS = {"A": [[0.5, 0.2], [0.1, 0.4]], "B": [[1.0, 0.0], [0.0, 1.0]]}


def _minimal(**extra):
    d = {
        "system": DYNAMICS,
        "initial_cloud": {"points": [[-14.0, 0.0], [-13.0, 1.0], [-12.5, -1.0]]},
        "target": {"shape": {"kind": "circle", "count": 3, "radius": 3.0}},
    }
    d.update(extra)
    return d


def _two_singletons():
    return {
        "system": {"A": [[0.5]], "B": [[1.0]]},
        "initial_cloud": {"points": [[-1.0], [1.0]]},
        "metric": {"mode": "graph_groups", "cost": "squared_euclidean", "group_of": [0, 1],
                   "intra_weight": 2.0, "inter_weight": 4.0},
    }


def test_minimal_config_echoes_defaults():
    cfg = load_config(_minimal())
    assert cfg.horizon == DEFAULTS["horizon"]
    assert cfg.data["solver"] == DEFAULTS["solver"]
    assert cfg.data["outer"] == DEFAULTS["outer"]
    assert cfg.data["metric"]["cost"] == "euclidean"
    np.testing.assert_array_equal(cfg.R, np.eye(2))
    assert cfg.N == 3 and cfg.d == 2


def test_replica_config_is_valid():
    cfg = load_config(REPLICA)
    assert cfg.N == 10 and cfg.horizon == 10
    np.testing.assert_array_equal(cfg.system.A, DYNAMICS["A"])
    X = cfg.initial_points()
    assert np.all((X[:, 0] >= -15) & (X[:, 0] <= -12) & (np.abs(X[:, 1]) <= 2))


def test_count_mismatch_is_named():
    bad = _minimal(target={"shape": {"kind": "circle", "count": 4, "radius": 3.0}})
    with pytest.raises(InputError, match="target"):
        load_config(bad)


def test_unknown_key_is_rejected():
    with pytest.raises(InputError, match="additionalProperties"):
        load_config(_minimal(colour="red"))


def test_schema_violation_names_field_and_constraint():
    with pytest.raises(InputError, match=r"horizon: minimum"):
        load_config(_minimal(horizon=0))


def test_unsorted_eps_list():
    with pytest.raises(InputError, match="eps_list"):
        load_config(_minimal(eps_list=[1.0, 0.5]))


def test_sampler_is_reproducible():
    a = sample_uniform([-15, -2], [-12, 2], 10, 3)
    b = sample_uniform([-15, -2], [-12, 2], 10, 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_uniform([-15, -2], [-12, 2], 10, 4))


def test_run_is_bit_identical():
    cfg = load_config(SMALL)
    a, b = run_experiment(cfg), run_experiment(cfg)
    da, db = a.to_dict(), b.to_dict()
    da.pop("metadata"), db.pop("metadata")
    assert dumps_json(da) == dumps_json(db)


def test_report_round_trip(tmp_path):
    rep = run_experiment(load_config(SMALL))
    path = tmp_path / "r.json"
    rep.save(path)
    back = ExperimentReport.load(path)
    assert back.dumps() == rep.dumps()
    assert back.runs[0]["J"] == rep.runs[0]["J"]


def test_certify_recomputes_stored_solution():
    rows = certify_report(run_experiment(load_config(SMALL)))
    assert all(r["consistent"] for r in rows)


def test_single_eps_sweep_equals_run():
    cfg = load_config(SMALL)
    s = sweep_epsilon(cfg, [0.5])
    r = run_experiment(cfg, 0.5)
    assert s.runs[0]["J"] == r.runs[0]["J"]
    np.testing.assert_array_equal(s.runs[0]["xd"], r.runs[0]["xd"])


def test_sweep_trend_and_large_eps_row():
    s = sweep_epsilon(load_config(SMALL), [0.1, 0.5, 1.0, 2.5, 1000.0])
    assert s.summary == {"complete": True, "control_cost_nonincreasing": True,
                         "gw_distance_nondecreasing": True, "extremes_strict": True}
    gw = [row["gw_distance"] for row in s.sweep]
    assert gw[-1] > max(gw[:-1])
    x0s = [np.asarray(r["x0"]) for r in s.runs]
    for x in x0s[1:]:
        np.testing.assert_array_equal(x, x0s[0])


def test_two_singleton_groups_closed_form():
    # scalar x+ = x/2 + u, T = 10, symmetric destinations +-y; derived by 1-D minimization
    rep = grouping_experiment(load_config(_two_singletons()))
    x = np.asarray(rep.runs[0]["xd"]).ravel()
    assert x[1] == pytest.approx(-x[0], abs=1e-6)
    assert abs(x[0]) == pytest.approx(0.9520220926438988, abs=1e-5)
    assert (x[0] - x[1]) ** 2 == pytest.approx(3.625384259528273, abs=1e-4)
    assert rep.runs[0]["J"] == pytest.approx(0.7134505854978748, abs=1e-7)


def test_single_group_is_one_cluster():
    cfg = load_config({
        "system": DYNAMICS,
        "initial_cloud": {"sampler": {"low": [-15, -2], "high": [-12, 2], "count": 3}},
        "metric": {"mode": "graph_groups", "group_of": [0, 0, 0], "intra_weight": 2.0, "inter_weight": 4.0},
    })
    rep = grouping_experiment(cfg)
    assert rep.summary["clusters"]["n_clusters"] == 1
    from scipy.spatial.distance import pdist
    dist = pdist(np.asarray(rep.runs[0]["xd"]))
    assert dist.max() / dist.min() < 1.2  # near-equilateral


def test_cluster_diagnostics_follow_assignment():
    spec = GroupSpec([0, 0, 1, 1], 2.0, 4.0)
    X = np.array([[0.0, 0.0], [10.0, 0.0], [0.5, 0.0], [10.5, 0.0]])
    # agents 0 and 2 sit together, so they must carry the same group label
    out = cluster_diagnostics(X, spec, "euclidean", assignment=[0, 2, 1, 3])
    assert out["n_clusters"] == 2 and out["clusters_match_groups"]
    assert not cluster_diagnostics(X, spec, "euclidean")["clusters_match_groups"]


def test_export_headers_only_for_empty_report(tmp_path):
    rep = ExperimentReport("sweep", load_config(SMALL).data, [], [], {}, {})
    paths = export(rep, "csv", tmp_path)
    for p in paths:
        with open(p) as fh:
            assert len(fh.read().splitlines()) == 1


def test_export_row_count_small(tmp_path):
    rep = run_experiment(load_config(SMALL))
    path = export(rep, "csv", tmp_path)[0]
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["run_id", "agent", "t"]
    assert len(rows) - 1 == 4 * 11


@pytest.mark.slow
def test_export_row_count_replica(tmp_path):
    rep = run_experiment(load_config(REPLICA).with_overrides(max_iters=1))
    path = export(rep, "csv", tmp_path)[0]
    with open(path) as fh:
        assert len(fh.read().splitlines()) - 1 == 110


def test_export_to_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rep = ExperimentReport("run", load_config(SMALL).data, [], [], {}, {})
    with pytest.raises(OSError):
        export(rep, "csv", blocker / "sub")


def test_exit_codes():
    from gwformation.errors import InfeasibleError, InternalSolverError
    assert exit_code_for(InfeasibleError("x", 0)) == 2
    assert exit_code_for(NumericError("x")) == 3
    assert exit_code_for(InternalSolverError("x")) == 3
    assert exit_code_for(InputError("x")) == 1


def _cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "gwformation", *args], capture_output=True, text=True, cwd=cwd)


def test_cli_run_certify_export(tmp_path):
    out = _cli("run", SMALL, "--seed", "1", "--out", str(tmp_path))
    assert out.returncode == 0, out.stderr
    rep = tmp_path / "report.json"
    assert _cli("certify", str(rep)).returncode == 0
    res = _cli("export", str(rep), "--format", "csv", "--out", str(tmp_path / "csv"))
    assert res.returncode == 0
    assert sorted(os.listdir(tmp_path / "csv")) == ["certificates.csv", "sweep.csv", "trajectories.csv"]
    assert json.loads(rep.read_text())["config"]["seed"] == 1


def test_cli_invalid_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(_minimal(colour="red")))
    res = _cli("run", str(bad), "--out", str(tmp_path))
    assert res.returncode == 1
    assert "colour" in res.stderr


def test_cli_infeasible_exit_code(tmp_path):
    # unstable scalar drift leaves the state box and the controls are too weak to hold it
    cfg = {
        "system": {"A": [[2.0]], "B": [[1.0]]},
        "boxes": {"state": 20.0, "control": 0.01, "terminal": 20.0},
        "initial_cloud": {"points": [[15.0], [14.0]]},
        "target": {"points": [[0.0], [1.0]]},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert _cli("run", str(path), "--out", str(tmp_path)).returncode == 2


def test_cli_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg, eps=None):
        raise NumericError("did not converge")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", SMALL, "--out", str(tmp_path)]) == 3
