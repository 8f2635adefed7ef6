import json

import numpy as np
import pytest

import hwplan


def test_basis_shapes_and_derivatives():
    b = hwplan.build_basis(10, 50, 10.0)
    assert b.W.shape == (50, 11)
    assert b.times[0] == 0.0 and b.times[-1] == pytest.approx(10.0)
    # Finite differences of W against Wdot on a fine grid.
    b = hwplan.build_basis(10, 2001, 10.0)
    h = b.times[1] - b.times[0]
    fd = (b.W[2:] - b.W[:-2]) / (2 * h)
    assert np.allclose(fd, b.Wdot[1:-1], atol=1e-3 * np.abs(b.Wdot).max())


def test_qp_meets_initial_conditions():
    b = hwplan.build_basis()
    params = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 2.0], [0.0, 2.0],
                       [20.0, 25.0], [20.0, 25.0], [20.0, 25.0], [20.0, 25.0]])
    init = hwplan.InitialState(y=0.5, vx=20.0)
    xi = hwplan.solve_qp_batch(b, params, 4, init)
    assert xi.shape == (22, 2)
    for j in range(2):
        s = hwplan.eval_trajectory(b, xi[:, j])
        assert s["x"][0] == pytest.approx(0.0, abs=1e-9)
        assert s["y"][0] == pytest.approx(0.5, abs=1e-9)
        assert s["xdot"][0] == pytest.approx(20.0, abs=1e-9)


def test_bad_arguments_raise_value_error():
    with pytest.raises(ValueError):
        hwplan.build_basis(10, 50, 10.0, "chebyshev")
    with pytest.raises(ValueError):
        hwplan.solve_qp_batch(hwplan.build_basis(), np.zeros((3, 1)))


def test_episode_on_empty_road():
    sc = json.loads(hwplan.scenario_defaults())
    sc.update(vehicle_count=0, episode_length=20, ego_speed=25.0)
    light = json.dumps({"batch_size": 40, "constraint_elite": 8, "elite": 4, "iterations": 1})
    r = hwplan.run_episode(json.dumps(sc), "mpc-vanilla", light)
    assert not r["collision"]
    assert r["steps"] == 20
    lines = r["log"].strip().splitlines()
    assert all(json.loads(l) for l in lines)


def test_suite_is_deterministic():
    suite = {
        "episodes_per_cell": 2,
        "base_seed": 3,
        "planner_defaults": {"batch_size": 40, "constraint_elite": 8, "elite": 4, "iterations": 1},
        "scenarios": [{"name": "short", "vehicle_count": 6, "episode_length": 15}],
        "planners": [{"name": "throttle", "kind": "full-throttle"}, {"name": "vanilla", "kind": "mpc-vanilla"}],
    }
    a = hwplan.run_suite(json.dumps(suite))
    b = hwplan.run_suite(json.dumps(suite))
    assert a["metrics_csv"] == b["metrics_csv"]
    assert len(a["metrics_csv"].strip().splitlines()) == 3
    assert json.loads(a["manifest"])["seeds"] == [3, 4]


def test_trace_and_kinds():
    assert "mpc-bilevel" in hwplan.planner_kinds()
    t = hwplan.convergence_trace(100, 20, 5, 2, 0.9, 1)
    assert [r["iteration"] for r in t] == [0, 1] or [r["iteration"] for r in t] == [1, 2]
    assert t[1]["cov_trace"] < t[0]["cov_trace"]
    assert hwplan.content_hash("") == "cbf29ce484222325"
