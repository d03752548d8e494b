import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncrsm.acceptance import random_model, stabilized_example1
from ncrsm.em import EmConfig, run
from ncrsm.io import (
    ParseError,
    dumps,
    load_config,
    load_params,
    model_from_config,
    params_from_dict,
    params_to_dict,
    read_trajectory,
    save_params,
    save_report,
    write_trajectory,
    SIM_KEYS,
)
from ncrsm.simulate import Trajectory, simulate_model


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_params_round_trip_bytes(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("p")
    p = random_model(seed)
    save_params(p, d / "a.json")
    q = load_params(d / "a.json")
    save_params(q, d / "b.json")
    assert (d / "a.json").read_bytes() == (d / "b.json").read_bytes()
    assert q.allclose(p)


def test_params_modes_one_based():
    obj = params_to_dict(stabilized_example1())
    assert [m["mode"] for m in obj["A_c"]] == [1, 2]


def test_params_reject_unknown_key():
    obj = params_to_dict(stabilized_example1())
    obj["extra"] = 1
    with pytest.raises(ValueError):
        params_from_dict(obj)


def test_params_reject_nan():
    p = stabilized_example1()
    obj = params_to_dict(p)
    obj["Sigma_m"]["data"] = [[float("nan")]]
    with pytest.raises(ValueError):
        dumps(obj)


def test_bad_json_location(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{\n  "format": "ncrsm-params",\n  oops\n}')
    with pytest.raises(ParseError) as exc:
        load_params(f)
    assert exc.value.line == 3


def test_trajectory_round_trip(tmp_path):
    tr = simulate_model(random_model(4), 120, seed=4, x_c0=None)
    write_trajectory(tr, tmp_path / "t.csv")
    back = read_trajectory(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.y, tr.y)
    np.testing.assert_array_equal(back.x_c_true, tr.x_c_true)
    np.testing.assert_array_equal(back.x_a_true, tr.x_a_true)
    np.testing.assert_array_equal(back.seq_true.s_c, tr.seq_true.s_c)
    np.testing.assert_array_equal(back.seq_true.s_a, tr.seq_true.s_a)
    np.testing.assert_array_equal(back.x_c0, tr.x_c0)


def test_outputs_only(tmp_path):
    f = tmp_path / "y.csv"
    f.write_text("t,y_1\n1,0.5\n2,-1.25\n3,2\n")
    tr = read_trajectory(f, n_xc=2, n_xa=1)
    assert tr.x_c_true is None and tr.seq_true is None and not tr.has_truth
    np.testing.assert_array_equal(tr.y[:, 0], [0.5, -1.25, 2.0])
    np.testing.assert_array_equal(tr.x_c0, [0.0, 0.0])
    assert tr.x_aT1.shape == (1,)


@pytest.mark.parametrize("body,line,col", [
    ("t,y_1\n1,0.5\n2\n", 3, None),
    ("t,y_1\n1,0.5\n2,abc\n", 3, 2),
    ("t,y_1\n1,nan\n", 2, 2),
    ("t,y_1\n1,0.5\n3,0.1\n", 3, 1),
    ("t,y_1,z\n1,0.5,1\n", 1, None),
])
def test_parse_errors_have_location(tmp_path, body, line, col):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    with pytest.raises(ParseError) as exc:
        read_trajectory(f, 1, 1)
    assert exc.value.line == line
    assert exc.value.column == col


def test_large_file_parses_quickly(tmp_path):
    y = np.random.default_rng(0).normal(size=(10_000, 1))
    write_trajectory(Trajectory(y=y, x_c0=np.zeros(1), x_aT1=np.zeros(1)), tmp_path / "big.csv")
    t0 = time.perf_counter()
    tr = read_trajectory(tmp_path / "big.csv")
    assert time.perf_counter() - t0 < 1.0
    assert tr.T == 10_000


def test_config_unknown_key(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"example": {"name": "example1"}, "T": 10, "colour": 1}))
    with pytest.raises(ParseError):
        load_config(f, SIM_KEYS)


def test_config_example_and_file(tmp_path):
    assert model_from_config({"example": {"name": "example1", "sigma": 0.5}}).Sigma_c[0, 0, 0] == 0.5
    save_params(stabilized_example1(), tmp_path / "m.json")
    p = model_from_config({"model": "m.json"}, tmp_path)
    assert p.allclose(stabilized_example1())
    with pytest.raises(ValueError):
        model_from_config({"model": "m.json", "example": {"name": "example1"}}, tmp_path)


def test_report_is_valid_json(tmp_path):
    p = stabilized_example1()
    tr = simulate_model(p, 300, seed=0)
    rep = run(tr.y, (tr.x_c0, tr.x_aT1), p.dims, EmConfig(restarts=1, max_iters=3))
    save_report(rep, tmp_path / "r.json")
    obj = json.loads((tmp_path / "r.json").read_text())
    assert obj["stop_reason"] in ("converged", "max-iters", "divergence")
    assert obj["final_loglik"] == rep.final_loglik
    assert min(obj["s_c_hat"]) >= 1
