import json
import subprocess
import sys

import numpy as np
import pytest

from ncrsm.acceptance import stabilized_example1
from ncrsm.cli import main
from ncrsm.io import load_params, save_params
from ncrsm.metrics import param_error
from ncrsm.model import ModelParams, example1_params


@pytest.fixture
def stab_config(tmp_path):
    save_params(stabilized_example1(), tmp_path / "model.json")
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"model": "model.json", "T": 600, "seed": 3}))
    return cfg


def test_simulate_writes_outputs(tmp_path, stab_config):
    assert main(["simulate", "--config", str(stab_config), "--out", str(tmp_path / "run")]) == 0
    for suffix in (".csv", ".truth.json", ".manifest.json"):
        assert (tmp_path / ("run" + suffix)).exists()
    man = json.loads((tmp_path / "run.manifest.json").read_text())
    assert man["seeds"] == {"seed": 3}
    assert str(stab_config) in man["input_hashes"]
    assert man["assumptions"]["boundary_states"] == "zero where not given"
    assert load_params(tmp_path / "run.truth.json").allclose(stabilized_example1())


def test_simulate_reproducible_and_seed_override(tmp_path, stab_config, monkeypatch):
    main(["simulate", "--config", str(stab_config), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(stab_config), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    monkeypatch.setenv("NCRSM_SEED", "4")
    main(["simulate", "--config", str(stab_config), "--out", str(tmp_path / "c")])
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_identify_evaluate_smooth(tmp_path, stab_config):
    main(["simulate", "--config", str(stab_config), "--out", str(tmp_path / "run")])
    idc = tmp_path / "id.json"
    idc.write_text(json.dumps({"em": {"restarts": 2, "max_iters": 20, "ascent_guard": True}, "seed": 1}))
    code = main(["identify", "--data", str(tmp_path / "run.csv"), "--dims", "1,2,2,2,2",
                 "--config", str(idc), "--out", str(tmp_path / "est")])
    assert code == 0
    rep = json.loads((tmp_path / "est.report.json").read_text())
    assert rep["stop_reason"] in ("converged", "max-iters")
    man = json.loads((tmp_path / "est.manifest.json").read_text())
    assert man["config"]["seed"] == 1 and man["stop_reason"] == rep["stop_reason"]

    code = main(["evaluate", "--truth", str(tmp_path / "run.truth.json"), "--estimate",
                 str(tmp_path / "est.params.json"), "--data", str(tmp_path / "run.csv"),
                 "--out", str(tmp_path / "m.csv")])
    assert code == 0
    metrics = (tmp_path / "m.csv").read_text()
    for key in ("err_inf_A_c", "match_rate_c", "delta_a"):
        assert key in metrics

    code = main(["smooth", "--data", str(tmp_path / "run.csv"), "--model", str(tmp_path / "est.params.json"),
                 "--out", str(tmp_path / "s.csv")])
    assert code == 0
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "t,yhat_1,xc_hat_1,xc_hat_2,xa_hat_1,xa_hat_2,sc_hat,sa_hat"


def test_smooth_constant_series(tmp_path):
    p = ModelParams(A_c=[[[0.9]]], A_a=[[[0.9]]], C_c=[[[1.0]]], C_a=[[[1.0]]],
                    Sigma_c=[[[0.1]]], Sigma_a=[[[0.1]]], Sigma_m=[[0.01]], pi_c=[1.0], pi_a=[1.0])
    save_params(p, tmp_path / "m.json")
    (tmp_path / "c.csv").write_text("t,y_1\n" + "".join(f"{t},3.0\n" for t in range(1, 201)))
    assert main(["smooth", "--data", str(tmp_path / "c.csv"), "--model", str(tmp_path / "m.json"),
                 "--out", str(tmp_path / "s.csv")]) == 0
    out = np.genfromtxt(tmp_path / "s.csv", delimiter=",", names=True)
    assert np.abs(out["yhat_1"] - 3.0).max() <= np.sqrt(0.01)


def test_invalid_input_exit_code(tmp_path):
    (tmp_path / "bad.csv").write_text("t,y_1\n1,x\n")
    assert main(["identify", "--data", str(tmp_path / "bad.csv"), "--dims", "1,1,1,1,1",
                 "--out", str(tmp_path / "o")]) == 1
    assert main(["identify", "--data", str(tmp_path / "missing.csv"), "--dims", "1,1,1,1,1",
                 "--out", str(tmp_path / "o")]) == 1


def test_divergence_exit_code(tmp_path):
    cfg = tmp_path / "ex1.json"
    cfg.write_text(json.dumps({"example": {"name": "example1"}, "T": 10_000, "seed": 0}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "ex1")]) == 2


def test_example1_config_meets_identification_errors(tmp_path):
    cfg = tmp_path / "ex1.json"
    cfg.write_text(json.dumps({"example": {"name": "example1"}, "T": 10_000, "seed": 0}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "ex1")]) == 0
    assert main(["identify", "--data", str(tmp_path / "ex1.csv"), "--dims", "1,2,2,2,2",
                 "--out", str(tmp_path / "est")]) == 0
    err = param_error(example1_params(), load_params(tmp_path / "est.params.json"))
    assert max(err.A_c.max(), err.A_a.max()) <= 0.10
    assert max(err.C_c.max(), err.C_a.max()) <= 0.08
    assert err.Sigma_m <= 0.10 and err.pi_c <= 0.03


def test_benchmark_single_criterion(capsys):
    assert main(["benchmark", "--suite", "A9"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("A9: PASS")
    assert "1/1 criteria passed" in out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ncrsm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "identify", "evaluate", "smooth", "benchmark"):
        assert cmd in res.stdout
