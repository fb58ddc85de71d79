import json

import pytest

from splap.cli import main
from splap.files import read_fields


def _cfg(tmp_path, **over):
    doc = {"output": str(tmp_path / "out"), "model": {"n_steps": 20}}
    for k, v in over.items():
        doc.setdefault(k, {}).update(v) if isinstance(v, dict) else doc.__setitem__(k, v)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    return path


def test_simulate_and_skeleton(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "simulate_ledger.csv").read_text().startswith("step,t,l2_before")
    assert read_fields(out / "simulate_fields.bin").shape == (21, 31)
    assert main(["skeleton", "--config", str(cfg), "--out", str(tmp_path / "o2")]) == 0
    assert (tmp_path / "o2" / "skeleton_ledger.csv").exists()


def test_outputs_are_byte_identical(tmp_path):
    cfg = _cfg(tmp_path)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
    for name in ("simulate_ledger.csv", "simulate_fields.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_rate_contraction_ldp_tci(tmp_path):
    cfg = _cfg(
        tmp_path,
        rate={"target": {"kind": "scaled_terminal", "factor": 1.2}, "lambda_ladder": [10, 100]},
        ldp={"M": 40, "epsilons": [0.5, 0.25], "lambda_ladder": [10]},
        tci={"M": 4, "model": {"n_steps": 10}, "drift_suite": [{"id": "c", "shape": "constant", "scales": [1, 2]}]},
        contraction={"model": {"n_steps": 10}},
    )
    out = tmp_path / "out"
    for cmd in ("rate", "contraction", "ldp", "tci"):
        assert main([cmd, "--config", str(cfg), "--threads", "2"]) == 0, cmd
    assert (out / "rate.csv").read_text().startswith("i_value,")
    assert (out / "rate_control.csv").read_text().startswith("k,t_k,value")
    assert (out / "contraction.csv").read_text().startswith("k,t,l1_gap,envelope")
    assert (out / "ldp.csv").read_text().startswith("epsilon,p_hat")
    assert "C_emp=" in (out / "tci.csv").read_text()


def test_bad_p_exits_1(tmp_path, capsys):
    cfg = _cfg(tmp_path, model={"p": 1.5})
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "model.p" in capsys.readouterr().err


def test_tci_linear_h_exits_1(tmp_path, capsys):
    cfg = _cfg(tmp_path, tci={"model": {"h_family": "linear", "h_param": 1.0}})
    assert main(["tci", "--config", str(cfg)]) == 1
    assert "bounded diffusion coefficient" in capsys.readouterr().err


def test_solver_failure_exits_2(tmp_path, capsys):
    cfg = _cfg(tmp_path, newton={"max_iters": 1, "residual_tol": 1e-300})
    assert main(["skeleton", "--config", str(cfg)]) == 2
    assert "step=0" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 1


@pytest.mark.slow
def test_validate_default_config(tmp_path, capsys):
    assert main(["validate", "--config", "configs/default.json", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "validate.txt").read_text()
    assert text.count("PASS") == 6 and "FAIL" not in text
