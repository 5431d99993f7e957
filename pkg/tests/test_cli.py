import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nladc import cli

DATA = Path(__file__).parent / "data"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path, command, cfg=None, out="out", extra=()):
    args = [command, "--out-dir", str(tmp_path / out)]
    if cfg is not None:
        args += ["--config", write_cfg(tmp_path, cfg, f"{command}-{out}.json")]
    return cli.run(args + list(extra))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# synth


def test_synth_sigmoid_matches_table(tmp_path):
    assert run(tmp_path, "synth", {"activation": {"name": "sigmoid", "bits": 5}}) == 0
    rows = read_csv(tmp_path / "out" / "conductances.csv")
    table = read_csv(DATA / "step_table.csv")
    assert len(rows) == 32
    for r, t in zip(rows, table):
        assert float(r["dV_k"]) == pytest.approx(float(t["sigmoid_dv"]), abs=1e-3)
    assert max(float(r["G_adc_k"]) for r in rows) == 150.0
    summary = json.loads((tmp_path / "out" / "synth.json").read_text())
    assert summary["sram_cells_total"] == 58
    bias = read_csv(tmp_path / "out" / "bias.csv")
    assert all(float(b["G_bias_uS"]) <= 150 for b in bias)


def test_synth_identity_constant_steps(tmp_path):
    assert run(tmp_path, "synth", {"activation": {"name": "identity"}}) == 0
    dv = np.array([float(r["dV_k"]) for r in read_csv(tmp_path / "out" / "conductances.csv")])
    np.testing.assert_allclose(dv, 1 / 34, rtol=0, atol=1e-15)


def test_synth_unknown_activation(tmp_path, capsys):
    assert run(tmp_path, "synth", {"activation": {"name": "mish"}}) == 2
    assert "activation.name" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_synth_bad_grid(tmp_path, capsys):
    assert run(tmp_path, "synth", {"activation": {"name": "sigmoid", "bits": 3, "grid": [0.5] * 9}}) == 2
    assert "activation.grid" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,field", [
    ({"activation": {"nme": "sigmoid"}}, "activation.nme"),
    ({"activation": {"bits": "five"}}, "activation.bits"),
    ({"plotting": {}}, "plotting"),
    ({"seed": -1}, "seed"),
    ({"seed": 2 ** 64}, "seed"),
    ({"crossbar": {"v_reads": []}}, "crossbar.v_reads"),
    ({"train": {"task": "copy"}}, "train.task"),
    ({"device": {"write_sigma": -1}}, "device.write_sigma"),
])
def test_config_errors_name_field(tmp_path, capsys, cfg, field):
    assert run(tmp_path, "synth", cfg) == 2
    assert f"'{field}'" in capsys.readouterr().err


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.run(["synth", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2


def test_missing_config_file(tmp_path):
    assert cli.run(["synth", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)]) == 3


# ---------------------------------------------------------------------------
# sweep


def test_sweep_noise_free_and_deterministic(tmp_path):
    assert run(tmp_path, "sweep-vread", {}, out="a") == 0
    rows = read_csv(tmp_path / "a" / "sweep_vread.csv")
    nl = [r for r in rows if r["system"] == "nladc"]
    assert [r["max_inl_lsb"] for r in nl] == ["0"] * 5
    conv = {r["v_read"]: float(r["max_inl_lsb"]) for r in rows if r["system"] == "conventional"}
    assert 3 <= conv["0.25"] <= 7
    cfg = {"device": {"write_sigma": 2.67, "read_sigma": 3.5}, "seed": 11}
    assert run(tmp_path, "sweep-vread", cfg, out="b") == 0
    assert run(tmp_path, "sweep-vread", cfg, out="c") == 0
    assert (tmp_path / "b" / "sweep_vread.csv").read_bytes() == (tmp_path / "c" / "sweep_vread.csv").read_bytes()
    assert b"\r" not in (tmp_path / "b" / "sweep_vread.csv").read_bytes()


# ---------------------------------------------------------------------------
# cost


def test_cost_macro(tmp_path):
    assert run(tmp_path, "cost", {"cost": {"scenario": "nladc_kws_macro"}}) == 0
    rep = json.loads((tmp_path / "out" / "cost.json").read_text())
    assert rep["energy_eff_TOPS_per_W"] == pytest.approx(33.04, rel=0.01)


def test_cost_system(tmp_path):
    assert run(tmp_path, "cost", {"cost": {"scenario": "nladc_kws_system"}}) == 0
    rep = json.loads((tmp_path / "out" / "cost.json").read_text())
    assert rep["energy_eff_TOPS_per_W"] == pytest.approx(31.33, rel=0.05)


def test_cost_empty_db(tmp_path):
    db = tmp_path / "empty.csv"
    db.write_text("architecture,layer,module,count,on_time_ns,area_um2,energy_pJ,delay_ns\n")
    assert run(tmp_path, "cost", {"cost": {"db_path": str(db)}}) == 3
    assert run(tmp_path, "cost", {"cost": {"db_path": str(tmp_path / "none.csv")}}) == 3
    assert run(tmp_path, "cost", {"cost": {"scenario": "unknown_scenario"}}) == 3
    assert not (tmp_path / "out").exists()


def test_data_dir_override(tmp_path, monkeypatch):
    monkeypatch.setenv("NLADC_DATA_DIR", str(tmp_path / "nowhere"))
    assert run(tmp_path, "cost", {}) == 3


# ---------------------------------------------------------------------------
# dataset, train, infer


def test_train_and_infer(tmp_path):
    cfg = {"train": {"n_samples": 600, "epochs": 40, "sigma_inject": 0.0}, "seed": 3}
    assert run(tmp_path, "train", cfg, out="t1") == 0
    assert run(tmp_path, "train", cfg, out="t2") == 0
    ck1 = (tmp_path / "t1" / "checkpoint.json").read_bytes()
    assert ck1 == (tmp_path / "t2" / "checkpoint.json").read_bytes()
    metrics = json.loads((tmp_path / "t1" / "train_metrics.json").read_text())
    assert metrics["test_accuracy"] > 0.95

    icfg = {"infer": {"checkpoint": str(tmp_path / "t1" / "checkpoint.json"), "n_chips": 10,
                      "n_samples": 200}, "device": {}}
    assert run(tmp_path, "infer", icfg, out="i") == 0
    res = json.loads((tmp_path / "i" / "infer_metrics.json").read_text())
    assert len(res["noisy"]["per_chip"]) == 10
    assert res["noisy"]["std"] >= 0


def test_train_from_dataset_file(tmp_path):
    assert run(tmp_path, "dataset", {"dataset": {"n_samples": 50, "seq_len": 3}}, out="d") == 0
    data = tmp_path / "d" / "dataset.csv"
    assert data.read_text().splitlines()[0] == "sequence_id,t,x0,x1,label"
    cfg = {"train": {"dataset": str(data), "epochs": 1}}
    assert run(tmp_path, "train", cfg, out="t") == 0
    icfg = {"infer": {"checkpoint": str(tmp_path / "t" / "checkpoint.json"), "dataset": str(data),
                      "n_chips": 2, "noise": False}}
    assert run(tmp_path, "infer", icfg, out="i") == 0
    res = json.loads((tmp_path / "i" / "infer_metrics.json").read_text())
    assert res["noisy"]["std"] == 0.0


def test_missing_inputs(tmp_path):
    assert run(tmp_path, "train", {"train": {"dataset": str(tmp_path / "no.csv")}}) == 3
    assert run(tmp_path, "infer", {"infer": {"checkpoint": str(tmp_path / "no.json")}}) == 3
    assert run(tmp_path, "infer", {}) == 2


def test_numeric_failure_exit_code(tmp_path):
    ck = tmp_path / "ck.json"
    ck.write_text(json.dumps({"dims": {"input_dim": 2, "hidden_dim": 1, "n_classes": 2},
                              "W": [[0.0] * 4] * 2, "U": [[0.0] * 4], "fc": [[0.0] * 2] * 2,
                              "gamma": 100.0, "clip": 2.0}))
    # gamma * clip above the device maximum is a range failure
    assert run(tmp_path, "infer", {"infer": {"checkpoint": str(ck)}}) == 4


def test_no_partial_outputs_on_write_error(tmp_path, monkeypatch):
    real = cli.os.replace
    calls = []

    def flaky(src, dst):
        calls.append(dst)
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", flaky)
    with pytest.raises(OSError):
        cli.run(["synth", "--out-dir", str(tmp_path / "o")])
    monkeypatch.setattr(cli.os, "replace", real)
    assert calls and list((tmp_path / "o").iterdir()) == []


def test_entry_point_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nladc.cli", "synth", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "ramp.csv").exists()
    proc = subprocess.run([sys.executable, "-m", "nladc.cli", "warp"], capture_output=True, text=True)
    assert proc.returncode == 2
