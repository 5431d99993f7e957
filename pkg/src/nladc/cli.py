"""Command-line front end: ``nladc <command> [--config FILE] [--seed N] [--out-dir DIR]``.

Every command validates its JSON config before computing anything, builds
all outputs in memory and only then writes them, so a failing run leaves no
partial files.  Exit codes: 0 ok, 2 config error, 3 missing data, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import costmodel, crossbar, metrics, network
from .activation import available_activations, get_activation, sram_cell_counts, synthesize_ramp
from .device import DeviceModel
from .errors import GridError, MissingComponent, NladcError, OutOfRange, RangeError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_V_READS = [0.15, 0.175, 0.2, 0.225, 0.25]


class ConfigError(Exception):
    def __init__(self, field: str, msg: str):
        super().__init__(f"config error in '{field}': {msg}")
        self.field = field


class MissingData(Exception):
    pass


# ---------------------------------------------------------------------------
# config validation

_BLOCKS = {
    "activation": {"name": str, "bits": int, "grid": (list, str)},
    "device": {"write_sigma": float, "read_sigma": float, "stuck_prob": float, "tolerance": float,
               "max_iterations": int},
    "crossbar": {"v_read": float, "v_reads": list, "n_columns": int, "calibrate": bool,
                 "bits_in": int, "bits_out": int, "rows": int, "cols": int},
    "train": {"task": str, "dataset": str, "n_samples": int, "seq_len": int, "hidden_dim": int,
              "epochs": int, "sigma_inject": float, "lr": float, "batch_size": int, "seed": int},
    "infer": {"checkpoint": str, "dataset": str, "task": str, "n_samples": int, "seq_len": int,
              "n_chips": int, "bits": int, "x_max": float, "batch_size": int, "noise": bool},
    "dataset": {"task": str, "n_samples": int, "seq_len": int},
    "cost": {"db_path": str, "scenario": (str, dict)},
}
TASKS = ("delayed_xor",)


def _check_type(field, value, typ):
    types = typ if isinstance(typ, tuple) else (typ,)
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return
    if int in types and isinstance(value, bool):
        raise ConfigError(field, "expected an integer")
    if not isinstance(value, types):
        raise ConfigError(field, f"expected {' or '.join(t.__name__ for t in types)}")


def validate_config(cfg) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key, block in cfg.items():
        if key == "seed":
            if isinstance(block, bool) or not isinstance(block, int) or not 0 <= block < 2 ** 64:
                raise ConfigError("seed", "must be an unsigned 64-bit integer")
            continue
        if key not in _BLOCKS:
            raise ConfigError(key, "unknown config block")
        if block is None:
            continue
        if not isinstance(block, dict):
            raise ConfigError(key, "block must be a JSON object")
        for name, value in block.items():
            field = f"{key}.{name}"
            if name not in _BLOCKS[key]:
                raise ConfigError(field, "unknown field")
            _check_type(field, value, _BLOCKS[key][name])
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
                raise ConfigError(field, "must be non-negative")
    act = cfg.get("activation") or {}
    if "name" in act and act["name"] not in available_activations():
        raise ConfigError("activation.name", f"unknown activation {act['name']!r}; "
                          f"choose from {', '.join(available_activations())}")
    if "bits" in act and not 1 <= act["bits"] <= 10:
        raise ConfigError("activation.bits", "must lie in 1..10")
    for key in ("train", "infer", "dataset"):
        task = (cfg.get(key) or {}).get("task")
        if task is not None and task not in TASKS:
            raise ConfigError(f"{key}.task", f"unknown task {task!r}")
    for key in ("train", "infer"):
        p = (cfg.get(key) or {}).get("dataset")
        if p is not None and not Path(p).exists():
            raise MissingData(f"{key}.dataset: file {p!r} not found")
    ck = (cfg.get("infer") or {}).get("checkpoint")
    if ck is not None and not Path(ck).exists():
        raise MissingData(f"infer.checkpoint: file {ck!r} not found")
    vr = (cfg.get("crossbar") or {}).get("v_reads")
    if vr is not None and (not vr or not all(isinstance(v, (int, float)) and v > 0 for v in vr)):
        raise ConfigError("crossbar.v_reads", "must be a non-empty list of positive voltages")
    return cfg


def _device_model(cfg) -> DeviceModel | None:
    d = cfg.get("device")
    if d is None:
        return None
    try:
        return DeviceModel(write_sigma=d.get("write_sigma", 2.67), read_sigma=d.get("read_sigma", 3.5),
                           stuck_off_prob=d.get("stuck_prob", 0.0), tolerance=d.get("tolerance", 5.0),
                           max_iterations=d.get("max_iterations", 100))
    except ValueError as exc:
        raise ConfigError("device", str(exc)) from None


# ---------------------------------------------------------------------------
# formatting helpers


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _make_data(block, rng, default_n=2000):
    X, y = network.delayed_xor(block.get("n_samples", default_n), block.get("seq_len", 4), rng)
    return X, y


# ---------------------------------------------------------------------------
# commands; each returns {filename: text}


def cmd_synth(cfg, seed, threads) -> dict[str, str]:
    act = cfg.get("activation") or {}
    spec = get_activation(act.get("name", "sigmoid"))
    bits = act.get("bits", 5)
    try:
        ramp = synthesize_ramp(spec, bits, act.get("grid"))
    except GridError as exc:
        raise ConfigError("activation.grid", str(exc)) from None
    adc, bias, scale = crossbar.map_steps_to_conductance(ramp)
    c_fb = crossbar.derive_c_fb(ramp)
    rows = [[k, ramp.grid[k], ramp.points[k], None if k == 0 else ramp.steps[k - 1]]
            for k in range(len(ramp.points))]
    cond = [[k, ramp.points[k], ramp.steps[k - 1], adc[k - 1]] for k in range(1, len(ramp.points))]
    cells, total = sram_cell_counts(ramp)
    summary = {"activation": spec.name, "bits": bits, "v_init": ramp.v_init, "full_scale": ramp.full_scale,
               "c_fb_F": c_fb, "volts_per_uS_ns": scale, "bias_polarity": -1 if ramp.v_init <= 0 else 1,
               "bias_uS": bias.tolist(), "sram_cells": cells, "sram_cells_total": total,
               "split_index": ramp.split_index}
    return {
        "ramp.csv": _csv(["k", "t_k", "V_k", "dV_k"], rows),
        "conductances.csv": _csv(["k", "V_k", "dV_k", "G_adc_k"], cond),
        "bias.csv": _csv(["index", "G_bias_uS"], list(enumerate(bias))),
        "synth.json": _json(summary),
    }


def cmd_sweep_vread(cfg, seed, threads) -> dict[str, str]:
    act = cfg.get("activation") or {}
    xb = cfg.get("crossbar") or {}
    spec = get_activation(act.get("name", "sigmoid"))
    bits = act.get("bits", 5)
    v_reads = xb.get("v_reads", DEFAULT_V_READS)
    dm = _device_model(cfg)
    rows = metrics.vread_sweep("nladc", v_reads, spec, bits, seed, dm, xb.get("n_columns", 64),
                               xb.get("calibrate", False))
    rows += metrics.vread_sweep("conventional", v_reads, spec, bits, seed)
    buf = io.StringIO()
    metrics.write_sweep_rows(rows, buf)
    return {"sweep_vread.csv": buf.getvalue()}


def cmd_cost(cfg, seed, threads) -> dict[str, str]:
    c = cfg.get("cost") or {}
    db_path = c.get("db_path")
    if db_path is not None and not Path(db_path).exists():
        raise MissingData(f"cost.db_path: file {db_path!r} not found")
    try:
        db = costmodel.ComponentDb.from_csv(db_path)
    except FileNotFoundError as exc:
        raise MissingData(str(exc)) from None
    except (KeyError, ValueError) as exc:
        raise ConfigError("cost.db_path", f"malformed component database: {exc}") from None
    scen = c.get("scenario", "nladc_kws_macro")
    scenario = scen if isinstance(scen, dict) else costmodel.load_scenario(scen)
    for field in ("architecture", "weights", "latency_schedule"):
        if field not in scenario:
            raise ConfigError(f"cost.scenario.{field}", "missing")
    try:
        report = costmodel.estimate(db, scenario)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, MissingComponent):
            raise
        raise ConfigError("cost.scenario", str(exc)) from None
    return {"cost.json": report.to_json()}


def cmd_dataset(cfg, seed, threads) -> dict[str, str]:
    block = cfg.get("dataset") or {}
    X, y = _make_data(block, np.random.default_rng(seed))
    buf = io.StringIO()
    network.write_dataset_rows(X, y, buf)
    return {"dataset.csv": buf.getvalue()}


def _train_test(block, seed):
    train_seq, test_seq, init_seq, sgd_seq = np.random.SeedSequence(seed).spawn(4)
    if "dataset" in block:
        X, y = network.read_dataset_csv(block["dataset"])
        Xt, yt = X, y
    else:
        X, y = _make_data(block, np.random.default_rng(train_seq))
        Xt, yt = _make_data({**block, "n_samples": 1000}, np.random.default_rng(test_seq))
    return (X, y), (Xt, yt), init_seq, sgd_seq


def cmd_train(cfg, seed, threads) -> dict[str, str]:
    block = cfg.get("train") or {}
    seed = block.get("seed", seed)
    (X, y), (Xt, yt), init_seq, sgd_seq = _train_test(block, seed)
    n_classes = int(max(y.max(), yt.max())) + 1
    params = network.init_params(X.shape[2], block.get("hidden_dim", 8), max(n_classes, 2),
                                 np.random.default_rng(init_seq))
    history: list[float] = []
    trained = network.defect_aware_train(params, (X, y), block.get("epochs", 40),
                                         block.get("sigma_inject", 0.0), rng=np.random.default_rng(sgd_seq),
                                         lr=block.get("lr", 0.5), batch_size=block.get("batch_size", 32),
                                         history=history)
    if not np.all(np.isfinite(trained.W)) or not np.isfinite(history[-1]):
        raise FloatingPointError("training diverged")
    out = {"seed": seed, "epochs": block.get("epochs", 40), "sigma_inject": block.get("sigma_inject", 0.0),
           "final_loss": history[-1], "train_accuracy": network.evaluate(trained, X, y),
           "test_accuracy": network.evaluate(trained, Xt, yt)}
    return {"checkpoint.json": trained.to_json() + "\n", "train_metrics.json": _json(out)}


def cmd_infer(cfg, seed, threads) -> dict[str, str]:
    block = cfg.get("infer") or {}
    if "checkpoint" not in block:
        raise ConfigError("infer.checkpoint", "required")
    try:
        params = network.LstmParams.from_json(Path(block["checkpoint"]).read_text())
    except RangeError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("infer.checkpoint", f"unreadable checkpoint: {exc}") from None
    if "dataset" in block:
        X, y = network.read_dataset_csv(block["dataset"])
    else:
        X, y = _make_data({**block, "n_samples": block.get("n_samples", 1000)},
                          np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1]))
    if X.shape[2] != params.input_dim:
        raise ConfigError("infer.dataset", f"feature width {X.shape[2]} does not match the model")
    dm = _device_model(cfg) if block.get("noise", True) else DeviceModel.ideal()
    if dm is None:
        dm = DeviceModel()
    stats = network.noisy_inference(params, (X, y), dm, block.get("n_chips", 10), seed,
                                    bits=block.get("bits", 5), x_max=block.get("x_max", 1.0),
                                    batch_size=block.get("batch_size", 256), threads=threads)
    out = {"float_accuracy": network.evaluate(params, X, y), "noisy": stats,
           "device": {"write_sigma": dm.write_sigma, "read_sigma": dm.read_sigma}}
    return {"infer_metrics.json": _json(out)}


COMMANDS = {"synth": cmd_synth, "sweep-vread": cmd_sweep_vread, "cost": cmd_cost,
            "train": cmd_train, "infer": cmd_infer, "dataset": cmd_dataset}


# ---------------------------------------------------------------------------
# entry point


def _write_all(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    tmps = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            tmps.append((tmp, out_dir / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for tmp, dest in tmps:
            os.replace(tmp, dest)
    finally:
        for tmp, _ in tmps:
            if os.path.exists(tmp):
                os.remove(tmp)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nladc", description="Nonlinear ramp ADC crossbar simulator")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="global seed (overrides the config)")
    ap.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="Monte Carlo worker threads")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            if not args.config.exists():
                raise MissingData(f"config file {str(args.config)!r} not found")
            try:
                cfg = json.loads(args.config.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        else:
            cfg = {}
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        validate_config(cfg)
        files = COMMANDS[args.command](cfg, cfg.get("seed", 0), args.threads)
        _write_all(args.out_dir, files)
    except ConfigError as exc:
        print(f"nladc: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingData, MissingComponent, FileNotFoundError) as exc:
        print(f"nladc: missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FloatingPointError, OutOfRange, RangeError, NladcError, ArithmeticError) as exc:
        print(f"nladc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
