import csv
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nladc import activation as act
from nladc.device import DeviceModel
from nladc.errors import GridError, OutOfRange

from . import oracles

DATA = Path(__file__).parent / "data"
MONOTONE = ["sigmoid", "tanh", "softplus", "softsign", "elu", "selu", "identity"]


def step_table():
    with open(DATA / "step_table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0] if k != "k"}


# ---------------------------------------------------------------------------
# evaluation


def test_eval_examples():
    assert act.eval_activation(act.get_activation("sigmoid"), 0.0) == 0.5
    assert act.eval_activation(act.get_activation("tanh"), 0.0) == 0.0
    assert act.eval_activation(act.get_activation("softplus"), 0.0) == pytest.approx(math.log(2), abs=1e-15)


def test_inverse_examples():
    assert act.eval_inverse(act.get_activation("sigmoid"), 0.5) == 0.0
    assert act.eval_inverse(act.get_activation("softplus"), math.log(2)) == pytest.approx(0.0, abs=1e-15)
    assert act.eval_inverse(act.get_activation("tanh"), math.tanh(1.0)) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("name,y", [("sigmoid", 0.0), ("sigmoid", 1.0), ("tanh", -1.0),
                                    ("softsign", 1.5), ("softplus", 0.0), ("elu", -1.0)])
def test_inverse_rejects_endpoints(name, y):
    with pytest.raises(OutOfRange):
        act.eval_inverse(act.get_activation(name), y)


def test_unknown_activation():
    with pytest.raises(KeyError):
        act.get_activation("relu6")


def test_segments_are_monotone():
    for name in act.available_activations():
        assert act.check_segments(act.get_activation(name)), name


def test_nonmonotonic_extrema():
    x, y = act.get_activation("swish").extremum
    # swish'(x) = 0 solves x = -(1 + e^x), so y0 = x + 1 at the minimum
    assert y == pytest.approx(x + 1.0, abs=1e-9)
    assert x == pytest.approx(-1.2784645, abs=1e-6)
    xg, yg = act.get_activation("gelu").extremum
    assert xg == pytest.approx(-0.7517916, abs=1e-6)
    assert yg == pytest.approx(-0.1699712, abs=1e-6)


def test_nonmonotonic_segments():
    spec = act.get_activation("gelu")
    x_star, y0 = spec.extremum
    y = 0.5 * y0
    left, right = act.eval_inverse(spec, y, "left"), act.eval_inverse(spec, y, "right")
    assert left < x_star < right
    assert spec.forward(left) == pytest.approx(y, abs=1e-12)
    assert spec.forward(right) == pytest.approx(y, abs=1e-12)
    with pytest.raises(ValueError):
        act.eval_inverse(spec, y, "whole")
    with pytest.raises(OutOfRange):
        act.eval_inverse(spec, 0.1, "left")


@pytest.mark.parametrize("name", MONOTONE)
@settings(max_examples=60, deadline=None)
@given(u=st.floats(0.02, 0.98))
def test_round_trip(name, u):
    spec = act.get_activation(name)
    lo, hi = spec.eval_range
    x = lo + u * (hi - lo)
    if name == "sigmoid" or name == "tanh":
        x = np.clip(x, -6, 6)  # keep g(x) away from the rails in double precision
    back = act.eval_inverse(spec, act.eval_activation(spec, x))
    assert back == pytest.approx(x, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# ramp synthesis


def test_sigmoid_ramp_against_table():
    tab = step_table()
    ramp = act.synthesize_ramp(act.get_activation("sigmoid"), 5)
    assert ramp.steps[0] == pytest.approx(0.724, abs=1e-3)
    np.testing.assert_allclose(ramp.steps, tab["sigmoid_dv"], atol=1e-3)
    assert float(ramp.steps.sum()) == pytest.approx(2 * math.log(33), abs=1e-12)
    # the table sum is taken over 3-decimal entries
    assert float(np.round(ramp.steps, 3).sum()) == pytest.approx(6.992, abs=1e-3)


def test_tanh_ramp_against_table():
    tab = step_table()
    ramp = act.synthesize_ramp(act.get_activation("tanh"), 5)
    assert ramp.steps[0] == pytest.approx(0.362, abs=1e-3)
    np.testing.assert_allclose(ramp.steps, tab["tanh_dv"], atol=1e-3)


@pytest.mark.parametrize("name", ["softplus", "softsign", "elu", "selu"])
def test_bundled_grids_against_table(name):
    tab = step_table()
    ramp = act.synthesize_ramp(act.get_activation(name), 5)
    np.testing.assert_allclose(ramp.steps, tab[f"{name}_dv"], atol=1e-3)
    cells, total = act.sram_cell_counts(ramp)
    assert cells == tab[f"{name}_cells"].astype(int).tolist()


def test_open_range_rule_matches_oracle():
    ys = [k / 34 for k in range(1, 34)]
    pts, steps = oracles.ramp_from_inverse(lambda y: math.log(y / (1 - y)), ys)
    ramp = act.synthesize_ramp(act.get_activation("sigmoid"), 5)
    np.testing.assert_allclose(ramp.points, pts, atol=1e-12)
    np.testing.assert_allclose(ramp.steps, steps, atol=1e-12)
    assert ramp.v_init == pytest.approx(-math.log(33), abs=1e-12)


def test_identity_ramp_uniform():
    ramp = act.synthesize_ramp(act.get_activation("identity"), 5)
    np.testing.assert_allclose(ramp.steps, 1 / 34, atol=1e-15)
    assert act.sram_cell_counts(ramp) == ([1] * 32, 32)


@pytest.mark.parametrize("name,total", [("sigmoid", 58), ("softplus", 59), ("tanh", 58),
                                        ("softsign", 150), ("elu", 41), ("selu", 41)])
def test_sram_totals(name, total):
    assert act.sram_cell_counts(act.synthesize_ramp(act.get_activation(name), 5))[1] == total


def test_sram_rounds_half_away():
    ramp = act.RampTable.from_steps(0.0, [1.0, 1.5, 2.5] + [1.0] * 5, np.arange(9.0), 3)
    assert act.sram_cell_counts(ramp)[0][:3] == [1, 2, 3]


def test_grid_errors():
    spec = act.get_activation("sigmoid")
    with pytest.raises(GridError):
        act.synthesize_ramp(spec, 3, grid=[0.1] * 9)
    with pytest.raises(GridError):
        act.synthesize_ramp(spec, 3, grid=np.linspace(0.1, 1.0, 9))  # touches the open end
    with pytest.raises(GridError):
        act.synthesize_ramp(spec, 3, grid=np.linspace(0.1, 0.9, 5))
    with pytest.raises(GridError):
        act.synthesize_ramp(act.get_activation("softplus"), 4)  # no bundled 4-bit grid, unbounded
    with pytest.raises(GridError):
        act.synthesize_ramp(spec, 5, grid="closed-range")


def test_explicit_grid():
    spec = act.get_activation("tanh")
    grid = np.linspace(-0.9, 0.9, 9)
    ramp = act.synthesize_ramp(spec, 3, grid=grid)
    np.testing.assert_allclose(ramp.points, np.arctanh(grid), atol=1e-15)


@pytest.mark.parametrize("name", ["gelu", "swish"])
def test_nonmonotonic_ramp(name):
    spec = act.get_activation(name)
    ramp = act.synthesize_ramp(spec, 5)
    x_star, y0 = spec.extremum
    assert ramp.split_index == 2
    assert ramp.points[2] == pytest.approx(x_star, abs=1e-9)
    assert np.all(ramp.steps > 0)
    np.testing.assert_allclose(spec.forward(ramp.points), ramp.grid, atol=1e-10)
    # levels step by |y0|/3 from the minimum, sampled on both sides
    dy = abs(y0) / 3
    np.testing.assert_allclose(ramp.grid[:3], [y0 + 2 * dy, y0 + dy, y0], atol=1e-12)
    np.testing.assert_allclose(np.diff(ramp.grid[2:]), dy, atol=1e-12)
    with pytest.raises(GridError):
        act.synthesize_ramp(spec, 5, grid="open-range")


def test_ramp_csv_round_trip(tmp_path):
    ramp = act.synthesize_ramp(act.get_activation("softsign"), 5)
    ramp.to_csv(tmp_path / "r.csv")
    back = act.RampTable.from_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.steps, ramp.steps)
    np.testing.assert_array_equal(back.points, ramp.points)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "k,t_k,V_k,dV_k"


def test_registry_from_custom_dir(tmp_path, monkeypatch):
    src = Path(act.datadir.path("activations.json")).read_text()
    (tmp_path / "activations.json").write_text(src)
    monkeypatch.setenv("NLADC_DATA_DIR", str(tmp_path))
    act.reset_registry()
    try:
        assert "sigmoid" in act.available_activations()
    finally:
        monkeypatch.delenv("NLADC_DATA_DIR")
        act.reset_registry()


@settings(max_examples=50, deadline=None)
@given(bits=st.integers(2, 6), name=st.sampled_from(["sigmoid", "tanh", "identity"]))
def test_ramp_invariants(bits, name):
    ramp = act.synthesize_ramp(act.get_activation(name), bits)
    assert len(ramp.steps) == 2 ** bits
    assert np.all(np.diff(ramp.points) > 0)
    # reconstruction by the same left-to-right order is exact
    acc = [ramp.v_init]
    for s in ramp.steps:
        acc.append(acc[-1] + s)
    np.testing.assert_array_equal(np.array(acc), ramp.points)
    assert act.sram_cell_counts(ramp)[1] >= 2 ** bits


@settings(max_examples=40, deadline=None)
@given(steps=st.lists(st.floats(0.01, 5.0), min_size=8, max_size=8))
def test_sram_count_lower_bound(steps):
    ramp = act.RampTable.from_steps(-1.0, steps, np.arange(9.0), 3)
    per, total = act.sram_cell_counts(ramp)
    assert total >= 8 and min(per) >= 1


# ---------------------------------------------------------------------------
# staircase and MSE


def test_staircase_matches_comparator_oracle():
    ramp = act.synthesize_ramp(act.get_activation("sigmoid"), 5)
    x = np.random.default_rng(3).uniform(-5, 5, 10_000)
    codes = act.staircase_codes(x, ramp.points[1:])
    lv = ramp.points[1:].tolist()
    assert codes.tolist() == [oracles.comparator_code(v, lv) for v in x.tolist()]


def test_noise_free_mse_bounded_by_lsb():
    spec = act.get_activation("sigmoid")
    ramp = act.synthesize_ramp(spec, 5)
    mse, per = act.approximation_mse(spec, ramp, None, trials=3)
    assert per == [mse] * 3
    x = np.linspace(-8, 8, 4001)
    assert np.max(np.abs(act.staircase_output(x, ramp) - spec.forward(x))) <= 1 / 32
    assert mse <= (1 / 32) ** 2


def test_mse_deterministic_and_noisy():
    spec = act.get_activation("sigmoid")
    ramp = act.synthesize_ramp(spec, 5)
    dm = DeviceModel(read_sigma=0.0)
    a = act.approximation_mse(spec, ramp, dm, trials=20, rng_seed=4)
    b = act.approximation_mse(spec, ramp, dm, trials=20, rng_seed=4, threads=4)
    assert a == b
    assert a[0] > act.approximation_mse(spec, ramp)[0]
    with pytest.raises(ValueError):
        act.approximation_mse(spec, ramp, dm, trials=0)


def test_sram_quantized_ramp():
    ramp = act.synthesize_ramp(act.get_activation("sigmoid"), 5)
    q = act.sram_quantized_ramp(ramp)
    cells, _ = act.sram_cell_counts(ramp)
    np.testing.assert_allclose(q.steps, np.array(cells) * ramp.steps.min())
    assert q.v_init == ramp.v_init
