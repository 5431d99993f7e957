"""Activation functions and nonlinear ramp synthesis.

A ramp ADC whose reference follows g^-1 digitizes g(x) directly: the code for
input x counts how many ramp levels V_k = g^-1(y_k) lie at or below x.  This
module holds the activation registry and builds the ramp tables
(V_k, dV_k) that the crossbar later realizes with memristor conductances.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, expit

from . import datadir
from .errors import GridError, OutOfRange

MONOTONIC = "monotonic"
NON_MONOTONIC = "non-monotonic"


# ---------------------------------------------------------------------------
# closed forms


def _sigmoid(x):
    return expit(x)


def _sigmoid_inv(y):
    return np.log(y) - np.log1p(-y)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    # ln(e^y - 1) written to stay accurate for small and large y
    return y + np.log(-np.expm1(-y))


def _softsign(x):
    return x / (1.0 + np.abs(x))


def _softsign_inv(y):
    return y / (1.0 - np.abs(y))


def _elu(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_inv(y):
    return np.where(y >= 0, y, np.log1p(np.maximum(y, -1.0 + 1e-300)))


def _selu(x):
    # scaled variant used throughout: 0.5x above zero, 2(e^x - 1) below
    return np.where(x >= 0, 0.5 * x, 2.0 * np.expm1(np.minimum(x, 0.0)))


def _selu_inv(y):
    return np.where(y >= 0, 2.0 * y, np.log1p(np.maximum(0.5 * y, -1.0 + 1e-300)))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _swish(x):
    return x * expit(x)


def _identity(x):
    return np.asarray(x, dtype=float) * 1.0


_CLOSED_FORMS: dict[str, tuple[Callable, Callable | None]] = {
    "sigmoid": (_sigmoid, _sigmoid_inv),
    "tanh": (np.tanh, np.arctanh),
    "softplus": (_softplus, _softplus_inv),
    "softsign": (_softsign, _softsign_inv),
    "elu": (_elu, _elu_inv),
    "selu": (_selu, _selu_inv),
    "identity": (_identity, _identity),
    "gelu": (_gelu, None),
    "swish": (_swish, None),
}


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class ActivationSpec:
    """A named activation g with its inverse and range metadata.

    ``range`` is the output interval (y_lo, y_hi); ``open_range`` flags which
    ends are excluded.  Non-monotonic functions carry ``extremum = (x*, y0)``
    and are split into a decreasing left and an increasing right segment.
    """

    name: str
    forward: Callable = field(repr=False, compare=False)
    inverse: Callable | None = field(repr=False, compare=False)
    range: tuple[float, float]
    open_range: tuple[bool, bool] = (True, True)
    kind: str = MONOTONIC
    extremum: tuple[float, float] | None = None
    default_grid: tuple[float, ...] | None = field(default=None, repr=False)
    eval_range: tuple[float, float] = (-8.0, 8.0)

    @property
    def monotonic(self) -> bool:
        return self.kind == MONOTONIC


@dataclass(frozen=True)
class RampTable:
    """Quantized inverse function: ramp levels V_0..V_P and steps dV_1..dV_P.

    ``points`` are built as v_init plus a left-to-right running sum of
    ``steps``, so reconstructing V_q from the steps is exact.  ``grid`` holds
    the y sample behind each point; for a monotone ramp it doubles as the
    decode table (code n reports grid[n]).
    """

    bits: int
    points: np.ndarray
    steps: np.ndarray
    grid: np.ndarray
    split_index: int | None = None
    name: str = ""

    def __post_init__(self):
        P = 2 ** self.bits
        if len(self.steps) != P or len(self.points) != P + 1 or len(self.grid) != P + 1:
            raise GridError(f"ramp for {self.bits} bits needs {P} steps and {P + 1} points")
        if np.any(self.steps <= 0):
            raise GridError("ramp steps must be strictly positive")

    @property
    def v_init(self) -> float:
        return float(self.points[0])

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits

    @property
    def full_scale(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def levels(self) -> np.ndarray:
        """Reported output for codes 0..P (floor decode)."""
        return self.grid

    @classmethod
    def from_points(cls, points, grid, bits, split_index=None, name=""):
        points = np.asarray(points, dtype=float)
        steps = np.diff(points)
        if np.any(steps <= 0):
            raise GridError("ramp samples are not strictly increasing")
        return cls.from_steps(points[0], steps, grid, bits, split_index, name)

    @classmethod
    def from_steps(cls, v_init, steps, grid, bits, split_index=None, name=""):
        steps = np.asarray(steps, dtype=float)
        points = np.cumsum(np.concatenate(([float(v_init)], steps)))
        return cls(bits, points, steps, np.asarray(grid, dtype=float), split_index, name)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t_k", "V_k", "dV_k"])
            for k in range(len(self.points)):
                dv = "" if k == 0 else repr(float(self.steps[k - 1]))
                w.writerow([k, repr(float(self.grid[k])), repr(float(self.points[k])), dv])

    @classmethod
    def from_csv(cls, path, split_index=None, name=""):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        grid = [float(r["t_k"]) for r in rows]
        v0 = float(rows[0]["V_k"])
        steps = [float(r["dV_k"]) for r in rows[1:]]
        bits = int(round(math.log2(len(steps))))
        return cls.from_steps(v0, steps, grid, bits, split_index, name)


# ---------------------------------------------------------------------------
# registry


def _find_extremum(fn: Callable) -> tuple[float, float]:
    # derivative by central difference; both supported shapes have one minimum in (-3, 0)
    h = 1e-6
    d = lambda x: (fn(x + h) - fn(x - h)) / (2 * h)
    x_star = brentq(d, -3.0, -0.1, xtol=1e-14)
    return float(x_star), float(fn(x_star))


def load_registry(path=None) -> dict[str, ActivationSpec]:
    """Load activation metadata from JSON and attach the closed forms."""
    path = Path(path) if path is not None else datadir.path("activations.json")
    with open(path) as fh:
        entries = json.load(fh)
    registry = {}
    for e in entries:
        name = e["name"]
        if name not in _CLOSED_FORMS:
            raise KeyError(f"no closed form registered for activation {name!r}")
        fwd, inv = _CLOSED_FORMS[name]
        extremum = None
        if e["kind"] == NON_MONOTONIC:
            extremum = tuple(e["extremum"]) if e.get("extremum") else _find_extremum(fwd)
        grid = e.get("y_grid")
        lo, hi = e["range"]
        lo = extremum[1] if lo is None else float(lo)
        registry[name] = ActivationSpec(
            name=name,
            forward=fwd,
            inverse=inv,
            range=(lo, float(hi)),
            open_range=tuple(e.get("open", [True, True])),
            kind=e["kind"],
            extremum=extremum,
            default_grid=tuple(grid) if grid else None,
            eval_range=tuple(e.get("eval_range", [-8.0, 8.0])),
        )
    return registry


_REGISTRY: dict[str, ActivationSpec] | None = None


def get_activation(name: str) -> ActivationSpec:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = load_registry()
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown activation {name!r}; known: {sorted(_REGISTRY)}") from None


def available_activations() -> list[str]:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = load_registry()
    return sorted(_REGISTRY)


def reset_registry() -> None:
    """Forget the cached registry (used after the data directory changes)."""
    global _REGISTRY
    _REGISTRY = None


# ---------------------------------------------------------------------------
# evaluation


def eval_activation(spec: ActivationSpec, x):
    """g(x); accepts scalars or arrays."""
    out = spec.forward(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _check_inside(spec: ActivationSpec, y: np.ndarray, lo: float, hi: float,
                  open_lo: bool, open_hi: bool) -> None:
    bad = ~np.isfinite(y)
    bad |= (y <= lo) if open_lo else (y < lo)
    bad |= (y >= hi) if open_hi else (y > hi)
    if np.any(bad):
        v = y[bad].flat[0]
        raise OutOfRange(f"{spec.name}: y={v!r} outside ({lo}, {hi})")


def _root(fn, y, a, b, toward):
    # expand the bracket until it contains y, then solve
    fa, fb = fn(a) - y, fn(b) - y
    step = 1.0
    while fa * fb > 0:
        if toward > 0:
            b += step
            fb = fn(b) - y
        else:
            a -= step
            fa = fn(a) - y
        step *= 2.0
        if step > 1e6:
            raise OutOfRange(f"no preimage for y={y!r}")
    if fa == 0:
        return a
    if fb == 0:
        return b
    return brentq(lambda t: fn(t) - y, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def eval_inverse(spec: ActivationSpec, y, segment: str = "whole"):
    """g^-1(y) on the requested segment ('whole', 'left' or 'right')."""
    ya = np.asarray(y, dtype=float)
    if spec.monotonic:
        if segment != "whole":
            raise ValueError(f"{spec.name} is monotonic; segment must be 'whole'")
        _check_inside(spec, ya, *spec.range, *spec.open_range)
        out = spec.inverse(ya)
    else:
        x_star, y0 = spec.extremum
        fwd = spec.forward
        if segment == "left":
            # left branch climbs from y0 toward 0 as x goes to -inf
            _check_inside(spec, ya, y0, 0.0, False, True)
            out = np.array([x_star if v == y0 else _root(fwd, v, x_star - 1.0, x_star, -1)
                            for v in ya.ravel()]).reshape(ya.shape)
        elif segment == "right":
            _check_inside(spec, ya, y0, math.inf, False, True)
            out = np.array([x_star if v == y0 else _root(fwd, v, x_star, x_star + 1.0, +1)
                            for v in ya.ravel()]).reshape(ya.shape)
        else:
            raise ValueError("non-monotonic inverse needs segment 'left' or 'right'")
    return float(out) if np.ndim(out) == 0 else out


def check_segments(spec: ActivationSpec, n: int = 20001) -> bool:
    """Numerically confirm strict monotonicity on each declared segment."""
    lo, hi = spec.eval_range
    x = np.linspace(lo, hi, n)
    y = spec.forward(x)
    if spec.monotonic:
        return bool(np.all(np.diff(y) > 0))
    x_star = spec.extremum[0]
    left, right = x <= x_star, x >= x_star
    return bool(np.all(np.diff(y[left]) < 0) and np.all(np.diff(y[right]) > 0))


# ---------------------------------------------------------------------------
# ramp synthesis


def open_range_grid(spec: ActivationSpec, bits: int) -> np.ndarray:
    """y_k = y_lo + k (y_hi - y_lo) / (P + 2), k = 1..P+1 (endpoints excluded)."""
    lo, hi = spec.range
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise GridError(f"{spec.name} has an unbounded range; supply an explicit grid")
    P = 2 ** bits
    k = np.arange(1, P + 2)
    return lo + k * (hi - lo) / (P + 2)


def _nonmonotonic_ramp(spec: ActivationSpec, bits: int) -> RampTable:
    P = 2 ** bits
    x_star, y0 = spec.extremum
    dy = abs(y0) / 3.0
    levels = y0 + dy * np.arange(P - 1)  # y_0 .. y_{P-2}
    # y_1 and y_2 also have a left preimage; y_3 = 0 does not
    left = [eval_inverse(spec, levels[j], "left") for j in (2, 1)]
    right = [eval_inverse(spec, levels[j], "right") for j in range(1, P - 1)]
    points = np.array(left + [x_star] + right)
    grid = np.concatenate(([levels[2], levels[1], levels[0]], levels[1:]))
    return RampTable.from_points(points, grid, bits, split_index=2, name=spec.name)


def synthesize_ramp(spec: ActivationSpec, bits: int,
                    grid: Sequence[float] | str | None = None) -> RampTable:
    """Build the ramp table V_k = g^-1(y_k), dV_k = V_k - V_{k-1}.

    ``grid`` may be an explicit list of P+1 y samples, the string
    ``"open-range"`` for the evenly spaced interior rule, or None to use the
    function's bundled grid when it matches ``bits`` and the rule otherwise.
    """
    if bits < 1:
        raise GridError("bits must be positive")
    P = 2 ** bits
    if not spec.monotonic:
        if grid is not None:
            raise GridError("non-monotonic ramps use the split construction; no grid accepted")
        return _nonmonotonic_ramp(spec, bits)

    if grid is None:
        if spec.default_grid is not None and len(spec.default_grid) == P + 1:
            y = np.asarray(spec.default_grid, dtype=float)
        else:
            y = open_range_grid(spec, bits)
    elif isinstance(grid, str):
        if grid != "open-range":
            raise GridError(f"unknown grid rule {grid!r}")
        y = open_range_grid(spec, bits)
    else:
        y = np.asarray(grid, dtype=float)

    if y.shape != (P + 1,):
        raise GridError(f"grid for {bits} bits needs {P + 1} samples, got {y.size}")
    if np.any(np.diff(y) <= 0):
        raise GridError("grid samples must be strictly increasing")
    try:
        points = eval_inverse(spec, y)
    except OutOfRange as exc:
        raise GridError(str(exc)) from None
    return RampTable.from_points(points, y, bits, name=spec.name)


def sram_cell_counts(ramp: RampTable) -> tuple[list[int], int]:
    """Cells per step when each SRAM cell stores one minimum step."""
    ratio = ramp.steps / ramp.steps.min()
    per_step = np.floor(ratio + 0.5).astype(int)  # half away from zero; ratios are positive
    return per_step.tolist(), int(per_step.sum())


def sram_quantized_ramp(ramp: RampTable) -> RampTable:
    """The ramp an SRAM generator realizes: each step rounded to whole unit cells."""
    counts, _ = sram_cell_counts(ramp)
    unit = ramp.steps.min()
    return RampTable.from_steps(ramp.v_init, np.asarray(counts) * unit, ramp.grid,
                                ramp.bits, ramp.split_index, ramp.name)


# ---------------------------------------------------------------------------
# approximation error


def staircase_codes(x, ramp_levels) -> np.ndarray:
    """Thermometer count #{q : V_q <= x} for every x (no ordering assumed)."""
    x = np.asarray(x, dtype=float)
    lv = np.asarray(ramp_levels, dtype=float)
    return (lv[None, :] <= x.reshape(-1, 1)).sum(axis=1).reshape(x.shape)


def staircase_output(x, ramp: RampTable, ramp_levels=None) -> np.ndarray:
    """Decoded activation for inputs x given realized levels V_1..V_P."""
    lv = ramp.points[1:] if ramp_levels is None else ramp_levels
    return ramp.grid[staircase_codes(x, lv)]


def _realized_ramp(ramp: RampTable, device_model, seed_seq) -> np.ndarray:
    from . import crossbar, device

    rng = np.random.default_rng(seed_seq)
    adc, bias, _ = crossbar.map_steps_to_conductance(ramp)
    programmed = device.program(adc, device_model, rng)
    state = crossbar.CrossbarState.for_ramp(ramp, adc_column=programmed, bias_column=bias)
    v = np.asarray(crossbar.generate_ramp(state, device_model, rng))
    return v - state.params.v_clp


def approximation_mse(spec: ActivationSpec, ramp: RampTable, device_model=None,
                      trials: int = 1, rng_seed: int = 0, x_range=None,
                      n_points: int = 4001, threads: int = 1):
    """Monte Carlo MSE of the realized staircase against g.

    Each trial programs the step conductances with write noise (bias devices
    are left ideal) and reads the ramp once; the decoded staircase is compared
    with g over ``n_points`` inputs spanning ``x_range`` (default: the
    function's evaluation range).  With ``device_model=None`` the ramp is used
    as given, so a single deterministic value is returned for every trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    lo, hi = spec.eval_range if x_range is None else x_range
    x = np.linspace(lo, hi, n_points)
    target = spec.forward(x)

    def mse_for(levels):
        return float(np.mean((staircase_output(x, ramp, levels) - target) ** 2))

    if device_model is None:
        per_trial = [mse_for(ramp.points[1:])] * trials
    else:
        seeds = np.random.SeedSequence(rng_seed).spawn(trials)
        run = lambda s: mse_for(_realized_ramp(ramp, device_model, s))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                per_trial = list(ex.map(run, seeds))
        else:
            per_trial = [run(s) for s in seeds]
    return float(np.mean(per_trial)), per_trial
