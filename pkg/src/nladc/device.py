"""Memristor conductance model: write-and-verify programming, read noise, drift."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import datadir
from .errors import OutOfRange

G_MAX = 150.0  # µS


@dataclass(frozen=True)
class DeviceModel:
    """Conductance bounds and noise parameters, all in µS."""

    g_min: float = 0.0
    g_max: float = G_MAX
    write_sigma: float = 2.67
    read_sigma: float = 3.5
    stuck_off_prob: float = 0.0
    tolerance: float = 5.0
    max_iterations: int = 100

    def __post_init__(self):
        if not 0 <= self.g_min < self.g_max:
            raise ValueError("need 0 <= g_min < g_max")
        if self.write_sigma < 0 or self.read_sigma < 0 or self.tolerance < 0:
            raise ValueError("noise parameters and tolerance must be non-negative")
        if not 0 <= self.stuck_off_prob <= 1:
            raise ValueError("stuck_off_prob must lie in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @classmethod
    def ideal(cls) -> "DeviceModel":
        return cls(write_sigma=0.0, read_sigma=0.0)

    def with_(self, **kw) -> "DeviceModel":
        return replace(self, **kw)


def program(target, model: DeviceModel, rng: np.random.Generator, return_iterations: bool = False):
    """Write-and-verify programming of one device or an array of devices.

    Stuck devices (drawn first, one Bernoulli per device) land at g_min.  The
    rest redraw target + N(0, write_sigma), clipped to the bounds, until the
    candidate is within ``tolerance`` or ``max_iterations`` draws are spent.
    """
    t = np.asarray(target, dtype=float)
    if np.any(t < model.g_min) or np.any(t > model.g_max):
        raise OutOfRange(f"target outside [{model.g_min}, {model.g_max}] µS")
    flat = t.ravel()
    n = flat.size
    stuck = rng.random(n) < model.stuck_off_prob if model.stuck_off_prob > 0 else np.zeros(n, bool)
    out = flat.copy()
    iters = np.zeros(n, dtype=int)
    active = np.flatnonzero(~stuck)
    for _ in range(model.max_iterations):
        if active.size == 0:
            break
        cand = flat[active] + rng.normal(0.0, model.write_sigma, active.size) if model.write_sigma > 0 \
            else flat[active].copy()
        cand = np.clip(cand, model.g_min, model.g_max)
        out[active] = cand
        iters[active] += 1
        active = active[np.abs(cand - flat[active]) > model.tolerance]
    out[stuck] = model.g_min
    out = out.reshape(t.shape)
    iters = iters.reshape(t.shape)
    if out.ndim == 0:
        out, iters = float(out), int(iters)
    return (out, iters) if return_iterations else out


def read(g, model: DeviceModel, rng: np.random.Generator):
    """One read event: g + N(0, read_sigma), clipped to the bounds."""
    ga = np.asarray(g, dtype=float)
    if model.read_sigma > 0:
        ga = np.clip(ga + rng.normal(0.0, model.read_sigma, ga.shape), model.g_min, model.g_max)
    return float(ga) if ga.ndim == 0 else ga


@dataclass(frozen=True)
class DriftCurves:
    """Reference relaxation curves G_ref,p(t) for 16 initial levels."""

    reference_levels: np.ndarray  # (L,)
    times: np.ndarray  # (T,) seconds, starting at 0
    samples: np.ndarray  # (T, L) µS

    def __post_init__(self):
        lv = np.asarray(self.reference_levels, float)
        if lv.ndim != 1 or np.any(np.diff(lv) <= 0):
            raise ValueError("reference levels must be strictly increasing")
        if self.times[0] != 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("time axis must start at 0 and increase")
        if self.samples.shape != (len(self.times), len(lv)):
            raise ValueError("samples must have shape (len(times), len(levels))")
        if not np.array_equal(self.samples[0], lv):
            raise ValueError("every series must start at its reference level")

    @classmethod
    def from_csv(cls, path=None) -> "DriftCurves":
        path = Path(path) if path is not None else datadir.path("drift_curves.csv")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[0, 1:].copy(), data[:, 0].copy(), data[:, 1:].copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s"] + [f"g_ref_{p}" for p in range(len(self.reference_levels))])
            for t, row in zip(self.times, self.samples):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def drift(g0, t: float, curves: DriftCurves):
    """Conductance at time t of devices programmed to g0 at t = 0.

    Uses the weighted average of the two reference series whose initial
    levels bracket g0, each interpolated linearly along the time axis.
    """
    lv = curves.reference_levels
    g = np.asarray(g0, dtype=float)
    if np.any(g < lv[0]) or np.any(g > lv[-1]):
        raise OutOfRange(f"g0 outside reference coverage [{lv[0]}, {lv[-1]}] µS")
    if not curves.times[0] <= t <= curves.times[-1]:
        raise OutOfRange(f"t={t} outside [0, {curves.times[-1]}] s")
    at_t = np.array([np.interp(t, curves.times, curves.samples[:, p]) for p in range(len(lv))])
    p = np.clip(np.searchsorted(lv, g, side="right") - 1, 0, len(lv) - 2)
    a = (lv[p + 1] - g) / (lv[p + 1] - lv[p])
    b = 1.0 - a
    out = a * at_t[p] + b * at_t[p + 1]
    if t == 0:
        out = g.copy()  # anchors reproduce g0 exactly
    return float(out) if out.ndim == 0 else out


def synthetic_drift_curves(levels=None, t_end: float = 5.0e5, n_times: int = 120,
                           relax: float = 0.12, mid: float = 75.0) -> DriftCurves:
    """Monotone relaxation toward mid-range, a stand-in for measured curves.

    G_p(t) = G_p(0) + relax * (mid - G_p(0)) * log10(1 + t/60) / log10(1 + t_end/60)
    """
    lv = np.linspace(0.0, G_MAX, 16) if levels is None else np.asarray(levels, float)
    times = np.concatenate(([0.0], np.geomspace(60.0, t_end, n_times - 1)))
    frac = np.log10(1 + times / 60.0) / np.log10(1 + t_end / 60.0)
    samples = lv[None, :] + relax * (mid - lv[None, :]) * frac[:, None]
    samples[0] = lv
    return DriftCurves(lv, times, samples)
