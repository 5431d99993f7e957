"""Converter fidelity: INL, the conventional fixed-reference ADC, V_read sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import crossbar
from .activation import ActivationSpec, RampTable, synthesize_ramp
from .device import DeviceModel
from .errors import DimensionMismatch

NOMINAL_V_READ = 0.2


@dataclass(frozen=True)
class InlReport:
    per_code: np.ndarray  # LSB
    max_abs: float
    mean: float  # signed average
    mean_abs: float
    lsb: float  # full-scale span / 2^bits, in ramp units


def inl(measured_ramp, ideal_ramp, bits: int, full_scale: float | None = None) -> InlReport:
    """Per-level deviation of a realized ramp from the ideal, in LSB.

    The LSB is the ideal full-scale span divided by 2^bits.  ``full_scale``
    defaults to the span of ``ideal_ramp`` itself; pass the V_0..V_P span of
    the ramp table when only V_1..V_P are compared.
    """
    m = np.asarray(measured_ramp, dtype=float)
    i = np.asarray(ideal_ramp, dtype=float)
    n = 2 ** bits
    if m.shape != (n,) or i.shape != (n,):
        raise DimensionMismatch(f"INL for {bits} bits needs two ramps of length {n}")
    span = float(i.max() - i.min()) if full_scale is None else float(full_scale)
    lsb = span / n
    per = (m - i) / lsb
    return InlReport(per, float(np.max(np.abs(per))), float(np.mean(per)),
                     float(np.mean(np.abs(per))), lsb)


def ramp_inl(state: crossbar.CrossbarState, ideal: RampTable, device_model=None, rng=None) -> InlReport:
    """INL of a programmed ramp column against its ideal table."""
    return inl(crossbar.measured_ramp(state, device_model, rng), ideal.points[1:], ideal.bits,
               full_scale=ideal.full_scale)


# ---------------------------------------------------------------------------
# conventional baseline


@dataclass(frozen=True)
class ConventionalAdcModel:
    """Uniform ramp ADC with rails fixed at nominal V_read, followed by a LUT."""

    bits: int
    v_ref_lo: float
    v_ref_hi: float
    lut: np.ndarray

    def __post_init__(self):
        if not self.v_ref_lo < self.v_ref_hi:
            raise ValueError("v_ref_lo must be below v_ref_hi")
        if len(self.lut) != 2 ** self.bits:
            raise DimensionMismatch("LUT needs 2^bits entries")

    @property
    def lsb(self) -> float:
        return (self.v_ref_hi - self.v_ref_lo) / 2 ** self.bits

    @property
    def thresholds(self) -> np.ndarray:
        """Comparator references q = 1..P."""
        return self.v_ref_lo + self.lsb * np.arange(1, 2 ** self.bits + 1)

    @classmethod
    def for_activation(cls, spec: ActivationSpec, bits: int, lo: float | None = None,
                       hi: float | None = None) -> "ConventionalAdcModel":
        """Rails default to the span of the matching nonlinear ramp."""
        if lo is None or hi is None:
            ramp = synthesize_ramp(spec, bits)
            lo = ramp.points[0] if lo is None else lo
            hi = ramp.points[-1] if hi is None else hi
        mids = lo + (np.arange(2 ** bits) + 0.5) * (hi - lo) / 2 ** bits
        return cls(bits, float(lo), float(hi), np.asarray(spec.forward(mids), dtype=float))


def conventional_convert(v_mac, model: ConventionalAdcModel):
    """Uniform quantization against the fixed rails, then LUT activation."""
    v = np.asarray(v_mac, dtype=float)
    n = 2 ** model.bits
    code = np.clip(np.floor((v - model.v_ref_lo) / (model.v_ref_hi - model.v_ref_lo) * n), 0, n - 1)
    code = code.astype(int)
    val = model.lut[code]
    if code.ndim == 0:
        return int(code), float(val)
    return code, val


# ---------------------------------------------------------------------------
# V_read robustness


@dataclass(frozen=True)
class SweepPoint:
    v_read: float
    system: str
    max_inl_lsb: float
    mean_inl_lsb: float
    seed: int


def _nladc_thresholds(states, v_read, device_model, rng) -> np.ndarray:
    # Input-referred code boundaries: V_mac = V_CLP + x * v_read / v_nom, so the
    # code flips at x_q = (V_ramp^q - V_CLP) * v_nom / v_read.
    out = []
    for st in states:
        s = st.with_params(v_read=v_read)
        v = crossbar.generate_ramp(s, device_model, rng) - s.params.v_clp
        mac_gain = s.params.gain / st.params.gain  # MAC volts per unit input, relative to nominal
        out.append(v / mac_gain)
    return np.mean(out, axis=0)


def vread_sweep(system: str, v_reads, spec: ActivationSpec, bits: int = 5, seed: int = 0,
                device_model: DeviceModel | None = None, n_columns: int = 64,
                calibrate: bool = False) -> list[SweepPoint]:
    """Max and mean |INL| of the realized transfer curve at each V_read.

    ``nladc``: ``n_columns`` ramp columns are programmed once (write noise
    from ``device_model``) and re-read at every V_read with fresh read noise;
    the transfer curve is the column average of input-referred thresholds.
    ``conventional``: the MAC output scales with V_read while the uniform
    references stay at their nominal values.
    """
    v_reads = [float(v) for v in v_reads]
    if not v_reads:
        raise ValueError("v_reads must not be empty")
    ramp = synthesize_ramp(spec, bits)
    rows = []
    if system == "nladc":
        ss = np.random.SeedSequence(seed)
        prog_seq, *read_seqs = ss.spawn(1 + len(v_reads))
        rng = np.random.default_rng(prog_seq)
        if device_model is None:
            states = [crossbar.CrossbarState.for_ramp(ramp, v_read=NOMINAL_V_READ)]
        else:
            states = [crossbar.program_ramp(ramp, device_model, rng, v_read=NOMINAL_V_READ)
                      for _ in range(n_columns)]
            if calibrate:
                states = [crossbar.calibrated(s, ramp, device_model, rng, program_model=device_model)
                          for s in states]
        for v, rs in zip(v_reads, read_seqs):
            thr = _nladc_thresholds(states, v, device_model, np.random.default_rng(rs))
            rep = inl(thr, ramp.points[1:], bits, full_scale=ramp.full_scale)
            rows.append(SweepPoint(v, system, rep.max_abs, rep.mean_abs, seed))
    elif system == "conventional":
        model = ConventionalAdcModel.for_activation(spec, bits, ramp.points[0], ramp.points[-1])
        ideal = model.thresholds
        for v in v_reads:
            thr = ideal * (NOMINAL_V_READ / v)
            rep = inl(thr, ideal, bits, full_scale=model.v_ref_hi - model.v_ref_lo)
            rows.append(SweepPoint(v, system, rep.max_abs, rep.mean_abs, seed))
    else:
        raise ValueError(f"system must be 'nladc' or 'conventional', got {system!r}")
    return rows


def write_sweep_rows(rows, fh) -> None:
    """INL values are written at 1e-9 LSB resolution (float residue reads as 0)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["v_read", "system", "max_inl_lsb", "mean_inl_lsb", "seed"])
    for r in rows:
        w.writerow([f"{r.v_read:.6g}", r.system, f"{round(r.max_inl_lsb, 9) + 0.0:.10g}",
                    f"{round(r.mean_inl_lsb, 9) + 0.0:.10g}", r.seed])


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        write_sweep_rows(rows, fh)
