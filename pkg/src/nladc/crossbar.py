"""Analog core: PWM multiply-accumulate, in-memory ramp generation, conversion.

Charges are accumulated in µS·V·ns (1e-15 C) and turned into volts by the
feedback capacitor.  C_fb is derived from the ramp so that the largest ramp
step, programmed at g_max and pulsed for one t_adc at nominal V_read, lands
exactly on its normalized value; with V_CLP = 0 the integrator output then
lives directly in the activation's input domain.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import device
from .activation import RampTable
from .device import G_MAX, DeviceModel
from .errors import DimensionMismatch, NoZeroCrossing

CHARGE_UNIT = 1e-15  # coulombs per µS·V·ns


@dataclass(frozen=True)
class IntegratorParams:
    v_read: float = 0.2  # V
    v_clp: float = 0.0  # V
    c_fb: float = 1e-13  # F
    t_clk: float = 1.0  # ns
    t_adc: float = 1.0  # ns

    def __post_init__(self):
        if self.v_read <= 0 or self.c_fb <= 0 or self.t_clk <= 0 or self.t_adc <= 0:
            raise ValueError("v_read, c_fb, t_clk and t_adc must be positive")

    @property
    def gain(self) -> float:
        """Volts per µS·ns of integrated conductance-time."""
        return self.v_read * CHARGE_UNIT / self.c_fb


def derive_c_fb(ramp: RampTable, g_max: float = G_MAX, v_read: float = 0.2,
                t_adc: float = 1.0) -> float:
    """C_fb such that V_read * g_max * t_adc / C_fb equals the largest step."""
    return v_read * g_max * t_adc * CHARGE_UNIT / float(ramp.steps.max())


def split_bias(total: float, g_max: float = G_MAX) -> np.ndarray:
    """N = floor(G/g_max) + 1 devices: N-1 at g_max and one holding the remainder."""
    if total < 0:
        raise ValueError("bias conductance must be non-negative")
    n = int(total // g_max) + 1
    rest = total - g_max * (n - 1)
    return np.array([g_max] * (n - 1) + [rest], dtype=float)


def map_steps_to_conductance(ramp: RampTable, g_max: float = G_MAX, t_adc: float = 1.0):
    """Ramp steps to ADC-column conductances and the bias devices for V_0.

    Returns (adc_column, bias_column, scale) where scale is the normalized
    voltage produced per µS·ns at nominal V_read.
    """
    scale = float(ramp.steps.max()) / (g_max * t_adc)
    adc = ramp.steps * (g_max / float(ramp.steps.max()))
    adc = np.minimum(adc, g_max)
    bias = split_bias(abs(ramp.v_init) / (scale * t_adc), g_max)
    return adc, bias, scale


@dataclass
class CrossbarState:
    """Programmed conductances (µS) and the integrator they feed.

    ``bias_polarity`` is -1 when the bias devices pull the integrator down
    (negative starting voltage, the usual case) and +1 otherwise.
    """

    g_plus: np.ndarray
    g_minus: np.ndarray
    adc_column: np.ndarray
    bias_column: np.ndarray
    params: IntegratorParams
    bits_out: int
    bias_polarity: int = -1

    def __post_init__(self):
        self.g_plus = np.atleast_2d(np.asarray(self.g_plus, dtype=float))
        self.g_minus = np.atleast_2d(np.asarray(self.g_minus, dtype=float))
        self.adc_column = np.asarray(self.adc_column, dtype=float)
        self.bias_column = np.asarray(self.bias_column, dtype=float).reshape(-1)
        if self.g_plus.shape != self.g_minus.shape:
            raise DimensionMismatch("g_plus and g_minus shapes differ")
        if self.adc_column.shape != (2 ** self.bits_out,):
            raise DimensionMismatch(f"adc column needs {2 ** self.bits_out} entries")
        for arr in (self.g_plus, self.g_minus, self.adc_column, self.bias_column):
            if arr.size and (arr.min() < 0 or arr.max() > G_MAX + 1e-9):
                raise ValueError("conductances must lie in [0, 150] µS")
        if self.bias_polarity not in (-1, 1):
            raise ValueError("bias_polarity must be -1 or +1")

    @property
    def rows(self) -> int:
        return self.g_plus.shape[0]

    @property
    def cols(self) -> int:
        return self.g_plus.shape[1]

    @classmethod
    def for_ramp(cls, ramp: RampTable, g_plus=None, g_minus=None, adc_column=None,
                 bias_column=None, v_read: float = 0.2, v_clp: float = 0.0,
                 t_clk: float = 1.0, t_adc: float = 1.0, g_max: float = G_MAX) -> "CrossbarState":
        """State holding ``ramp`` in its ADC column; conductances default to ideal."""
        adc, bias, _ = map_steps_to_conductance(ramp, g_max, t_adc)
        params = IntegratorParams(v_read=v_read, v_clp=v_clp, c_fb=derive_c_fb(ramp, g_max, v_read, t_adc),
                                  t_clk=t_clk, t_adc=t_adc)
        gp = np.zeros((1, 1)) if g_plus is None else g_plus
        gm = np.zeros_like(np.atleast_2d(gp)) if g_minus is None else g_minus
        return cls(gp, gm, adc if adc_column is None else adc_column,
                   bias if bias_column is None else bias_column, params, ramp.bits,
                   -1 if ramp.v_init <= 0 else 1)

    def with_params(self, **kw) -> "CrossbarState":
        return replace(self, params=replace(self.params, **kw))

    def to_json(self) -> str:
        r4 = lambda a: np.round(np.asarray(a, dtype=float), 4).tolist()
        return json.dumps({
            "g_plus": r4(self.g_plus), "g_minus": r4(self.g_minus),
            "adc_column": r4(self.adc_column), "bias_column": r4(self.bias_column),
            "bias_polarity": self.bias_polarity, "bits_out": self.bits_out,
            "params": asdict(self.params),
        })

    @classmethod
    def from_json(cls, text: str) -> "CrossbarState":
        d = json.loads(text)
        return cls(np.array(d["g_plus"]), np.array(d["g_minus"]), np.array(d["adc_column"]),
                   np.array(d["bias_column"]), IntegratorParams(**d["params"]), d["bits_out"],
                   d.get("bias_polarity", -1))


@dataclass
class ConversionResult:
    thermometer: np.ndarray
    code: int
    pulse_width: float
    signed_result: int | None = None

    @property
    def bits(self) -> int:
        return int(math.log2(len(self.thermometer)))


# ---------------------------------------------------------------------------
# integration


def _mac_charge(inputs, col, state: CrossbarState, device_model: DeviceModel | None, rng):
    p = np.asarray(inputs, dtype=float)
    if p.ndim != 1 or p.size > state.rows:
        raise DimensionMismatch(f"input of length {p.size} does not fit {state.rows} rows")
    if not 0 <= col < state.cols:
        raise DimensionMismatch(f"column {col} does not exist")
    gp = state.g_plus[: p.size, col]
    gm = state.g_minus[: p.size, col]
    if device_model is not None and device_model.read_sigma > 0:
        gp = device.read(gp, device_model, rng)
        gm = device.read(gm, device_model, rng)
    # input sign selects which device of the pair drives the integrator
    return float(np.sum(p * state.params.t_clk * (gp - gm)))


def mac_column(inputs, col: int, state: CrossbarState, device_model: DeviceModel | None = None,
               rng=None) -> float:
    """Integrator output after one PWM window on column ``col``."""
    q = _mac_charge(inputs, col, state, device_model, rng)
    return state.params.v_clp + state.params.gain * q


def accumulate_split(input_parts, weight_columns, state: CrossbarState,
                     device_model: DeviceModel | None = None, rng=None) -> float:
    """Integrate several partial dot products onto one capacitor."""
    if len(input_parts) != len(weight_columns):
        raise DimensionMismatch("need one weight column per input part")
    q = sum(_mac_charge(part, col, state, device_model, rng)
            for part, col in zip(input_parts, weight_columns))
    return state.params.v_clp + state.params.gain * q


def generate_ramp(state: CrossbarState, device_model: DeviceModel | None = None, rng=None) -> np.ndarray:
    """V_ramp^q for q = 1..P: bias pulse, then one ADC device per clock."""
    adc, bias = state.adc_column, state.bias_column
    if device_model is not None and device_model.read_sigma > 0:
        bias = device.read(bias, device_model, rng)
        adc = device.read(adc, device_model, rng)
    t = state.params.t_adc
    q0 = state.bias_polarity * float(np.sum(bias)) * t
    charge = np.cumsum(np.concatenate(([q0], adc * t)))[1:]
    return state.params.v_clp + state.params.gain * charge


def ramp_start(state: CrossbarState) -> float:
    """Noise-free integrator voltage right after the bias pulse."""
    return state.params.v_clp + state.params.gain * state.bias_polarity * float(
        np.sum(state.bias_column)) * state.params.t_adc


# ---------------------------------------------------------------------------
# conversion


def convert(v_mac: float, ramp_voltages, bits: int | None = None, t_clk: float = 1.0,
            offset_sigma: float = 0.0, rng=None) -> ConversionResult:
    """Comparator sweep: thermometer[q] = 1 iff V_ramp^q <= v_mac."""
    lv = np.asarray(ramp_voltages, dtype=float)
    if bits is not None and lv.size != 2 ** bits:
        raise DimensionMismatch(f"{bits}-bit conversion needs {2 ** bits} ramp levels")
    ref = lv + rng.normal(0.0, offset_sigma, lv.size) if offset_sigma > 0 else lv
    therm = ref <= v_mac
    code = int(therm.sum())
    return ConversionResult(therm, code, code * t_clk)


def convert_many(v_mac, ramp_voltages) -> np.ndarray:
    """Codes for an array of integrator voltages (ideal comparator)."""
    v = np.asarray(v_mac, dtype=float)
    lv = np.asarray(ramp_voltages, dtype=float)
    return (lv[None, :] <= v.reshape(-1, 1)).sum(axis=1).reshape(v.shape)


def convert_with_initial(v_mac: float, v_start: float, ramp_voltages, t_clk: float = 1.0) -> ConversionResult:
    """Conversion that also compares against the level right after the bias pulse.

    This is the layout used by the split-at-minimum decoder: Out[k] compares
    against the k-th sample x_k, k = 0..P, so n = #{k : x_k <= v}.
    """
    lv = np.concatenate(([v_start], np.asarray(ramp_voltages, dtype=float)))
    therm = lv <= v_mac
    code = int(therm.sum())
    return ConversionResult(therm, code, code * t_clk)


def decode_nonmonotonic(result: ConversionResult, split_index: int = 2, y0: int = -3,
                        width: int | None = None) -> int:
    """Signed output for a ramp split at the function minimum.

    When Out[split_index] is 0 the input sits left of the minimum and the
    result is -n (bitwise invert then add one).  Otherwise the adder forms
    n + y0 - 3.  Both paths run through a ``width``-bit two's-complement adder.
    """
    n = int(result.code)
    offset = y0 - 3
    if width is None:
        width = max(len(result.thermometer), n, abs(offset)).bit_length() + 1
    mask = (1 << width) - 1
    if not result.thermometer[split_index]:
        total = ((~n) & mask) + 1  # MUX selects ~Q, carry-in 1
    else:
        total = n + (offset & mask)
    total &= mask
    if total >> (width - 1):
        total -= 1 << width
    result.signed_result = total
    return total


# ---------------------------------------------------------------------------
# calibration and redundancy


def zero_index(ramp: RampTable) -> int:
    """Index m of the ideal ramp point closest to zero."""
    pts = ramp.points
    if not (pts.min() <= 0 <= pts.max()):
        raise NoZeroCrossing(f"ramp spans [{pts.min():.4g}, {pts.max():.4g}] and never crosses zero")
    return int(np.argmin(np.abs(pts)))


def one_point_calibrate(state: CrossbarState, ideal_ramp: RampTable,
                        device_model: DeviceModel | None = None, rng=None) -> np.ndarray:
    """New bias devices so the programmed ramp hits the ideal V_m at the zero index.

    The ADC column is read back once (with the model's read noise); the
    partial sum up to m gives the required total bias conductance, which is
    split into g_max-sized devices plus a remainder.
    """
    m = zero_index(ideal_ramp)
    g_read = state.adc_column if device_model is None else device.read(state.adc_column, device_model, rng)
    p = state.params
    partial = float(np.sum(g_read[:m])) * p.t_adc
    target = (float(ideal_ramp.points[m]) - 0.0) / p.gain  # charge for V_m relative to V_CLP
    needed = (target - partial) / p.t_adc * state.bias_polarity
    if needed < 0:
        raise ValueError("calibration would need the opposite bias polarity")
    return split_bias(needed)


def calibrated(state: CrossbarState, ideal_ramp: RampTable, device_model: DeviceModel | None = None,
               rng=None, program_model: DeviceModel | None = None) -> CrossbarState:
    """Calibrate and write the new bias devices (with ``program_model`` write noise)."""
    bias = one_point_calibrate(state, ideal_ramp, device_model, rng)
    if program_model is not None:
        bias = device.program(bias, program_model, rng)
    return replace(state, bias_column=bias)


def program_ramp(ramp: RampTable, device_model: DeviceModel, rng, **state_kw) -> CrossbarState:
    """Write an ideal ramp's ADC and bias devices with write-and-verify."""
    adc, bias, _ = map_steps_to_conductance(ramp)
    return CrossbarState.for_ramp(ramp, adc_column=device.program(adc, device_model, rng),
                                  bias_column=device.program(bias, device_model, rng), **state_kw)


def measured_ramp(state: CrossbarState, device_model: DeviceModel | None = None, rng=None) -> np.ndarray:
    """Ramp levels V_1..V_P in normalized units (V_CLP removed)."""
    return generate_ramp(state, device_model, rng) - state.params.v_clp


def select_redundant(copies, ideal: RampTable) -> int:
    """Index of the copy whose ramp has the lowest mean |INL| (first on ties).

    Copies are CrossbarStates or bare ADC conductance columns; bare columns
    are paired with the ideal bias.
    """
    from .metrics import inl

    if not copies:
        raise ValueError("need at least one copy")
    scores = []
    for c in copies:
        st = c if isinstance(c, CrossbarState) else CrossbarState.for_ramp(ideal, adc_column=c)
        rep = inl(measured_ramp(st), ideal.points[1:], ideal.bits, full_scale=ideal.full_scale)
        scores.append(float(np.mean(np.abs(rep.per_code))))
    return int(np.argmin(scores))
