"""LSTM inference through the simulated crossbar and defect-aware training.

Gate blocks are laid out as [forget | cell-input | input | output], each
``hidden_dim`` wide, with activations sigma, tanh, sigma, sigma.  Biases are
carried by a constant-1 input channel (part of the data) and a bias row on
the output projection, so every trainable weight lives in a crossbar.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import crossbar, device
from .activation import RampTable, get_activation, synthesize_ramp
from .device import G_MAX, DeviceModel
from .errors import DimensionMismatch, RangeError

GAMMA = 75.0  # µS per unit weight
CLIP = 2.0
TRAIN_SIGMA = 5.0  # µS, injected during defect-aware training


# ---------------------------------------------------------------------------
# weights and inputs


def clip_weights(w, bound: float = CLIP):
    return np.clip(w, -bound, bound)


def map_weights(w, gamma: float = GAMMA, g_max: float = G_MAX):
    """Differential pair: positive weights on g_plus, negative on g_minus."""
    w = np.asarray(w, dtype=float)
    g = gamma * np.abs(w)
    if np.any(g > g_max * (1 + 1e-12)):
        raise RangeError(f"gamma*|w| exceeds {g_max} µS; clip weights first")
    return np.where(w >= 0, g, 0.0), np.where(w < 0, g, 0.0)


def quantize_input(x, bits: int, x_max: float):
    """Signed PWM pulse count round(clamp(x)/x_max * 2^bits), halves away from zero."""
    if bits < 1 or x_max <= 0:
        raise ValueError("bits must be >= 1 and x_max > 0")
    r = np.clip(np.asarray(x, dtype=float), -x_max, x_max) / x_max * 2 ** bits
    q = np.sign(r) * np.floor(np.abs(r) + 0.5)
    return q.astype(int) if q.ndim else int(q)


# ---------------------------------------------------------------------------
# parameters and state


@dataclass
class LstmParams:
    input_dim: int
    hidden_dim: int
    n_classes: int
    W: np.ndarray  # (input_dim, 4H)
    U: np.ndarray  # (H, 4H)
    fc: np.ndarray  # (H + 1, n_classes), last row is the bias
    gamma: float = GAMMA
    clip: float = CLIP

    def __post_init__(self):
        H = self.hidden_dim
        if self.W.shape != (self.input_dim, 4 * H) or self.U.shape != (H, 4 * H):
            raise DimensionMismatch("W must be (input_dim, 4H) and U must be (H, 4H)")
        if self.fc.shape != (H + 1, self.n_classes):
            raise DimensionMismatch("fc must be (H + 1, n_classes)")
        if self.gamma * self.clip > G_MAX + 1e-9:
            raise RangeError("gamma * clip exceeds the device maximum")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.W, self.U, self.fc

    def with_arrays(self, W, U, fc) -> "LstmParams":
        return replace(self, W=W, U=U, fc=fc)

    def clipped(self) -> "LstmParams":
        return self.with_arrays(*(clip_weights(a, self.clip) for a in self.arrays()))

    def to_json(self) -> str:
        return json.dumps({
            "dims": {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim, "n_classes": self.n_classes},
            "W": self.W.tolist(), "U": self.U.tolist(), "fc": self.fc.tolist(),
            "gamma": self.gamma, "clip": self.clip,
        })

    @classmethod
    def from_json(cls, text: str) -> "LstmParams":
        d = json.loads(text)
        return cls(W=np.array(d["W"], float), U=np.array(d["U"], float), fc=np.array(d["fc"], float),
                   gamma=d["gamma"], clip=d["clip"], **d["dims"])


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


def init_params(input_dim: int, hidden_dim: int, n_classes: int, rng, scale: float = 0.5,
                forget_bias_row: int | None = -1, forget_bias: float = 1.0) -> LstmParams:
    """Uniform(-scale/sqrt(H), scale/sqrt(H)) weights.

    ``forget_bias_row`` names the constant-1 input channel whose forget-gate
    weights start at ``forget_bias`` (None to skip).
    """
    H = hidden_dim
    s = scale / np.sqrt(H)
    W = rng.uniform(-s, s, (input_dim, 4 * H))
    U = rng.uniform(-s, s, (H, 4 * H))
    fc = rng.uniform(-s, s, (H + 1, n_classes))
    if forget_bias_row is not None:
        W[forget_bias_row, :H] = forget_bias
    return LstmParams(input_dim, H, n_classes, W, U, fc)


# ---------------------------------------------------------------------------
# backends


class FloatBackend:
    """Exact activations and full-precision arithmetic."""

    def __init__(self, params: LstmParams, weights=None):
        self.params = params
        self.W, self.U, self.fc = params.arrays() if weights is None else weights

    def preact(self, x, h):
        return x @ self.W + h @ self.U

    def gates(self, x, h):
        z = self.preact(x, h)
        H = self.params.hidden_dim
        return expit(z[..., :H]), np.tanh(z[..., H:2 * H]), expit(z[..., 2 * H:3 * H]), expit(z[..., 3 * H:])

    def cell_tanh(self, c):
        return np.tanh(c)

    def logits(self, h):
        return h @ self.fc[:-1] + self.fc[-1]


@dataclass
class Chip:
    """One programmed crossbar instance of an LSTM plus its two NL-ADC columns."""

    params: LstmParams
    g_plus: tuple  # (W|U stacked, fc)
    g_minus: tuple
    ramps: dict  # name -> (RampTable, CrossbarState)
    bits: int
    x_max: float
    device_model: DeviceModel | None


def program_chip(params: LstmParams, device_model: DeviceModel | None, rng, bits: int = 5,
                 x_max: float = 1.0, calibrate: bool = True) -> Chip:
    """Write weights and the sigmoid/tanh ramp columns with write-and-verify noise."""
    p = params.clipped()
    gp, gm = [], []
    for mat in (np.vstack([p.W, p.U]), p.fc):
        a, b = map_weights(mat, p.gamma)
        if device_model is not None:
            a, b = device.program(a, device_model, rng), device.program(b, device_model, rng)
        gp.append(a)
        gm.append(b)
    ramps = {}
    for name in ("sigmoid", "tanh"):
        ramp = synthesize_ramp(get_activation(name), bits)
        if device_model is None:
            st = crossbar.CrossbarState.for_ramp(ramp)
        else:
            st = crossbar.program_ramp(ramp, device_model, rng)
            if calibrate:
                st = crossbar.calibrated(st, ramp, device_model, rng, program_model=device_model)
        ramps[name] = (ramp, st)
    return Chip(p, tuple(gp), tuple(gm), ramps, bits, x_max, device_model)


class CrossbarBackend:
    """Quantized inputs, noisy conductances and NL-ADC activations.

    MAC integrators are sized so one unit of weight times one unit of input
    integrates to one normalized volt, which is the input domain of the ramps.
    Read noise is redrawn by :meth:`new_batch`.
    """

    def __init__(self, chip: Chip, rng=None, quantize_inputs: bool = True):
        self.chip = chip
        self.params = chip.params
        self.rng = rng
        self.quantize_inputs = quantize_inputs
        self.new_batch()

    def new_batch(self):
        ch, dm = self.chip, self.chip.device_model
        noisy = dm is not None and dm.read_sigma > 0
        rd = (lambda g: device.read(g, dm, self.rng)) if noisy else (lambda g: g)
        self.WU, self.fc = [(rd(a) - rd(b)) / ch.params.gamma for a, b in zip(ch.g_plus, ch.g_minus)]
        self.levels = {}
        for name, (ramp, st) in ch.ramps.items():
            self.levels[name] = (ramp, crossbar.measured_ramp(st, dm if noisy else None, self.rng))

    def _q(self, v, bound):
        if not self.quantize_inputs:
            return v
        return quantize_input(v, self.chip.bits, bound) * (bound / 2 ** self.chip.bits)

    def _act(self, name, z):
        ramp, lv = self.levels[name]
        return ramp.grid[crossbar.convert_many(z, lv)]

    def preact(self, x, h):
        xh = np.concatenate([self._q(x, self.chip.x_max), self._q(h, 1.0)], axis=-1)
        return xh @ self.WU

    def gates(self, x, h):
        z = self.preact(x, h)
        H = self.params.hidden_dim
        return (self._act("sigmoid", z[..., :H]), self._act("tanh", z[..., H:2 * H]),
                self._act("sigmoid", z[..., 2 * H:3 * H]), self._act("sigmoid", z[..., 3 * H:]))

    def cell_tanh(self, c):
        return self._act("tanh", c)

    def logits(self, h):
        return self._q(h, 1.0) @ self.fc[:-1] + self.fc[-1]


def lstm_step(state: LstmState, x, backend, bits: int | None = None, rng=None) -> LstmState:
    """One LSTM update: c = f*c + i*a, h = o*tanh(c).

    ``bits`` and ``rng`` only apply to a crossbar backend: ``bits`` must match
    the chip and ``rng`` replaces the backend's read-noise generator.
    """
    if isinstance(backend, CrossbarBackend):
        if bits is not None and bits != backend.chip.bits:
            raise ValueError(f"backend was programmed for {backend.chip.bits} bits, not {bits}")
        if rng is not None:
            backend.rng = rng
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != backend.params.input_dim or state.h.shape[-1] != backend.params.hidden_dim:
        raise DimensionMismatch("input or state width does not match the model")
    f, a, i, o = backend.gates(x, state.h)
    c = f * state.c + i * a
    return LstmState(o * backend.cell_tanh(c), c)


def run_sequence(X, backend) -> np.ndarray:
    """Logits after the last step for a batch X of shape (B, T, D)."""
    X = np.asarray(X, dtype=float)
    st = LstmState.zeros(backend.params.hidden_dim, X.shape[0])
    for t in range(X.shape[1]):
        st = lstm_step(st, X[:, t], backend)
    return backend.logits(st.h)


# ---------------------------------------------------------------------------
# training


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
    d = p
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def loss_and_grads(params: LstmParams, X, y, weights=None):
    """Cross-entropy of the last-step logits and exact BPTT gradients."""
    W, U, fc = params.arrays() if weights is None else weights
    X = np.asarray(X, dtype=float)
    B, T, _ = X.shape
    H = params.hidden_dim
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        z = X[:, t] @ W + h @ U
        f, a, i, o = expit(z[:, :H]), np.tanh(z[:, H:2 * H]), expit(z[:, 2 * H:3 * H]), expit(z[:, 3 * H:])
        c_new = f * c + i * a
        tc = np.tanh(c_new)
        cache.append((h, c, f, a, i, o, tc))
        h, c = o * tc, c_new
    logits = h @ fc[:-1] + fc[-1]
    loss, dlog = _softmax_xent(logits, np.asarray(y))

    dfc = np.vstack([h.T @ dlog, dlog.sum(axis=0, keepdims=True)])
    dW, dU = np.zeros_like(W), np.zeros_like(U)
    dh = dlog @ fc[:-1].T
    dc = np.zeros((B, H))
    for t in reversed(range(T)):
        h_prev, c_prev, f, a, i, o, tc = cache[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        dz = np.concatenate([dc * c_prev * f * (1 - f), dc * i * (1 - a ** 2),
                             dc * a * i * (1 - i), do * o * (1 - o)], axis=1)
        dW += X[:, t].T @ dz
        dU += h_prev.T @ dz
        dh = dz @ U.T
        dc = dc * f
    return loss, (dW, dU, dfc)


def defect_aware_train(model: LstmParams, dataset, epochs: int, sigma_inject: float = TRAIN_SIGMA,
                       gamma: float | None = None, rng=None, lr: float = 0.5,
                       batch_size: int = 32, history: list | None = None) -> LstmParams:
    """SGD where every forward/backward pass sees W = W_mu + eps * W_sigma.

    W_sigma = sigma_inject / gamma converts the conductance noise (µS) to
    weight units; the gradient computed at the noisy weights updates the
    clean weights, which are then clipped.
    """
    if sigma_inject < 0:
        raise ValueError("sigma_inject must be >= 0")
    rng = np.random.default_rng(rng)
    gamma = model.gamma if gamma is None else gamma
    X, y = dataset
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    w_sigma = sigma_inject / gamma
    params = model.clipped()
    mats = [a.copy() for a in params.arrays()]
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            noisy = [m + rng.normal(0.0, w_sigma, m.shape) for m in mats] if w_sigma > 0 else mats
            loss, grads = loss_and_grads(params, X[idx], y[idx], weights=noisy)
            mats = [clip_weights(m - lr * g, params.clip) for m, g in zip(mats, grads)]
            if history is not None:
                history.append(loss)
    return params.with_arrays(*mats)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(params: LstmParams, X, y, backend=None, batch_size: int = 256) -> float:
    """Classification accuracy; read noise is redrawn for every mini-batch."""
    backend = FloatBackend(params) if backend is None else backend
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    correct = 0
    for s in range(0, len(y), batch_size):
        if isinstance(backend, CrossbarBackend) and s > 0:
            backend.new_batch()
        logits = run_sequence(X[s:s + batch_size], backend)
        correct += int(np.sum(np.argmax(logits, axis=1) == y[s:s + batch_size]))
    return correct / len(y)


def chip_seeds(seed: int, n_chips: int):
    return np.random.SeedSequence(seed).spawn(n_chips)


def noisy_inference(model: LstmParams, inputs, device_model: DeviceModel | None, n_chips: int,
                    rng=0, bits: int = 5, x_max: float = 1.0, batch_size: int = 256,
                    threads: int = 1) -> dict:
    """Accuracy over ``n_chips`` independently programmed crossbars.

    ``inputs`` is (X, y).  ``rng`` is an integer seed (or a Generator from
    which one is drawn); chip i uses the i-th spawned child seed.
    """
    if n_chips < 1:
        raise ValueError("n_chips must be >= 1")
    seed = int(rng.integers(2 ** 63)) if isinstance(rng, np.random.Generator) else int(rng)
    X, y = inputs

    def one(ss):
        r = np.random.default_rng(ss)
        chip = program_chip(model, device_model, r, bits, x_max)
        return evaluate(model, X, y, CrossbarBackend(chip, r), batch_size)

    seqs = chip_seeds(seed, n_chips)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            accs = list(ex.map(one, seqs))
    else:
        accs = [one(s) for s in seqs]
    return {"mean": float(np.mean(accs)), "std": float(np.std(accs)), "per_chip": [float(a) for a in accs],
            "n_chips": n_chips, "seed": seed}


# ---------------------------------------------------------------------------
# data


def delayed_xor(n: int, seq_len: int = 6, rng=None):
    """Random +/-1 bits each step plus a constant-1 channel; label is XOR of the first two bits."""
    rng = np.random.default_rng(rng)
    bits = rng.integers(0, 2, (n, seq_len))
    X = np.empty((n, seq_len, 2))
    X[:, :, 0] = 2.0 * bits - 1.0
    X[:, :, 1] = 1.0
    y = (bits[:, 0] ^ bits[:, 1]).astype(int)
    return X, y


def write_dataset_rows(X, y, fh) -> None:
    X = np.asarray(X)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sequence_id", "t"] + [f"x{d}" for d in range(X.shape[2])] + ["label"])
    for s in range(X.shape[0]):
        for t in range(X.shape[1]):
            w.writerow([s, t] + [repr(float(v)) for v in X[s, t]] + [int(y[s])])


def write_dataset_csv(X, y, path) -> None:
    with open(path, "w", newline="") as fh:
        write_dataset_rows(X, y, fh)


def read_dataset_csv(path):
    """Load (X, y) from sequence_id,t,features...,label rows (equal-length sequences)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if header[:2] != ["sequence_id", "t"] or header[-1] != "label":
        raise ValueError("dataset header must be sequence_id,t,features...,label")
    data = np.array([[float(v) for v in r] for r in rows])
    seq = data[:, 0].astype(int)
    ids = np.unique(seq)
    T = int(np.sum(seq == ids[0]))
    if len(data) != len(ids) * T:
        raise ValueError("all sequences must have the same length")
    order = np.lexsort((data[:, 1], seq))
    data = data[order]
    X = data[:, 2:-1].reshape(len(ids), T, -1)
    y = data[::T, -1].astype(int)
    return X, y
