"""Encoder -> stacked LSTM -> decoder forward pass.

Every layer acts on node rows with weights shared across nodes: a snapshot
``(n, n)`` goes through the encoder to ``(n, d_enc)``, the LSTM runs each node
row through time, and the decoder maps the final hidden state back to
``(n, n)`` link scores.
"""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .kernels import lstm_layer_forward
from .numeric import SeededRng, glorot_init, read_matrix, relu, sigmoid, write_matrix

GATES = ("f", "i", "C", "o")
FORGET_BIAS = 1.0

# unit counts per dataset (encoder / stacked LSTM / decoder)
PRESETS = {
    "contact": ([128], [256, 256], [274]),
    "enron": ([128], [256, 256], [151]),
    "radoslaw": ([128], [256, 256], [167]),
    "fb-forum": ([512, 256], [384, 384], [256, 899]),
    "lkml": ([1024, 512], [384, 384], [512, 2210]),
}


@dataclass
class ModelConfig:
    n: int
    window_len: int
    encoder_dims: list
    lstm_dims: list
    decoder_dims: list

    def __post_init__(self):
        self.encoder_dims = [int(d) for d in self.encoder_dims]
        self.lstm_dims = [int(d) for d in self.lstm_dims]
        self.decoder_dims = [int(d) for d in self.decoder_dims]
        self.validate()

    def validate(self):
        if self.n < 1 or self.window_len < 1:
            raise ShapeError("n and window_len must be positive")
        if not self.encoder_dims or not self.lstm_dims or not self.decoder_dims:
            raise ShapeError("encoder, lstm and decoder each need at least one layer")
        if min(self.encoder_dims + self.lstm_dims + self.decoder_dims) < 1:
            raise ShapeError("layer widths must be positive")
        if self.decoder_dims[-1] != self.n:
            raise ShapeError(f"decoder output width {self.decoder_dims[-1]} must equal n={self.n}")

    @classmethod
    def preset(cls, name, window_len=10):
        enc, lstm, dec = PRESETS[name]
        return cls(n=dec[-1], window_len=window_len, encoder_dims=enc, lstm_dims=lstm, decoder_dims=dec)

    def to_dict(self):
        return {
            "n": self.n,
            "window_len": self.window_len,
            "encoder_dims": list(self.encoder_dims),
            "lstm_dims": list(self.lstm_dims),
            "decoder_dims": list(self.decoder_dims),
        }


@dataclass
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out, 1)


class LstmCell:
    """One LSTM layer. The four gate weights are row blocks of a single matrix.

    ``W_f``, ``W_i``, ``W_C``, ``W_o`` (each ``d x (d + d_in)``, acting on the
    concatenation ``[h_prev, x]``) and the matching biases are views into
    ``W`` and ``b``, so in-place updates through either name are shared.
    """

    def __init__(self, W, b):
        self.W = W
        self.b = b
        self.d = W.shape[0] // 4
        self.d_in = W.shape[1] - self.d

    def gate_W(self, g):
        k = GATES.index(g)
        return self.W[k * self.d:(k + 1) * self.d]

    def gate_b(self, g):
        k = GATES.index(g)
        return self.b[k * self.d:(k + 1) * self.d]

    W_f = property(lambda self: self.gate_W("f"))
    W_i = property(lambda self: self.gate_W("i"))
    W_C = property(lambda self: self.gate_W("C"))
    W_o = property(lambda self: self.gate_W("o"))
    b_f = property(lambda self: self.gate_b("f"))
    b_i = property(lambda self: self.gate_b("i"))
    b_C = property(lambda self: self.gate_b("C"))
    b_o = property(lambda self: self.gate_b("o"))


@dataclass
class LstmState:
    h: np.ndarray
    C: np.ndarray

    @classmethod
    def zeros(cls, n, d):
        return cls(np.zeros((n, d)), np.zeros((n, d)))


@dataclass
class GateRecord:
    z: np.ndarray  # [h_prev, x]
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray  # candidate state C~
    o: np.ndarray
    C_prev: np.ndarray
    C: np.ndarray
    tanh_C: np.ndarray
    h: np.ndarray


@dataclass
class LayerTrace:
    """One cell's activations over the whole window, stacked on a leading time axis."""

    z: np.ndarray  # (N, n, d + d_in)
    gates: np.ndarray  # (N, n, 4d), activated, order f, i, C~, o
    C: np.ndarray  # (N + 1, n, d), C[0] is the incoming state
    tanh_C: np.ndarray  # (N, n, d)
    h: np.ndarray  # (N, n, d)

    def __len__(self):
        return self.h.shape[0]

    def step(self, t):
        d = self.h.shape[2]
        g = self.gates[t]
        return GateRecord(self.z[t], g[:, :d], g[:, d:2 * d], g[:, 2 * d:3 * d], g[:, 3 * d:],
                          self.C[t], self.C[t + 1], self.tanh_C[t], self.h[t])


class Gradients(dict):
    """Per-parameter gradients (values are views into the contiguous ``flat`` vector)."""

    def __init__(self, flat, views):
        super().__init__(views)
        self.flat = flat


@dataclass
class ModelParams:
    """All weights and biases. On construction every array is moved into one
    contiguous ``flat`` buffer and the layers hold views into it."""

    encoder: list
    lstm: list
    decoder: list

    def __post_init__(self):
        slots = []
        for layer in self.encoder + self.lstm + self.decoder:
            slots.append((layer, "W"))
            slots.append((layer, "b"))
        total = sum(getattr(obj, attr).size for obj, attr in slots)
        self.flat = np.empty(total)
        offset = 0
        for obj, attr in slots:
            arr = np.asarray(getattr(obj, attr), dtype=np.float64)
            view = self.flat[offset:offset + arr.size].reshape(arr.shape)
            view[...] = arr
            setattr(obj, attr, view)
            offset += arr.size
        base = self.flat.__array_interface__["data"][0]
        self._layout = {}
        for name, arr in self.named_arrays().items():
            start = (arr.__array_interface__["data"][0] - base) // 8
            self._layout[name] = (start, arr.shape)

    def named_arrays(self):
        """Every trainable array by name. Gate entries are views into the stacked cell matrices."""
        out = {}
        for k, layer in enumerate(self.encoder):
            out[f"encoder.{k}.W"] = layer.W
            out[f"encoder.{k}.b"] = layer.b
        for l, cell in enumerate(self.lstm):
            for g in GATES:
                out[f"lstm.{l}.W_{g}"] = cell.gate_W(g)
            for g in GATES:
                out[f"lstm.{l}.b_{g}"] = cell.gate_b(g)
        for k, layer in enumerate(self.decoder):
            out[f"decoder.{k}.W"] = layer.W
            out[f"decoder.{k}.b"] = layer.b
        return out

    def weight_names(self):
        """Names of the matrices covered by the L2 regulariser (biases excluded)."""
        return [name for name in self._layout if ".W" in name]

    def weight_mask(self):
        mask = np.zeros(self.flat.size, dtype=bool)
        for name in self.weight_names():
            start, shape = self._layout[name]
            mask[start:start + int(np.prod(shape))] = True
        return mask

    def zero_gradients(self):
        flat = np.zeros_like(self.flat)
        views = {name: flat[start:start + int(np.prod(shape))].reshape(shape)
                 for name, (start, shape) in self._layout.items()}
        return Gradients(flat, views)

    def copy(self):
        return ModelParams(
            encoder=[DenseLayer(l.W.copy(), l.b.copy()) for l in self.encoder],
            lstm=[LstmCell(c.W.copy(), c.b.copy()) for c in self.lstm],
            decoder=[DenseLayer(l.W.copy(), l.b.copy()) for l in self.decoder],
        )


@dataclass
class ForwardTrace:
    enc_acts: list  # [X, Y_e^(1), ..., Y_e^(K)], each (N*n, width)
    lstm_records: list  # per cell LayerTrace
    initial_state: list  # per cell LstmState fed in at t=0
    dec_acts: list = field(default_factory=list)  # [H, Y_d^(1), ..., scores]

    @property
    def H(self):
        return self.dec_acts[0]

    @property
    def scores(self):
        return self.dec_acts[-1]

    @property
    def final_state(self):
        return [LstmState(rec.h[-1], rec.C[-1]) for rec in self.lstm_records]


def init_model(config, seed=0):
    config.validate()
    rng = SeededRng(seed)
    encoder = []
    width = config.n
    for d in config.encoder_dims:
        encoder.append(DenseLayer(glorot_init(d, width, rng), np.zeros((d, 1))))
        width = d
    lstm = []
    for d in config.lstm_dims:
        W = np.vstack([glorot_init(d, d + width, rng) for _ in GATES])
        b = np.zeros((4 * d, 1))
        b[:d] = FORGET_BIAS
        lstm.append(LstmCell(W, b))
        width = d
    decoder = []
    for d in config.decoder_dims:
        decoder.append(DenseLayer(glorot_init(d, width, rng), np.zeros((d, 1))))
        width = d
    return ModelParams(encoder, lstm, decoder)


def _window_inputs(window):
    x = window.inputs if hasattr(window, "inputs") else window
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ShapeError(f"window inputs must be (N, n, n), got {x.shape}")
    return x


def _encode_acts(params, x):
    N, n, _ = x.shape
    if params.encoder[0].W.shape[1] != n:
        raise ShapeError(f"encoder expects {params.encoder[0].W.shape[1]} columns, snapshot has {n}")
    acts = [x.reshape(N * n, n)]
    for layer in params.encoder:
        acts.append(relu(acts[-1] @ layer.W.T + layer.b.T))
    return acts


def encode(params, window):
    """Per-snapshot encoder features, ordered by time: a list of N ``(n, d_enc)`` matrices."""
    x = _window_inputs(window)
    N, n, _ = x.shape
    top = _encode_acts(params, x)[-1]
    return [top[t * n:(t + 1) * n] for t in range(N)]


def lstm_step(cell, state, x):
    if x.shape[1] != cell.d_in or state.h.shape[1] != cell.d or state.h.shape[0] != x.shape[0]:
        raise ShapeError(f"lstm_step shapes: x {x.shape}, h {state.h.shape}, cell d={cell.d} d_in={cell.d_in}")
    d = cell.d
    z = np.concatenate([state.h, x], axis=1)
    a = z @ cell.W.T + cell.b.T
    s = sigmoid(a)
    f, i, o = s[:, :d], s[:, d:2 * d], s[:, 3 * d:]
    g = np.tanh(a[:, 2 * d:3 * d])
    C = f * state.C + i * g
    tanh_C = np.tanh(C)
    h = o * tanh_C
    return LstmState(h, C), GateRecord(z, f, i, g, o, state.C, C, tanh_C, h)


def _lstm_records(cells, features, state=None, backend=None):
    if len(features) == 0:
        raise ShapeError("stacked LSTM needs at least one timestep")
    xs = np.stack(features) if isinstance(features, (list, tuple)) else features
    n = xs.shape[1]
    records, initial = [], []
    for l, cell in enumerate(cells):
        if xs.shape[2] != cell.d_in:
            raise ShapeError(f"LSTM cell {l} expects input width {cell.d_in}, got {xs.shape[2]}")
        st = state[l] if state is not None else LstmState.zeros(n, cell.d)
        initial.append(st)
        Z, G, Cs, TC, Hs = lstm_layer_forward(cell.W, cell.b, xs, st.h, st.C, backend=backend)
        records.append(LayerTrace(Z, G, Cs, TC, Hs))
        xs = Hs
    return records, initial


def stacked_lstm_forward(cells, features, state=None):
    """Final-timestep hidden state of the top cell, ``(n, lstm_dims[-1])``."""
    records, _ = _lstm_records(cells, features, state)
    return records[-1].h[-1]


def _decode_acts(params, H):
    if H.shape[1] != params.decoder[0].W.shape[1]:
        raise ShapeError(f"decoder expects width {params.decoder[0].W.shape[1]}, got {H.shape[1]}")
    acts = [H]
    last = len(params.decoder) - 1
    for k, layer in enumerate(params.decoder):
        z = acts[-1] @ layer.W.T + layer.b.T
        acts.append(sigmoid(z) if k == last else relu(z))
    return acts


def decode(params, H):
    return _decode_acts(params, np.asarray(H, dtype=np.float64))[-1]


def forward(params, window, state=None, backend=None):
    """Scores for the window's target snapshot plus the trace needed for backprop.

    ``state`` optionally seeds each cell's (h, C); by default every window
    starts from zeros.
    """
    x = _window_inputs(window)
    N, n, _ = x.shape
    enc = _encode_acts(params, x)
    top = enc[-1]
    records, initial = _lstm_records(params.lstm, top.reshape(N, n, -1), state, backend)
    dec = _decode_acts(params, records[-1].h[-1])
    trace = ForwardTrace(enc_acts=enc, lstm_records=records, initial_state=initial, dec_acts=dec)
    return dec[-1], trace


def binarize(scores, threshold=0.5):
    out = (np.asarray(scores) >= threshold).astype(np.uint8)
    np.fill_diagonal(out, 0)
    return out


def embed(params, window, state=None):
    """Node embeddings: the stacked LSTM output for the window, one row per node."""
    return stacked_lstm_forward(params.lstm, encode(params, window), state)


# --------------------------------------------------------------------------
# checkpoints: directory with manifest.json and one matrix blob per array


def save_checkpoint(path, params, config, seed=None, epoch=None, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = []
    for name, arr in params.named_arrays().items():
        write_matrix(path / f"{name}.bin", arr)
        names.append(name)
    manifest = {"config": config.to_dict(), "seed": seed, "epoch": epoch, "arrays": names}
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    config = ModelConfig(**manifest["config"])
    params = init_model(config, seed=0)
    arrays = params.named_arrays()
    for name in manifest["arrays"]:
        blob = read_matrix(path / f"{name}.bin")
        if blob.shape != arrays[name].shape:
            raise ShapeError(f"checkpoint array {name} has shape {blob.shape}, expected {arrays[name].shape}")
        arrays[name][...] = blob
    return params, config, manifest


def checkpoint_digest(path):
    """SHA-256 over every weight blob, in name order."""
    path = Path(path)
    h = hashlib.sha256()
    for blob in sorted(path.glob("*.bin")):
        h.update(blob.name.encode())
        h.update(blob.read_bytes())
    return h.hexdigest()
