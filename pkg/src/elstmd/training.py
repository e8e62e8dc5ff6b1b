"""Penalty-weighted loss, exact backpropagation through time, and the training loop."""
import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError
from .kernels import lstm_layer_backward
from .model import GATES, LstmState, forward, init_model
from .numeric import frobenius_sq

log = logging.getLogger(__name__)

DEFAULT_BETA = 1.5
DEFAULT_ALPHA = 1e-4
DEFAULT_LR = 1e-3
CLIP_NORM = 5.0


@dataclass
class LossConfig:
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    learning_rate: float = DEFAULT_LR

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    data_loss: list = field(default_factory=list)
    reg_loss: list = field(default_factory=list)
    total_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def append(self, epoch, data, reg, total, seconds):
        self.epoch.append(epoch)
        self.data_loss.append(data)
        self.reg_loss.append(reg)
        self.total_loss.append(total)
        self.seconds.append(seconds)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L", "L_reg", "L_total", "seconds"])
            for row in zip(self.epoch, self.data_loss, self.reg_loss, self.total_loss, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), f"{row[4]:.6f}"])


def build_penalty(target, beta=DEFAULT_BETA):
    """Loss weights: ``beta`` on existing links, 1 elsewhere, 0 on the diagonal."""
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    target = np.asarray(target)
    P = np.where(target != 0, float(beta), 1.0)
    np.fill_diagonal(P, 0.0)
    return P


def data_loss(target, scores, P):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != scores.shape or P.shape != scores.shape:
        raise ShapeError(f"loss shapes differ: target {target.shape}, scores {scores.shape}, P {P.shape}")
    return frobenius_sq((target - scores) * P)


def reg_loss(params):
    arrays = params.named_arrays()
    return 0.5 * sum(frobenius_sq(arrays[name]) for name in params.weight_names())


def total_loss(target, scores, params, cfg, P=None):
    if P is None:
        P = build_penalty(target, cfg.beta)
    return data_loss(target, scores, P) + cfg.alpha * reg_loss(params)


def _dense_backward(layers, acts, dz, into, prefix, need_input_grad):
    """Backprop through a dense stack whose pre-activation gradient at the top is ``dz``.

    ``acts[k]`` is the input to layer k and ``acts[k + 1]`` its ReLU output.
    """
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        np.matmul(dz.T, acts[k], out=into[f"{prefix}.{k}.W"])
        into[f"{prefix}.{k}.b"][:, 0] = dz.sum(axis=0)
        if k > 0 or need_input_grad:
            dprev = dz @ layer.W
            if k > 0:
                dz = dprev * (acts[k] > 0)
    return dprev if need_input_grad else None


def backward(params, trace, window, P, cfg, backend=None):
    """Exact gradients of the total loss for one window, keyed like ``params.named_arrays()``."""
    target = np.asarray(window.target if hasattr(window, "target") else window, dtype=np.float64)
    S = trace.scores
    if S.shape != target.shape or P.shape != target.shape:
        raise ShapeError("trace does not match window/penalty shapes (stale trace?)")
    grads = params.zero_gradients()

    # decoder: sigmoid output, ReLU hidden layers
    dS = -2.0 * (P * P) * (target - S)
    dz = dS * S * (1.0 - S)
    dH = _dense_backward(params.decoder, trace.dec_acts, dz, grads, "decoder", need_input_grad=True)

    # stacked LSTM, top cell first, full BPTT
    top_rec = trace.lstm_records[-1]
    dh_ext = np.zeros(top_rec.h.shape)
    dh_ext[-1] = dH
    for l in range(len(params.lstm) - 1, -1, -1):
        cell = params.lstm[l]
        rec = trace.lstm_records[l]
        if rec.z.shape[2] != cell.W.shape[1]:
            raise ShapeError("trace does not match LSTM parameters (stale trace?)")
        gW, gb, dh_ext = lstm_layer_backward(cell.W, rec.z, rec.gates, rec.C, rec.tanh_C, dh_ext,
                                                  backend=backend)
        d = cell.d
        for k, g in enumerate(GATES):
            grads[f"lstm.{l}.W_{g}"][...] = gW[k * d:(k + 1) * d]
            grads[f"lstm.{l}.b_{g}"][:, 0] = gb[k * d:(k + 1) * d]

    # encoder, shared across the N timesteps
    dY = dh_ext.reshape(-1, dh_ext.shape[2])
    top = trace.enc_acts[-1]
    dz = dY * (top > 0)
    _dense_backward(params.encoder, trace.enc_acts, dz, grads, "encoder", need_input_grad=False)

    if cfg.alpha:
        mask = params.weight_mask()
        grads.flat[mask] += cfg.alpha * params.flat[mask]
    return grads


def _flat(params, grads):
    """Gradient as one vector in the parameter buffer's layout."""
    flat = getattr(grads, "flat", None)
    if flat is not None and flat.shape == params.flat.shape:
        return flat
    out = params.zero_gradients()
    for name, g in grads.items():
        if name not in out:
            raise ShapeError(f"unknown parameter {name}")
        if out[name].shape != np.shape(g):
            raise ShapeError(f"gradient for {name} has shape {np.shape(g)}, expected {out[name].shape}")
        out[name][...] = g
    return out.flat


def global_norm(grads):
    return float(np.sqrt(sum(frobenius_sq(g) for g in grads.values())))


def clip_global_norm(grads, max_norm=CLIP_NORM):
    """Rescale in place so the global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads


def _check_finite(flat):
    if not np.isfinite(flat).all():
        raise DivergenceError("non-finite gradient")


def sgd_step(params, grads, learning_rate=DEFAULT_LR):
    """In-place ``W <- W - lr * dL/dW`` for every parameter."""
    g = _flat(params, grads)
    _check_finite(g)
    params.flat -= learning_rate * g
    return params


class SGD:
    def __init__(self, learning_rate):
        self.learning_rate = learning_rate

    def step(self, params, grads):
        sgd_step(params, grads, self.learning_rate)


class Adam:
    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        g = _flat(params, grads)
        _check_finite(g)
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        params.flat -= (self.learning_rate / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)


def make_optimizer(name, learning_rate):
    if name == "sgd":
        return SGD(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")


def train(split, config, cfg, epochs, seed=0, optimizer="sgd", stateful=False, clip=False,
          params=None, log_every=0):
    """Fit the model on ``split.train``, one window per update, windows in time order.

    Returns ``(params, history)``. Raises ``DivergenceError`` (carrying the
    history so far) if the loss or a gradient goes non-finite.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    train_windows = split.train if hasattr(split, "train") else list(split)
    if not train_windows:
        raise ValueError("training set is empty")
    if params is None:
        params = init_model(config, seed)
    opt = make_optimizer(optimizer, cfg.learning_rate)
    history = TrainHistory()
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        state = None
        losses = []
        for w in train_windows:
            scores, trace = forward(params, w, state)
            P = build_penalty(w.target, cfg.beta)
            L = data_loss(w.target, scores, P)
            if not np.isfinite(L):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}", history)
            losses.append(L)
            grads = backward(params, trace, w, P, cfg)
            if not np.isfinite(grads.flat).all():
                raise DivergenceError(f"non-finite gradient at epoch {epoch}", history)
            if clip:
                grads = clip_global_norm(grads)
            opt.step(params, grads)
            if stateful:
                state = [LstmState(s.h.copy(), s.C.copy()) for s in trace.final_state]
        L_mean = float(np.mean(losses))
        L_reg = reg_loss(params)
        history.append(epoch, L_mean, L_reg, L_mean + cfg.alpha * L_reg, time.perf_counter() - t0)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d  L=%.6g  L_reg=%.6g", epoch, L_mean, L_reg)
    return params, history


def predict_windows(params, windows, stateful=False, warmup=()):
    """Scores for each window in order. In stateful mode the LSTM state is carried
    through ``warmup`` windows first and then across ``windows``."""
    state = None
    if stateful:
        for w in warmup:
            _, trace = forward(params, w, state)
            state = trace.final_state
    out = []
    for w in windows:
        scores, trace = forward(params, w, state if stateful else None)
        if stateful:
            state = trace.final_state
        out.append(scores)
    return out
