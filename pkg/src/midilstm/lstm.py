"""Stacked LSTM over concatenated one-hot (note, duration) inputs with two
softmax heads, plus the full backward pass through time.

Cell equations, with z = [h_prev, x] and elementwise products:

    f = sigmoid(W_f z + b_f)          forget gate
    i = sigmoid(W_i z + b_i)          input gate
    g = tanh(W_g z + b_g)             candidate cell values
    c = f * c_prev + i * g
    o = sigmoid(W_o z + b_o)          output gate
    h = o * tanh(c)

Inverted dropout is applied to each layer's h on the way up to the next
layer (train mode only); the recurrent h -> h_next connection and the head
input are never dropped. Only the final timestep feeds the heads, and the
training loss is the sum of the two head cross-entropies.

``model_backward`` returns gradients of the loss summed over the batch;
callers that want batch means divide by the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch, StaleCache
from .numerics import (
    Rng,
    check_finite,
    matmul,
    sigmoid,
    softmax,
    tanh_act,
    xavier_init,
    zeros,
)

GATES = ("forget", "input", "cand", "output")
FORGET_BIAS_INIT = 1.0


@dataclass
class ModelConfig:
    note_vocab_size: int
    dur_vocab_size: int
    hidden_sizes: tuple[int, ...] = (512, 512, 512)
    dropout: float = 0.3
    window_len: int = 50

    @property
    def input_width(self) -> int:
        return self.note_vocab_size + self.dur_vocab_size

    def validate(self) -> None:
        if self.note_vocab_size < 1 or self.dur_vocab_size < 1:
            raise ShapeMismatch("vocabulary sizes must be positive")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ShapeMismatch(f"bad hidden sizes {self.hidden_sizes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ShapeMismatch(f"dropout {self.dropout} outside [0, 1)")
        if self.window_len < 1:
            raise ShapeMismatch(f"window_len {self.window_len} must be >= 1")


@dataclass
class LstmLayerParams:
    """One layer's gate weights: w_* is (hidden, hidden+in), b_* is (1, hidden)."""

    w_forget: np.ndarray
    b_forget: np.ndarray
    w_input: np.ndarray
    b_input: np.ndarray
    w_cand: np.ndarray
    b_cand: np.ndarray
    w_output: np.ndarray
    b_output: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_forget.shape[0]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: Rng) -> "LstmLayerParams":
        width = hidden_size + input_size
        fields = {}
        for gate in GATES:
            fields[f"w_{gate}"] = xavier_init(hidden_size, width, rng)
            bias = zeros(1, hidden_size)
            if gate == "forget":
                bias += FORGET_BIAS_INIT
            fields[f"b_{gate}"] = bias
        return cls(**fields)


@dataclass
class ModelParams:
    layers: list[LstmLayerParams]
    w_note: np.ndarray
    b_note: np.ndarray
    w_dur: np.ndarray
    b_dur: np.ndarray

    @classmethod
    def init(cls, config: ModelConfig, rng: Rng) -> "ModelParams":
        config.validate()
        layers = []
        in_size = config.input_width
        for hidden in config.hidden_sizes:
            layers.append(LstmLayerParams.init(in_size, hidden, rng))
            in_size = hidden
        top = config.hidden_sizes[-1]
        return cls(
            layers=layers,
            w_note=xavier_init(top, config.note_vocab_size, rng),
            b_note=zeros(1, config.note_vocab_size),
            w_dur=xavier_init(top, config.dur_vocab_size, rng),
            b_dur=zeros(1, config.dur_vocab_size),
        )

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) ordering used by the optimizer,
        checkpoints, and the gradient check."""
        out = []
        for i, layer in enumerate(self.layers):
            for gate in GATES:
                out.append((f"layer{i}.{gate}.w", getattr(layer, f"w_{gate}")))
                out.append((f"layer{i}.{gate}.b", getattr(layer, f"b_{gate}")))
        out.append(("head_note.w", self.w_note))
        out.append(("head_note.b", self.b_note))
        out.append(("head_dur.w", self.w_dur))
        out.append(("head_dur.b", self.b_dur))
        return out

    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.named_params())


@dataclass
class StepCache:
    z: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    c_prev: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


@dataclass
class ForwardCache:
    train: bool
    steps: list[list[StepCache]]  # [t][layer]
    masks: list[list[np.ndarray | None]]  # [t][layer], None when not dropped
    h_final: np.ndarray
    note_probs: np.ndarray
    dur_probs: np.ndarray


def cell_forward(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                 params: LstmLayerParams) -> tuple[np.ndarray, np.ndarray, StepCache]:
    """One LSTM cell step for a batch of rows."""
    if x.shape[0] != h_prev.shape[0] or h_prev.shape != c_prev.shape:
        raise ShapeMismatch(
            f"batch shapes differ: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}")
    z = np.concatenate([h_prev, x], axis=1)
    f = sigmoid(matmul(z, params.w_forget.T) + params.b_forget)
    i = sigmoid(matmul(z, params.w_input.T) + params.b_input)
    g = tanh_act(matmul(z, params.w_cand.T) + params.b_cand)
    c = f * c_prev + i * g
    o = sigmoid(matmul(z, params.w_output.T) + params.b_output)
    tc = np.tanh(c)
    h = o * tc
    return h, c, StepCache(z=z, f=f, i=i, g=g, c_prev=c_prev, o=o, tanh_c=tc)


def _check_ids(ids: np.ndarray, size: int, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ShapeMismatch(f"{what} ids must be 1-D or 2-D, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        raise IndexOutOfRange(f"{what} id outside [0, {size})")
    return ids


def model_forward(note_ids: np.ndarray, dur_ids: np.ndarray, params: ModelParams,
                  config: ModelConfig, train: bool = False, rng: Rng | None = None,
                  ) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run a batch of windows through the stack from zero initial state.

    ``note_ids``/``dur_ids`` are (B, L) integer arrays (a single 1-D window
    is promoted to B=1). Inputs at each step are the concatenated one-hots
    of the two ids. Returns softmax rows from both heads, computed on the
    top layer's final-step h, plus the cache the backward pass needs.
    """
    nv, dv = config.note_vocab_size, config.dur_vocab_size
    note_ids = _check_ids(note_ids, nv, "note")
    dur_ids = _check_ids(dur_ids, dv, "duration")
    if note_ids.shape != dur_ids.shape:
        raise ShapeMismatch(f"id streams differ: {note_ids.shape} vs {dur_ids.shape}")
    B, L = note_ids.shape
    n_layers = len(params.layers)
    drop = config.dropout if train else 0.0
    if drop > 0.0 and n_layers > 1 and rng is None:
        raise ShapeMismatch("train-mode dropout needs an rng")

    rows = np.arange(B)
    h = [zeros(B, layer.hidden_size) for layer in params.layers]
    c = [zeros(B, layer.hidden_size) for layer in params.layers]
    steps: list[list[StepCache]] = []
    masks: list[list[np.ndarray | None]] = []

    for t in range(L):
        x = np.zeros((B, nv + dv), dtype=np.float64)
        x[rows, note_ids[:, t]] = 1.0
        x[rows, nv + dur_ids[:, t]] = 1.0
        step_caches = []
        step_masks: list[np.ndarray | None] = []
        for li, layer in enumerate(params.layers):
            h[li], c[li], cache = cell_forward(x, h[li], c[li], layer)
            step_caches.append(cache)
            x = h[li]
            if li < n_layers - 1:
                if drop > 0.0:
                    keep = rng.uniform_array(B * layer.hidden_size).reshape(B, -1) >= drop
                    mask = keep.astype(np.float64) / (1.0 - drop)
                    x = x * mask
                    step_masks.append(mask)
                else:
                    step_masks.append(None)
        steps.append(step_caches)
        masks.append(step_masks)

    h_top = check_finite("lstm hidden state", h[-1])
    note_probs = softmax(matmul(h_top, params.w_note) + params.b_note)
    dur_probs = softmax(matmul(h_top, params.w_dur) + params.b_dur)
    cache = ForwardCache(train=train, steps=steps, masks=masks, h_final=h_top,
                         note_probs=note_probs, dur_probs=dur_probs)
    return note_probs, dur_probs, cache


def _cell_backward(dh: np.ndarray, dc_in: np.ndarray, cache: StepCache,
                   params: LstmLayerParams, grads: dict, prefix: str,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backprop one cell step. Accumulates weight grads; returns
    (dh_prev, dx, dc_prev)."""
    do = dh * cache.tanh_c
    dc = dc_in + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    df = dc * cache.c_prev
    di = dc * cache.g
    dg = dc * cache.i
    dc_prev = dc * cache.f

    dpre = {
        "forget": df * cache.f * (1.0 - cache.f),
        "input": di * cache.i * (1.0 - cache.i),
        "cand": dg * (1.0 - cache.g ** 2),
        "output": do * cache.o * (1.0 - cache.o),
    }
    hidden = params.hidden_size
    dz = np.zeros_like(cache.z)
    for gate in GATES:
        d = dpre[gate]
        grads[f"{prefix}.{gate}.w"] += matmul(d.T, cache.z)
        grads[f"{prefix}.{gate}.b"] += d.sum(axis=0, keepdims=True)
        dz += matmul(d, getattr(params, f"w_{gate}"))
    return dz[:, :hidden], dz[:, hidden:], dc_prev


def model_backward(cache: ForwardCache, note_targets: np.ndarray,
                   dur_targets: np.ndarray, params: ModelParams) -> dict[str, np.ndarray]:
    """Full BPTT from the two head losses. Returns {param name: gradient}
    for the batch-summed loss CE_note + CE_dur."""
    if not cache.train:
        raise StaleCache("backward needs caches from a train-mode forward pass")
    note_targets = np.asarray(note_targets, dtype=np.int64).reshape(-1)
    dur_targets = np.asarray(dur_targets, dtype=np.int64).reshape(-1)
    B = cache.h_final.shape[0]
    if note_targets.shape[0] != B or dur_targets.shape[0] != B:
        raise ShapeMismatch("target count does not match batch size")
    rows = np.arange(B)

    grads = {name: np.zeros_like(arr) for name, arr in params.named_params()}

    # softmax + cross-entropy: dlogits = probs - onehot(target)
    dlog_note = cache.note_probs.copy()
    dlog_note[rows, note_targets] -= 1.0
    dlog_dur = cache.dur_probs.copy()
    dlog_dur[rows, dur_targets] -= 1.0

    grads["head_note.w"] += matmul(cache.h_final.T, dlog_note)
    grads["head_note.b"] += dlog_note.sum(axis=0, keepdims=True)
    grads["head_dur.w"] += matmul(cache.h_final.T, dlog_dur)
    grads["head_dur.b"] += dlog_dur.sum(axis=0, keepdims=True)

    n_layers = len(params.layers)
    L = len(cache.steps)
    dh_carry = [zeros(B, p.hidden_size) for p in params.layers]
    dc_carry = [zeros(B, p.hidden_size) for p in params.layers]

    dh_head = matmul(dlog_note, params.w_note.T) + matmul(dlog_dur, params.w_dur.T)

    for t in range(L - 1, -1, -1):
        from_above: np.ndarray | None = None
        for li in range(n_layers - 1, -1, -1):
            dh = dh_carry[li].copy()
            if li == n_layers - 1 and t == L - 1:
                dh += dh_head
            if from_above is not None:
                mask = cache.masks[t][li]
                dh += from_above * mask if mask is not None else from_above
            dh_prev, dx, dc_prev = _cell_backward(
                dh, dc_carry[li], cache.steps[t][li], params.layers[li], grads, f"layer{li}")
            dh_carry[li] = dh_prev
            dc_carry[li] = dc_prev
            from_above = dx
        # dx of layer 0 is the gradient on the one-hot input; discarded

    return grads


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    tolerance: float
    n_params: int
    passed: bool


def reference_check_config() -> ModelConfig:
    """Small fixed configuration for fast full-coverage gradient checks."""
    return ModelConfig(note_vocab_size=12, dur_vocab_size=6,
                       hidden_sizes=(16, 16), dropout=0.0, window_len=8)


def grad_check(config: ModelConfig, rng: Rng, tolerance: float = 1e-4,
               step: float = 1e-5) -> GradCheckReport:
    """Compare BPTT gradients against central finite differences for every
    parameter. Dropout is disabled for the check; the relative error uses an
    absolute floor of 1e-6 in the denominator."""
    config = replace(config, dropout=0.0)
    params = ModelParams.init(config, rng)
    L = config.window_len
    note_ids = np.array([[rng.randint(config.note_vocab_size) for _ in range(L)]])
    dur_ids = np.array([[rng.randint(config.dur_vocab_size) for _ in range(L)]])
    note_target = np.array([rng.randint(config.note_vocab_size)])
    dur_target = np.array([rng.randint(config.dur_vocab_size)])

    def loss() -> float:
        note_probs, dur_probs, _ = model_forward(
            note_ids, dur_ids, params, config, train=True)
        return (-np.log(note_probs[0, note_target[0]] + 1e-12)
                - np.log(dur_probs[0, dur_target[0]] + 1e-12))

    _, _, cache = model_forward(note_ids, dur_ids, params, config, train=True)
    analytic = model_backward(cache, note_target, dur_target, params)

    max_rel = 0.0
    worst = ""
    n_params = 0
    for name, arr in params.named_params():
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        n_params += flat.size
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss()
            flat[k] = orig - step
            down = loss()
            flat[k] = orig
            fd = (up - down) / (2.0 * step)
            rel = abs(a_flat[k] - fd) / max(abs(a_flat[k]) + abs(fd), 1e-6)
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{k}]"
    return GradCheckReport(max_rel_err=float(max_rel), worst_param=worst,
                           tolerance=tolerance, n_params=n_params,
                           passed=max_rel < tolerance)
