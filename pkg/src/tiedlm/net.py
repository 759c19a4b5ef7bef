"""Two-layer LSTM language model with an optional tied output projection.

Shapes follow the column convention: the embedding ``L`` is ``d_x x |V|``
(one word vector per column), the untied projection ``W`` is ``|V| x d_h``
with bias ``b``.  In tied mode the logits are ``L^T h`` and there is no bias.

Gradients are computed by hand (truncated BPTT over one window) from the
activations recorded on a :class:`ForwardTape`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .linalg import ContractError, softmax_with_temperature
from .seeding import child_rng

INIT_SCALE = 0.05
CHECKPOINT_MAGIC = b"TIEDLM1\n"


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 200
    hidden_dim: int = 200
    num_layers: int = 2
    tie_weights: bool = False
    dropout_p: float = 0.0
    unit_norm_embeddings: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ContractError("vocab_size must be at least 2")
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ContractError("dimensions must be positive")
        if self.tie_weights and self.embed_dim != self.hidden_dim:
            raise ContractError(
                f"tied weights need embed_dim == hidden_dim "
                f"({self.embed_dim} != {self.hidden_dim})")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    v, dx, dh = config.vocab_size, config.embed_dim, config.hidden_dim
    shapes = {"L": (dx, v)}
    for k in range(config.num_layers):
        d_in = dx if k == 0 else dh
        shapes[f"Wx{k}"] = (4 * dh, d_in)
        shapes[f"Wh{k}"] = (4 * dh, dh)
        shapes[f"b{k}"] = (4 * dh,)
    if not config.tie_weights:
        shapes["W"] = (v, dh)
        shapes["b"] = (v,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


@dataclass
class ModelParams:
    """Named trainable tensors of one model."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __contains__(self, name):
        return name in self.tensors

    @property
    def tied(self) -> bool:
        return "W" not in self.tensors

    def names(self):
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def parameter_count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, {k: np.zeros_like(v) for k, v in self.tensors.items()})


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Weights uniform in [-0.05, 0.05], biases zero."""
    rng = child_rng(config.seed if seed is None else seed, "init")
    tensors = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    params = ModelParams(config, tensors)
    if config.unit_norm_embeddings:
        renormalize_embedding_rows(params)
    return params


def renormalize_embedding_rows(params: ModelParams) -> list[int]:
    """Scale every word vector (column of ``L``) to unit Euclidean norm.

    Works in place.  Zero vectors are left as they are; their word ids are
    returned.
    """
    L = params["L"]
    norms = np.sqrt(np.einsum("ij,ij->j", L, L))
    zero = norms == 0.0
    L[:, ~zero] /= norms[~zero]
    return np.flatnonzero(zero).tolist()


def sample_masks(config: ModelConfig, batch_size: int, seed=None) -> list[np.ndarray]:
    """Inverted-dropout masks, one ``batch x d_h`` array per layer.

    A layer's mask is applied to its hidden state both where it feeds the
    layer's next time step and where it feeds the layer above (or the output
    projection).  ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    p = config.dropout_p
    shape = (batch_size, config.hidden_dim)
    if p == 0.0:
        return [np.ones(shape) for _ in range(config.num_layers)]
    rng = seed if isinstance(seed, np.random.Generator) else child_rng(
        config.seed if seed is None else seed, "dropout")
    keep = 1.0 - p
    return [(rng.random(shape) < keep) / keep for _ in range(config.num_layers)]


def zero_state(config: ModelConfig, batch_size: int, dtype=np.float64):
    return [(np.zeros((batch_size, config.hidden_dim), dtype),
             np.zeros((batch_size, config.hidden_dim), dtype))
            for _ in range(config.num_layers)]


@dataclass
class _LayerTape:
    inp: np.ndarray      # T x B x d_in, masked input actually fed to the layer
    hprev: np.ndarray    # T x B x d_h, masked recurrent input
    gates: np.ndarray    # T x B x 4d_h, post-nonlinearity (i, f, o, g)
    c_prev: np.ndarray   # T x B x d_h
    tanh_c: np.ndarray   # T x B x d_h
    h: np.ndarray        # T x B x d_h, raw (unmasked) hidden state


@dataclass
class ForwardTape:
    ids: np.ndarray
    layers: list[_LayerTape]
    top: np.ndarray      # T x B x d_h, masked top hidden state fed to the projection
    masks: list[np.ndarray] | None
    logits: np.ndarray = field(repr=False, default=None)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def output_projection(params: ModelParams) -> tuple[np.ndarray, np.ndarray | None]:
    """``(P, bias)`` with ``logits = h @ P + bias``; ``P`` is ``d_h x |V|``."""
    if params.tied:
        return np.ascontiguousarray(params["L"]), None
    return np.ascontiguousarray(params["W"].T), params["b"]


def forward(params: ModelParams, inputs, masks=None, state=None):
    """Run the model over a ``batch x steps`` window of input ids.

    Returns ``(tape, logits, final_state)`` with logits of shape
    ``batch x steps x |V|``.  ``state`` is a per-layer list of ``(h, c)``
    pairs; ``None`` starts from zeros.  The returned state holds unmasked
    hidden states.
    """
    cfg = params.config
    ids = np.asarray(getattr(inputs, "inputs", inputs))
    if ids.ndim != 2:
        raise ContractError(f"inputs must be batch x steps, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ContractError("token id out of range")
    B, T = ids.shape
    L = params["L"]
    dtype = L.dtype
    if state is None:
        state = zero_state(cfg, B, dtype)
    if len(state) != cfg.num_layers or any(
            h.shape != (B, cfg.hidden_dim) or c.shape != (B, cfg.hidden_dim) for h, c in state):
        raise ContractError("state dimensions do not match the model")
    if masks is not None and (len(masks) != cfg.num_layers or any(
            m.shape != (B, cfg.hidden_dim) for m in masks)):
        raise ContractError("dropout masks do not match the model")

    d = cfg.hidden_dim
    layer_in = L.T[ids.T]  # T x B x d_x; no dropout on embeddings
    new_state = []
    tapes = []
    for k in range(cfg.num_layers):
        Wx, Wh, bk = params[f"Wx{k}"], params[f"Wh{k}"], params[f"b{k}"]
        m = None if masks is None else masks[k]
        h, c = state[k]
        xw = layer_in @ Wx.T + bk  # input contributions for every step at once
        hprev = np.empty((T, B, d), dtype)
        gates = np.empty((T, B, 4 * d), dtype)
        c_prev = np.empty((T, B, d), dtype)
        tanh_c = np.empty((T, B, d), dtype)
        hs = np.empty((T, B, d), dtype)
        for t in range(T):
            hm = h if m is None else h * m
            z = xw[t] + hm @ Wh.T
            g = gates[t]
            g[:, :3 * d] = _sigmoid(z[:, :3 * d])
            g[:, 3 * d:] = np.tanh(z[:, 3 * d:])
            hprev[t] = hm
            c_prev[t] = c
            c = g[:, d:2 * d] * c + g[:, :d] * g[:, 3 * d:]
            tc = np.tanh(c)
            h = g[:, 2 * d:3 * d] * tc
            tanh_c[t] = tc
            hs[t] = h
        tapes.append(_LayerTape(layer_in, hprev, gates, c_prev, tanh_c, hs))
        new_state.append((h, c))
        layer_in = hs if m is None else hs * m

    P, bias = output_projection(params)
    logits = (layer_in.reshape(T * B, d) @ P).reshape(T, B, -1)
    if bias is not None:
        logits = logits + bias
    logits = logits.transpose(1, 0, 2)
    tape = ForwardTape(ids, tapes, layer_in, masks, logits)
    return tape, logits, new_state


def backward(tape: ForwardTape, params: ModelParams, d_logits) -> ModelParams:
    """Gradients of ``sum(d_logits * logits)`` with respect to every tensor.

    In tied mode ``L`` receives both the projection and the lookup
    contributions.
    """
    cfg = params.config
    d_logits = np.asarray(d_logits)
    B, T = tape.ids.shape
    if d_logits.shape != (B, T, cfg.vocab_size):
        raise ContractError(
            f"d_logits shape {d_logits.shape} does not match tape {(B, T, cfg.vocab_size)}")
    if len(tape.layers) != cfg.num_layers:
        raise ContractError("tape does not match the model")
    d = cfg.hidden_dim
    grads = params.zeros_like()
    dl = d_logits.transpose(1, 0, 2).reshape(T * B, -1)  # time-major rows
    top = tape.top.reshape(T * B, d)
    if params.tied:
        grads["L"] += top.T @ dl
        d_top = dl @ params["L"].T
    else:
        grads["W"] += dl.T @ top
        grads["b"] += dl.sum(axis=0)
        d_top = dl @ params["W"]
    d_above = d_top.reshape(T, B, d)

    for k in reversed(range(cfg.num_layers)):
        lt = tape.layers[k]
        m = None if tape.masks is None else tape.masks[k]
        dh_ext = d_above if m is None else d_above * m
        Wh = params[f"Wh{k}"]
        dz = np.empty((T, B, 4 * d), d_logits.dtype)
        dh_rec = np.zeros((B, d), d_logits.dtype)
        dc = np.zeros((B, d), d_logits.dtype)
        for t in reversed(range(T)):
            g = lt.gates[t]
            i, f, o, gg = g[:, :d], g[:, d:2 * d], g[:, 2 * d:3 * d], g[:, 3 * d:]
            dh = dh_ext[t] + dh_rec
            tc = lt.tanh_c[t]
            dc = dc + dh * o * (1.0 - tc * tc)
            z = dz[t]
            z[:, :d] = dc * gg * i * (1.0 - i)
            z[:, d:2 * d] = dc * lt.c_prev[t] * f * (1.0 - f)
            z[:, 2 * d:3 * d] = dh * tc * o * (1.0 - o)
            z[:, 3 * d:] = dc * i * (1.0 - gg * gg)
            dc = dc * f
            dh_rec = z @ Wh
            if m is not None:
                dh_rec = dh_rec * m
        dz2 = dz.reshape(T * B, 4 * d)
        grads[f"Wx{k}"] += dz2.T @ lt.inp.reshape(T * B, -1)
        grads[f"Wh{k}"] += dz2.T @ lt.hprev.reshape(T * B, d)
        grads[f"b{k}"] += dz2.sum(axis=0)
        d_above = (dz2 @ params[f"Wx{k}"]).reshape(T, B, -1)

    # embedding lookup: x_t = L[:, id]
    dx = d_above.reshape(T * B, -1)
    np.add.at(grads["L"].T, tape.ids.T.reshape(-1), dx)
    return grads


def predict_proba(params: ModelParams, ids, state=None):
    """Next-token distribution after feeding ``ids`` (a 1-D sequence)."""
    ids = np.asarray(ids, dtype=np.int64).reshape(1, -1)
    _, logits, state = forward(params, ids, None, state)
    return softmax_with_temperature(logits[0, -1]), state


# -- checkpoints -------------------------------------------------------------

def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(kind, text):
    if kind is bool or kind == "bool":
        if text not in ("true", "false"):
            raise ValueError(f"not a boolean: {text!r}")
        return text == "true"
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams):
    """Write ``params`` in the ``TIEDLM1`` binary format."""
    cfg = params.config
    out = bytearray(CHECKPOINT_MAGIC)
    for f in fields(cfg):
        out += f"{f.name}={_format_value(getattr(cfg, f.name))}\n".encode("ascii")
    out += b"\n"
    out += f"{len(params.tensors)}\n".encode("ascii")
    for name, arr in params.tensors.items():
        a = np.asarray(arr, dtype="<f8")
        rows, cols = (a.shape[0], 1) if a.ndim == 1 else a.shape
        out += f"{name} {rows} {cols}\n".encode("ascii")
        out += np.ascontiguousarray(a).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a TIEDLM1 checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)

    def readline():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated header")
        line = data[pos:end].decode("ascii")
        pos = end + 1
        return line

    header = {}
    while True:
        line = readline()
        if line == "":
            break
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed header line {line!r}")
        header[key] = value
    kinds = {f.name: f.type for f in fields(ModelConfig)}
    unknown = set(header) - set(kinds)
    if unknown:
        raise CheckpointError(f"{path}: unknown header keys {sorted(unknown)}")
    try:
        config = ModelConfig(**{k: _parse_value(kinds[k], v) for k, v in header.items()})
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    shapes = param_shapes(config)
    tensors = {}
    try:
        count = int(readline())
        for _ in range(count):
            name, rows, cols = readline().split()
            rows, cols = int(rows), int(cols)
            if name not in shapes:
                raise CheckpointError(f"{path}: unexpected tensor {name}")
            if rows * cols != int(np.prod(shapes[name])):
                raise CheckpointError(f"{path}: tensor {name} is {rows}x{cols}")
            nbytes = rows * cols * 8
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
            pos += nbytes
            tensors[name] = arr.astype(np.float64).reshape(shapes[name])
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed tensor section: {exc}") from exc
    if set(tensors) != set(shapes):
        raise CheckpointError(f"{path}: tensors {sorted(tensors)} do not match config")
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return ModelParams(config, {k: tensors[k] for k in shapes})
