"""Memory-array RNN next-event predictor.

One recurrent layer with ``N`` lanes. Lane ``k`` keeps its own cell state and its
own forget/input/candidate gates; the output gate is shared and the hidden state
reads the lane-mean cell state::

    f_k = sigmoid(W_f^k x + U_f^k h + b_f^k)
    i_k = sigmoid(W_i^k x + U_i^k h + b_i^k)
    c~_k = tanh(W_c^k x + U_c^k h + b_c^k)
    c_k' = f_k * c_k + i_k * c~_k
    o   = sigmoid(W_o x + U_o h + b_o)
    h'  = o * tanh(mean_k c_k')

With ``N = 1`` this is the plain LSTM step. The final hidden state is projected to
``V`` logits.

Parameters live in one flat float64 vector; :class:`ParamLayout` documents the
canonical order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ConfigError, DimensionError, EmptyCorpusError
from ..events import EventCorpus, EventSequence
from . import kernels

GATES = ("f", "i", "c")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden_size: int = 32
    lanes: int = 4
    learning_rate: float = 5.0
    seed: int = 0
    batch_size: int = 32
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        for name in ("embed_dim", "hidden_size", "lanes", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0 or None")

    @cached_property
    def layout(self) -> "ParamLayout":
        return ParamLayout(self.vocab_size, self.embed_dim, self.hidden_size, self.lanes)

    @property
    def n_params(self) -> int:
        return self.layout.size


class ParamLayout:
    """Canonical flat layout.

    In order: ``embedding`` (V, D); for each lane ``k``: ``lane{k}.W_f`` (H, D),
    ``lane{k}.U_f`` (H, H), ``lane{k}.b_f`` (H) and the same for ``i`` and ``c``;
    shared ``W_o``, ``U_o``, ``b_o``; output ``W_y`` (V, H), ``b_y`` (V).
    All matrices row-major.
    """

    VERSION = 1

    def __init__(self, V, D, H, N):
        self.V, self.D, self.H, self.N = V, D, H, N
        shapes = [("embedding", (V, D))]
        for k in range(N):
            for g in GATES:
                shapes += [(f"lane{k}.W_{g}", (H, D)), (f"lane{k}.U_{g}", (H, H)), (f"lane{k}.b_{g}", (H,))]
        shapes += [("W_o", (H, D)), ("U_o", (H, H)), ("b_o", (H,)), ("W_y", (V, H)), ("b_y", (V,))]
        self.shapes = dict(shapes)
        self.slices = {}
        off = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            self.slices[name] = slice(off, off + n)
            off += n
        self.size = off

        # gather indices for the stacked (G, D) / (G, H) / (G,) kernel matrices
        order = [(f"lane{k}", g) for k in range(N) for g in GATES] + [("", "o")]
        idx_w, idx_u, idx_b = [], [], []
        for prefix, g in order:
            p = f"{prefix}." if prefix else ""
            idx_w.append(np.arange(self.slices[f"{p}W_{g}"].start, self.slices[f"{p}W_{g}"].stop))
            idx_u.append(np.arange(self.slices[f"{p}U_{g}"].start, self.slices[f"{p}U_{g}"].stop))
            idx_b.append(np.arange(self.slices[f"{p}b_{g}"].start, self.slices[f"{p}b_{g}"].stop))
        self.G = (3 * N + 1) * H
        self.idx_wx = np.concatenate(idx_w)
        self.idx_uh = np.concatenate(idx_u)
        self.idx_b = np.concatenate(idx_b)

    def unflatten(self, theta) -> dict[str, np.ndarray]:
        theta = np.asarray(theta)
        if theta.shape != (self.size,):
            raise DimensionError(f"expected {self.size} parameters, got shape {theta.shape}")
        return {name: theta[sl].reshape(self.shapes[name]) for name, sl in self.slices.items()}

    def flatten(self, params: dict[str, np.ndarray]) -> np.ndarray:
        dtype = np.result_type(*params.values())
        out = np.empty(self.size, dtype=dtype)
        for name, sl in self.slices.items():
            arr = np.asarray(params[name])
            if arr.shape != self.shapes[name]:
                raise DimensionError(f"{name}: expected shape {self.shapes[name]}, got {arr.shape}")
            out[sl] = arr.ravel()
        return out

    def stacked(self, theta):
        """Kernel matrices ``Wx`` (G, D), ``Uh`` (G, H), ``b`` (G,)."""
        return (
            theta[self.idx_wx].reshape(self.G, self.D),
            theta[self.idx_uh].reshape(self.G, self.H),
            theta[self.idx_b],
        )


def init_params(cfg: ModelConfig, seed: int | None = None) -> np.ndarray:
    """Embedding U(-0.5, 0.5), weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    lay = cfg.layout
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    theta = np.zeros(lay.size)
    for name, sl in lay.slices.items():
        if name.split(".")[-1].startswith("b_"):
            continue
        bound = 0.5 if name == "embedding" else 1.0 / np.sqrt(lay.shapes[name][1])
        theta[sl] = rng.uniform(-bound, bound, size=sl.stop - sl.start)
    return theta


@dataclass
class CellState:
    h: np.ndarray  # (H,)
    c: np.ndarray  # (N, H)

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "CellState":
        return cls(np.zeros(cfg.hidden_size), np.zeros((cfg.lanes, cfg.hidden_size)))


def cell_step(theta, cfg: ModelConfig, x, state: CellState, backend=None) -> CellState:
    """One recurrent step for a single input embedding ``x`` (length D)."""
    lay = cfg.layout
    x = np.asarray(x)
    if x.shape != (cfg.embed_dim,):
        raise DimensionError(f"input must have shape ({cfg.embed_dim},), got {x.shape}")
    if state.h.shape != (cfg.hidden_size,) or state.c.shape != (cfg.lanes, cfg.hidden_size):
        raise DimensionError("state does not match the model configuration")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(state.h)) and np.all(np.isfinite(state.c))):
        raise ValueError("non-finite input to cell_step")
    theta = np.asarray(theta)
    Wx, Uh, b = lay.stacked(theta)
    zx = (x @ Wx.T + b)[None, None, :]
    hs, cs, _, _ = kernels.forward_scan(zx, np.ones((1, 1)), Uh, cfg.lanes, cfg.hidden_size, backend,
                                        h0=state.h[None, :], c0=state.c[None, :, :])
    return CellState(hs[1, 0].copy(), cs[1, 0].copy())


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: np.ndarray  # (T, B) int64, left-padded with 0
    mask: np.ndarray  # (T, B) float64
    labels: np.ndarray  # (B,)


def _packed(corpus: EventCorpus):
    cache = corpus.__dict__.get("_packed")
    if cache is None:
        lengths = np.fromiter((len(s.history) for s in corpus.sequences), dtype=np.int64, count=len(corpus))
        flat = np.fromiter((e for s in corpus.sequences for e in s.history), dtype=np.int64, count=int(lengths.sum()))
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        cache = (flat, offsets, lengths)
        corpus.__dict__["_packed"] = cache
    return cache


def make_batch(corpus: EventCorpus, indices=None) -> Batch:
    flat, offsets, lengths = _packed(corpus)
    if indices is None:
        indices = np.arange(len(corpus))
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptyCorpusError("empty batch")
    lens = lengths[indices]
    T = int(lens.max())
    B = indices.size
    ids = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T))
    rows = np.repeat(np.arange(B), lens)
    starts = np.repeat(offsets[indices], lens)
    within = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
    cols = T - np.repeat(lens, lens) + within
    ids[rows, cols] = flat[starts + within]
    mask[rows, cols] = 1.0
    return Batch(np.ascontiguousarray(ids.T), np.ascontiguousarray(mask.T), corpus.labels[indices])


def batch_from_sequences(seqs, vocab_size) -> Batch:
    seqs = list(seqs)
    if not seqs:
        raise EmptyCorpusError("empty batch")
    return make_batch(EventCorpus.from_sequences(seqs, vocab_size))


def _as_batch(cfg, data) -> Batch:
    if isinstance(data, Batch):
        return data
    if isinstance(data, EventCorpus):
        return make_batch(data)
    if isinstance(data, EventSequence):
        data = [data]
    return batch_from_sequences(data, cfg.vocab_size)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    batch: Batch
    xemb: np.ndarray
    hs: np.ndarray
    cs: np.ndarray
    gates: np.ndarray
    tcs: np.ndarray
    logits: np.ndarray


def _check_ids(cfg, batch):
    if batch.ids.size and (batch.ids.max() >= cfg.vocab_size or batch.labels.max() >= cfg.vocab_size):
        raise DimensionError(f"event id >= vocab_size {cfg.vocab_size}")
    if batch.ids.min(initial=0) < 0 or batch.labels.min(initial=0) < 0:
        raise DimensionError("negative event id")


def forward_batch(theta, cfg: ModelConfig, batch: Batch, backend=None) -> ForwardCache:
    lay = cfg.layout
    theta = np.asarray(theta)
    if theta.shape != (lay.size,):
        raise DimensionError(f"expected {lay.size} parameters, got shape {theta.shape}")
    _check_ids(cfg, batch)
    E = theta[lay.slices["embedding"]].reshape(lay.V, lay.D)
    Wx, Uh, b = lay.stacked(theta)
    xemb = E[batch.ids]  # (T, B, D)
    zx = xemb @ Wx.T + b
    hs, cs, gates, tcs = kernels.forward_scan(zx, batch.mask, Uh, lay.N, lay.H, backend)
    Wy = theta[lay.slices["W_y"]].reshape(lay.V, lay.H)
    logits = hs[-1] @ Wy.T + theta[lay.slices["b_y"]]
    return ForwardCache(batch, xemb, hs, cs, gates, tcs, logits)


def forward_sequence(theta, cfg: ModelConfig, seq: EventSequence, backend=None):
    """Logits (length V) for one sequence plus the activation cache."""
    cache = forward_batch(theta, cfg, _as_batch(cfg, seq), backend)
    return cache.logits[0], cache


def log_softmax(logits):
    shift = logits.real.max(axis=-1, keepdims=True) if np.iscomplexobj(logits) else logits.max(axis=-1, keepdims=True)
    z = logits - shift
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def loss_and_gradient(theta, cfg: ModelConfig, data, backend=None):
    """Mean cross-entropy over the batch and its gradient (BPTT)."""
    batch = _as_batch(cfg, data)
    lay = cfg.layout
    theta = np.asarray(theta)
    fc = forward_batch(theta, cfg, batch, backend)
    B = batch.labels.size
    logp = log_softmax(fc.logits)
    loss = -logp[np.arange(B), batch.labels].mean()

    grad = np.zeros(lay.size, dtype=np.result_type(theta, np.float64))
    dlogits = np.exp(logp)
    dlogits[np.arange(B), batch.labels] -= 1.0
    dlogits /= B
    h = fc.hs[-1]
    Wy = theta[lay.slices["W_y"]].reshape(lay.V, lay.H)
    grad[lay.slices["W_y"]] = (dlogits.T @ h).ravel()
    grad[lay.slices["b_y"]] = dlogits.sum(axis=0)
    dh = dlogits @ Wy
    Wx, Uh, _ = lay.stacked(theta)
    dZ, dUh = kernels.backward_scan(fc.hs, fc.cs, fc.gates, fc.tcs, batch.mask, Uh, dh, lay.N, lay.H, backend)
    T = dZ.shape[0]
    dZ2 = dZ.reshape(T * B, lay.G)
    grad[lay.idx_wx] = (dZ2.T @ fc.xemb.reshape(T * B, lay.D)).ravel()
    grad[lay.idx_uh] = dUh.ravel()
    grad[lay.idx_b] = dZ2.sum(axis=0)
    dx = dZ2 @ Wx
    dE = np.zeros((lay.V, lay.D), dtype=grad.dtype)
    np.add.at(dE, batch.ids.ravel(), dx)
    grad[lay.slices["embedding"]] = dE.ravel()
    return loss, grad


def loss(theta, cfg: ModelConfig, data, backend=None) -> float:
    batch = _as_batch(cfg, data)
    fc = forward_batch(theta, cfg, batch, backend)
    logp = log_softmax(fc.logits)
    return float(-logp[np.arange(batch.labels.size), batch.labels].mean())


def per_sequence_loss(theta, cfg: ModelConfig, corpus: EventCorpus, chunk: int = 512, backend=None) -> np.ndarray:
    out = np.empty(len(corpus))
    for lo in range(0, len(corpus), chunk):
        idx = np.arange(lo, min(lo + chunk, len(corpus)))
        b = make_batch(corpus, idx)
        logp = log_softmax(forward_batch(theta, cfg, b, backend).logits)
        out[idx] = -logp[np.arange(idx.size), b.labels]
    return out


def hessian_vector_product(theta, cfg: ModelConfig, data, v, step: float = 1e-20) -> np.ndarray:
    """Exact Hessian-vector product of the mean loss by complex-step differentiation of the gradient.

    ``Im(grad(theta + i*step*v)) / step`` has no subtractive cancellation, so it is
    accurate to rounding error for any small ``step``.
    """
    batch = _as_batch(cfg, data)
    theta_c = np.asarray(theta, dtype=np.complex128) + 1j * step * np.asarray(v, dtype=np.float64)
    _, g = loss_and_gradient(theta_c, cfg, batch, backend="python")
    return g.imag / step


# ---------------------------------------------------------------------------
# training / prediction


def clip_by_global_norm(g, max_norm):
    if max_norm is None:
        return g
    n = float(np.linalg.norm(g))
    if n > max_norm:
        g = g * (max_norm / n)
    return g


def local_train(
    theta,
    cfg: ModelConfig,
    data: EventCorpus,
    epochs: int = 1,
    lr: float | None = None,
    batch_size: int | None = None,
    seed: int = 0,
    step_hook=None,
    backend=None,
) -> np.ndarray:
    """Minibatch SGD for ``epochs`` passes over ``data`` with a seeded shuffle.

    ``step_hook(theta)`` (if given) is applied after every step and returns the
    parameters to continue from.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if len(data) == 0:
        raise EmptyCorpusError("local training on an empty corpus")
    lr = cfg.learning_rate if lr is None else lr
    bs = cfg.batch_size if batch_size is None else batch_size
    theta = np.array(theta, dtype=np.float64, copy=True)
    if lr == 0:
        return theta
    rng = np.random.default_rng(seed)
    n = len(data)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            _, g = loss_and_gradient(theta, cfg, make_batch(data, idx), backend)
            theta -= lr * clip_by_global_norm(g, cfg.clip_norm)
            if step_hook is not None:
                theta = step_hook(theta)
    return theta


def predict_logits(theta, cfg: ModelConfig, corpus: EventCorpus, chunk: int = 512, backend=None) -> np.ndarray:
    out = np.empty((len(corpus), cfg.vocab_size))
    for lo in range(0, len(corpus), chunk):
        idx = np.arange(lo, min(lo + chunk, len(corpus)))
        out[idx] = forward_batch(theta, cfg, make_batch(corpus, idx), backend).logits
    return out


def predict(theta, cfg: ModelConfig, data, backend=None):
    """Most likely next event; ties go to the lowest index.

    Returns an int for a single sequence and an array for a corpus.
    """
    if isinstance(data, EventSequence):
        logits, _ = forward_sequence(theta, cfg, data, backend)
        return int(np.argmax(logits))
    return np.argmax(predict_logits(theta, cfg, data, backend=backend), axis=1)


def accuracy(theta, cfg: ModelConfig, corpus: EventCorpus) -> float:
    return float(np.mean(predict(theta, cfg, corpus) == corpus.labels))


# ---------------------------------------------------------------------------
# checkpoint files: magic, version, V, D, H, N, count, then little-endian float64

_MAGIC = b"FSPV"
_HEADER = struct.Struct("<4sIIIIIQ")


def save_params(path, theta, cfg: ModelConfig) -> None:
    theta = np.asarray(theta, dtype="<f8")
    if theta.shape != (cfg.n_params,):
        raise DimensionError("parameter vector does not match the configuration")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, ParamLayout.VERSION, cfg.vocab_size, cfg.embed_dim, cfg.hidden_size,
                              cfg.lanes, theta.size))
        fh.write(theta.tobytes())


def load_params(path):
    """Returns ``(theta, (V, D, H, N))``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, V, D, H, N, count = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        if version != ParamLayout.VERSION:
            raise ValueError(f"{path}: unsupported layout version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count or count != ParamLayout(V, D, H, N).size:
        raise ValueError(f"{path}: truncated or inconsistent checkpoint")
    return data.astype(np.float64), (V, D, H, N)
