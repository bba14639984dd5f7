"""A small bag-of-embeddings text classifier with hand-written gradients.

    pooled = mean of embedding rows over non-PAD ids
    M(x)   = tanh(pooled @ W1 + b1)          # the text encoder
    logits = M(x) @ W2 + b2                  # three-class head

Everything is float64. Mean pooling ignores word order, so the encoder is
invariant to permutations of the ids.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import PAD_ID

N_CLASSES = 3
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("embedding", "W1", "b1", "W2", "b2")

_uid = itertools.count()


class TraceMismatchError(ValueError):
    """A ForwardTrace was replayed against parameters it was not computed with."""


class CheckpointError(ValueError):
    """Checkpoint is unreadable or written by an incompatible format version."""


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 32
    classes: int = N_CLASSES

    def validate(self) -> None:
        if min(self.vocab_size, self.embed_dim, self.hidden_dim) < 1:
            raise ValueError(f"all dimensions must be positive: {self}")
        if self.classes != N_CLASSES:
            raise ValueError("the classifier is fixed at three classes")


@dataclass
class _Arrays:
    embedding: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self):
        return type(self)(**{n: a.copy() for n, a in self.items()})

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for _, a in self.items())


@dataclass
class ModelParams(_Arrays):
    """Weights; treat as immutable (updates build a new instance)."""

    uid: int = field(default_factory=lambda: next(_uid), compare=False)

    @property
    def dims(self) -> ModelDims:
        v, d = self.embedding.shape
        return ModelDims(vocab_size=v, embed_dim=d, hidden_dim=self.W1.shape[1])

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: a.copy() for n, a in self.items()})

    def replace(self, **arrays) -> "ModelParams":
        cur = dict(self.items())
        cur.update(arrays)
        return ModelParams(**cur)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.items())


@dataclass
class ParamGrads(_Arrays):
    @classmethod
    def zeros_like(cls, params: _Arrays) -> "ParamGrads":
        return cls(**{n: np.zeros_like(a) for n, a in params.items()})

    def __add__(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(**{n: a + getattr(other, n) for n, a in self.items()})

    def scaled(self, s: float) -> "ParamGrads":
        return ParamGrads(**{n: s * a for n, a in self.items()})


@dataclass(frozen=True)
class ForwardTrace:
    ids: tuple[int, ...]
    pooled: np.ndarray
    pre_activation: np.ndarray
    encoded: np.ndarray
    logits: np.ndarray
    params_uid: int


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Weights i.i.d. U(-0.1, 0.1), biases zero."""
    dims.validate()
    rng = np.random.default_rng(seed)
    v, d, h, c = dims.vocab_size, dims.embed_dim, dims.hidden_dim, dims.classes
    return ModelParams(
        embedding=rng.uniform(-0.1, 0.1, size=(v, d)),
        W1=rng.uniform(-0.1, 0.1, size=(d, h)),
        b1=np.zeros(h),
        W2=rng.uniform(-0.1, 0.1, size=(h, c)),
        b2=np.zeros(c),
    )


def _check_ids(params: ModelParams, ids: Sequence[int]) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("ids must be a flat sequence")
    if arr.size == 0 or not np.any(arr != PAD_ID):
        raise ValueError("empty input: no non-PAD ids")
    v = params.embedding.shape[0]
    if arr.min() < 0 or arr.max() >= v:
        raise ValueError(f"id out of range for vocabulary of size {v}")
    return arr


def _pool(params: ModelParams, arr: np.ndarray) -> np.ndarray:
    used = arr[arr != PAD_ID]
    return params.embedding[used].mean(axis=0)


def encode(params: ModelParams, ids: Sequence[int]) -> np.ndarray:
    """Encoder output M(x) for one id sequence."""
    pooled = _pool(params, _check_ids(params, ids))
    return np.tanh(pooled @ params.W1 + params.b1)


def classify(params: ModelParams, encoded: np.ndarray) -> np.ndarray:
    return encoded @ params.W2 + params.b2


def forward(params: ModelParams, ids: Sequence[int]) -> tuple[np.ndarray, ForwardTrace]:
    arr = _check_ids(params, ids)
    pooled = _pool(params, arr)
    pre = pooled @ params.W1 + params.b1
    enc = np.tanh(pre)
    logits = classify(params, enc)
    return logits, ForwardTrace(tuple(int(i) for i in arr), pooled, pre, enc, logits, params.uid)


def backward(params: ModelParams, trace: ForwardTrace, d_logits: np.ndarray) -> ParamGrads:
    """Gradient of ``<logits, d_logits>`` with respect to every parameter."""
    if trace.params_uid != params.uid:
        raise TraceMismatchError("trace was produced with different parameters")
    d_logits = np.asarray(d_logits, dtype=np.float64)
    grads = ParamGrads.zeros_like(params)
    grads.W2 = np.outer(trace.encoded, d_logits)
    grads.b2 = d_logits.copy()
    d_pre = (params.W2 @ d_logits) * (1.0 - trace.encoded ** 2)
    grads.W1 = np.outer(trace.pooled, d_pre)
    grads.b1 = d_pre
    d_pooled = params.W1 @ d_pre
    used = [i for i in trace.ids if i != PAD_ID]
    share = d_pooled / len(used)
    for i in used:
        grads.embedding[i] += share
    return grads


# --------------------------------------------------------------------------
# Batched path used by training: pooling as a sparse (batch x vocab) matrix
# --------------------------------------------------------------------------


def pooling_matrix(id_lists: Sequence[Sequence[int]], vocab_size: int) -> sp.csr_matrix:
    """Row b holds count(v in x_b) / len(x_b) over non-PAD ids, so ``P @ E`` is the mean pool."""
    rows, cols, vals = [], [], []
    for b, ids in enumerate(id_lists):
        used = [i for i in ids if i != PAD_ID]
        if not used:
            raise ValueError(f"sequence {b} has no non-PAD ids")
        w = 1.0 / len(used)
        for i in used:
            if not 0 <= i < vocab_size:
                raise ValueError(f"id {i} out of range for vocabulary of size {vocab_size}")
            rows.append(b)
            cols.append(i)
            vals.append(w)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(id_lists), vocab_size))
    mat.sum_duplicates()
    return mat


@dataclass
class BatchTrace:
    pool: sp.csr_matrix
    pooled: np.ndarray
    encoded: np.ndarray
    logits: np.ndarray
    dropout_mask: Optional[np.ndarray] = None


def forward_batch(params: ModelParams, pool: sp.csr_matrix, dropout_mask: Optional[np.ndarray] = None) -> BatchTrace:
    pooled = np.asarray(pool @ params.embedding)
    if dropout_mask is not None:
        pooled = pooled * dropout_mask
    enc = np.tanh(pooled @ params.W1 + params.b1)
    return BatchTrace(pool, pooled, enc, enc @ params.W2 + params.b2, dropout_mask)


def backward_batch(params: ModelParams, trace: BatchTrace, d_logits: np.ndarray) -> ParamGrads:
    """Gradient of ``sum_b <logits_b, d_logits_b>``."""
    d_pre = (d_logits @ params.W2.T) * (1.0 - trace.encoded ** 2)
    d_pooled = d_pre @ params.W1.T
    if trace.dropout_mask is not None:
        d_pooled = d_pooled * trace.dropout_mask
    return ParamGrads(
        embedding=np.asarray(trace.pool.T @ d_pooled),
        W1=trace.pooled.T @ d_pre,
        b1=d_pre.sum(axis=0),
        W2=trace.encoded.T @ d_logits,
        b2=d_logits.sum(axis=0),
    )


def encode_batch(params: ModelParams, pool: sp.csr_matrix) -> np.ndarray:
    return forward_batch(params, pool).encoded


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> Optional[np.ndarray]:
    """Inverted-dropout mask, or ``None`` when ``rate`` is 0."""
    if rate <= 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------


def finite_diff_grad(loss_fn: Callable, params, step: float = 1e-5):
    """Central differences, one scalar at a time.

    ``params`` may be a ``ModelParams`` (returns ``ParamGrads``) or a float
    array (returns an array of the same shape).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(params, ModelParams):
        grads = ParamGrads.zeros_like(params)
        for name, arr in params.items():
            g = getattr(grads, name)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                hi = loss_fn(params.replace())
                arr[idx] = orig - step
                lo = loss_fn(params.replace())
                arr[idx] = orig
                g[idx] = (hi - lo) / (2 * step)
        return grads
    theta = np.array(params, dtype=np.float64)
    grad = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        orig = theta[idx]
        theta[idx] = orig + step
        hi = loss_fn(theta.copy())
        theta[idx] = orig - step
        lo = loss_fn(theta.copy())
        theta[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def max_relative_error(a: _Arrays, b: _Arrays, floor: float = 1e-8) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` over every scalar."""
    worst = 0.0
    for name, x in a.items():
        y = getattr(b, name)
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, seed: int, vocab_tokens: Sequence[str], extra: Optional[dict] = None) -> None:
    """JSON checkpoint; matrices flattened row-major, floats written with full precision."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "dims": {
            "vocab_size": params.dims.vocab_size,
            "embed_dim": params.dims.embed_dim,
            "hidden_dim": params.dims.hidden_dim,
            "classes": N_CLASSES,
        },
        "seed": int(seed),
        "vocab": list(vocab_tokens),
        "params": {n: {"shape": list(a.shape), "data": a.ravel(order="C").tolist()} for n, a in params.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Returns ``(params, document)``; raises ``CheckpointError`` on any format problem."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != CHECKPOINT_VERSION:
        found = doc.get("format_version") if isinstance(doc, dict) else None
        raise CheckpointError(f"checkpoint format version {found!r}, expected {CHECKPOINT_VERSION}")
    try:
        arrays = {}
        for name in PARAM_NAMES:
            entry = doc["params"][name]
            arrays[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params = ModelParams(**arrays)
        dims = doc["dims"]
        if (dims["vocab_size"], dims["embed_dim"], dims["hidden_dim"]) != (
            params.dims.vocab_size, params.dims.embed_dim, params.dims.hidden_dim
        ):
            raise CheckpointError("dims do not match stored matrices")
        if len(doc["vocab"]) + 3 != dims["vocab_size"]:
            raise CheckpointError("vocabulary length does not match vocab_size")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return params, doc
