"""Two-stage instrumental-variable training.

Stage 1 fits one scalar ``alpha_k`` per perturbation kind so that
``M(x_z) ~= alpha_k * M(x)`` across the training set. Stage 2 adds the
pairwise penalty

    L_IV = sum over kind pairs {i, j} of || alpha_j * y(x_zi) - alpha_i * y(x_zj) ||

to the cross-entropy on the original sentences, ``L_ALL = L_CE + beta * L_IV``,
where ``y`` is the pre-softmax logit vector. If the logits of a perturbed
sentence decompose as ``alpha_i * y_causal + u`` with a leak ``u`` that does
not scale with the perturbation, every pair term equals
``|alpha_i - alpha_j| * ||u||``, so minimising L_IV shrinks the leak.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .corpus import Example, Vocabulary, build_vocab, encode_example, encode_tokens
from .metrics import MetricsReport, subset_report, LABELS
from .model import (
    ModelDims,
    ModelParams,
    ParamGrads,
    backward_batch,
    dropout_mask,
    encode_batch,
    forward_batch,
    init_params,
    pooling_matrix,
)
from .perturb import (
    ALL_KINDS,
    AugmentedExample,
    InstrumentKind,
    PerturbConfig,
    SimilarityIndex,
    SynonymLexicon,
    augment_corpus,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
STANDARD_AUG_COUNTS = (4, 8, 16)


class DegenerateEncoderError(ValueError):
    """All original encodings are zero, so alpha is undefined."""


class MissingOriginError(KeyError):
    pass


class InsufficientKindsError(ValueError):
    """L_IV needs at least two perturbation kinds."""


class TrainingDivergedError(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# Stage 1: alpha
# --------------------------------------------------------------------------


@dataclass
class AlphaEstimate:
    alphas: dict[InstrumentKind, float]
    epoch: int = 0

    def __getitem__(self, kind: InstrumentKind) -> float:
        return self.alphas[kind]

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "alphas": {k.value: v for k, v in self.alphas.items()}}


def _alpha_closed_form(orig: np.ndarray, aug: np.ndarray) -> float:
    denom = float(np.sum(orig * orig))
    if denom <= 0.0:
        raise DegenerateEncoderError("original encodings are all zero")
    return float(np.sum(aug * orig)) / denom


def _alpha_gradient_descent(orig: np.ndarray, aug: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    # objective sum ||aug - a*orig||^2 has curvature 2*S; step 1/(4S) contracts the error by half each iteration
    s = float(np.sum(orig * orig))
    if s <= 0.0:
        raise DegenerateEncoderError("original encodings are all zero")
    cross = float(np.sum(aug * orig))
    a = 0.0
    lr = 1.0 / (4.0 * s)
    for _ in range(max_iter):
        grad = 2.0 * (a * s - cross)
        a -= lr * grad
        if abs(lr * grad) < tol:
            break
    return a


def _alpha_unsquared(orig: np.ndarray, aug: np.ndarray) -> float:
    if float(np.sum(orig * orig)) <= 0.0:
        raise DegenerateEncoderError("original encodings are all zero")

    def objective(a):
        return float(np.sum(np.linalg.norm(aug - a * orig, axis=1)))

    start = _alpha_closed_form(orig, aug)
    res = scipy.optimize.minimize_scalar(objective, bracket=(start - 1.0, start + 1.0), tol=1e-12)
    return float(res.x)


def estimate_alpha_from_encodings(
    orig_enc: np.ndarray,
    aug_enc: np.ndarray,
    origin_rows: np.ndarray,
    aug_kinds: Sequence[InstrumentKind],
    mode: str = "closed_form",
    objective: str = "squared",
    epoch: int = 0,
) -> AlphaEstimate:
    """Fit ``alpha_k`` per kind from paired encodings.

    ``aug_enc[m]`` is the encoding of an augmentation of ``orig_enc[origin_rows[m]]``.
    """
    if mode not in ("closed_form", "learned"):
        raise ValueError(f"unknown alpha mode {mode!r}")
    if objective not in ("squared", "norm"):
        raise ValueError(f"unknown alpha objective {objective!r}")
    aug_kinds = np.asarray([k.value for k in aug_kinds])
    alphas = {}
    for kind in dict.fromkeys(InstrumentKind(v) for v in aug_kinds):
        sel = aug_kinds == kind.value
        o, a = orig_enc[origin_rows[sel]], aug_enc[sel]
        if objective == "norm":
            alphas[kind] = _alpha_unsquared(o, a)
        elif mode == "learned":
            alphas[kind] = _alpha_gradient_descent(o, a)
        else:
            alphas[kind] = _alpha_closed_form(o, a)
    return AlphaEstimate(alphas, epoch)


def estimate_alpha(
    params: ModelParams,
    vocab: Vocabulary,
    originals: Sequence[Example],
    augmented: Sequence[AugmentedExample],
    mode: str = "closed_form",
    objective: str = "squared",
    epoch: int = 0,
) -> AlphaEstimate:
    """Stage 1 on the current encoder: one alpha per perturbation kind."""
    row_of = {ex.id: i for i, ex in enumerate(originals)}
    try:
        origin_rows = np.array([row_of[a.origin_id] for a in augmented], dtype=np.int64)
    except KeyError as exc:
        raise MissingOriginError(f"augmentation refers to unknown origin {exc.args[0]!r}") from None
    v = params.dims.vocab_size
    orig_enc = encode_batch(params, pooling_matrix([encode_example(vocab, ex) for ex in originals], v))
    aug_enc = encode_batch(params, pooling_matrix([encode_tokens(vocab, a.tokens, a.aspect) for a in augmented], v))
    return estimate_alpha_from_encodings(orig_enc, aug_enc, origin_rows, [a.kind for a in augmented], mode, objective, epoch)


# --------------------------------------------------------------------------
# Stage 2: losses
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    iv: float
    beta: float
    total: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def total_loss(ce: float, iv: float, beta: float) -> LossBreakdown:
    if ce < 0 or iv < 0:
        raise ValueError("loss components must be non-negative")
    return LossBreakdown(ce=ce, iv=iv, beta=beta, total=ce + beta * iv)


def cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    return float(math.log(np.exp(z).sum()) - z[label])


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over rows and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sums = ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(np.log(sums[:, 0]) - z[rows, labels]))
    grad = ez / sums
    grad[rows, labels] -= 1.0
    return loss, grad / n


def iv_loss(alphas: Mapping[InstrumentKind, float] | AlphaEstimate, logits_by_kind: Mapping[InstrumentKind, np.ndarray]) -> float:
    """Sum over unordered kind pairs of ``||alpha_j * y_i - alpha_i * y_j||`` for one sentence."""
    if isinstance(alphas, AlphaEstimate):
        alphas = alphas.alphas
    kinds = list(logits_by_kind)
    if len(kinds) < 2:
        raise InsufficientKindsError(f"need at least two kinds, got {len(kinds)}")
    total = 0.0
    for ki, kj in itertools.combinations(kinds, 2):
        diff = alphas[kj] * np.asarray(logits_by_kind[ki], float) - alphas[ki] * np.asarray(logits_by_kind[kj], float)
        total += float(np.linalg.norm(diff))
    return total


def iv_loss_batch(alpha_vec: np.ndarray, kind_logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of L_IV and its gradient.

    ``kind_logits`` has shape ``(batch, n_kinds, 3)`` and ``alpha_vec`` shape
    ``(n_kinds,)``. Alpha is held fixed. A pair whose residual is exactly
    zero contributes a zero subgradient.
    """
    b, k, _ = kind_logits.shape
    if k < 2:
        raise InsufficientKindsError(f"need at least two kinds, got {k}")
    grad = np.zeros_like(kind_logits)
    loss = 0.0
    for i, j in itertools.combinations(range(k), 2):
        r = alpha_vec[j] * kind_logits[:, i] - alpha_vec[i] * kind_logits[:, j]
        norms = np.linalg.norm(r, axis=1)
        loss += float(norms.sum())
        unit = np.divide(r, norms[:, None], out=np.zeros_like(r), where=norms[:, None] > 0)
        grad[:, i] += alpha_vec[j] * unit
        grad[:, j] -= alpha_vec[i] * unit
    return loss / b, grad / b


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: ParamGrads
    v: ParamGrads
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(ParamGrads.zeros_like(params), ParamGrads.zeros_like(params), 0)


def adam_step(
    params: ModelParams,
    grads: ParamGrads,
    state: AdamState,
    lr: float,
    weight_decay: float | Mapping[str, float] = 0.0,
) -> tuple[ModelParams, AdamState]:
    """One Adam update with bias correction and decoupled weight decay.

    ``weight_decay`` is a single coefficient or a per-array mapping (names
    as in ``ModelParams``; missing names get no decay).
    """
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, p in params.items():
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: grad {g.shape} vs param {p.shape}")
        m = ADAM_BETA1 * getattr(state.m, name) + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * getattr(state.v, name) + (1.0 - ADAM_BETA2) * g * g
        lam = weight_decay.get(name, 0.0) if isinstance(weight_decay, Mapping) else weight_decay
        decayed = p * (1.0 - lr * lam) if lam else p
        new_params[name] = decayed - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_m[name], new_v[name] = m, v
    return ModelParams(**new_params), AdamState(ParamGrads(**new_m), ParamGrads(**new_v), t)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

PARAM_GROUPS = ("embedding", "W1", "b1", "W2", "b2")


@dataclass
class TrainConfig:
    beta: float = 0.4
    aug_count: int = 4
    lr: float = 2e-5
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    weight_decay: float = 0.01
    weight_decay_groups: dict[str, float] = field(default_factory=dict)
    alpha_mode: str = "closed_form"
    alpha_objective: str = "squared"
    alpha_schedule: str = "per_epoch"
    dropout: float = 0.0
    embed_dim: int = 32
    hidden_dim: int = 32
    min_count: int = 1
    kinds: tuple[InstrumentKind, ...] = ALL_KINDS
    aug_as_data: bool = False
    resample_augmentations: bool = False

    def validate(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.weight_decay < 0 or any(v < 0 for v in self.weight_decay_groups.values()):
            raise ValueError("weight decay must be >= 0")
        unknown = set(self.weight_decay_groups) - set(PARAM_GROUPS)
        if unknown:
            raise ValueError(f"unknown weight-decay groups {sorted(unknown)}; expected {PARAM_GROUPS}")
        if self.alpha_mode not in ("closed_form", "learned"):
            raise ValueError(f"alpha_mode must be closed_form or learned, got {self.alpha_mode!r}")
        if self.alpha_objective not in ("squared", "norm"):
            raise ValueError(f"alpha_objective must be squared or norm, got {self.alpha_objective!r}")
        if self.alpha_schedule not in ("per_epoch", "frozen_after_first"):
            raise ValueError(f"alpha_schedule must be per_epoch or frozen_after_first, got {self.alpha_schedule!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.aug_count < len(self.kinds):
            raise ValueError(f"aug_count={self.aug_count} is below the number of kinds ({len(self.kinds)})")
        if self.beta > 0 and len(self.kinds) < 2:
            raise InsufficientKindsError("beta > 0 needs at least two instrument kinds")
        if self.min_count < 1 or self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("min_count, embed_dim and hidden_dim must be >= 1")

    @property
    def nonstandard_aug_count(self) -> bool:
        return self.aug_count not in STANDARD_AUG_COUNTS

    def decay_map(self) -> dict[str, float]:
        return {g: self.weight_decay_groups.get(g, self.weight_decay) for g in PARAM_GROUPS}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kinds"] = [k.value for k in self.kinds]
        return d


def _coerce(name: str, raw: str, current):
    if name == "kinds":
        return tuple(InstrumentKind.parse(k) for k in raw.split(",") if k.strip())
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def config_from_mapping(values: Mapping[str, str], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Apply string overrides. ``weight_decay.<group>`` sets a per-group coefficient."""
    cfg = dataclasses.replace(base) if base else TrainConfig()
    cfg.weight_decay_groups = dict(cfg.weight_decay_groups)
    names = {f.name for f in dataclasses.fields(TrainConfig)} - {"weight_decay_groups"}
    for key, raw in values.items():
        key = key.strip()
        if key.startswith("weight_decay."):
            group = key.split(".", 1)[1]
            if group not in PARAM_GROUPS:
                raise ValueError(f"unknown weight-decay group {group!r}")
            cfg.weight_decay_groups[group] = float(raw)
            continue
        if key not in names:
            raise ValueError(f"unknown config key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, str(raw), getattr(cfg, key)))
        except ValueError as exc:
            raise ValueError(f"bad value for {key}: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Read ``key=value`` lines (``#`` comments allowed); unknown keys are an error."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return config_from_mapping(values, base)


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------


@dataclass
class TrainReport:
    epochs: list[LossBreakdown]
    alpha_history: list[AlphaEstimate]
    metrics: Optional[MetricsReport]
    wall_time: float = 0.0
    nonstandard_aug_count: bool = False

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "epochs": [e.to_dict() for e in self.epochs],
            "alpha_history": [a.to_dict() for a in self.alpha_history],
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "nonstandard_aug_count": self.nonstandard_aug_count,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class Resources:
    """Lexicon, similarity index and perturbation settings for building instruments."""

    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    lexicon: Optional[SynonymLexicon] = None
    index: Optional[SimilarityIndex] = None


class _AugmentedSet:
    """Pooling matrix over all augmentations, rows grouped per origin and kind.

    Rows are laid out example-major: ``row = e * N + i`` where augmentation
    ``i`` of example ``e`` has kind ``kinds[i % K]``.
    """

    def __init__(self, examples, vocab, cfg: TrainConfig, resources: Resources, perturb_seed: int):
        pc = dataclasses.replace(resources.perturb, seed=perturb_seed)
        augs = augment_corpus(examples, cfg.kinds, cfg.aug_count, pc, resources.lexicon, resources.index)
        self.flat = [a for ex in examples for a in augs[ex.id]]
        ids = [encode_tokens(vocab, a.tokens, a.aspect) for a in self.flat]
        self.pool = pooling_matrix(ids, len(vocab))
        self.n_aug = cfg.aug_count
        self.n_kinds = len(cfg.kinds)
        self.kinds = list(cfg.kinds)
        # (aug_count,) -> kind slot
        self.slot = np.arange(cfg.aug_count) % self.n_kinds
        self.replicas = np.bincount(self.slot, minlength=self.n_kinds).astype(np.float64)

    def rows(self, batch_idx: np.ndarray) -> np.ndarray:
        return (batch_idx[:, None] * self.n_aug + np.arange(self.n_aug)[None, :]).ravel()

    def kind_means(self, logits: np.ndarray, b: int) -> np.ndarray:
        """(b * N, 3) replica logits -> (b, K, 3) per-kind means."""
        per = logits.reshape(b, self.n_aug, -1)
        out = np.zeros((b, self.n_kinds, per.shape[2]))
        for s in range(self.n_kinds):
            out[:, s] = per[:, self.slot == s].mean(axis=1)
        return out

    def spread(self, d_kind: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. per-kind means -> gradient w.r.t. each replica's logits."""
        b = d_kind.shape[0]
        per = d_kind[:, self.slot] / self.replicas[self.slot][None, :, None]
        return per.reshape(b * self.n_aug, -1)


def step_gradients(
    params: ModelParams,
    orig_pool: sp.csr_matrix,
    labels: np.ndarray,
    beta: float,
    alpha_vec: Optional[np.ndarray] = None,
    aug: Optional[_AugmentedSet] = None,
    aug_pool: Optional[sp.csr_matrix] = None,
    orig_mask: Optional[np.ndarray] = None,
    aug_mask: Optional[np.ndarray] = None,
) -> tuple[float, float, ParamGrads]:
    """``(ce, iv, grad of ce + beta * iv)`` for one mini-batch of originals."""
    trace = forward_batch(params, orig_pool, orig_mask)
    ce, d_logits = cross_entropy_batch(trace.logits, labels)
    grads = backward_batch(params, trace, d_logits)
    iv = 0.0
    if beta > 0:
        b = orig_pool.shape[0]
        atrace = forward_batch(params, aug_pool, aug_mask)
        kind_logits = aug.kind_means(atrace.logits, b)
        iv, d_kind = iv_loss_batch(alpha_vec, kind_logits)
        grads = grads + backward_batch(params, atrace, beta * aug.spread(d_kind))
    return ce, iv, grads


def predict(params: ModelParams, vocab: Vocabulary, examples: Sequence[Example]) -> np.ndarray:
    pool = pooling_matrix([encode_example(vocab, ex) for ex in examples], len(vocab))
    return np.argmax(forward_batch(params, pool).logits, axis=1)


def evaluate(params: ModelParams, vocab: Vocabulary, examples: Sequence[Example]) -> MetricsReport:
    preds = predict(params, vocab, examples)
    flags = [ex.implicit for ex in examples]
    if all(f is None for f in flags):
        flags = None
    return subset_report([ex.label for ex in examples], [LABELS[p] for p in preds], flags)


def train(
    config: TrainConfig,
    train_examples: Sequence[Example],
    eval_examples: Optional[Sequence[Example]] = None,
    resources: Optional[Resources] = None,
    vocab: Optional[Vocabulary] = None,
) -> tuple[ModelParams, TrainReport, Vocabulary]:
    """Train from scratch and return ``(params, report, vocab)``.

    Each epoch: stage 1 re-estimates alpha on the whole training set
    (unless frozen after the first epoch), then stage 2 runs mini-batch Adam
    on ``L_CE + beta * L_IV``. Augmentations are drawn once before the first
    epoch unless ``resample_augmentations`` is set. With ``beta == 0`` no
    augmentation is built and the loop is plain cross-entropy training.

    With ``aug_as_data`` the augmentations are instead appended to the
    training set as extra labelled sentences and trained with CE only.
    """
    config.validate()
    t0 = time.perf_counter()
    resources = resources or Resources()
    train_examples = list(train_examples)
    if vocab is None:
        vocab = build_vocab(train_examples, config.min_count)
    dims = ModelDims(len(vocab), config.embed_dim, config.hidden_dim)
    params = init_params(dims, config.seed)
    state = AdamState.zeros_like(params)
    decay = config.decay_map()
    use_iv = config.beta > 0 and not config.aug_as_data

    labels = np.array([ex.label_index for ex in train_examples], dtype=np.int64)
    orig_pool = pooling_matrix([encode_example(vocab, ex) for ex in train_examples], len(vocab))

    if config.aug_as_data:
        aug = _AugmentedSet(train_examples, vocab, config, resources, resources.perturb.seed)
        orig_pool = sp.vstack([orig_pool, aug.pool]).tocsr()
        labels = np.concatenate([labels, np.repeat(labels, config.aug_count)])
        aug = None
    elif use_iv:
        aug = _AugmentedSet(train_examples, vocab, config, resources, resources.perturb.seed)
    else:
        aug = None

    order_rng = np.random.default_rng([config.seed, 1])
    drop_rng = np.random.default_rng([config.seed, 2])
    aug_drop_rng = np.random.default_rng([config.seed, 3])
    n = orig_pool.shape[0]
    epochs, alpha_history = [], []
    alpha_vec = None
    for epoch in range(config.epochs):
        if use_iv:
            if config.resample_augmentations and epoch > 0:
                aug = _AugmentedSet(train_examples, vocab, config, resources, resources.perturb.seed + epoch)
            if alpha_vec is None or config.alpha_schedule == "per_epoch":
                est = estimate_alpha_from_encodings(
                    encode_batch(params, orig_pool),
                    encode_batch(params, aug.pool),
                    np.repeat(np.arange(n), config.aug_count),
                    [a.kind for a in aug.flat],
                    config.alpha_mode,
                    config.alpha_objective,
                    epoch,
                )
                alpha_vec = np.array([est[k] for k in config.kinds])
                alpha_history.append(est)
        perm = order_rng.permutation(n)
        ce_sum = iv_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            bpool = orig_pool[idx]
            omask = dropout_mask(drop_rng, (len(idx), dims.embed_dim), config.dropout)
            apool = amask = None
            if use_iv:
                apool = aug.pool[aug.rows(idx)]
                amask = dropout_mask(aug_drop_rng, (apool.shape[0], dims.embed_dim), config.dropout)
            ce, iv, grads = step_gradients(
                params, bpool, labels[idx], config.beta if use_iv else 0.0, alpha_vec, aug, apool, omask, amask
            )
            if not (math.isfinite(ce) and math.isfinite(iv)):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            params, state = adam_step(params, grads, state, config.lr, decay)
            ce_sum += ce
            iv_sum += iv
            n_batches += 1
        epochs.append(total_loss(ce_sum / max(n_batches, 1), iv_sum / max(n_batches, 1), config.beta))
        if not params.all_finite():
            raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}")

    metrics = evaluate(params, vocab, eval_examples) if eval_examples else None
    report = TrainReport(epochs, alpha_history, metrics, time.perf_counter() - t0, config.nonstandard_aug_count)
    return params, report, vocab
