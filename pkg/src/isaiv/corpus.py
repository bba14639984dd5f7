"""Labeled sentences: JSONL ingestion, vocabulary, id encoding, synthetic confounded splits.

JSONL records look like::

    {"id": "17", "text": "The price is high.", "label": "negative",
     "aspect": "price", "implicit": false}

``id``, ``aspect`` and ``implicit`` are optional. Text is lowercased and
punctuation is split off into standalone tokens.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .metrics import LABELS

PAD_ID, UNK_ID, SEP_ID = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "[sep]")
SCENARIOS = ("basic", "inter_aspect", "inter_clause", "dynamic_neutral")
SHORT = {"positive": "pos", "neutral": "neu", "negative": "neg"}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusFormatError(ValueError):
    """A JSONL record could not be parsed; the message names the line."""


class UnknownLabelError(CorpusFormatError):
    pass


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Example:
    id: str
    tokens: tuple[str, ...]
    label: str
    aspect: Optional[tuple[str, ...]] = None
    implicit: Optional[bool] = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"example {self.id!r} has no tokens")
        if self.label not in LABELS:
            raise UnknownLabelError(f"example {self.id!r}: unknown label {self.label!r}")

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": " ".join(self.tokens), "label": self.label}
        if self.aspect is not None:
            rec["aspect"] = " ".join(self.aspect)
        if self.implicit is not None:
            rec["implicit"] = self.implicit
        return rec


def parse_record(obj: dict, lineno: int) -> Example:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {lineno}: expected a JSON object")
    text, label = obj.get("text"), obj.get("label")
    if not isinstance(text, str):
        raise CorpusFormatError(f"line {lineno}: missing or non-string 'text'")
    if not isinstance(label, str):
        raise CorpusFormatError(f"line {lineno}: missing or non-string 'label' (numeric codes are not accepted)")
    if label.lower() not in LABELS:
        raise UnknownLabelError(f"line {lineno}: unknown label {label!r}")
    tokens = tokenize(text)
    if not tokens:
        raise CorpusFormatError(f"line {lineno}: text has no tokens")
    aspect = obj.get("aspect")
    if aspect is not None:
        if not isinstance(aspect, str):
            raise CorpusFormatError(f"line {lineno}: 'aspect' must be a string")
        aspect = tokenize(aspect) or None
    implicit = obj.get("implicit")
    if implicit is not None and not isinstance(implicit, bool):
        raise CorpusFormatError(f"line {lineno}: 'implicit' must be a boolean")
    ex_id = obj.get("id", str(lineno))
    return Example(id=str(ex_id), tokens=tokens, label=label.lower(), aspect=aspect, implicit=implicit)


def load_jsonl(path) -> list[Example]:
    """Read one example per non-blank line. Raises ``OSError`` or ``CorpusFormatError``."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            examples.append(parse_record(obj, lineno))
    return examples


def save_jsonl(examples: Iterable[Example], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), sort_keys=True) + "\n")


class Vocabulary:
    """Token <-> id map with ids 0, 1, 2 reserved for PAD, UNK and SEP."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def size(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, UNK_ID)

    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order (enough to rebuild the vocabulary)."""
        return self.itos[len(RESERVED):]


def token_counts(examples: Iterable[Example]) -> Counter:
    counts: Counter = Counter()
    for ex in examples:
        counts.update(ex.tokens)
        if ex.aspect:
            counts.update(ex.aspect)
    return counts


def build_vocab(examples: Sequence[Example], min_count: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_count`` times, numbered in first-occurrence order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = token_counts(examples)
    ordered = []
    for ex in examples:
        for tok in ex.tokens + (ex.aspect or ()):
            if counts[tok] >= min_count:
                ordered.append(tok)
    return Vocabulary(ordered)


def encode_tokens(vocab: Vocabulary, tokens: Sequence[str], aspect: Optional[Sequence[str]] = None) -> list[int]:
    ids = [vocab.id(t) for t in tokens]
    if aspect:
        ids.append(SEP_ID)
        ids.extend(vocab.id(t) for t in aspect)
    return ids


def encode_example(vocab: Vocabulary, example: Example) -> list[int]:
    """Sentence ids, then ``[SEP]`` and the aspect ids when an aspect is present."""
    return encode_tokens(vocab, example.tokens, example.aspect)


# --------------------------------------------------------------------------
# Synthetic confounded corpora
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 4000
    n_test: int = 2000
    rho_train: float = 0.9
    rho_test: float = 0.1
    n_causal_tokens: int = 600
    n_confounder_tokens: int = 2
    n_filler_tokens: int = 60
    sentence_len: int = 8
    scenario: str = "basic"
    seed: int = 0
    neutral_class: str = "negative"
    neutral_presence: float = 1 / 3
    class_counts_train: Optional[tuple[int, int, int]] = None
    class_counts_test: Optional[tuple[int, int, int]] = None

    def validate(self) -> None:
        for name in ("rho_train", "rho_test"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("n_train", "n_test", "n_causal_tokens", "n_confounder_tokens", "n_filler_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.neutral_class not in LABELS:
            raise ValueError(f"unknown neutral_class {self.neutral_class!r}")
        min_len = {"basic": 2, "dynamic_neutral": 2, "inter_aspect": 4, "inter_clause": 3}[self.scenario]
        if self.sentence_len < min_len:
            raise ValueError(f"sentence_len must be >= {min_len} for scenario {self.scenario!r}")
        if not 0.0 < self.neutral_presence <= 1.0:
            raise ValueError("neutral_presence must lie in (0, 1]")
        for name, n in (("class_counts_train", self.n_train), ("class_counts_test", self.n_test)):
            counts = getattr(self, name)
            if counts is not None and (len(counts) != 3 or sum(counts) != n or min(counts) < 0):
                raise ValueError(f"{name} must be three non-negative counts summing to {n}")


@dataclass
class DatasetSplit:
    train: list[Example]
    test: list[Example]
    ground_truth_causal_tokens: frozenset[str]
    ground_truth_confounder_tokens: frozenset[str]
    token_groups: dict[str, list[str]] = field(default_factory=dict)
    neutral_token: Optional[str] = None
    neutral_class: Optional[str] = None
    config: Optional[SynthConfig] = None

    def truth(self) -> dict:
        """JSON-ready sidecar describing the generating process."""
        return {
            "causal_tokens": sorted(self.ground_truth_causal_tokens),
            "confounder_tokens": sorted(self.ground_truth_confounder_tokens),
            "token_groups": {k: list(v) for k, v in sorted(self.token_groups.items())},
            "neutral_token": self.neutral_token,
            "neutral_class": self.neutral_class,
            "scenario": self.config.scenario if self.config else None,
            "seed": self.config.seed if self.config else None,
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_jsonl(self.train, out / "train.jsonl")
        save_jsonl(self.test, out / "test.jsonl")
        with open(out / "truth.json", "w", encoding="utf-8") as fh:
            json.dump(self.truth(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_truth(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _class_labels(n: int, counts: Optional[tuple[int, int, int]], rng: np.random.Generator) -> np.ndarray:
    if counts is None:
        labels = np.arange(n) % 3
    else:
        labels = np.repeat(np.arange(3), counts)
    return rng.permutation(labels)


def _other_class(k: int, rng: np.random.Generator) -> int:
    return (k + 1 + int(rng.integers(2))) % 3


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        short = [SHORT[l] for l in LABELS]
        causal_prefix = "implicit" if cfg.scenario == "inter_aspect" else "cause"
        self.causal = [[f"{causal_prefix}_{s}_{i}" for i in range(cfg.n_causal_tokens)] for s in short]
        self.conf = [[f"conf_{s}_{i}" for i in range(cfg.n_confounder_tokens)] for s in short]
        self.fillers = [f"filler_{i}" for i in range(cfg.n_filler_tokens)]
        self.aspects = [f"aspect_{i}" for i in range(4)]
        # in dynamic_neutral the designated neutral word is excluded from ordinary filling
        self.neutral = self.fillers[0] if cfg.scenario == "dynamic_neutral" else None
        self.fill_pool = self.fillers[1:] if self.neutral and len(self.fillers) > 1 else self.fillers

    def groups(self) -> dict[str, list[str]]:
        g = {}
        for k, s in enumerate(SHORT[l] for l in LABELS):
            g[f"causal_{s}"] = list(self.causal[k])
            if self.cfg.scenario != "dynamic_neutral":
                g[f"confounder_{s}"] = list(self.conf[k])
        g["filler"] = list(self.fillers)
        if self.cfg.scenario == "inter_aspect":
            g["aspect"] = list(self.aspects)
        if self.cfg.scenario == "inter_clause":
            g["connective"] = ["but"]
        return g

    def fill(self, n: int, rng) -> list[str]:
        return [self.fill_pool[i] for i in rng.integers(len(self.fill_pool), size=n)]

    def pick(self, pool: Sequence[str], rng) -> str:
        return pool[int(rng.integers(len(pool)))]

    def make(self, idx: int, k: int, rho: float, rng, prefix: str) -> Example:
        cfg = self.cfg
        L = cfg.sentence_len
        label = LABELS[k]
        causal = self.pick(self.causal[k], rng)
        if cfg.scenario == "dynamic_neutral":
            raise AssertionError("dynamic_neutral handled by make_neutral")
        conf_class = k if rng.random() < rho else _other_class(k, rng)
        conf = self.pick(self.conf[conf_class], rng)
        implicit = conf_class != k
        aspect = None
        if cfg.scenario == "basic":
            tokens = [causal, conf] + self.fill(L - 2, rng)
            tokens = [tokens[i] for i in rng.permutation(L)]
        elif cfg.scenario == "inter_clause":
            # misleading clause first, then the adversative connective, then the real evidence
            n_first = (L - 1) // 2
            n_second = L - 1 - n_first
            first = [conf] + self.fill(n_first - 1, rng)
            second = [causal] + self.fill(n_second - 1, rng)
            first = [first[i] for i in rng.permutation(len(first))]
            second = [second[i] for i in rng.permutation(len(second))]
            tokens = first + ["but"] + second
        else:  # inter_aspect
            target, other = rng.choice(len(self.aspects), size=2, replace=False)
            n_first = L // 2
            n_second = L - n_first
            # the other aspect carries the explicit sentiment word; the target only an implicit cue
            first = [self.aspects[other], conf] + self.fill(n_first - 2, rng)
            second = [self.aspects[target], causal] + self.fill(n_second - 2, rng)
            first = [first[0]] + [first[1:][i] for i in rng.permutation(n_first - 1)]
            second = [second[0]] + [second[1:][i] for i in rng.permutation(n_second - 1)]
            tokens = first + second
            aspect = (self.aspects[target],)
        return Example(id=f"{prefix}{idx}", tokens=tuple(tokens), label=label, aspect=aspect, implicit=implicit)

    def make_neutral(self, idx: int, k: int, present: bool, rng, prefix: str) -> Example:
        L = self.cfg.sentence_len
        causal = self.pick(self.causal[k], rng)
        if present:
            tokens = [causal, self.neutral] + self.fill(L - 2, rng)
        else:
            tokens = [causal] + self.fill(L - 1, rng)
        tokens = [tokens[i] for i in rng.permutation(L)]
        fixed = LABELS.index(self.cfg.neutral_class)
        # under the training skew, presence signals the fixed class and absence signals the others
        implicit = bool(present != (k == fixed))
        return Example(id=f"{prefix}{idx}", tokens=tuple(tokens), label=LABELS[k], implicit=implicit)

    def split(self, n: int, rho: float, counts, rng, prefix: str) -> list[Example]:
        labels = _class_labels(n, counts, rng)
        if self.cfg.scenario != "dynamic_neutral":
            return [self.make(i, int(k), rho, rng, prefix) for i, k in enumerate(labels)]
        # Inclusion probabilities chosen so that P(label = fixed | token present) = rho
        # and the token appears in a ``neutral_presence`` share of sentences.
        fixed = LABELS.index(self.cfg.neutral_class)
        n_fixed = int(np.sum(labels == fixed))
        n_other = n - n_fixed
        q = self.cfg.neutral_presence
        p_fixed = min(1.0, rho * q * n / n_fixed) if n_fixed else 0.0
        p_other = min(1.0, (1 - rho) * q * n / n_other) if n_other else 0.0
        out = []
        for i, k in enumerate(labels):
            p = p_fixed if k == fixed else p_other
            out.append(self.make_neutral(i, int(k), bool(rng.random() < p), rng, prefix))
        return out


def generate_confounded(config: SynthConfig) -> DatasetSplit:
    """Build a train/test pair whose labels are set by causal tokens and whose
    spurious cue co-occurs with the label at rate ``rho_train`` / ``rho_test``.

    Scenarios
    ---------
    basic
        One causal token, one confounder token (label-matched with
        probability rho, otherwise from a random other class), fillers;
        positions shuffled.
    inter_aspect
        Two aspects. The other aspect carries an explicit confounder word;
        the target aspect (``Example.aspect``) carries only an implicit
        pattern token, which sets the label.
    inter_clause
        ``<misleading clause> but <evidence clause>``; the confounder sits
        in the first clause.
    dynamic_neutral
        No class-tagged confounder. The neutral word ``filler_0`` appears in
        about ``neutral_presence`` of sentences, and among those the label
        equals ``neutral_class`` at rate rho.

    ``Example.implicit`` marks examples whose spurious cue points away from
    the gold label (the anti-correlated subset). For dynamic_neutral that is
    "token present but label is not the fixed class" or "token absent but
    label is the fixed class".
    """
    config.validate()
    gen = _Generator(config)
    rng = np.random.default_rng(config.seed)
    train = gen.split(config.n_train, config.rho_train, config.class_counts_train, rng, "train-")
    test = gen.split(config.n_test, config.rho_test, config.class_counts_test, rng, "test-")
    causal = frozenset(t for ks in gen.causal for t in ks)
    if config.scenario == "dynamic_neutral":
        confounders = frozenset([gen.neutral])
    else:
        confounders = frozenset(t for ks in gen.conf for t in ks)
    return DatasetSplit(
        train=train,
        test=test,
        ground_truth_causal_tokens=causal,
        ground_truth_confounder_tokens=confounders,
        token_groups=gen.groups(),
        neutral_token=gen.neutral,
        neutral_class=config.neutral_class if gen.neutral else None,
        config=config,
    )
