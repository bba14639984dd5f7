"""Stochastic text perturbations used as instruments.

Four perturbation kinds, each producing ``x_z = f(x, z)`` from a token list:
random swap, random deletion, random insertion of an embedding neighbour and
synonym substitution from a local lexicon. Perturbations read only the
sentence tokens, a seed and the lexicon/index; they never see the label.
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np


class InstrumentKind(enum.Enum):
    SWAP = "swap"
    DELETE = "delete"
    INSERT = "insert"
    SYNONYM = "synonym"

    @classmethod
    def parse(cls, name: str) -> "InstrumentKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown instrument kind {name!r}; expected one of {[k.value for k in cls]}") from None


ALL_KINDS = tuple(InstrumentKind)


class NoInsertionAnchorWarning(UserWarning):
    """Random insertion found no token with a similarity-index entry."""


@dataclass(frozen=True)
class PerturbConfig:
    p_delete: float = 0.1
    swap_rate: float = 0.1
    insert_rate: float = 0.1
    synonym_max: int = 2
    top_k_neighbors: int = 5
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.p_delete < 1.0:
            raise ValueError("p_delete must lie in (0, 1)")
        if not 0.0 < self.swap_rate <= 1.0:
            raise ValueError("swap_rate must lie in (0, 1]")
        if not 0.0 < self.insert_rate <= 1.0:
            raise ValueError("insert_rate must lie in (0, 1]")
        if self.synonym_max < 1 or self.top_k_neighbors < 1:
            raise ValueError("synonym_max and top_k_neighbors must be >= 1")


class SynonymLexicon:
    """token -> synonyms. Self-references and empty entries are dropped."""

    def __init__(self, entries: Mapping[str, Sequence[str]]):
        self.entries: dict[str, tuple[str, ...]] = {}
        for tok, syns in entries.items():
            tok = tok.lower()
            clean = []
            for s in syns:
                s = s.lower()
                if s and s != tok and s not in clean:
                    clean.append(s)
            if clean:
                self.entries[tok] = tuple(clean)

    def __contains__(self, tok: str) -> bool:
        return tok in self.entries

    def __getitem__(self, tok: str) -> tuple[str, ...]:
        return self.entries[tok]

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path) -> "SynonymLexicon":
        """Read ``token<TAB>syn1,syn2,...`` lines."""
        entries: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise ValueError(f"{path}:{lineno}: expected token<TAB>synonyms")
                tok, syns = line.split("\t", 1)
                entries.setdefault(tok.strip(), []).extend(s.strip() for s in syns.split(",") if s.strip())
        return cls(entries)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in sorted(self.entries):
                fh.write(f"{tok}\t{','.join(self.entries[tok])}\n")


class SimilarityIndex:
    """Ranked nearest neighbours by cosine similarity of static word vectors."""

    def __init__(self, neighbors: Mapping[str, Sequence[str]]):
        self.neighbors = {t: tuple(n for n in ns if n != t) for t, ns in neighbors.items()}
        self.neighbors = {t: ns for t, ns in self.neighbors.items() if ns}

    def __contains__(self, tok: str) -> bool:
        return tok in self.neighbors

    def __getitem__(self, tok: str) -> tuple[str, ...]:
        return self.neighbors[tok]

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, np.ndarray], max_neighbors: int = 20) -> "SimilarityIndex":
        """Exact all-pairs cosine; fine for vocabularies of a few thousand words."""
        tokens = list(vectors)
        if not tokens:
            return cls({})
        mat = np.stack([np.asarray(vectors[t], dtype=np.float64) for t in tokens])
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        unit = np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)
        sim = unit @ unit.T
        np.fill_diagonal(sim, -np.inf)
        order = np.argsort(-sim, axis=1, kind="stable")[:, :max_neighbors]
        return cls({t: [tokens[j] for j in order[i] if j != i] for i, t in enumerate(tokens)})

    @classmethod
    def load(cls, path, max_neighbors: int = 20) -> "SimilarityIndex":
        return cls.from_vectors(load_embeddings(path), max_neighbors=max_neighbors)


def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read ``token f1 ... fd`` lines; every line must have the same d."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            vec = np.array([float(v) for v in parts[1:]])
            if dim is None:
                dim = vec.size
            if vec.size != dim or dim == 0:
                raise ValueError(f"{path}:{lineno}: expected {dim} components, got {vec.size}")
            vectors[parts[0]] = vec
    return vectors


def save_embeddings(vectors: Mapping[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in vectors.items():
            fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")


# --------------------------------------------------------------------------
# The four perturbations
# --------------------------------------------------------------------------


def swap(tokens: Sequence[str], rng: np.random.Generator, rate: float = 0.1) -> list[str]:
    """Swap two distinct random positions, ``ceil(rate * len)`` times."""
    out = list(tokens)
    n = len(out)
    if n < 2:
        return out
    for _ in range(max(1, math.ceil(rate * n))):
        i, j = rng.choice(n, size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def delete(tokens: Sequence[str], rng: np.random.Generator, p: float = 0.1) -> list[str]:
    """Drop each token independently with probability ``p``; never return an empty list."""
    n = len(tokens)
    if n <= 1:
        return list(tokens)
    keep = rng.random(n) >= p
    if not keep.any():
        keep[rng.integers(n)] = True
    return [t for t, k in zip(tokens, keep) if k]


def insert(
    tokens: Sequence[str],
    index: SimilarityIndex,
    rng: np.random.Generator,
    rate: float = 0.1,
    top_k: int = 5,
) -> list[str]:
    """Insert ``ceil(rate * len)`` embedding neighbours at random positions.

    Each insertion picks an anchor uniformly among tokens that have index
    entries, then one of the anchor's ``top_k`` neighbours uniformly.
    """
    out = list(tokens)
    n_insert = max(1, math.ceil(rate * len(out)))
    for _ in range(n_insert):
        anchors = [t for t in out if t in index]
        if not anchors:
            warnings.warn("no token has a similarity-index entry; insertion skipped", NoInsertionAnchorWarning)
            return list(tokens)
        anchor = anchors[rng.integers(len(anchors))]
        cands = index[anchor][:top_k]
        out.insert(int(rng.integers(len(out) + 1)), cands[rng.integers(len(cands))])
    return out


def synonym_sub(
    tokens: Sequence[str],
    lexicon: SynonymLexicon,
    rng: np.random.Generator,
    max_subs: int = 2,
) -> list[str]:
    """Replace up to ``max_subs`` lexicon-covered tokens by a random synonym."""
    out = list(tokens)
    cands = [i for i, t in enumerate(out) if t in lexicon]
    if not cands:
        return out
    chosen = rng.choice(len(cands), size=min(max_subs, len(cands)), replace=False)
    for c in chosen:
        i = cands[c]
        syns = lexicon[out[i]]
        out[i] = syns[rng.integers(len(syns))]
    return out


# --------------------------------------------------------------------------
# Augmentation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentedExample:
    origin_id: str
    kind: InstrumentKind
    replica: int
    tokens: tuple[str, ...]
    aspect: Optional[tuple[str, ...]] = None


def derived_rng(seed: int, origin_id: str, kind: InstrumentKind, replica: int) -> np.random.Generator:
    """Independent stream per (seed, origin, kind, replica); order of calls is irrelevant."""
    key = f"{int(seed)}\x1f{origin_id}\x1f{kind.value}\x1f{int(replica)}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def perturb_tokens(
    tokens: Sequence[str],
    kind: InstrumentKind,
    rng: np.random.Generator,
    config: PerturbConfig,
    lexicon: Optional[SynonymLexicon] = None,
    index: Optional[SimilarityIndex] = None,
) -> list[str]:
    if kind is InstrumentKind.SWAP:
        return swap(tokens, rng, config.swap_rate)
    if kind is InstrumentKind.DELETE:
        return delete(tokens, rng, config.p_delete)
    if kind is InstrumentKind.INSERT:
        return insert(tokens, index or SimilarityIndex({}), rng, config.insert_rate, config.top_k_neighbors)
    if kind is InstrumentKind.SYNONYM:
        return synonym_sub(tokens, lexicon or SynonymLexicon({}), rng, config.synonym_max)
    raise ValueError(f"unsupported kind {kind!r}")


def augment_tokens(
    origin_id: str,
    tokens: Sequence[str],
    aspect: Optional[Sequence[str]],
    kinds: Sequence[InstrumentKind],
    total_count: int,
    config: PerturbConfig,
    lexicon: Optional[SynonymLexicon] = None,
    index: Optional[SimilarityIndex] = None,
) -> list[AugmentedExample]:
    """Produce ``total_count`` perturbed copies, round-robin over ``kinds``.

    Only the sentence is perturbed; the aspect is copied through unchanged.
    """
    kinds = list(kinds)
    if not kinds:
        raise ValueError("at least one instrument kind is required")
    if total_count < len(kinds):
        raise ValueError(f"total_count={total_count} is smaller than the number of kinds ({len(kinds)})")
    aspect = tuple(aspect) if aspect is not None else None
    out = []
    for i in range(total_count):
        kind, replica = kinds[i % len(kinds)], i // len(kinds)
        rng = derived_rng(config.seed, origin_id, kind, replica)
        new = perturb_tokens(tokens, kind, rng, config, lexicon, index)
        out.append(AugmentedExample(origin_id, kind, replica, tuple(new), aspect))
    return out


def augment(example, kinds, total_count: int, config: PerturbConfig, lexicon=None, index=None) -> list[AugmentedExample]:
    """Augment an ``Example``; only its id, tokens and aspect are read."""
    return augment_tokens(example.id, example.tokens, example.aspect, kinds, total_count, config, lexicon, index)


def augment_corpus(examples, kinds, total_count: int, config: PerturbConfig, lexicon=None, index=None):
    """Augment every example; returns ``{origin_id: [AugmentedExample, ...]}``."""
    config.validate()
    with warnings.catch_warnings():
        warnings.simplefilter("once", NoInsertionAnchorWarning)
        return {ex.id: augment(ex, kinds, total_count, config, lexicon, index) for ex in examples}


# --------------------------------------------------------------------------
# Lexicon and embeddings for synthetic corpora
# --------------------------------------------------------------------------

_NO_SYNONYMS = ("aspect", "connective")


def synthetic_lexicon(token_groups: Mapping[str, Sequence[str]], n_synonyms: int = 5, seed: int = 0) -> SynonymLexicon:
    """Synonyms drawn from the token's own group (same-class causal words,
    same-class confounder words, or other fillers). Aspect names and
    connectives get no entry."""
    rng = np.random.default_rng(seed)
    entries = {}
    for name in sorted(token_groups):
        if name in _NO_SYNONYMS:
            continue
        group = list(token_groups[name])
        for tok in group:
            others = [t for t in group if t != tok]
            if not others:
                continue
            k = min(n_synonyms, len(others))
            entries[tok] = [others[i] for i in rng.choice(len(others), size=k, replace=False)]
    return SynonymLexicon(entries)


def synthetic_embeddings(
    token_groups: Mapping[str, Sequence[str]], dim: int = 16, spread: float = 0.3, seed: int = 0
) -> dict[str, np.ndarray]:
    """Static vectors clustered by group: a random centroid per group plus isotropic noise."""
    rng = np.random.default_rng(seed)
    vectors = {}
    for name in sorted(token_groups):
        centroid = rng.standard_normal(dim)
        centroid /= np.linalg.norm(centroid)
        for tok in token_groups[name]:
            vectors[tok] = centroid + spread * rng.standard_normal(dim) / math.sqrt(dim)
    return vectors
