"""Distributing a corpus over simulated organizations.

Three distributions are provided (plus plain IID shards for controlled experiments):

* primary-like: label-skewed Dirichlet split, every organization sees a random mix
  of classes in random proportions;
* knowledgeable: a fraction ``m`` of participants hold every class, the rest hold
  narrow slices of fewer than half the classes;
* extreme: one participant per class.

:func:`non_iidness_score` averages the KL divergence between the class histograms
of every ordered pair of participants.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyCorpusError
from .events import EventCorpus, class_histogram, read_corpus, write_corpus

TAGS = ("primary", "knowledgeable", "extreme", "custom")
KL_SMOOTHING = 1e-6


@dataclass(frozen=True)
class ParticipantDataset:
    org_id: int
    train: EventCorpus
    knowledgeable: bool = False

    def __post_init__(self):
        if len(self.train) == 0:
            raise EmptyCorpusError(f"participant {self.org_id} has no training data")

    @cached_property
    def histogram(self) -> np.ndarray:
        return class_histogram(self.train)

    @property
    def n_samples(self) -> int:
        return len(self.train)


@dataclass(frozen=True)
class FederationDataset:
    participants: tuple[ParticipantDataset, ...]
    test: EventCorpus
    distribution_tag: str = "custom"
    m: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.distribution_tag not in TAGS:
            raise ConfigError(f"unknown distribution tag {self.distribution_tag!r}")
        ids = [p.org_id for p in self.participants]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate org ids")

    @property
    def K(self) -> int:
        return len(self.participants)

    @property
    def org_ids(self) -> list[int]:
        return [p.org_id for p in self.participants]

    @property
    def vocab_size(self) -> int:
        return self.participants[0].train.vocab_size

    def participant(self, org_id) -> ParticipantDataset:
        for p in self.participants:
            if p.org_id == org_id:
                return p
        raise KeyError(f"unknown org_id {org_id}")

    def without(self, org_id) -> "FederationDataset":
        self.participant(org_id)
        rest = tuple(p for p in self.participants if p.org_id != org_id)
        return FederationDataset(rest, self.test, self.distribution_tag, self.m, self.seed)

    def pooled(self) -> EventCorpus:
        seqs = [s for p in self.participants for s in p.train.sequences]
        return EventCorpus(tuple(seqs), self.participants[0].train.vocabulary)

    def total_samples(self) -> int:
        return sum(p.n_samples for p in self.participants)


def _empty_like(corpus: EventCorpus) -> EventCorpus:
    return EventCorpus((), corpus.vocabulary)


def _build(corpus, groups, test, tag, m=None, seed=None, knowledgeable=()):
    parts = tuple(
        ParticipantDataset(org, corpus.subset(sorted(idx)), org in knowledgeable) for org, idx in groups
    )
    return FederationDataset(parts, test if test is not None else _empty_like(corpus), tag, m, seed)


def _class_pools(corpus: EventCorpus, rng) -> dict[int, list[int]]:
    pools: dict[int, list[int]] = {}
    for c in corpus.classes():
        idx = np.flatnonzero(corpus.labels == c)
        pools[c] = rng.permutation(idx).tolist()
    return pools


def partition_iid(corpus: EventCorpus, K: int, seed: int = 0, test: EventCorpus | None = None,
                  equal: bool = False) -> FederationDataset:
    """Random shards of (near) equal size. ``equal=True`` requires ``len(corpus) % K == 0``."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    if K > len(corpus):
        raise ConfigError(f"K={K} exceeds the number of sequences ({len(corpus)})")
    if equal and len(corpus) % K:
        raise ConfigError("equal shards need len(corpus) divisible by K")
    perm = np.random.default_rng(seed).permutation(len(corpus))
    groups = [(k, chunk.tolist()) for k, chunk in enumerate(np.array_split(perm, K))]
    return _build(corpus, groups, test, "custom", seed=seed)


def partition_primary(corpus: EventCorpus, K: int, skew_seed: int = 0, test: EventCorpus | None = None,
                      concentration: float = 1.0) -> FederationDataset:
    """Mildly label-skewed split: each class is spread over orgs with Dirichlet proportions."""
    if K < 2:
        raise ConfigError("K must be >= 2")
    if K > len(corpus):
        raise ConfigError(f"K={K} exceeds the number of sequences ({len(corpus)})")
    if not concentration > 0:
        raise ConfigError("concentration must be > 0")
    rng = np.random.default_rng(skew_seed)
    owner = np.empty(len(corpus), dtype=np.int64)
    for c, idx in _class_pools(corpus, rng).items():
        p = rng.dirichlet(np.full(K, concentration))
        cuts = np.round(np.cumsum(p) * len(idx)).astype(int)
        owner[idx] = np.searchsorted(cuts, np.arange(len(idx)), side="right")
    # every org gets at least one sequence: move one from the currently largest org
    counts = np.bincount(owner, minlength=K)
    for k in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        victim = int(np.flatnonzero(owner == donor)[0])
        owner[victim] = k
        counts[donor] -= 1
        counts[k] += 1
    groups = [(k, np.flatnonzero(owner == k).tolist()) for k in range(K)]
    return _build(corpus, groups, test, "primary", seed=skew_seed)


def knowledgeable_count(K: int, m: float) -> int:
    return min(K, max(1, math.ceil(m * K - 1e-9)))


def partition_knowledgeable(corpus: EventCorpus, K: int, m: float, seed: int = 0,
                            test: EventCorpus | None = None, classes=None) -> FederationDataset:
    """``ceil(m*K)`` participants holding every class; the rest hold narrow slices.

    Knowledgeable participants are org ids ``0..ceil(m*K)-1``. Narrow participants
    first take about ``len(corpus)/K`` sequences from a random subset of fewer than
    half of the classes, using only the surplus a class has beyond one sequence per
    knowledgeable participant where possible. The remaining sequences of each class
    are then dealt round-robin to the knowledgeable participants.
    """
    if not 0 < m <= 1:
        raise ConfigError("m must be in (0, 1]")
    if K < 1:
        raise ConfigError("K must be >= 1")
    if K > len(corpus):
        raise ConfigError(f"K={K} exceeds the number of sequences ({len(corpus)})")
    present = corpus.classes()
    if classes is None:
        classes = present
    else:
        missing = sorted(set(int(c) for c in classes) - set(present))
        if missing:
            raise ConfigError(f"class {missing[0]} has no sequences")
        classes = sorted(int(c) for c in classes)
    rng = np.random.default_rng(seed)
    n_know = knowledgeable_count(K, m)
    pools = _class_pools(corpus, rng)
    C = len(classes)
    max_slice = max(1, math.ceil(C / 2) - 1)
    share = max(1, len(corpus) // K)

    groups = []
    for org in range(n_know, K):
        size = int(rng.integers(1, max_slice + 1))
        mine = [classes[i] for i in rng.choice(C, size=size, replace=False)]
        taken: list[int] = []
        progress = True
        while len(taken) < share and progress:
            progress = False
            for c in mine:
                if len(taken) >= share:
                    break
                if len(pools[c]) > n_know:
                    taken.append(pools[c].pop())
                    progress = True
        if not taken:
            donors = [c for c in mine if pools[c]] or [c for c in classes if pools[c]]
            if not donors:
                raise ConfigError("corpus too small for the requested number of participants")
            taken.append(pools[donors[0]].pop())
        groups.append((org, taken))

    know = [[] for _ in range(n_know)]
    offset = 0
    for c in sorted(pools):
        for j, seq in enumerate(pools[c]):
            know[(offset + j) % n_know].append(seq)
        offset += len(pools[c])
    for k, idx in enumerate(know):
        if not idx:
            raise ConfigError("corpus too small: a knowledgeable participant received no data")
    groups = [(k, idx) for k, idx in enumerate(know)] + groups
    return _build(corpus, groups, test, "knowledgeable", m=m, seed=seed, knowledgeable=set(range(n_know)))


def partition_extreme(corpus: EventCorpus, test: EventCorpus | None = None) -> FederationDataset:
    """One participant per class; participant ``c`` holds the sequences labeled ``c``."""
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot partition an empty corpus")
    groups = [(c, np.flatnonzero(corpus.labels == c).tolist()) for c in corpus.classes()]
    return _build(corpus, groups, test, "extreme")


def smoothed(hist, alpha=KL_SMOOTHING):
    hist = np.asarray(hist, dtype=np.float64) + alpha
    return hist / hist.sum(axis=-1, keepdims=True)


def kl_divergence(p, q, alpha=KL_SMOOTHING) -> float:
    p, q = smoothed(p, alpha), smoothed(q, alpha)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def pairwise_kl(histograms, alpha=KL_SMOOTHING) -> np.ndarray:
    """Matrix ``KL[i, j] = KL(h_i || h_j)`` of smoothed histograms."""
    P = smoothed(np.asarray(histograms), alpha)
    logP = np.log(P)
    self_term = np.sum(P * logP, axis=1)
    return np.maximum(self_term[:, None] - P @ logP.T, 0.0)


def non_iidness_score(fed_or_histograms, alpha: float = KL_SMOOTHING) -> float:
    """Mean KL divergence over all ordered pairs of distinct participants."""
    if isinstance(fed_or_histograms, FederationDataset):
        hists = np.stack([p.histogram for p in fed_or_histograms.participants])
    else:
        hists = np.asarray(fed_or_histograms, dtype=np.float64)
    K = hists.shape[0]
    if K < 2:
        raise ConfigError("the Non-IIDness score needs at least two participants")
    kl = pairwise_kl(hists, alpha)
    np.fill_diagonal(kl, 0.0)
    return float(kl.sum() / (K * (K - 1)))


# ---------------------------------------------------------------------------
# on-disk layout: <dir>/manifest.json, <dir>/test.corpus, <dir>/org_<id>.corpus


def save_federation(fed: FederationDataset, directory, score: float | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for p in fed.participants:
        write_corpus(p.train, d / f"org_{p.org_id}.corpus")
    if len(fed.test):
        write_corpus(fed.test, d / "test.corpus")
    if score is None and fed.K >= 2:
        score = non_iidness_score(fed)
    manifest = {
        "distribution_tag": fed.distribution_tag,
        "K": fed.K,
        "m": fed.m,
        "seed": fed.seed,
        "non_iidness": score,
        "org_ids": fed.org_ids,
        "knowledgeable": [p.org_id for p in fed.participants if p.knowledgeable],
        "vocab_size": fed.vocab_size,
    }
    with open(d / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def load_federation(directory) -> FederationDataset:
    d = Path(directory)
    with open(d / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    know = set(manifest.get("knowledgeable", []))
    parts = []
    vocab = None
    for org in manifest["org_ids"]:
        c = read_corpus(d / f"org_{org}.corpus")
        vocab = c.vocabulary
        parts.append(ParticipantDataset(int(org), c, int(org) in know))
    test = read_corpus(d / "test.corpus") if os.path.exists(d / "test.corpus") else EventCorpus((), vocab)
    return FederationDataset(tuple(parts), test, manifest["distribution_tag"], manifest.get("m"), manifest.get("seed"))
