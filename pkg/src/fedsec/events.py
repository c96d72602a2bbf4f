"""Security-event data model: log ingestion, vocabulary, splitting, synthetic data.

An event log is a text file with one record per line::

    machine_id<sep>timestamp<sep>event_id[<sep>description[<sep>action]]

where ``<sep>`` is a tab or a comma. Records are grouped per machine, sorted by
timestamp and turned into :class:`EventSequence` objects whose last event is the
prediction target (the class label).

Raw event ids from a log are remapped to dense indices ``0..V-1``; the mapping is
kept in :attr:`EventCorpus.vocabulary` so files can be written back with the
original ids.
"""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpusError, ParseError

__all__ = [
    "EventSequence",
    "EventCorpus",
    "SplitCorpus",
    "parse_event_log",
    "read_event_log",
    "format_event_log",
    "split_dataset",
    "class_histogram",
    "generate_synthetic_corpus",
    "transition_matrix",
    "dump_corpus",
    "load_corpus",
    "write_corpus",
    "read_corpus",
]


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered events of one machine. ``label`` is the last event."""

    machine_id: str
    history: tuple[int, ...]
    label: int
    timestamps: tuple[int, ...] | None = None
    extras: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if len(self.history) < 1:
            raise ValueError("a sequence needs at least one history event and a label")
        if self.timestamps is not None:
            if len(self.timestamps) != len(self.history) + 1:
                raise ValueError("timestamps must cover history and label")
            if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
                raise ValueError("timestamps must be non-decreasing")

    @property
    def events(self) -> tuple[int, ...]:
        return self.history + (self.label,)

    def __len__(self):
        return len(self.history) + 1

    def with_events(self, history, label) -> "EventSequence":
        """Copy with new events; timing metadata is dropped since it no longer lines up."""
        return EventSequence(self.machine_id, tuple(int(e) for e in history), int(label))


@dataclass(frozen=True)
class EventCorpus:
    """A collection of sequences over a shared vocabulary.

    ``vocabulary[k]`` is the raw event id behind dense index ``k``; every event in
    every sequence is a dense index ``< vocab_size``.
    """

    sequences: tuple[EventSequence, ...]
    vocabulary: tuple[int, ...]

    def __post_init__(self):
        V = len(self.vocabulary)
        for s in self.sequences:
            for e in s.events:
                if not 0 <= e < V:
                    raise ValueError(f"event index {e} outside vocabulary of size {V}")

    @classmethod
    def from_sequences(cls, sequences: Iterable[EventSequence], vocab_size: int) -> "EventCorpus":
        return cls(tuple(sequences), tuple(range(vocab_size)))

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.fromiter((s.label for s in self.sequences), dtype=np.int64, count=len(self.sequences))

    @property
    def class_count(self) -> int:
        """Number of distinct labels present."""
        return len(np.unique(self.labels))

    def classes(self) -> list[int]:
        return sorted(set(self.labels.tolist()))

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def subset(self, indices) -> "EventCorpus":
        return EventCorpus(tuple(self.sequences[int(i)] for i in indices), self.vocabulary)

    def replace(self, sequences) -> "EventCorpus":
        return EventCorpus(tuple(sequences), self.vocabulary)

    def concat(self, other: "EventCorpus") -> "EventCorpus":
        if other.vocabulary != self.vocabulary:
            raise ValueError("cannot concatenate corpora with different vocabularies")
        return EventCorpus(self.sequences + other.sequences, self.vocabulary)


@dataclass(frozen=True)
class SplitCorpus:
    train: EventCorpus
    validation: EventCorpus
    test: EventCorpus
    split_seed: int


# ---------------------------------------------------------------------------
# log ingestion


def _split_record(line: str) -> list[str]:
    sep = "\t" if "\t" in line else ","
    return [f.strip() for f in line.split(sep)]


def parse_event_log(lines: Iterable[str], gap: float | None = None) -> EventCorpus:
    """Parse event-log records into a corpus.

    ``gap`` is the idle-gap threshold in seconds: a machine's stream is cut where two
    consecutive events are more than ``gap`` apart. ``None`` keeps one sequence per
    machine. Fragments with fewer than two events are dropped.

    Blank lines and lines starting with ``#`` are skipped.
    """
    if gap is not None and gap < 0:
        raise ConfigError("gap must be non-negative")
    per_machine: dict[str, list[tuple[int, int, int, tuple[str, ...]]]] = defaultdict(list)
    n = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = _split_record(line)
        for i, name in enumerate(("machine_id", "timestamp", "event_id")):
            if i >= len(fields) or not fields[i]:
                raise ParseError(f"missing {name} field", line=lineno)
        if len(fields) > 5:
            raise ParseError(f"expected at most 5 fields, got {len(fields)}", line=lineno)
        machine, ts_s, ev_s = fields[:3]
        try:
            ts = int(ts_s)
        except ValueError:
            raise ParseError(f"timestamp {ts_s!r} is not an integer", line=lineno) from None
        try:
            ev = int(ev_s)
        except ValueError:
            raise ParseError(f"event_id {ev_s!r} is not an integer", line=lineno) from None
        if ev < 0:
            raise ParseError(f"event_id {ev} is negative", line=lineno)
        per_machine[machine].append((ts, n, ev, tuple(fields[3:])))
        n += 1
    if n == 0:
        raise EmptyCorpusError("empty input")

    vocabulary = tuple(sorted({r[2] for recs in per_machine.values() for r in recs}))
    index = {raw: k for k, raw in enumerate(vocabulary)}

    sequences = []
    for machine in sorted(per_machine):
        recs = sorted(per_machine[machine])  # (ts, arrival) keeps ties in input order
        chunks, cur = [], [recs[0]]
        for prev, rec in zip(recs, recs[1:]):
            if gap is not None and rec[0] - prev[0] > gap:
                chunks.append(cur)
                cur = []
            cur.append(rec)
        chunks.append(cur)
        for chunk in chunks:
            if len(chunk) < 2:
                continue
            ids = [index[r[2]] for r in chunk]
            sequences.append(
                EventSequence(
                    machine_id=machine,
                    history=tuple(ids[:-1]),
                    label=ids[-1],
                    timestamps=tuple(r[0] for r in chunk),
                    extras=tuple(r[3] for r in chunk) if any(r[3] for r in chunk) else (),
                )
            )
    if not sequences:
        raise EmptyCorpusError("no sequence with at least two events")
    return EventCorpus(tuple(sequences), vocabulary)


def read_event_log(path, gap: float | None = None) -> EventCorpus:
    with open(path, encoding="utf-8") as fh:
        return parse_event_log(fh, gap=gap)


def format_event_log(corpus: EventCorpus, sep: str = "\t") -> list[str]:
    """Write a parsed corpus back as log records (grouped by machine, time-sorted)."""
    out = []
    for s in corpus.sequences:
        if s.timestamps is None:
            raise ValueError(f"sequence of {s.machine_id!r} carries no timestamps")
        for k, (e, t) in enumerate(zip(s.events, s.timestamps)):
            fields = [s.machine_id, str(t), str(corpus.vocabulary[e])]
            if s.extras:
                fields.extend(s.extras[k])
            out.append(sep.join(fields))
    return out


# ---------------------------------------------------------------------------
# corpus files: "machine_id<TAB>e_0,e_1,...,e_n" with raw ids, last id is the label


def dump_corpus(corpus: EventCorpus, fh) -> None:
    fh.write("#vocab\t" + ",".join(map(str, corpus.vocabulary)) + "\n")
    for s in corpus.sequences:
        fh.write(s.machine_id + "\t" + ",".join(str(corpus.vocabulary[e]) for e in s.events) + "\n")


def load_corpus(fh) -> EventCorpus:
    vocabulary = None
    rows = []
    for lineno, raw in enumerate(fh, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#vocab"):
            body = line.split("\t", 1)[1] if "\t" in line else ""
            vocabulary = tuple(int(v) for v in body.split(",") if v)
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected machine_id<TAB>events", line=lineno)
        try:
            ids = [int(v) for v in parts[1].split(",")]
        except ValueError:
            raise ParseError("event ids must be integers", line=lineno) from None
        if len(ids) < 2:
            raise ParseError("a sequence needs at least two events", line=lineno)
        rows.append((parts[0], ids))
    if not rows:
        raise EmptyCorpusError("empty input")
    if vocabulary is None:
        vocabulary = tuple(sorted({e for _, ids in rows for e in ids}))
    index = {raw: k for k, raw in enumerate(vocabulary)}
    seqs = []
    for machine, ids in rows:
        try:
            dense = [index[e] for e in ids]
        except KeyError as exc:
            raise ParseError(f"event id {exc.args[0]} not in vocabulary") from None
        seqs.append(EventSequence(machine, tuple(dense[:-1]), dense[-1]))
    return EventCorpus(tuple(seqs), vocabulary)


def write_corpus(corpus: EventCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        dump_corpus(corpus, fh)


def read_corpus(path) -> EventCorpus:
    with open(path, encoding="utf-8") as fh:
        return load_corpus(fh)


def corpus_to_text(corpus: EventCorpus) -> str:
    buf = io.StringIO()
    dump_corpus(corpus, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------


def split_dataset(corpus: EventCorpus, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> SplitCorpus:
    """Seeded shuffle, then cut into train/validation/test by ``ratios``.

    Cut points are rounded cumulatively so every part is within one sequence of its
    target size.
    """
    if len(ratios) != 3:
        raise ConfigError("ratios must have three entries (train, validation, test)")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be non-negative and sum to 1, got {tuple(ratios)}")
    n = len(corpus)
    perm = np.random.default_rng(seed).permutation(n)
    a = int(round(ratios[0] * n))
    b = int(round((ratios[0] + ratios[1]) * n))
    b = max(a, min(b, n))
    return SplitCorpus(corpus.subset(perm[:a]), corpus.subset(perm[a:b]), corpus.subset(perm[b:]), seed)


def class_histogram(corpus: EventCorpus) -> np.ndarray:
    """Normalized label frequencies, indexed by event id (length ``vocab_size``)."""
    if len(corpus) == 0:
        raise EmptyCorpusError("class histogram of an empty corpus")
    counts = np.bincount(corpus.labels, minlength=corpus.vocab_size).astype(np.float64)
    return counts / counts.sum()


def transition_matrix(vocab_size: int, seed: int, branching: int = 3, noise: float = 0.05) -> np.ndarray:
    """Random sparse-ish Markov transition matrix used by the synthetic generator.

    Each state puts ``1 - noise`` of its mass on ``branching`` random successors
    (Dirichlet weights) and spreads ``noise`` uniformly.
    """
    rng = np.random.default_rng(seed)
    V = vocab_size
    P = np.full((V, V), noise / V)
    k = min(branching, V)
    for s in range(V):
        succ = rng.choice(V, size=k, replace=False)
        P[s, succ] += (1.0 - noise) * rng.dirichlet(np.ones(k))
    return P / P.sum(axis=1, keepdims=True)


def generate_synthetic_corpus(
    vocab_size: int,
    n_machines: int,
    length_range: tuple[int, int] = (4, 12),
    seed: int = 0,
    branching: int = 3,
    noise: float = 0.05,
) -> EventCorpus:
    """Sample one sequence per machine from a seeded random Markov chain.

    The chain is sparse enough that the last history event predicts the label well
    above chance.
    """
    if vocab_size < 2:
        raise ConfigError("vocab_size must be at least 2")
    if n_machines < 1:
        raise ConfigError("n_machines must be at least 1")
    lo, hi = length_range
    if lo < 2 or hi < lo:
        raise ConfigError("length_range must satisfy 2 <= lo <= hi")
    P = transition_matrix(vocab_size, seed, branching, noise)
    cdf = np.cumsum(P, axis=1)
    rng = np.random.default_rng([seed, 1])
    width = max(5, int(math.log10(max(n_machines, 1))) + 1)
    seqs = []
    for m in range(n_machines):
        length = int(rng.integers(lo, hi + 1))
        state = int(rng.integers(vocab_size))
        ids = [state]
        u = rng.random(length - 1)
        for x in u:
            state = min(int(np.searchsorted(cdf[state], x, side="right")), vocab_size - 1)
            ids.append(state)
        t0 = int(rng.integers(0, 86_400))
        steps = rng.integers(1, 600, size=length - 1)
        ts = (t0,) + tuple(int(t) for t in t0 + np.cumsum(steps))
        seqs.append(EventSequence(f"m{m:0{width}d}", tuple(ids[:-1]), ids[-1], ts))
    return EventCorpus(tuple(seqs), tuple(range(vocab_size)))
