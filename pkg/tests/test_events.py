import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsec.errors import ConfigError, EmptyCorpusError, ParseError
from fedsec.events import (
    EventSequence,
    class_histogram,
    corpus_to_text,
    format_event_log,
    generate_synthetic_corpus,
    load_corpus,
    parse_event_log,
    split_dataset,
)

from conftest import corpus_from_lists


def test_parse_single_machine():
    c = parse_event_log(["m1,10,5", "m1,20,7", "m1,30,9"])
    assert len(c) == 1
    s = c[0]
    assert [c.vocabulary[e] for e in s.history] == [5, 7]
    assert c.vocabulary[s.label] == 9
    assert c.vocabulary == (5, 7, 9)


def test_parse_interleaved_machines_matches_sort_then_group():
    records = [("b", 5, 3), ("a", 9, 1), ("b", 1, 4), ("a", 2, 2), ("a", 4, 3), ("b", 3, 1)]
    lines = [f"{m}\t{t}\t{e}" for m, t, e in records]
    c = parse_event_log(lines)
    expected = {}
    for m, t, e in sorted(records, key=lambda r: (r[0], r[1])):
        expected.setdefault(m, []).append(e)
    got = {s.machine_id: [c.vocabulary[e] for e in s.events] for s in c}
    assert got == expected
    for s in c:
        assert list(s.timestamps) == sorted(s.timestamps)


def test_parse_missing_field_names_line():
    with pytest.raises(ParseError) as exc:
        parse_event_log(["m1,1,2", "m1,5"])
    assert exc.value.line == 2
    assert "line 2" in str(exc.value)


@pytest.mark.parametrize("bad", ["m1,x,2", "m1,3,-1", "m1,3,z", "a,1,2,3,4,5"])
def test_parse_malformed_values(bad):
    with pytest.raises(ParseError):
        parse_event_log(["m0,1,1", "m0,2,2", bad])


def test_parse_empty_input():
    with pytest.raises(EmptyCorpusError):
        parse_event_log([])
    with pytest.raises(EmptyCorpusError):
        parse_event_log(["# only a comment", ""])


def test_parse_gap_cuts_streams():
    lines = ["m,0,1", "m,10,2", "m,1000,3", "m,1005,4", "m,5000,5"]
    assert len(parse_event_log(lines)) == 1
    cut = parse_event_log(lines, gap=100)
    # the trailing single event is too short to form a sequence
    assert [len(s) for s in cut] == [2, 2]


def test_parse_keeps_extra_columns_out_of_the_model():
    c = parse_event_log(["m,1,4,login failed,blocked", "m,2,6,scan,allowed"])
    assert c[0].extras == (("login failed", "blocked"), ("scan", "allowed"))
    assert format_event_log(c, sep=",") == ["m,1,4,login failed,blocked", "m,2,6,scan,allowed"]


def test_sequence_invariants():
    with pytest.raises(ValueError):
        EventSequence("m", (), 1)
    with pytest.raises(ValueError):
        EventSequence("m", (1, 2), 3, timestamps=(5, 4, 6))


record = st.tuples(st.sampled_from(["a", "b", "c", "d"]), st.integers(0, 50), st.integers(0, 9))


@settings(max_examples=60, deadline=None)
@given(st.lists(record, min_size=2, max_size=40))
def test_log_round_trip(records):
    lines = [f"{m},{t},{e}" for m, t, e in records]
    try:
        c = parse_event_log(lines)
    except EmptyCorpusError:
        return
    again = parse_event_log(format_event_log(c))

    def raw(corpus):
        return [(s.machine_id, [corpus.vocabulary[e] for e in s.events], s.timestamps) for s in corpus]

    assert raw(again) == raw(c)
    assert set(again.vocabulary) <= set(c.vocabulary)
    # every machine with at least two records is present, stably sorted by time
    by_machine = {}
    for m, t, e in records:
        by_machine.setdefault(m, []).append((t, e))
    expected = {m: sorted(v, key=lambda p: p[0]) for m, v in by_machine.items() if len(v) >= 2}
    got = {s.machine_id: list(zip(s.timestamps, [c.vocabulary[e] for e in s.events])) for s in c}
    assert got == expected


def test_corpus_file_round_trip(small_corpus):
    text = corpus_to_text(small_corpus)
    back = load_corpus(io.StringIO(text))
    assert back.vocabulary == small_corpus.vocabulary
    assert [s.events for s in back] == [s.events for s in small_corpus]
    assert corpus_to_text(back) == text


def test_corpus_file_errors():
    with pytest.raises(ParseError):
        load_corpus(io.StringIO("m\t1\n"))
    with pytest.raises(ParseError):
        load_corpus(io.StringIO("m 1,2\n"))
    with pytest.raises(EmptyCorpusError):
        load_corpus(io.StringIO("#vocab\t1,2\n"))


def test_split_default_ratios():
    c = corpus_from_lists([[0, 1]] * 10, 2)
    s = split_dataset(c, (0.8, 0.1, 0.1), seed=0)
    assert (len(s.train), len(s.validation), len(s.test)) == (8, 1, 1)


def test_split_degenerate_and_errors():
    c = corpus_from_lists([[0, 1]] * 7, 2)
    s = split_dataset(c, (1, 0, 0), seed=4)
    assert (len(s.train), len(s.validation), len(s.test)) == (7, 0, 0)
    with pytest.raises(ConfigError):
        split_dataset(c, (0.5, 0.3, 0.1))
    with pytest.raises(ConfigError):
        split_dataset(c, (0.5, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**31), st.floats(0.05, 0.9), st.floats(0.0, 1.0))
def test_split_is_a_partition(n, seed, a, frac):
    rows = [[k % 5, (k + 1) % 5] for k in range(n)]
    c = corpus_from_lists(rows, 5)
    ratios = (a, (1 - a) * frac, (1 - a) * (1 - frac))
    s = split_dataset(c, ratios, seed)
    ids = [x.machine_id for part in (s.train, s.validation, s.test) for x in part]
    assert sorted(ids) == sorted(x.machine_id for x in c)
    cum = np.cumsum(ratios) * n
    assert abs(len(s.train) - cum[0]) <= 1
    assert abs(len(s.validation) - ratios[1] * n) <= 1
    assert abs(len(s.test) - ratios[2] * n) <= 1
    again = split_dataset(c, ratios, seed)
    assert corpus_to_text(again.train) == corpus_to_text(s.train)
    assert corpus_to_text(again.test) == corpus_to_text(s.test)


@pytest.mark.parametrize(
    "labels,V,expected",
    [
        ([0, 0, 0, 0], 3, [1.0, 0.0, 0.0]),
        ([0, 0, 1, 1], 2, [0.5, 0.5]),
        ([0, 1, 1, 2], 3, [0.25, 0.5, 0.25]),
    ],
)
def test_class_histogram_by_hand(labels, V, expected):
    c = corpus_from_lists([[0, y] for y in labels], V)
    assert class_histogram(c).tolist() == expected


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=80))
def test_class_histogram_is_probability_vector(labels):
    c = corpus_from_lists([[1, y] for y in labels], 8)
    h = class_histogram(c)
    assert np.all(h >= 0)
    assert abs(h.sum() - 1) <= 1e-12
    assert np.allclose(h * len(labels), np.bincount(labels, minlength=8))


def test_class_histogram_empty():
    with pytest.raises(EmptyCorpusError):
        class_histogram(corpus_from_lists([], 3))


def test_synthetic_shape_and_determinism():
    c = generate_synthetic_corpus(2, 1, length_range=(5, 5), seed=1)
    assert len(c) == 1 and len(c[0]) == 5
    assert set(c[0].events) <= {0, 1}
    a = generate_synthetic_corpus(20, 50, seed=9)
    b = generate_synthetic_corpus(20, 50, seed=9)
    assert corpus_to_text(a) == corpus_to_text(b)
    assert corpus_to_text(a) != corpus_to_text(generate_synthetic_corpus(20, 50, seed=10))
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(1, 5)


def test_synthetic_history_is_predictive():
    # a last-event lookup table fitted on train beats chance on test by a wide margin
    c = generate_synthetic_corpus(50, 2000, seed=0)
    s = split_dataset(c, (0.8, 0.0, 0.2), seed=0)
    counts = np.zeros((50, 50))
    for x in s.train:
        counts[x.history[-1], x.label] += 1
    table = counts.argmax(axis=1)
    acc = np.mean([table[x.history[-1]] == x.label for x in s.test])
    assert acc > 5 / 50
