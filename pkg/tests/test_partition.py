import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsec.errors import ConfigError, EmptyCorpusError
from fedsec.events import corpus_to_text, generate_synthetic_corpus
from fedsec.partition import (
    FederationDataset,
    ParticipantDataset,
    knowledgeable_count,
    kl_divergence,
    load_federation,
    non_iidness_score,
    partition_extreme,
    partition_iid,
    partition_knowledgeable,
    partition_primary,
    save_federation,
)

from conftest import corpus_from_lists
from oracles import smoothed_kl


def keys(corpus):
    return sorted(s.machine_id for s in corpus)


def assert_partition(fed, corpus):
    got = [s.machine_id for p in fed.participants for s in p.train]
    assert len(got) == len(set(got)), "participants overlap"
    assert sorted(got) == keys(corpus), "union differs from the corpus"
    for p in fed.participants:
        assert len(p.train) >= 1


def labelled(labels, V):
    return corpus_from_lists([[(y + 1) % V, y] for y in labels], V)


@pytest.fixture(scope="module")
def corpus20():
    return generate_synthetic_corpus(20, 600, seed=5)


def test_primary_small_and_deterministic():
    c = labelled([0, 1, 0, 1], 2)
    fed = partition_primary(c, 2, skew_seed=0)
    assert_partition(fed, c)
    a = partition_primary(c, 2, skew_seed=3)
    b = partition_primary(c, 2, skew_seed=3)
    assert [keys(p.train) for p in a.participants] == [keys(p.train) for p in b.participants]
    with pytest.raises(ConfigError):
        partition_primary(c, 5)
    with pytest.raises(ConfigError):
        partition_primary(c, 1)


def test_extreme_definition(corpus20):
    fed = partition_extreme(corpus20)
    assert fed.K == corpus20.class_count
    assert_partition(fed, corpus20)
    for p in fed.participants:
        assert np.count_nonzero(p.histogram) == 1
        assert set(p.train.labels.tolist()) == {p.org_id}
    with pytest.raises(EmptyCorpusError):
        partition_extreme(corpus_from_lists([], 3))


def test_knowledgeable_full_case():
    c = labelled([0, 0, 1, 1, 2, 2], 3)
    fed = partition_knowledgeable(c, 2, 1.0, seed=0)
    assert_partition(fed, c)
    for p in fed.participants:
        assert p.knowledgeable
        assert set(p.train.labels.tolist()) == {0, 1, 2}


def test_knowledgeable_count_reference_config():
    assert knowledgeable_count(2000, 0.6) == 1200
    assert knowledgeable_count(10, 0.5) == 5
    assert knowledgeable_count(7, 0.01) == 1
    assert knowledgeable_count(3, 0.34) == 2


def test_knowledgeable_half_of_ten_over_four_classes():
    c = labelled([k % 4 for k in range(80)], 4)
    fed = partition_knowledgeable(c, 10, 0.5, seed=1)
    assert_partition(fed, c)
    full = [p for p in fed.participants if np.all(p.histogram[:4] > 0)]
    assert len(full) == 5
    assert sorted(p.org_id for p in full) == [p.org_id for p in fed.participants if p.knowledgeable]
    for p in fed.participants:
        if not p.knowledgeable:
            assert np.count_nonzero(p.histogram) < 4 / 2


def test_knowledgeable_missing_class_named():
    c = labelled([0, 0, 2, 2], 4)
    with pytest.raises(ConfigError, match="class 1"):
        partition_knowledgeable(c, 2, 0.5, classes=range(3))
    with pytest.raises(ConfigError):
        partition_knowledgeable(c, 2, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.sampled_from(["iid", "primary", "knowledgeable"]))
def test_every_partition_is_disjoint_and_exhaustive(K, seed, kind):
    rng = np.random.default_rng(seed)
    c = labelled(rng.integers(0, 6, size=int(rng.integers(40, 120))).tolist(), 6)
    if kind == "iid":
        fed = partition_iid(c, K, seed=seed)
    elif kind == "primary":
        fed = partition_primary(c, K, skew_seed=seed)
    else:
        fed = partition_knowledgeable(c, K, 0.5, seed=seed)
    assert fed.K == K
    assert_partition(fed, c)


def test_iid_equal_shards():
    c = labelled(list(range(5)) * 6, 5)
    fed = partition_iid(c, 3, seed=0, equal=True)
    assert [p.n_samples for p in fed.participants] == [10, 10, 10]
    with pytest.raises(ConfigError):
        partition_iid(c, 4, equal=True)


def test_score_identical_histograms_is_zero():
    assert non_iidness_score([[0.2, 0.8], [0.2, 0.8], [0.2, 0.8]]) == 0.0


def test_score_two_spikes_matches_hand_kl():
    alpha = 1e-6
    expected = 0.5 * (smoothed_kl([1, 0], [0, 1], alpha) + smoothed_kl([0, 1], [1, 0], alpha))
    assert abs(non_iidness_score([[1.0, 0.0], [0.0, 1.0]], alpha) - expected) <= 1e-12
    # closed form: p = (1+a)/(1+2a), q = a/(1+2a), KL = (p - q) ln(p/q)
    p, q = (1 + alpha) / (1 + 2 * alpha), alpha / (1 + 2 * alpha)
    assert abs(expected - (p - q) * math.log(p / q)) <= 1e-12


def test_score_needs_two_participants():
    with pytest.raises(ConfigError):
        non_iidness_score([[1.0, 0.0]])


hist = st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(hist, min_size=2, max_size=6), st.randoms())
def test_score_properties(hists, rnd):
    h = [np.array(v) / sum(v) for v in hists]
    s = non_iidness_score(h)
    assert np.isfinite(s) and s >= 0
    shuffled = list(h)
    rnd.shuffle(shuffled)
    assert abs(non_iidness_score(shuffled) - s) <= 1e-9 * max(1, s)
    for a in h:
        for b in h:
            assert kl_divergence(a, b) >= -1e-15
            assert abs(kl_divergence(a, b) - smoothed_kl(list(a), list(b), 1e-6)) <= 1e-9


def test_score_ordering_on_synthetic(corpus20):
    ex = non_iidness_score(partition_extreme(corpus20))
    kn = non_iidness_score(partition_knowledgeable(corpus20, 20, 0.6, seed=0))
    pr = non_iidness_score(partition_primary(corpus20, 20, skew_seed=0))
    assert ex > kn > pr > 0


def test_federation_helpers(corpus20):
    fed = partition_primary(corpus20, 5, skew_seed=1)
    assert fed.total_samples() == len(corpus20)
    sub = fed.without(2)
    assert 2 not in sub.org_ids and sub.K == 4
    with pytest.raises(KeyError):
        fed.without(99)
    with pytest.raises(ConfigError):
        FederationDataset(fed.participants, fed.test, "weird")
    with pytest.raises(EmptyCorpusError):
        ParticipantDataset(0, corpus_from_lists([], 3))


def test_save_and_load_federation(tmp_path, corpus20):
    fed = partition_knowledgeable(corpus20, 6, 0.5, seed=4, test=corpus20.subset(range(30)))
    score = non_iidness_score(fed)
    save_federation(fed, tmp_path, score)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["distribution_tag"] == "knowledgeable"
    assert manifest["K"] == 6 and manifest["m"] == 0.5 and manifest["seed"] == 4
    assert abs(manifest["non_iidness"] - score) <= 1e-12
    back = load_federation(tmp_path)
    assert back.org_ids == fed.org_ids
    assert [p.knowledgeable for p in back.participants] == [p.knowledgeable for p in fed.participants]
    for a, b in zip(fed.participants, back.participants):
        assert corpus_to_text(a.train) == corpus_to_text(b.train)
    assert corpus_to_text(back.test) == corpus_to_text(fed.test)
