import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsec.analysis import (
    benefit_comparison,
    class_recall,
    contribution_impact,
    contribution_table,
    influence_from_oracles,
    influence_scores,
    knowledgeable_sweep,
    lissa,
    local_model,
    loo_model,
    macro_metrics,
    normalize,
    top_eigenvalue,
)
from fedsec.errors import ConfigError, DimensionError
from fedsec.events import generate_synthetic_corpus, split_dataset
from fedsec.federation import FederationConfig, run_training
from fedsec.neural import model as nm
from fedsec.partition import FederationDataset, ParticipantDataset, partition_extreme, partition_iid

from conftest import corpus_from_lists
from oracles import LogisticRegression

# --- metrics -------------------------------------------------------------------


def test_perfect_predictions():
    y = [0, 1, 2, 2, 1]
    r = macro_metrics(y, y, 3)
    assert (r.precision, r.recall, r.f1, r.accuracy, r.fpr, r.top1) == (1.0, 1.0, 1.0, 1.0, 0.0, 1.0)


def test_two_class_hand_confusion():
    r = macro_metrics([0, 0, 1, 1], [0, 1, 0, 1], 2)
    assert r.precision == 0.5 and r.recall == 0.5 and r.fpr == 0.5
    assert r.accuracy == 0.5 and r.f1 == 0.5


def test_constant_predictor_on_balanced_set():
    r = macro_metrics([0, 0, 0, 0], [0, 0, 1, 1], 2)
    # class 0: precision 1/2; class 1: never predicted, precision 0
    assert r.precision == 0.5 * 0.5
    assert r.recall == 0.5
    assert r.fpr == 0.5


def test_absent_classes_are_excluded():
    r = macro_metrics([0, 1], [0, 1], 10)
    assert r.classes.tolist() == [0, 1]
    assert class_recall(r, 1) == 1.0
    with pytest.raises(KeyError):
        class_recall(r, 5)
    with pytest.raises(DimensionError):
        macro_metrics([0, 1], [0], 2)
    with pytest.raises(DimensionError):
        macro_metrics([0, 4], [0, 1], 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=60), st.randoms())
def test_metric_properties(pairs, rnd):
    pred, lab = zip(*pairs)
    r = macro_metrics(pred, lab, 6)
    for v in (r.precision, r.recall, r.f1, r.accuracy, r.fpr, r.top1):
        assert 0 <= v <= 1
    if r.precision > 0 and r.recall > 0:
        assert abs(r.f1 - 2 * r.precision * r.recall / (r.precision + r.recall)) <= 1e-15
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    p2, l2 = zip(*shuffled)
    assert macro_metrics(p2, l2, 6).as_dict() == pytest.approx(r.as_dict(), abs=1e-15)


# --- influence ---------------------------------------------------------------------


def logistic_problem(seed=0, n=20, d=3, lam=0.05):
    rng = np.random.default_rng(seed)
    X = np.c_[rng.normal(size=(n, d - 1)), np.ones(n)]
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ np.array([1.5, -1.0, 0.3])))).astype(float)
    model = LogisticRegression(X, y, lam)
    w = np.zeros(d)
    for _ in range(500):
        w -= np.linalg.solve(model.hessian(w), model.grad(w))
        if np.linalg.norm(model.grad(w)) < 1e-13:
            break
    return model, w


def test_lissa_matches_exact_inverse_hessian():
    model, w = logistic_problem()
    H = model.hessian(w)
    v = np.array([0.3, -0.7, 1.1])
    exact = np.linalg.solve(H, v)
    est = lissa(lambda idx, x: model.hessian(w, idx) @ x, v, 20, damping=0.0, scale=2 * np.linalg.eigvalsh(H)[-1] * 5,
                depth=3000, samples=4, seed=1, batch=4)
    assert np.linalg.norm(est - exact) / np.linalg.norm(exact) < 0.1


def test_influence_on_two_org_logistic_model():
    model, w = logistic_problem(seed=3)
    n = 20
    orgs = [np.arange(0, 12), np.arange(12, 20)]
    rng = np.random.default_rng(5)
    Xt = np.c_[rng.normal(size=(10, 2)), np.ones(10)]
    yt = (Xt[:, 0] > 0).astype(float)
    test = LogisticRegression(Xt, yt)
    g_test = test.grad(w)
    sums = [model.grad(w, idx) * len(idx) for idx in orgs]
    H = model.hessian(w)
    exact = np.array([np.linalg.solve(H, g_test) @ s / n for s in sums])
    scale = 10 * np.linalg.eigvalsh(H)[-1]
    raw = influence_from_oracles(g_test, sums, n, lambda idx, x: model.hessian(w, idx) @ x,
                                 damping=0.0, scale=scale, depth=4000, samples=4, seed=2, batch=4)
    assert np.max(np.abs(raw - exact)) / np.max(np.abs(exact)) < 0.1


def test_lissa_divergence_is_reported():
    H = np.diag([4.0, 1.0])
    with pytest.raises(FloatingPointError, match="increase scale"):
        lissa(lambda idx, x: H @ x, np.ones(2), 1, damping=0.0, scale=1.0, depth=500)
    with pytest.raises(ConfigError):
        lissa(lambda idx, x: H @ x, np.ones(2), 1, scale=0.0)


def test_top_eigenvalue():
    A = np.diag([5.0, 2.0, -1.0])
    assert top_eigenvalue(lambda x: A @ x, 3, iters=200) == pytest.approx(5.0, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
def test_normalize_properties(raw):
    out = normalize(raw)
    assert np.all((out >= 0) & (out <= 1))
    if max(raw) > min(raw):
        assert out[int(np.argmax(raw))] == 1.0 and out[int(np.argmin(raw))] == 0.0
        for a, b in zip(raw, raw[1:]):
            if a < b:
                assert out[raw.index(a)] <= out[raw.index(b)]
    else:
        assert np.all(out == 0)


@pytest.fixture(scope="module")
def tiny_fed():
    c = generate_synthetic_corpus(6, 240, seed=2)
    s = split_dataset(c, (0.75, 0.0, 0.25), seed=0)
    return partition_iid(s.train, 3, seed=0, test=s.test)


def test_influence_scores_shape_and_zero_gradient_org(tiny_fed):
    cfg = nm.ModelConfig(6, embed_dim=3, hidden_size=4, lanes=2)
    theta = nm.init_params(cfg)
    recs = influence_scores(tiny_fed, cfg, theta, depth=20, seed=0)
    assert [r.org_id for r in recs] == tiny_fed.org_ids
    assert sorted(r.normalized for r in recs)[0] == 0.0 and max(r.normalized for r in recs) == 1.0
    # an org whose summed training gradient vanishes has raw influence exactly 0
    raw = influence_from_oracles(np.ones(3), [np.zeros(3), np.ones(3)], 4, lambda idx, x: x, scale=2.0, depth=10)
    assert raw[0] == 0.0


# --- contribution, benefit, sweep -----------------------------------------------------


def test_contribution_impact_definition(tiny_fed):
    cfg = nm.ModelConfig(6, embed_dim=3, hidden_size=4, lanes=1)
    fc = FederationConfig(rounds=2, batch_size=16)
    rec = contribution_impact(tiny_fed, cfg, fc, 1)
    assert rec.impact == rec.baseline_precision - rec.loo_precision
    assert -1 <= rec.impact <= 1
    table = contribution_table(tiny_fed, cfg, fc, org_ids=[1])
    assert table[0] == rec
    with pytest.raises(KeyError):
        contribution_impact(tiny_fed, cfg, fc, 42)


def test_extreme_loo_loses_the_class():
    rows = [[(c + 1) % 4, c] for c in range(4) for _ in range(10)]
    c = corpus_from_lists(rows, 4)
    fed = partition_extreme(c, test=c)
    cfg = nm.ModelConfig(4, embed_dim=2, hidden_size=3, lanes=1, learning_rate=1.0)
    fc = FederationConfig(rounds=5, batch_size=0)
    theta = loo_model(fed, cfg, fc, 2)
    r = macro_metrics(nm.predict(theta, cfg, c), c.labels, 4)
    assert class_recall(r, 2) == 0.0


def test_single_org_federation_has_no_benefit(tiny_fed):
    cfg = nm.ModelConfig(6, embed_dim=3, hidden_size=4, lanes=1)
    whole = tiny_fed.pooled()
    fed = FederationDataset((ParticipantDataset(0, whole),), tiny_fed.test)
    fc = FederationConfig(rounds=3, local_epochs=2, batch_size=16)
    final = run_training(fed, cfg, fc).final
    # theta + (local - theta) differs from local only by rounding
    assert np.max(np.abs(local_model(fed, cfg, fc, 0) - final)) <= 1e-12
    (rec,) = benefit_comparison(fed, cfg, fc, final, tiny_fed.test)
    assert rec.benefit == 0.0


def test_benefit_requires_all_classes(tiny_fed):
    cfg = nm.ModelConfig(6, embed_dim=3, hidden_size=4, lanes=1)
    narrow = tiny_fed.test.subset([i for i, s in enumerate(tiny_fed.test) if s.label != 0])
    with pytest.raises(ConfigError, match="class 0"):
        benefit_comparison(tiny_fed, cfg, FederationConfig(rounds=1), nm.init_params(cfg), narrow)


def test_knowledgeable_sweep_rows():
    c = generate_synthetic_corpus(5, 200, seed=1)
    s = split_dataset(c, (0.8, 0.0, 0.2), seed=0)
    cfg = nm.ModelConfig(5, embed_dim=2, hidden_size=3, lanes=1)
    rows = knowledgeable_sweep(s.train, 5, [0.2, 0.6, 1.0], cfg, FederationConfig(rounds=1), s.test)
    assert [r.m for r in rows] == [0.2, 0.6, 1.0]
    assert [r.n_knowledgeable for r in rows] == [1, 3, 5]
    with pytest.raises(ConfigError):
        knowledgeable_sweep(s.train, 5, [0.0], cfg, FederationConfig(rounds=1), s.test)
