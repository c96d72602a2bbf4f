import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsec.aggregation import CDP, FLTrust, Krum, RoundUpdate, TrimmedMean
from fedsec.errors import ConfigError, TrainingError
from fedsec.events import generate_synthetic_corpus, split_dataset
from fedsec.federation import (
    TRACE_COLUMNS,
    FederationConfig,
    RoundHook,
    derive_seed,
    fedavg_aggregate,
    read_trace_csv,
    run_training,
    select_participants,
    train_centralized,
)
from fedsec.neural import model as nm
from fedsec.partition import FederationDataset, ParticipantDataset, partition_iid, partition_primary


@pytest.fixture(scope="module")
def setup():
    c = generate_synthetic_corpus(8, 400, seed=4)
    s = split_dataset(c, (0.8, 0.0, 0.2), seed=1)
    cfg = nm.ModelConfig(8, embed_dim=3, hidden_size=5, lanes=2, batch_size=16)
    return s, cfg


def test_select_all_when_q_is_one():
    assert select_participants(range(5), 1.0, 123) == [0, 1, 2, 3, 4]


def test_select_binomial_concentration():
    n, q = 10_000, 0.5
    k = len(select_participants(range(n), q, 7))
    assert abs(k - n * q) <= 3 * np.sqrt(n * q * (1 - q))
    assert select_participants(range(n), q, 7) == select_participants(range(n), q, 7)
    with pytest.raises(ConfigError):
        select_participants(range(3), 0.0, 1)


def test_derive_seed_is_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert 0 <= derive_seed(5) < 2**63


def test_single_actor_reduction(setup):
    s, cfg = setup
    fed = FederationDataset((ParticipantDataset(4, s.train),), s.test)
    fc = FederationConfig(rounds=1, batch_size=0, learning_rate=0.7)
    theta0 = nm.init_params(cfg)
    trace = run_training(fed, cfg, fc, theta0=theta0)
    _, g = nm.loss_and_gradient(theta0, cfg, s.train)
    step = theta0 - 0.7 * nm.clip_by_global_norm(g, cfg.clip_norm)
    assert np.max(np.abs(trace.final - step)) <= 1e-12


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_fedavg_round_equals_centralized_step(seed, K):
    c = generate_synthetic_corpus(6, 20 * K, seed=seed)
    cfg = nm.ModelConfig(6, embed_dim=3, hidden_size=4, lanes=2, clip_norm=None, seed=seed)
    fed = partition_iid(c, K, seed=seed, equal=True)
    theta0 = nm.init_params(cfg)
    trace = run_training(fed, cfg, FederationConfig(rounds=1, batch_size=0, learning_rate=0.5), theta0=theta0)
    _, g = nm.loss_and_gradient(theta0, cfg, fed.pooled())
    assert np.max(np.abs(trace.final - (theta0 - 0.5 * g))) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 10_000))
def test_unanimous_updates_are_a_fixed_point(k, d, seed):
    rng = np.random.default_rng(seed)
    delta = rng.normal(size=d)
    g = rng.normal(size=d)
    updates = [RoundUpdate(i, delta.copy(), int(n)) for i, n in enumerate(rng.integers(1, 50, size=k))]
    assert np.allclose(fedavg_aggregate(g, updates), g + delta, rtol=0, atol=1e-14)


def test_trace_shape_and_csv(setup, tmp_path):
    s, cfg = setup
    fed = partition_primary(s.train, 4, skew_seed=0, test=s.test)
    fc = FederationConfig(rounds=4, eval_stride=2, checkpoint_stride=2)
    trace = run_training(fed, cfg, fc, out_dir=tmp_path)
    assert len(trace) == 4 and not trace.halted
    assert [bool(r.metrics) for r in trace.rounds] == [False, True, False, True]
    assert sorted(p.name for p in tmp_path.glob("checkpoint_*")) == ["checkpoint_r0002.bin", "checkpoint_r0004.bin"]
    back, _ = nm.load_params(tmp_path / "checkpoint_r0004.bin")
    assert np.array_equal(back, trace.final)
    trace.to_csv(tmp_path / "trace.csv")
    rows = read_trace_csv(tmp_path / "trace.csv")
    assert tuple(rows[0].keys()) == TRACE_COLUMNS
    assert [r["round"] for r in rows] == ["0", "1", "2", "3"]
    assert rows[0]["precision"] == "" and rows[1]["precision"] != ""
    assert trace.final_metrics() == trace.rounds[-1].metrics


def test_runs_are_reproducible_and_schedule_independent(setup):
    s, cfg = setup
    fed = partition_primary(s.train, 5, skew_seed=2, test=s.test)
    fc = FederationConfig(rounds=3, participation_rate=0.6, root_seed=9)
    a = run_training(fed, cfg, fc)
    b = run_training(fed, cfg, fc)
    c = run_training(fed, cfg, FederationConfig(rounds=3, participation_rate=0.6, root_seed=9, jobs=3))
    assert a.to_csv() == b.to_csv() == c.to_csv()
    assert np.array_equal(a.final, c.final)
    other = run_training(fed, cfg, FederationConfig(rounds=3, participation_rate=0.6, root_seed=10))
    assert not np.array_equal(a.final, other.final)


@pytest.mark.parametrize("policy", [TrimmedMean(0.2), Krum(1), FLTrust(server_size=20)], ids=lambda p: p.name)
def test_robust_policies_run(setup, policy):
    s, cfg = setup
    fed = partition_primary(s.train, 5, skew_seed=0, test=s.test)
    trace = run_training(fed, cfg, FederationConfig(rounds=2, policy=policy))
    assert len(trace) == 2 and np.all(np.isfinite(trace.final))


def test_cdp_run_logs_epsilon_and_halts(setup):
    s, cfg = setup
    fed = partition_iid(s.train, 4, seed=0, test=s.test)
    policy = CDP(clip=1.0, noise_scale=1.0, sample_rate=1.0, budget=3.8, delta=1e-5)
    trace = run_training(fed, cfg, FederationConfig(rounds=10, policy=policy))
    eps = [r.epsilon for r in trace.rounds]
    assert all(b >= a for a, b in zip(eps, eps[1:]))
    assert trace.halted and trace.halted_round == len(trace)
    assert eps[-1] > 3.8 and (len(eps) == 1 or eps[-2] <= 3.8)


class Exploding(RoundHook):
    def participant_update(self, ctx, org_id, theta_global, data, train):
        if ctx.round == 1:
            return theta_global + np.inf
        return None


def test_errors_carry_round_context(setup):
    s, cfg = setup
    fed = partition_iid(s.train, 2, seed=0, test=s.test)
    with pytest.raises(TrainingError) as exc:
        run_training(fed, cfg, FederationConfig(rounds=3), hooks=[Exploding()])
    assert exc.value.round_index == 1
    assert "round 1" in str(exc.value)


def test_config_validation(setup):
    s, _ = setup
    fed = partition_iid(s.train, 2, seed=0, test=s.test)
    with pytest.raises(ConfigError):
        run_training(fed, nm.ModelConfig(99), FederationConfig(rounds=1))
    with pytest.raises(ConfigError):
        FederationConfig(rounds=0)
    with pytest.raises(ConfigError):
        FederationConfig(participation_rate=1.5)
    with pytest.raises(ConfigError):
        FederationConfig(policy=TrimmedMean(0.7))
    with pytest.raises(ConfigError):
        run_training(fed, nm.ModelConfig(8), FederationConfig(rounds=1, policy=Krum(2)))


def test_train_centralized_matches_local_train(setup):
    s, cfg = setup
    a = train_centralized(s.train, cfg, epochs=2, seed=3)
    b = nm.local_train(nm.init_params(cfg), cfg, s.train, epochs=2, seed=3)
    assert np.array_equal(a, b)
