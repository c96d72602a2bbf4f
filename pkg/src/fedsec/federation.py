"""FedAvg round loop.

Each round: select participants, broadcast the global parameters, train locally,
collect deltas, let attack hooks tamper with them, aggregate under the configured
policy and evaluate on the server test corpus.

Seeds are derived from ``root_seed`` and the round/org indices, so a run is fully
determined by its configuration and does not depend on how local trainings are
scheduled.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .aggregation import CDP, FedAvg, FLTrust, RoundUpdate, aggregate, cdp_round, clip_delta, weighted_mean
from .errors import ConfigError, DimensionError, FedSecError, TrainingError
from .events import EventCorpus
from .metrics import macro_metrics
from .neural import model as nm
from .partition import FederationDataset

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("round", "n_selected", "precision", "recall", "f1", "accuracy", "fpr", "top1",
                 "backdoor_accuracy", "epsilon")


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from integer keys."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 10
    local_epochs: int = 1
    participation_rate: float = 1.0
    root_seed: int = 0
    policy: object = field(default_factory=FedAvg)
    batch_size: int | None = None  # None: model default, 0: full batch
    learning_rate: float | None = None
    eval_stride: int = 1
    checkpoint_stride: int = 0
    keep_snapshots: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if not 0 < self.participation_rate <= 1:
            raise ConfigError("participation_rate must be in (0, 1]")
        if self.batch_size is not None and self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.eval_stride < 0 or self.checkpoint_stride < 0:
            raise ConfigError("strides must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.policy.validate()

    @property
    def sample_rate(self) -> float:
        # CDP samples participants at the rate its accountant is calibrated for
        if isinstance(self.policy, CDP):
            return self.policy.sample_rate
        return self.participation_rate


@dataclass
class RoundRecord:
    round: int
    selected: tuple
    metrics: dict
    theta: np.ndarray | None = None
    epsilon: float | None = None


@dataclass
class TrainingTrace:
    rounds: list
    final: np.ndarray
    halted: bool = False
    halted_round: int | None = None

    def __len__(self):
        return len(self.rounds)

    def final_metrics(self) -> dict:
        for rec in reversed(self.rounds):
            if rec.metrics:
                return rec.metrics
        return {}

    def rows(self):
        for rec in self.rounds:
            m = rec.metrics
            yield [rec.round, len(rec.selected)] + [m.get(k) for k in TRACE_COLUMNS[2:9]] + [rec.epsilon]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows():
            w.writerow(["" if v is None else (f"{v:.10f}" if isinstance(v, float) else v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class RoundHook:
    """Base class for attack hooks; every method is optional."""

    def participant_update(self, ctx, org_id, theta_global, data, train):
        """Return local parameters to submit instead of honest training, or None."""
        return None

    def tamper(self, ctx, updates):
        """Return a (possibly modified) list of updates."""
        return updates

    def round_end(self, ctx, theta_before, theta_after):
        pass

    def metrics(self, theta) -> dict:
        return {}


@dataclass
class RoundContext:
    round: int
    selected: tuple
    total_samples: int
    fed: FederationDataset
    model_cfg: nm.ModelConfig
    fed_cfg: FederationConfig


def select_participants(org_ids, q: float, round_seed: int) -> list:
    """Each org independently with probability ``q``; ``q = 1`` selects everyone."""
    if not 0 < q <= 1:
        raise ConfigError("q must be in (0, 1]")
    ids = list(org_ids)
    if q == 1:
        return ids
    draws = np.random.default_rng(round_seed).random(len(ids))
    return [o for o, d in zip(ids, draws) if d < q]


def fedavg_aggregate(theta_global, updates) -> np.ndarray:
    """``theta + sum_i n_i/n * delta_i``."""
    theta_global = np.asarray(theta_global, dtype=np.float64)
    agg = weighted_mean(updates)
    if agg.shape != theta_global.shape:
        raise DimensionError("update length does not match the model")
    return theta_global + agg


def evaluate(theta, cfg: nm.ModelConfig, corpus: EventCorpus) -> dict:
    pred = nm.predict(theta, cfg, corpus)
    return macro_metrics(pred, corpus.labels, cfg.vocab_size).as_dict()


def server_corpus(fed: FederationDataset, size: int, seed: int) -> EventCorpus:
    """Seeded sample of the server test split, used as the FLTrust root data."""
    if len(fed.test) == 0:
        raise ConfigError("FLTrust needs a server test corpus")
    n = min(size, len(fed.test))
    idx = np.sort(np.random.default_rng(seed).choice(len(fed.test), size=n, replace=False))
    return fed.test.subset(idx.tolist())


def make_trainer(model_cfg: nm.ModelConfig, fed_cfg: FederationConfig):
    """``train(theta, data, seed)`` running the configured local SGD."""
    clip = fed_cfg.policy.clip if isinstance(fed_cfg.policy, CDP) else None

    def train(theta, data, seed):
        bs = fed_cfg.batch_size
        if bs == 0:
            bs = len(data)
        anchor = np.array(theta, copy=True)

        def hook(th):
            return anchor + clip_delta(th - anchor, clip)
        return nm.local_train(theta, model_cfg, data, epochs=fed_cfg.local_epochs, lr=fed_cfg.learning_rate,
                              batch_size=bs, seed=seed, step_hook=hook if clip is not None else None)

    return train


def run_training(fed: FederationDataset, model_cfg: nm.ModelConfig, fed_cfg: FederationConfig, hooks=(),
                 theta0=None, out_dir=None) -> TrainingTrace:
    if fed.K == 0:
        raise ConfigError("federation has no participants")
    if fed.vocab_size != model_cfg.vocab_size:
        raise ConfigError(f"model vocab_size {model_cfg.vocab_size} != corpus vocab_size {fed.vocab_size}")
    policy = fed_cfg.policy
    policy.validate(fed.K)
    hooks = list(hooks)
    theta = nm.init_params(model_cfg) if theta0 is None else np.array(theta0, dtype=np.float64, copy=True)
    train = make_trainer(model_cfg, fed_cfg)
    root = fed_cfg.root_seed
    by_id = {p.org_id: p for p in fed.participants}
    total = fed.total_samples()
    accountant = policy.accountant() if isinstance(policy, CDP) else None
    root_data = server_corpus(fed, policy.server_size, derive_seed(root, 7, policy.seed)) \
        if isinstance(policy, FLTrust) else None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    records = []
    halted, halted_round = False, None
    for r in range(fed_cfg.rounds):
        module = "federation"
        try:
            selected = tuple(select_participants(fed.org_ids, fed_cfg.sample_rate, derive_seed(root, r, 1)))
            if accountant is not None and accountant.spent() > policy.budget:
                halted, halted_round = True, r
                break
            ctx = RoundContext(r, selected, total, fed, model_cfg, fed_cfg)

            def local(org):
                seed = derive_seed(root, r, 2, org)
                data = by_id[org].train
                for h in hooks:
                    out = h.participant_update(ctx, org, theta, data, lambda th, d: train(th, d, seed))
                    if out is not None:
                        return RoundUpdate(org, np.asarray(out) - theta, by_id[org].n_samples)
                return RoundUpdate(org, train(theta, data, seed) - theta, by_id[org].n_samples)

            module = "neural"
            if fed_cfg.jobs > 1 and len(selected) > 1:
                with ThreadPoolExecutor(max_workers=fed_cfg.jobs) as pool:
                    updates = list(pool.map(local, selected))
            else:
                updates = [local(o) for o in selected]
            module = "attacks"
            for h in hooks:
                updates = h.tamper(ctx, updates)
            if accountant is not None:
                # the clip is enforced on what arrives, not trusted to the sender
                updates = [RoundUpdate(u.org_id, clip_delta(u.delta, policy.clip), u.n_samples) for u in updates]

            module = "aggregation"
            before = theta
            eps = None
            if accountant is not None:
                res = cdp_round(theta, updates, policy, accountant, derive_seed(root, r, 3))
                theta, accountant = res.theta, res.accountant
                eps = accountant.spent()
            elif updates:
                server_update = None
                if root_data is not None:
                    server_update = train(theta, root_data, derive_seed(root, r, 4)) - theta
                theta = theta + aggregate(policy, updates, derive_seed(root, r, 3), server_update)
            if not np.all(np.isfinite(theta)):
                raise FloatingPointError("global model became non-finite")

            module = "analysis"
            for h in hooks:
                h.round_end(ctx, before, theta)
            metrics = {}
            last = r == fed_cfg.rounds - 1
            if len(fed.test) and fed_cfg.eval_stride and ((r + 1) % fed_cfg.eval_stride == 0 or last):
                metrics = evaluate(theta, model_cfg, fed.test)
                for h in hooks:
                    metrics.update(h.metrics(theta))
            records.append(RoundRecord(r, selected, metrics, theta.copy() if fed_cfg.keep_snapshots else None, eps))
            if out_dir is not None and fed_cfg.checkpoint_stride and (r + 1) % fed_cfg.checkpoint_stride == 0:
                nm.save_params(Path(out_dir) / f"checkpoint_r{r + 1:04d}.bin", theta, model_cfg)
        except TrainingError:
            raise
        except (FedSecError, ValueError, ArithmeticError) as exc:
            raise TrainingError(str(exc), round_index=r, module=module) from exc
    if halted:
        log.info("privacy budget exhausted before round %d; returning the current model", halted_round)
        if records and not records[-1].metrics and len(fed.test) and fed_cfg.eval_stride:
            # the returned model is always scored
            metrics = evaluate(theta, model_cfg, fed.test)
            for h in hooks:
                metrics.update(h.metrics(theta))
            records[-1] = replace(records[-1], metrics=metrics)
    return TrainingTrace(records, theta, halted, halted_round)


def train_centralized(corpus: EventCorpus, model_cfg: nm.ModelConfig, epochs: int, seed: int = 0,
                      batch_size: int | None = None, lr: float | None = None, theta0=None) -> np.ndarray:
    theta = nm.init_params(model_cfg) if theta0 is None else theta0
    return nm.local_train(theta, model_cfg, corpus, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
