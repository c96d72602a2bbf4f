"""Backdoor poisoning with boosted model replacement, and active membership inference."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, EmptyCorpusError
from .events import EventCorpus
from .federation import FederationConfig, RoundHook, derive_seed, run_training
from .neural import model as nm
from .partition import FederationDataset

AUTO_BOOST = 100.0


@dataclass(frozen=True)
class Schedule:
    kind: str = "all"  # all | first | last
    n: int = 0

    def __post_init__(self):
        if self.kind not in ("all", "first", "last"):
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if self.kind != "all" and self.n < 1:
            raise ConfigError("schedule window must be >= 1 round")

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        text = str(text).strip().lower()
        if text == "all":
            return cls()
        kind, _, n = text.partition(":")
        if kind not in ("first", "last") or not n.strip().isdigit():
            raise ConfigError(f"schedule must be 'all', 'first:N' or 'last:N', got {text!r}")
        return cls(kind, int(n))

    def active(self, r: int, rounds: int) -> bool:
        if self.kind == "all":
            return True
        if self.kind == "first":
            return r < self.n
        return r >= rounds - self.n

    def __str__(self):
        return "all" if self.kind == "all" else f"{self.kind}:{self.n}"


@dataclass(frozen=True)
class BackdoorSpec:
    trigger: int
    target: int = 0
    attacker_frac: float = 0.01
    boost: float | str | None = None  # None: exact ratio, "auto": AUTO_BOOST, number: fixed factor
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if self.trigger == self.target:
            raise ConfigError("trigger and target must differ")
        if self.trigger < 0 or self.target < 0:
            raise ConfigError("trigger and target must be non-negative event ids")
        if not 0 < self.attacker_frac < 1:
            raise ConfigError("attacker_frac must be in (0, 1)")
        if isinstance(self.boost, str) and self.boost != "auto":
            raise ConfigError("boost must be a positive number, 'auto' or unset")
        if isinstance(self.boost, (int, float)) and not self.boost > 0:
            raise ConfigError("boost must be > 0")

    def n_attackers(self, K: int) -> int:
        return max(1, round(self.attacker_frac * K))


def choose_trigger_target(corpus: EventCorpus, target: int = 0) -> tuple[int, int]:
    """Trigger = the event seen most often right before the label (other than the target)."""
    counts = Counter(s.history[-1] for s in corpus.sequences if s.history)
    for ev, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if ev != target:
            return int(ev), target
    raise EmptyCorpusError("no usable trigger event")


def poison_dataset(data: EventCorpus, spec) -> EventCorpus:
    """Rewrite every sequence so its history ends with the trigger and its label is the target."""
    trigger, target = spec.trigger, spec.target
    V = data.vocab_size
    if trigger >= V or target >= V:
        raise ConfigError(f"trigger/target must be < vocab_size {V}")
    out = []
    for s in data.sequences:
        events = tuple(s.history) + (s.label,)
        history = events if s.label == trigger else events + (trigger,)
        out.append(s.with_events(history, target))
    return data.replace(tuple(out))


def boosted_update(theta_star, theta_global, total_samples: int, n_attacker: int, eta: float = 1.0,
                   boost=None) -> np.ndarray:
    """``total/(eta*n_attacker) * (theta_star - theta_global)``, or a fixed boost factor."""
    if n_attacker < 1:
        raise ConfigError("n_attacker must be >= 1")
    if total_samples < n_attacker:
        raise ConfigError("total_samples must be >= n_attacker")
    if boost == "auto":
        factor = AUTO_BOOST
    elif boost is not None:
        factor = float(boost)
    else:
        factor = total_samples / (eta * n_attacker)
    return factor * (np.asarray(theta_star, dtype=np.float64) - np.asarray(theta_global, dtype=np.float64))


def backdoor_accuracy(theta, cfg: nm.ModelConfig, poisoned_test: EventCorpus) -> float:
    if len(poisoned_test) == 0:
        raise EmptyCorpusError("empty backdoor test set")
    return float(np.mean(nm.predict(theta, cfg, poisoned_test) == poisoned_test.labels))


def pick_attackers(org_ids, n: int, seed: int) -> list:
    ids = sorted(org_ids)
    if n > len(ids):
        raise ConfigError("more attackers than participants")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(ids, size=n, replace=False))


class BackdoorAttack(RoundHook):
    """Compromised participants train on clean plus poisoned data and submit boosted deltas."""

    def __init__(self, spec: BackdoorSpec, attackers, model_cfg: nm.ModelConfig, poisoned_test=None,
                 eta: float = 1.0):
        self.spec = spec
        self.attackers = set(int(a) for a in attackers)
        if not self.attackers:
            raise ConfigError("no attackers")
        self.cfg = model_cfg
        self.poisoned_test = poisoned_test
        self.eta = eta
        self._poisoned = {}

    def participant_update(self, ctx, org_id, theta_global, data, train):
        if org_id not in self.attackers or not self.spec.schedule.active(ctx.round, ctx.fed_cfg.rounds):
            return None
        if org_id not in self._poisoned:
            self._poisoned[org_id] = data.concat(poison_dataset(data, self.spec))
        mine = self._poisoned[org_id]
        theta_star = train(theta_global, mine)
        total = sum(ctx.fed.participant(o).n_samples for o in ctx.selected)
        delta = boosted_update(theta_star, theta_global, total, len(data), self.eta, self.spec.boost)
        return theta_global + delta

    def metrics(self, theta):
        if self.poisoned_test is None or len(self.poisoned_test) == 0:
            return {}
        return {"backdoor_accuracy": backdoor_accuracy(theta, self.cfg, self.poisoned_test)}


def run_backdoor(fed: FederationDataset, model_cfg, fed_cfg: FederationConfig, spec: BackdoorSpec,
                 attacker_seed: int | None = None, eta: float = 1.0, out_dir=None):
    """Returns ``(trace, attackers)``; the backdoor test set is the poisoned server test split."""
    seed = fed_cfg.root_seed if attacker_seed is None else attacker_seed
    attackers = pick_attackers(fed.org_ids, spec.n_attackers(fed.K), derive_seed(seed, 11))
    hook = BackdoorAttack(spec, attackers, model_cfg, poison_dataset(fed.test, spec) if len(fed.test) else None, eta)
    return run_training(fed, model_cfg, fed_cfg, hooks=[hook], out_dir=out_dir), attackers


# ---------------------------------------------------------------------------
# membership inference


def _key(s):
    return (s.machine_id, tuple(s.history), s.label)


@dataclass(frozen=True)
class MIATargetSet:
    members: EventCorpus
    non_members: EventCorpus

    def __post_init__(self):
        if len(self.members) != len(self.non_members):
            raise ConfigError("members and non-members must have the same size")
        if len(self.members) == 0:
            raise ConfigError("empty target set")
        if set(map(_key, self.members.sequences)) & set(map(_key, self.non_members.sequences)):
            raise ConfigError("members and non-members overlap")

    @property
    def corpus(self) -> EventCorpus:
        return self.members.concat(self.non_members)

    @property
    def labels(self) -> np.ndarray:
        return np.r_[np.ones(len(self.members), dtype=int), np.zeros(len(self.non_members), dtype=int)]


def sample_targets(fed: FederationDataset, adversary_id: int, n: int, non_member_pool: EventCorpus,
                   seed: int = 0) -> MIATargetSet:
    """``n`` members from the victims' training data and ``n`` non-members from ``non_member_pool``."""
    victims = [p for p in fed.participants if p.org_id != adversary_id]
    if not victims:
        raise ConfigError("membership inference needs at least one victim")
    pool = EventCorpus(tuple(s for p in victims for s in p.train.sequences), fed.participants[0].train.vocabulary)
    if n > len(pool) or n > len(non_member_pool):
        raise ConfigError(f"not enough sequences for {n} targets per side")
    rng = np.random.default_rng(seed)
    mem = pool.subset(np.sort(rng.choice(len(pool), size=n, replace=False)).tolist())
    non = non_member_pool.subset(np.sort(rng.choice(len(non_member_pool), size=n, replace=False)).tolist())
    return MIATargetSet(mem, non)


class ActiveMIA(RoundHook):
    """Gradient ascent on the targets by the adversary, loss-drop readout after aggregation."""

    def __init__(self, adversary_id, targets: MIATargetSet, model_cfg, ascent_rate: float, window):
        self.adversary = adversary_id
        self.targets = targets
        self.corpus = targets.corpus
        self.cfg = model_cfg
        self.rate = ascent_rate
        self.window = range(*window) if isinstance(window, tuple) else window
        self.drops = []

    def participant_update(self, ctx, org_id, theta_global, data, train):
        if org_id != self.adversary or ctx.round not in self.window:
            return None
        local = train(theta_global, data)
        _, g = nm.loss_and_gradient(theta_global, self.cfg, self.corpus)
        return local + self.rate * g

    def round_end(self, ctx, theta_before, theta_after):
        if ctx.round not in self.window:
            return
        before = nm.per_sequence_loss(theta_before, self.cfg, self.corpus)
        after = nm.per_sequence_loss(theta_after, self.cfg, self.corpus)
        self.drops.append(before - after)

    def scores(self) -> np.ndarray:
        if not self.drops:
            raise ConfigError("no attack rounds were observed")
        return np.mean(self.drops, axis=0)


def mia_active(fed: FederationDataset, model_cfg, fed_cfg: FederationConfig, targets: MIATargetSet,
               adversary_id: int, ascent_rate: float, window) -> np.ndarray:
    """Scores aligned with ``targets.labels``; higher means more likely a member."""
    lo, hi = window
    lo, hi = max(lo, 0), min(hi, fed_cfg.rounds)
    if hi <= lo:
        raise ConfigError("attack window does not overlap the training rounds")
    fed.participant(adversary_id)
    hook = ActiveMIA(adversary_id, targets, model_cfg, ascent_rate, (lo, hi))
    run_training(fed, model_cfg, fed_cfg, hooks=[hook])
    return hook.scores()


def auc_score(scores, labels) -> float:
    """Probability a random member outscores a random non-member (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("need both members and non-members")
    ranks = stats.rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def mia_evaluate(scores, labels) -> tuple[float, float]:
    """``(accuracy at the best balanced-accuracy threshold, AUC)``; predict member when score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ConfigError("scores and labels differ in length")
    auc = auc_score(scores, labels)
    best_bal, best_acc = -1.0, 0.0
    for thr in np.r_[np.unique(scores), np.inf]:
        pred = scores >= thr
        tpr = np.mean(pred[labels])
        tnr = np.mean(~pred[~labels])
        bal = 0.5 * (tpr + tnr)
        if bal > best_bal + 1e-15:
            best_bal, best_acc = bal, float(np.mean(pred == labels))
    return best_acc, auc
