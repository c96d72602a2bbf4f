"""Local-only versus aggregated models, and the knowledgeable-fraction sweep."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from ..events import EventCorpus
from ..federation import FederationConfig, derive_seed, make_trainer, run_training, select_participants
from ..metrics import macro_metrics
from ..neural import model as nm
from ..partition import partition_knowledgeable


@dataclass(frozen=True)
class BenefitRecord:
    org_id: int
    local_precision: float
    aggregated_precision: float
    knowledgeable: bool = False

    @property
    def benefit(self) -> float:
        return self.aggregated_precision - self.local_precision


def _precision(theta, cfg, corpus) -> float:
    return macro_metrics(nm.predict(theta, cfg, corpus), corpus.labels, cfg.vocab_size).precision


def local_model(fed, model_cfg, fed_cfg: FederationConfig, org_id):
    """The org trains alone, repeating exactly the local work it did in the federation.

    It trains in the rounds it was selected, with that round's seed, from its own
    running parameters instead of the broadcast ones.
    """
    p = fed.participant(org_id)
    train = make_trainer(model_cfg, fed_cfg)
    theta = nm.init_params(model_cfg)
    root = fed_cfg.root_seed
    for r in range(fed_cfg.rounds):
        if org_id in select_participants(fed.org_ids, fed_cfg.sample_rate, derive_seed(root, r, 1)):
            theta = train(theta, p.train, derive_seed(root, r, 2, org_id))
    return theta


def benefit_comparison(fed, model_cfg, fed_cfg: FederationConfig, final_global, examination_test: EventCorpus,
                       org_ids=None) -> list[BenefitRecord]:
    needed = set(fed.pooled().classes())
    missing = sorted(needed - set(examination_test.classes()))
    if missing:
        raise ConfigError(f"examination test is missing class {missing[0]}")
    agg = _precision(final_global, model_cfg, examination_test)
    out = []
    for org in (fed.org_ids if org_ids is None else org_ids):
        loc = _precision(local_model(fed, model_cfg, fed_cfg, org), model_cfg, examination_test)
        out.append(BenefitRecord(org, loc, agg, fed.participant(org).knowledgeable))
    return out


@dataclass(frozen=True)
class SweepPoint:
    m: float
    n_knowledgeable: int
    precision: float


def knowledgeable_sweep(corpus: EventCorpus, K: int, m_values, model_cfg, fed_cfg: FederationConfig,
                        test: EventCorpus, seed: int = 0) -> list[SweepPoint]:
    rows = []
    for m in m_values:
        if not 0 < m <= 1:
            raise ConfigError(f"m={m} outside (0, 1]")
        fed = partition_knowledgeable(corpus, K, m, seed=seed, test=test)
        theta = run_training(fed, model_cfg, fed_cfg).final
        rows.append(SweepPoint(float(m), sum(p.knowledgeable for p in fed.participants),
                               _precision(theta, model_cfg, test)))
    return rows
