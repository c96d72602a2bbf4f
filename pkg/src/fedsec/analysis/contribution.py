"""Leave-one-out contribution impact."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ..federation import FederationConfig, run_training
from ..metrics import macro_metrics
from ..neural import model as nm


@dataclass(frozen=True)
class ContributionRecord:
    org_id: int
    baseline_precision: float
    loo_precision: float

    @property
    def impact(self) -> float:
        return self.baseline_precision - self.loo_precision


def final_precision(fed, model_cfg, fed_cfg: FederationConfig, theta=None) -> float:
    if theta is None:
        theta = run_training(fed, model_cfg, fed_cfg).final
    pred = nm.predict(theta, model_cfg, fed.test)
    return macro_metrics(pred, fed.test.labels, model_cfg.vocab_size).precision


def loo_model(fed, model_cfg, fed_cfg: FederationConfig, org_id):
    """Final global model retrained without ``org_id`` under the same root seed."""
    return run_training(fed.without(org_id), model_cfg, fed_cfg).final


def contribution_impact(fed, model_cfg, fed_cfg: FederationConfig, org_id, baseline: float | None = None
                        ) -> ContributionRecord:
    """``impact = precision(all orgs) - precision(all orgs but org_id)`` on the server test set."""
    fed.participant(org_id)  # KeyError for unknown orgs
    if baseline is None:
        baseline = final_precision(fed, model_cfg, fed_cfg)
    loo = final_precision(fed.without(org_id), model_cfg, fed_cfg)
    return ContributionRecord(org_id, float(baseline), float(loo))


def _job(args):
    return contribution_impact(*args)


def contribution_table(fed, model_cfg, fed_cfg: FederationConfig, org_ids=None, jobs: int = 1,
                       baseline: float | None = None) -> list[ContributionRecord]:
    org_ids = fed.org_ids if org_ids is None else list(org_ids)
    if baseline is None:
        baseline = final_precision(fed, model_cfg, fed_cfg)
    args = [(fed, model_cfg, fed_cfg, o, baseline) for o in org_ids]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_job, args))
    return [_job(a) for a in args]
