from ..metrics import MetricsReport, class_recall, macro_metrics
from .benefit import BenefitRecord, SweepPoint, benefit_comparison, knowledgeable_sweep, local_model
from .contribution import ContributionRecord, contribution_impact, contribution_table, final_precision, loo_model
from .influence import InfluenceRecord, influence_from_oracles, influence_scores, lissa, normalize, top_eigenvalue

__all__ = [
    "BenefitRecord",
    "ContributionRecord",
    "InfluenceRecord",
    "MetricsReport",
    "SweepPoint",
    "benefit_comparison",
    "class_recall",
    "contribution_impact",
    "contribution_table",
    "final_precision",
    "influence_from_oracles",
    "influence_scores",
    "knowledgeable_sweep",
    "lissa",
    "local_model",
    "loo_model",
    "macro_metrics",
    "normalize",
    "top_eigenvalue",
]
