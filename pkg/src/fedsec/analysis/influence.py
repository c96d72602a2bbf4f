"""Influence of each organization's data on the test loss of the final model.

``s_test = H^-1 grad L_test`` is estimated with the damped stochastic recursion

    h_0 = v,  h_{j+1} = v + (I - (H_j + lambda I) / scale) h_j,  estimate = h_J / scale

where ``H_j`` is the Hessian of the loss on one sampled training point. The raw
score of an org is ``s_test . sum_{z in org} grad l(z) / n``: the first-order rise
in test loss if the org's data were removed, so larger means more helpful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..events import EventCorpus
from ..neural import model as nm


@dataclass(frozen=True)
class InfluenceRecord:
    org_id: int
    raw_influence: float
    normalized: float


def lissa(hvp_sample, v, n_train: int, damping: float = 0.01, scale: float = 10.0, depth: int = 500,
          samples: int = 1, seed: int = 0, batch: int = 1) -> np.ndarray:
    """Stochastic estimate of ``(H + damping I)^-1 v``.

    ``hvp_sample(idx, x)`` returns the Hessian-vector product of the mean loss over
    training points ``idx`` with ``x``.
    """
    if not scale > 0:
        raise ConfigError("scale must be > 0")
    if depth < 1 or samples < 1:
        raise ConfigError("depth and samples must be >= 1")
    v = np.asarray(v, dtype=np.float64)
    rng = np.random.default_rng(seed)
    limit = 1e8 * max(1.0, float(np.linalg.norm(v)))
    out = np.zeros_like(v)
    for _ in range(samples):
        h = v.copy()
        for _ in range(depth):
            idx = rng.integers(0, n_train, size=batch)
            h = v + h - (hvp_sample(idx, h) + damping * h) / scale
            if not np.all(np.isfinite(h)) or float(np.linalg.norm(h)) > limit:
                raise FloatingPointError("inverse-Hessian recursion diverged; increase scale")
        out += h / scale
    return out / samples


def top_eigenvalue(hvp, dim: int, iters: int = 30, seed: int = 0) -> float:
    """Largest-magnitude Hessian eigenvalue by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = hvp(x)
        lam = float(x @ y)
        n = np.linalg.norm(y)
        if n == 0:
            return 0.0
        x = y / n
    return abs(lam)


def normalize(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def records(org_ids, raw) -> list[InfluenceRecord]:
    norm = normalize(raw)
    return [InfluenceRecord(int(o), float(r), float(n)) for o, r, n in zip(org_ids, raw, norm)]


def influence_from_oracles(grad_test, org_grad_sums, n_train, hvp_sample, **lissa_kw) -> np.ndarray:
    """Raw scores given the test gradient and per-org summed training gradients."""
    s_test = lissa(hvp_sample, grad_test, n_train, **lissa_kw)
    return np.array([float(s_test @ g) / n_train for g in org_grad_sums])


def influence_scores(fed, model_cfg: nm.ModelConfig, theta, damping: float = 0.01, scale: float | None = None,
                     depth: int = 500, samples: int = 1, seed: int = 0, batch: int = 1,
                     test: EventCorpus | None = None) -> list[InfluenceRecord]:
    test = fed.test if test is None else test
    if len(test) == 0:
        raise ConfigError("influence needs a test corpus")
    pooled = fed.pooled()
    n = len(pooled)
    theta = np.asarray(theta, dtype=np.float64)

    def hvp_sample(idx, x):
        return nm.hessian_vector_product(theta, model_cfg, nm.make_batch(pooled, idx), x)

    if scale is None:
        rng = np.random.default_rng(seed)
        probe = nm.make_batch(pooled, rng.choice(n, size=min(n, 256), replace=False))
        lam = top_eigenvalue(lambda x: nm.hessian_vector_product(theta, model_cfg, probe, x), theta.size, seed=seed)
        scale = 10.0 * max(lam, 1e-8)
    _, g_test = nm.loss_and_gradient(theta, model_cfg, test)
    sums = []
    for p in fed.participants:
        _, g = nm.loss_and_gradient(theta, model_cfg, p.train)
        sums.append(g * p.n_samples)
    raw = influence_from_oracles(g_test, sums, n, hvp_sample, damping=damping, scale=scale, depth=depth,
                                 samples=samples, seed=seed, batch=batch)
    return records(fed.org_ids, raw)
