"""Aggregation rules for a round of client updates.

Every rule consumes a list of :class:`RoundUpdate` and returns one aggregated delta.
Updates are sorted by ``org_id`` before any arithmetic so results do not depend on
arrival order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, DimensionError
from .privacy import PrivacyAccountant


@dataclass(frozen=True)
class RoundUpdate:
    org_id: int
    delta: np.ndarray
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        d = np.asarray(self.delta)
        if d.ndim != 1:
            raise DimensionError("delta must be a flat vector")
        if not np.all(np.isfinite(d)):
            raise ValueError(f"non-finite delta from org {self.org_id}")


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class FedAvg:
    name = "fedavg"

    def validate(self, n_participants=None):
        pass


@dataclass(frozen=True)
class TrimmedMean:
    beta: float = 0.1
    name = "trimmed_mean"

    def validate(self, n_participants=None):
        if not 0 <= self.beta < 0.5:
            raise ConfigError("beta must be in [0, 0.5)")


@dataclass(frozen=True)
class Krum:
    f: int = 1
    name = "krum"

    def validate(self, n_participants=None):
        if self.f < 0:
            raise ConfigError("f must be >= 0")
        if n_participants is not None and self.f >= n_participants:
            raise ConfigError("f must be smaller than the number of participants")


@dataclass(frozen=True)
class FLTrust:
    server_size: int = 500
    seed: int = 0
    name = "fltrust"

    def validate(self, n_participants=None):
        if self.server_size < 1:
            raise ConfigError("server_size must be >= 1")


@dataclass(frozen=True)
class DnC:
    remove_frac: float = 0.1
    name = "dnc"

    def validate(self, n_participants=None):
        if not 0 <= self.remove_frac < 1:
            raise ConfigError("remove_frac must be in [0, 1)")


@dataclass(frozen=True)
class NormBound:
    T: float = 5.0
    name = "norm_bound"

    def validate(self, n_participants=None):
        if not self.T > 0:
            raise ConfigError("T must be > 0")


@dataclass(frozen=True)
class WeakDP:
    T: float = 5.0
    sigma: float = 0.05
    name = "weak_dp"

    def validate(self, n_participants=None):
        if not self.T > 0:
            raise ConfigError("T must be > 0")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")


@dataclass(frozen=True)
class CDP:
    clip: float = 1.0
    noise_scale: float = 1.0
    sample_rate: float = 1.0
    budget: float = 3.8
    delta: float = 1e-5
    name = "cdp"

    def validate(self, n_participants=None):
        if not self.clip > 0:
            raise ConfigError("clip S must be > 0")
        if not self.noise_scale > 0:
            raise ConfigError("noise_scale z must be > 0")
        if not 0 < self.sample_rate <= 1:
            raise ConfigError("sample_rate q must be in (0, 1]")
        if not self.budget > 0:
            raise ConfigError("budget must be > 0")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must be in (0, 1)")

    @property
    def sigma(self) -> float:
        return self.noise_scale * self.clip / self.sample_rate

    def accountant(self) -> PrivacyAccountant:
        return PrivacyAccountant(self.noise_scale, self.sample_rate, self.delta)


AggregationPolicy = Union[FedAvg, TrimmedMean, Krum, FLTrust, DnC, NormBound, WeakDP, CDP]

POLICIES = {cls.name: cls for cls in (FedAvg, TrimmedMean, Krum, FLTrust, DnC, NormBound, WeakDP, CDP)}


def make_policy(name: str, **params) -> AggregationPolicy:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ConfigError(f"unknown policy {name!r}; expected one of {sorted(POLICIES)}") from None
    try:
        policy = cls(**params)
    except TypeError as exc:
        raise ConfigError(f"policy {name}: {exc}") from None
    policy.validate()
    return policy


# ---------------------------------------------------------------------------
# helpers


def _stack(updates):
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    ups = sorted(updates, key=lambda u: u.org_id)
    sizes = {np.asarray(u.delta).shape for u in ups}
    if len(sizes) != 1:
        raise DimensionError(f"updates have different lengths: {sorted(s[0] for s in sizes)}")
    X = np.stack([np.asarray(u.delta, dtype=np.float64) for u in ups])
    n = np.array([u.n_samples for u in ups], dtype=np.float64)
    ids = [u.org_id for u in ups]
    return ids, X, n


def weighted_mean(updates) -> np.ndarray:
    _, X, n = _stack(updates)
    return (n / n.sum()) @ X


def plain_mean(updates) -> np.ndarray:
    _, X, _ = _stack(updates)
    return X.mean(axis=0)


# ---------------------------------------------------------------------------
# rules


def trimmed_mean(updates, beta: float) -> np.ndarray:
    """Coordinate-wise: drop the ``ceil(beta*n)`` largest and smallest values, average the rest."""
    if not 0 <= beta < 0.5:
        raise ConfigError("beta must be in [0, 0.5)")
    _, X, _ = _stack(updates)
    n = X.shape[0]
    k = math.ceil(beta * n - 1e-12)
    if n <= 2 * k:
        raise ConfigError(f"trimmed mean with beta={beta} needs more than {2 * k} updates, got {n}")
    if k == 0:
        return X.mean(axis=0)
    return np.sort(X, axis=0)[k:n - k].mean(axis=0)


def krum_scores(updates, f: int) -> tuple[list, np.ndarray]:
    ids, X, _ = _stack(updates)
    n = X.shape[0]
    if n < f + 3:
        raise ConfigError(f"krum with f={f} needs at least {f + 3} updates, got {n}")
    sq = np.sum(X * X, axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    np.fill_diagonal(D, np.inf)
    m = n - f - 2
    scores = np.sort(D, axis=1)[:, :m].sum(axis=1)
    return ids, scores


def krum_select(updates, f: int) -> int:
    """org_id of the update with the smallest sum of squared distances to its ``n-f-2`` nearest others."""
    ids, scores = krum_scores(updates, f)
    return ids[int(np.argmin(scores))]  # argmin keeps the first, i.e. lowest org_id, on ties


def krum(updates, f: int) -> np.ndarray:
    chosen = krum_select(updates, f)
    for u in updates:
        if u.org_id == chosen:
            return np.array(u.delta, dtype=np.float64, copy=True)
    raise AssertionError("unreachable")


def fltrust(updates, server_update) -> np.ndarray:
    s = np.asarray(server_update, dtype=np.float64)
    s_norm = float(np.linalg.norm(s))
    if s_norm == 0:
        raise ValueError("server update is zero; trust scores are undefined")
    _, X, _ = _stack(updates)
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = np.where(norms > 0, (X @ s) / (safe * s_norm), 0.0)
    trust = np.maximum(cos, 0.0)
    total = trust.sum()
    if total == 0:
        return s.copy()
    rescaled = X * (s_norm / safe)[:, None]
    return (trust / total) @ rescaled


def top_direction(Xc, seed: int = 0, tol: float = 1e-9, max_iter: int = 1000):
    """Leading right singular vector of ``Xc`` by power iteration on ``Xc^T Xc``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(Xc.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = Xc.T @ (Xc @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return None
        w /= nw
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v


def dnc(updates, remove_frac: float, seed: int = 0) -> np.ndarray:
    """Drop the ``ceil(remove_frac*n)`` updates with the largest projection on the top principal direction."""
    if not 0 <= remove_frac < 1:
        raise ConfigError("remove_frac must be in [0, 1)")
    _, X, _ = _stack(updates)
    n = X.shape[0]
    if n < 2:
        raise ConfigError("dnc needs at least 2 updates")
    mu = X.mean(axis=0)
    k = math.ceil(remove_frac * n - 1e-12)
    if k == 0:
        return mu
    if k >= n:
        raise ConfigError("remove_frac would drop every update")
    Xc = X - mu
    scale = max(float(np.abs(X).max()), 1e-300)
    if float(np.abs(Xc).max()) <= 1e-14 * scale:
        return mu
    v = top_direction(Xc, seed)
    if v is None:
        return mu
    score = np.abs(Xc @ v)
    keep = np.sort(np.argsort(-score, kind="stable")[k:])
    return X[keep].mean(axis=0)


def clip_delta(delta, T: float) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    return delta / max(1.0, float(np.linalg.norm(delta)) / T)


def norm_bound(updates, T: float) -> np.ndarray:
    if not T > 0:
        raise ConfigError("T must be > 0")
    _, X, n = _stack(updates)
    if math.isinf(T):
        return (n / n.sum()) @ X
    norms = np.linalg.norm(X, axis=1)
    X = X / np.maximum(1.0, norms / T)[:, None]
    return (n / n.sum()) @ X


def weak_dp(updates, T: float, sigma: float, round_seed: int) -> np.ndarray:
    """Norm bounding plus Gaussian noise with standard deviation ``sigma`` per coordinate."""
    if not sigma >= 0:
        raise ConfigError("sigma must be >= 0")
    out = norm_bound(updates, T)
    if sigma == 0:
        return out
    return out + np.random.default_rng(round_seed).normal(0.0, sigma, size=out.shape)


@dataclass(frozen=True)
class CDPResult:
    theta: np.ndarray
    accountant: PrivacyAccountant
    halted: bool
    skipped: bool = False


def cdp_round(theta, updates, policy: CDP, accountant: PrivacyAccountant, round_seed: int) -> CDPResult:
    """One server step of participant-level DP.

    Halts (returning ``theta`` unchanged) if the budget is already exceeded. Otherwise
    ``theta + sum(deltas)/C + N(0, sigma^2 I)`` with ``sigma = z*S/q``; participants
    are expected to have clipped their deltas to ``S`` locally.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if accountant.spent() > policy.budget:
        return CDPResult(theta.copy(), accountant, halted=True)
    if not updates:
        return CDPResult(theta.copy(), accountant, halted=False, skipped=True)
    _, X, _ = _stack(updates)
    if X.shape[1] != theta.size:
        raise DimensionError("update length does not match the model")
    noise = np.random.default_rng(round_seed).normal(0.0, policy.sigma, size=theta.size)
    new = theta + X.sum(axis=0) / X.shape[0] + noise
    return CDPResult(new, accountant.step(), halted=False)


def aggregate(policy: AggregationPolicy, updates, round_seed: int = 0, server_update=None) -> np.ndarray:
    """Aggregated delta under any non-CDP policy."""
    if isinstance(policy, FedAvg):
        return weighted_mean(updates)
    if isinstance(policy, TrimmedMean):
        return trimmed_mean(updates, policy.beta)
    if isinstance(policy, Krum):
        return krum(updates, policy.f)
    if isinstance(policy, FLTrust):
        if server_update is None:
            raise ValueError("FLTrust needs the server update")
        return fltrust(updates, server_update)
    if isinstance(policy, DnC):
        return dnc(updates, policy.remove_frac, seed=round_seed)
    if isinstance(policy, NormBound):
        return norm_bound(updates, policy.T)
    if isinstance(policy, WeakDP):
        return weak_dp(updates, policy.T, policy.sigma, round_seed)
    if isinstance(policy, CDP):
        raise TypeError("CDP rounds go through cdp_round")
    raise TypeError(f"unknown policy {policy!r}")
