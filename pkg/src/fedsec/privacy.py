"""Renyi-DP accountant for the subsampled Gaussian mechanism.

Each round samples participants with probability ``q`` and adds Gaussian noise with
noise multiplier ``z``. The RDP of one round at order ``alpha`` is
``log A_alpha / (alpha - 1)`` where ``A_alpha`` is the ``alpha``-th moment of the
likelihood ratio between ``(1-q) N(0, z^2) + q N(1, z^2)`` and ``N(0, z^2)``.
Integer orders use the binomial expansion; fractional orders use the two-sided
series with erfc tails. Composition over rounds is additive, and the (eps, delta)
conversion is ``eps = min_alpha rdp(alpha) + log(1/delta) / (alpha - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import ConfigError

ORDERS = tuple(np.concatenate([np.arange(1.25, 10.0, 0.25), np.arange(10.0, 64.5, 0.5)]).tolist())


def _log_add(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def _log_sub(a, b):
    """log(exp(a) - exp(b)) for a >= b."""
    if b == -math.inf:
        return a
    if a < b:
        raise ValueError("log_sub of a negative quantity")
    if a == b:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _log_erfc(x):
    return math.log(2.0) + float(special.log_ndtr(-x * math.sqrt(2.0)))


def _log_a_int(q, z, alpha: int) -> float:
    out = -math.inf
    for k in range(alpha + 1):
        term = (
            float(special.gammaln(alpha + 1) - special.gammaln(k + 1) - special.gammaln(alpha - k + 1))
            + k * math.log(q)
            + (alpha - k) * math.log1p(-q)
            + (k * k - k) / (2.0 * z * z)
        )
        out = _log_add(out, term)
    return out


def _log_a_frac(q, z, alpha: float) -> float:
    # split the integral at z0, where the two mixture components cross
    log_a0, log_a1 = -math.inf, -math.inf
    z0 = z * z * math.log(1.0 / q - 1.0) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2.0) * z))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2.0) * z))
        log_s0 = log_t0 + (i * i - i) / (2.0 * z * z) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * z * z) + log_e1
        if coef > 0:
            log_a0 = _log_add(log_a0, log_s0)
            log_a1 = _log_add(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30 or i > 10_000:
            break
    return _log_add(log_a0, log_a1)


def log_moment(q: float, z: float, alpha: float) -> float:
    """``log A_alpha`` of the subsampled Gaussian with sampling rate ``q`` and noise multiplier ``z``."""
    if q == 0:
        return 0.0
    if q == 1.0:
        return alpha * (alpha - 1) / (2.0 * z * z)
    if float(alpha).is_integer():
        return _log_a_int(q, z, int(alpha))
    return _log_a_frac(q, z, float(alpha))


@lru_cache(maxsize=256)
def _rdp_vector(q: float, z: float, orders: tuple) -> np.ndarray:
    rdp = np.array([log_moment(q, z, a) / (a - 1) for a in orders])
    rdp.setflags(write=False)
    return rdp


def rdp_subsampled_gaussian(q: float, z: float, steps: int, orders=ORDERS) -> np.ndarray:
    if z <= 0:
        raise ConfigError("noise multiplier must be > 0")
    if not 0 <= q <= 1:
        raise ConfigError("sampling rate must be in [0, 1]")
    return _rdp_vector(float(q), float(z), tuple(orders)) * steps


def eps_from_rdp(rdp, delta: float, orders=ORDERS) -> tuple[float, float]:
    """Returns ``(eps, best_order)``."""
    orders = np.asarray(orders, dtype=np.float64)
    eps = np.asarray(rdp) + math.log(1.0 / delta) / (orders - 1)
    k = int(np.nanargmin(eps))
    return max(0.0, float(eps[k])), float(orders[k])


@dataclass(frozen=True)
class PrivacyAccountant:
    """Value-typed accountant; :meth:`step` returns a new instance."""

    noise_scale: float
    sample_rate: float
    delta: float
    rounds: int = 0
    orders: tuple = field(default=ORDERS, repr=False)

    def __post_init__(self):
        if not self.noise_scale > 0:
            raise ConfigError("noise_scale z must be > 0")
        if not 0 < self.sample_rate <= 1:
            raise ConfigError("sample_rate q must be in (0, 1]")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must be in (0, 1)")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")

    def step(self, n: int = 1) -> "PrivacyAccountant":
        return PrivacyAccountant(self.noise_scale, self.sample_rate, self.delta, self.rounds + n, self.orders)

    def spent(self) -> float:
        return get_privacy_spent(self.noise_scale, self.sample_rate, self.delta, self.rounds, self.orders)


def get_privacy_spent(z, q, delta, rounds, orders=ORDERS) -> float:
    if z <= 0:
        raise ConfigError("noise multiplier must be > 0")
    if rounds == 0:
        return 0.0
    eps, _ = eps_from_rdp(rdp_subsampled_gaussian(q, z, rounds, orders), delta, orders)
    return eps


def accountant_spent(acc: PrivacyAccountant) -> float:
    return acc.spent()


def gaussian_closed_form_eps(z: float, delta: float, rounds: int = 1, orders=ORDERS) -> float:
    """Unsubsampled Gaussian: ``min_alpha rounds*alpha/(2 z^2) + log(1/delta)/(alpha-1)``."""
    a = np.asarray(orders, dtype=np.float64)
    return float(np.min(rounds * a / (2 * z * z) + math.log(1 / delta) / (a - 1)))
