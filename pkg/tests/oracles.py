"""Independent reference implementations used as test oracles.

They are written straight from the definitions with plain loops and the math
module, and share no code with the package.
"""

import math

import numpy as np


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def _affine(W, U, b, x, h, j):
    s = b[j]
    for d in range(len(x)):
        s += W[j][d] * x[d]
    for k in range(len(h)):
        s += U[j][k] * h[k]
    return s


def lstm_step_scalar(lanes, out_gate, x, h, c):
    """Memory-array step with scalar loops.

    ``lanes`` is a list of dicts with keys W_f, U_f, b_f, W_i, ..., W_c, ...;
    ``out_gate`` holds W_o, U_o, b_o; ``c`` is a list of per-lane cell vectors.
    With one lane this is exactly the six LSTM step equations.
    """
    H = len(h)
    N = len(lanes)
    new_c = []
    for k in range(N):
        L = lanes[k]
        ck = []
        for j in range(H):
            f = sigmoid(_affine(L["W_f"], L["U_f"], L["b_f"], x, h, j))
            i = sigmoid(_affine(L["W_i"], L["U_i"], L["b_i"], x, h, j))
            ct = math.tanh(_affine(L["W_c"], L["U_c"], L["b_c"], x, h, j))
            ck.append(f * c[k][j] + i * ct)
        new_c.append(ck)
    new_h = []
    for j in range(H):
        o = sigmoid(_affine(out_gate["W_o"], out_gate["U_o"], out_gate["b_o"], x, h, j))
        mean_c = sum(new_c[k][j] for k in range(N)) / N
        new_h.append(o * math.tanh(mean_c))
    return new_h, new_c


def central_differences(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def trimmed_mean_coordinate(values, k):
    v = sorted(values)
    kept = v[k:len(v) - k]
    return sum(kept) / len(kept)


def krum_brute(vectors, f):
    """Index of the vector with the smallest sum of squared distances to its n-f-2 nearest others."""
    n = len(vectors)
    best, best_score = None, None
    for i in range(n):
        d = sorted(sum((a - b) ** 2 for a, b in zip(vectors[i], vectors[j])) for j in range(n) if j != i)
        score = sum(d[:n - f - 2])
        if best_score is None or score < best_score:
            best, best_score = i, score
    return best


def smoothed_kl(p, q, alpha):
    p = [x + alpha for x in p]
    q = [x + alpha for x in q]
    sp, sq = sum(p), sum(q)
    return sum((a / sp) * math.log((a / sp) / (b / sq)) for a, b in zip(p, q))


def gaussian_rdp_eps_continuous(z, delta, rounds=1):
    """min over real alpha > 1 of rounds*alpha/(2 z^2) + ln(1/delta)/(alpha-1), in closed form."""
    a = rounds / (2 * z * z)
    L = math.log(1 / delta)
    alpha = 1 + math.sqrt(L / a)
    return a * alpha + L / (alpha - 1)


class LogisticRegression:
    """Tiny convex model with exact gradients and Hessians (mean loss, L2 term ``lam``)."""

    def __init__(self, X, y, lam=0.0):
        self.X, self.y, self.lam = np.asarray(X, float), np.asarray(y, float), lam

    def _p(self, w, idx):
        return 1 / (1 + np.exp(-self.X[idx] @ w))

    def grad(self, w, idx=None):
        idx = np.arange(len(self.y)) if idx is None else np.asarray(idx)
        r = self._p(w, idx) - self.y[idx]
        return self.X[idx].T @ r / len(idx) + self.lam * w

    def hessian(self, w, idx=None):
        idx = np.arange(len(self.y)) if idx is None else np.asarray(idx)
        p = self._p(w, idx)
        Xi = self.X[idx]
        return (Xi.T * (p * (1 - p))) @ Xi / len(idx) + self.lam * np.eye(len(w))
