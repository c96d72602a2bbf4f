"""Pure-numpy recurrence kernels (fallback for the compiled ``_kernels`` module).

Both backends expose the same two functions. Shapes::

    zx     (T, B, G)   input pre-activations x_t W^T + b, G = (3N + 1) H
    mask   (T, B)      1.0 where the step is real, 0.0 on left padding
    Uh     (G, H)      stacked recurrent weights
    hs     (T+1, B, H) hidden states, hs[0] = h0 (zeros by default)
    cs     (T+1, B, N, H) per-lane cell states
    gates  (T, B, G)   activated gates: per lane [f, i, c~], then shared o
    tcs    (T, B, H)   tanh of the lane-mean cell state

This module also accepts complex arrays (used for complex-step differentiation).
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward_scan(zx, mask, Uh, N, H, h0=None, c0=None):
    T, B, G = zx.shape
    dtype = np.result_type(zx, Uh)
    hs = np.zeros((T + 1, B, H), dtype=dtype)
    cs = np.zeros((T + 1, B, N, H), dtype=dtype)
    if h0 is not None:
        hs[0] = h0
    if c0 is not None:
        cs[0] = c0
    gates = np.empty((T, B, G), dtype=dtype)
    tcs = np.empty((T, B, H), dtype=dtype)
    NH3 = 3 * N * H
    for t in range(T):
        z = zx[t] + hs[t] @ Uh.T
        lanes = z[:, :NH3].reshape(B, N, 3, H)
        f = _sigmoid(lanes[:, :, 0])
        i = _sigmoid(lanes[:, :, 1])
        g = np.tanh(lanes[:, :, 2])
        o = _sigmoid(z[:, NH3:])
        c_new = f * cs[t] + i * g
        tc = np.tanh(c_new.mean(axis=1))
        h_new = o * tc
        m = mask[t][:, None]
        hs[t + 1] = m * h_new + (1.0 - m) * hs[t]
        cs[t + 1] = m[:, :, None] * c_new + (1.0 - m[:, :, None]) * cs[t]
        act = gates[t, :, :NH3].reshape(B, N, 3, H)
        act[:, :, 0] = f
        act[:, :, 1] = i
        act[:, :, 2] = g
        gates[t, :, NH3:] = o
        tcs[t] = tc
    return hs, cs, gates, tcs


def backward_scan(hs, cs, gates, tcs, mask, Uh, dh_final, N, H):
    """Backpropagate ``dh_final`` (gradient w.r.t. hs[T]) through the scan.

    Returns ``dZ`` (T, B, G), the gradient w.r.t. the gate pre-activations, and
    ``dUh`` (G, H).
    """
    T, B, G = gates.shape
    dtype = np.result_type(gates, dh_final)
    NH3 = 3 * N * H
    dZ = np.zeros((T, B, G), dtype=dtype)
    dUh = np.zeros((G, H), dtype=dtype)
    dh = dh_final.astype(dtype, copy=True)
    dc = np.zeros((B, N, H), dtype=dtype)
    for t in range(T - 1, -1, -1):
        m = mask[t][:, None]
        dh_new = m * dh
        dc_new = m[:, :, None] * dc
        act = gates[t, :, :NH3].reshape(B, N, 3, H)
        f, i, g = act[:, :, 0], act[:, :, 1], act[:, :, 2]
        o = gates[t, :, NH3:]
        tc = tcs[t]
        do = dh_new * tc
        dcbar = dh_new * o * (1.0 - tc * tc)
        dck = dc_new + dcbar[:, None, :] / N
        dz_lanes = dZ[t, :, :NH3].reshape(B, N, 3, H)
        dz_lanes[:, :, 0] = dck * cs[t] * f * (1.0 - f)
        dz_lanes[:, :, 1] = dck * g * i * (1.0 - i)
        dz_lanes[:, :, 2] = dck * i * (1.0 - g * g)
        dZ[t, :, NH3:] = do * o * (1.0 - o)
        dz = dZ[t]
        dUh += dz.T @ hs[t]
        dc = dck * f + (1.0 - m[:, :, None]) * dc
        dh = dz @ Uh + (1.0 - m) * dh
    return dZ, dUh
