# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrence kernels. Same contract as ``_kernels_py`` (float64 only)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport copysign, exp, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _sigmoid_inplace(double *x, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        x[j] = 1.0 / (1.0 + exp(-x[j]))


cdef inline double _tanh(double x) noexcept nogil:
    # glibc tanh is several times slower than exp; absolute error stays ~1e-16
    cdef double e = exp(-2.0 * fabs(x))
    return copysign((1.0 - e) / (1.0 + e), x)


cdef inline void _tanh_inplace(double *x, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        x[j] = _tanh(x[j])


cdef inline void _gemm_xwT(int B, int G, int H, double *A, double *W, double *C, double beta) noexcept nogil:
    # C (B x G, row-major) = A (B x H) @ W^T (W is G x H) + beta * C
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &G, &B, &H, &one, W, &H, A, &H, &beta, C, &G)


cdef inline void _gemm_xw(int B, int G, int H, double *dz, double *W, double *C, double beta) noexcept nogil:
    # C (B x H) = dz (B x G) @ W (G x H) + beta * C
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &H, &B, &G, &one, W, &H, dz, &G, &beta, C, &H)


cdef inline void _gemm_dzT_h(int B, int G, int H, double *dz, double *h, double *C) noexcept nogil:
    # C (G x H) += dz^T (G x B) @ h (B x H)
    cdef char ta = b'N'
    cdef char tb = b'T'
    cdef double one = 1.0
    dgemm(&ta, &tb, &H, &G, &B, &one, h, &H, dz, &G, &one, C, &H)


def forward_scan(double[:, :, ::1] zx, double[:, ::1] mask, double[:, ::1] Uh, int N, int H, h0=None, c0=None):
    cdef int T = zx.shape[0]
    cdef int B = zx.shape[1]
    cdef int G = zx.shape[2]
    if Uh.shape[0] != G or Uh.shape[1] != H or G != (3 * N + 1) * H:
        raise ValueError("inconsistent kernel dimensions")
    hs_a = np.zeros((T + 1, B, H))
    cs_a = np.zeros((T + 1, B, N, H))
    gates_a = np.empty((T, B, G))
    tcs_a = np.empty((T, B, H))
    if h0 is not None:
        hs_a[0] = h0
    if c0 is not None:
        cs_a[0] = c0
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, :, ::1] cs = cs_a
    cdef double[:, :, ::1] gates = gates_a
    cdef double[:, :, ::1] tcs = tcs_a
    acc_a = np.empty(H)
    cdef double[::1] acc = acc_a
    cdef int t, b, k, j, base, NH3 = 3 * N * H
    cdef double m, f, ig, g, o, cn, tc, invN = 1.0 / N
    cdef double *z
    with nogil:
        for t in range(T):
            gates[t, :, :] = zx[t, :, :]
            _gemm_xwT(B, G, H, &hs[t, 0, 0], &Uh[0, 0], &gates[t, 0, 0], 1.0)
            for b in range(B):
                m = mask[t, b]
                z = &gates[t, b, 0]
                for k in range(N):
                    base = k * 3 * H
                    _sigmoid_inplace(z + base, 2 * H)
                    _tanh_inplace(z + base + 2 * H, H)
                _sigmoid_inplace(z + NH3, H)
                for j in range(H):
                    acc[j] = 0.0
                for k in range(N):
                    base = k * 3 * H
                    for j in range(H):
                        cn = z[base + j] * cs[t, b, k, j] + z[base + H + j] * z[base + 2 * H + j]
                        acc[j] += cn
                        cs[t + 1, b, k, j] = m * cn + (1.0 - m) * cs[t, b, k, j]
                for j in range(H):
                    tc = _tanh(acc[j] * invN)
                    tcs[t, b, j] = tc
                    hs[t + 1, b, j] = m * (z[NH3 + j] * tc) + (1.0 - m) * hs[t, b, j]
    return hs_a, cs_a, gates_a, tcs_a


def backward_scan(double[:, :, ::1] hs, double[:, :, :, ::1] cs, double[:, :, ::1] gates,
                  double[:, :, ::1] tcs, double[:, ::1] mask, double[:, ::1] Uh,
                  double[:, ::1] dh_final, int N, int H):
    cdef int T = gates.shape[0]
    cdef int B = gates.shape[1]
    cdef int G = gates.shape[2]
    dZ_a = np.zeros((T, B, G))
    dUh_a = np.zeros((G, H))
    dh_a = np.array(dh_final, dtype=np.float64, copy=True, order="C")
    dhn_a = np.empty((B, H))
    dc_a = np.zeros((B, N, H))
    cdef double[:, :, ::1] dZ = dZ_a
    cdef double[:, ::1] dUh = dUh_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] dhn = dhn_a
    cdef double[:, :, ::1] dc = dc_a
    cdef int t, b, k, j, base, NH3 = 3 * N * H
    cdef double m, dhj, f, ig, g, o, tc, do_, dcbar, dck, invN = 1.0 / N
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                m = mask[t, b]
                for j in range(H):
                    dhj = m * dh[b, j]
                    o = gates[t, b, NH3 + j]
                    tc = tcs[t, b, j]
                    do_ = dhj * tc
                    dcbar = dhj * o * (1.0 - tc * tc) * invN
                    dZ[t, b, NH3 + j] = do_ * o * (1.0 - o)
                    for k in range(N):
                        base = k * 3 * H
                        f = gates[t, b, base + j]
                        ig = gates[t, b, base + H + j]
                        g = gates[t, b, base + 2 * H + j]
                        dck = m * dc[b, k, j] + dcbar
                        dZ[t, b, base + j] = dck * cs[t, b, k, j] * f * (1.0 - f)
                        dZ[t, b, base + H + j] = dck * g * ig * (1.0 - ig)
                        dZ[t, b, base + 2 * H + j] = dck * ig * (1.0 - g * g)
                        dc[b, k, j] = dck * f + (1.0 - m) * dc[b, k, j]
                    dhn[b, j] = (1.0 - m) * dh[b, j]
            _gemm_dzT_h(B, G, H, &dZ[t, 0, 0], &hs[t, 0, 0], &dUh[0, 0])
            _gemm_xw(B, G, H, &dZ[t, 0, 0], &Uh[0, 0], &dhn[0, 0], 1.0)
            dh[:, :] = dhn[:, :]
    return dZ_a, dUh_a
