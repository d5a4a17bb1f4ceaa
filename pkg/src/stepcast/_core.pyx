# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM and ARMA kernels.

Same signatures and semantics as ``stepcast._pycore``. Arrays are row-major
float64; BLAS is called through scipy's Cython bindings, which are
column-major, so every product is written in its transposed form. The
elementwise gate math lives in ``include/lstm_ops.h`` so the C compiler can
vectorize it.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef extern from "lstm_ops.h" nogil:
    void lstm_step_fwd(int B, int H, const double *a, double *c, double *h,
                       double *gates, long gstride, double *hs, double *cs, long sstride)
    void lstm_step_bwd(int B, int H, const double *gates, long gstride,
                       const double *cs, const double *dhs, const double *dcs, long sstride,
                       const double *cprev, long pstride,
                       double *dh_next, double *dc_next, double *da)


cdef void _gemm_rm(char transa, char transb, int M, int N, int K, double alpha,
                   double *A, int lda, double *B, int ldb, double beta,
                   double *C, int ldc) noexcept nogil:
    # Row-major C(M,N) = alpha * op(A) @ op(B) + beta * C, computed as the
    # column-major product C^T = op(B)^T @ op(A)^T.
    dgemm(&transb, &transa, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def lstm_forward(x, W_ih, W_hh, b, h0, c0):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] Wi = np.ascontiguousarray(W_ih, dtype=np.float64)
    cdef double[:, ::1] Wh = np.ascontiguousarray(W_hh, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int B = xv.shape[0]
    cdef int T = xv.shape[1]
    cdef int D = xv.shape[2]
    cdef int H = Wh.shape[1]
    cdef int G = 4 * H
    hs_arr = np.empty((B, T, H))
    cs_arr = np.empty((B, T, H))
    gates_arr = np.empty((B, T, G))
    if T == 0 or B == 0 or H == 0:
        return hs_arr, cs_arr, gates_arr
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, ::1] h = np.array(h0, dtype=np.float64, order="C")
    cdef double[:, ::1] c = np.array(c0, dtype=np.float64, order="C")
    cdef double[:, ::1] a = np.empty((B, G))
    pre_arr = np.zeros((B, T, G))
    cdef double[:, :, ::1] pre = pre_arr
    cdef int n, t, k

    with nogil:
        if D > 0:
            _gemm_rm(b'N', b'T', B * T, G, D, 1.0, &xv[0, 0, 0], D,
                     &Wi[0, 0], D, 0.0, &pre[0, 0, 0], G)
        for t in range(T):
            for n in range(B):
                for k in range(G):
                    a[n, k] = pre[n, t, k] + bv[k]
            _gemm_rm(b'N', b'T', B, G, H, 1.0, &h[0, 0], H,
                     &Wh[0, 0], H, 1.0, &a[0, 0], G)
            lstm_step_fwd(B, H, &a[0, 0], &c[0, 0], &h[0, 0],
                          &gates[0, t, 0], T * G, &hs[0, t, 0], &cs[0, t, 0], T * H)
    return hs_arr, cs_arr, gates_arr


def lstm_backward(x, W_ih, W_hh, h0, c0, hs_in, cs_in, gates_in, dhs_in, dcs_in):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] Wi = np.ascontiguousarray(W_ih, dtype=np.float64)
    cdef double[:, ::1] Wh = np.ascontiguousarray(W_hh, dtype=np.float64)
    cdef double[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, ::1] c0v = np.ascontiguousarray(c0, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, :, ::1] cs = np.ascontiguousarray(cs_in, dtype=np.float64)
    cdef double[:, :, ::1] gates = np.ascontiguousarray(gates_in, dtype=np.float64)
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef double[:, :, ::1] dcs = np.ascontiguousarray(dcs_in, dtype=np.float64)
    cdef int B = xv.shape[0]
    cdef int T = xv.shape[1]
    cdef int D = xv.shape[2]
    cdef int H = Wh.shape[1]
    cdef int G = 4 * H
    dx_arr = np.zeros((B, T, D))
    dWi_arr = np.zeros((G, D))
    dWh_arr = np.zeros((G, H))
    db_arr = np.zeros(G)
    dh_arr = np.zeros((B, H))
    dc_arr = np.zeros((B, H))
    if T == 0 or B == 0 or H == 0:
        return dx_arr, dWi_arr, dWh_arr, db_arr, dh_arr, dc_arr
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, ::1] dWi = dWi_arr
    cdef double[:, ::1] dWh = dWh_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dh_next = dh_arr
    cdef double[:, ::1] dc_next = dc_arr
    da_arr = np.empty((B, T, G))
    cdef double[:, :, ::1] da = da_arr
    hprev_arr = np.empty((B, T, H))
    cdef double[:, :, ::1] hprev = hprev_arr
    cdef int n, t, k

    with nogil:
        for n in range(B):
            for k in range(H):
                hprev[n, 0, k] = h0v[n, k]
            for t in range(1, T):
                for k in range(H):
                    hprev[n, t, k] = hs[n, t - 1, k]
        for t in range(T - 1, -1, -1):
            if t > 0:
                lstm_step_bwd(B, H, &gates[0, t, 0], T * G, &cs[0, t, 0], &dhs[0, t, 0], &dcs[0, t, 0], T * H,
                              &cs[0, t - 1, 0], T * H, &dh_next[0, 0], &dc_next[0, 0], &da[0, t, 0])
            else:
                lstm_step_bwd(B, H, &gates[0, t, 0], T * G, &cs[0, t, 0], &dhs[0, t, 0], &dcs[0, t, 0], T * H,
                              &c0v[0, 0], H, &dh_next[0, 0], &dc_next[0, 0], &da[0, t, 0])
            # dh_next(B,H) = da_t(B,G) @ W_hh(G,H); da_t rows are strided by T*G
            _gemm_rm(b'N', b'N', B, H, G, 1.0, &da[0, t, 0], T * G,
                     &Wh[0, 0], H, 0.0, &dh_next[0, 0], H)
        if D > 0:
            _gemm_rm(b'T', b'N', G, D, B * T, 1.0, &da[0, 0, 0], G,
                     &xv[0, 0, 0], D, 0.0, &dWi[0, 0], D)
            _gemm_rm(b'N', b'N', B * T, D, G, 1.0, &da[0, 0, 0], G,
                     &Wi[0, 0], D, 0.0, &dx[0, 0, 0], D)
        _gemm_rm(b'T', b'N', G, H, B * T, 1.0, &da[0, 0, 0], G,
                 &hprev[0, 0, 0], H, 0.0, &dWh[0, 0], H)
        for n in range(B):
            for t in range(T):
                for k in range(G):
                    db[k] += da[n, t, k]
    return dx_arr, dWi_arr, dWh_arr, db_arr, dh_arr, dc_arr


def css_residuals(z, double const, ar, ma):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[::1] arv = np.ascontiguousarray(ar, dtype=np.float64)
    cdef double[::1] mav = np.ascontiguousarray(ma, dtype=np.float64)
    cdef int n = zv.shape[0]
    cdef int p = arv.shape[0]
    cdef int q = mav.shape[0]
    e_arr = np.zeros(n)
    cdef double[::1] e = e_arr
    cdef int t, i, j, s
    cdef double acc
    with nogil:
        for t in range(p, n):
            acc = zv[t] - const
            for i in range(p):
                acc -= arv[i] * zv[t - 1 - i]
            for j in range(q):
                s = t - 1 - j
                if s >= p:
                    acc -= mav[j] * e[s]
            e[t] = acc
    return e_arr


def css_objective(z, double const, ar, ma):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[::1] arv = np.ascontiguousarray(ar, dtype=np.float64)
    cdef double[::1] mav = np.ascontiguousarray(ma, dtype=np.float64)
    cdef int n = zv.shape[0]
    cdef int p = arv.shape[0]
    cdef int q = mav.shape[0]
    cdef int K = 1 + p + q
    e_arr = np.zeros(n)
    de_arr = np.zeros((n, K))
    grad_arr = np.zeros(K)
    d_arr = np.zeros(K)
    cdef double[::1] e = e_arr
    cdef double[:, ::1] de = de_arr
    cdef double[::1] grad = grad_arr
    cdef double[::1] d = d_arr
    cdef int t, i, j, s, k
    cdef double acc, sse = 0.0
    with nogil:
        for t in range(p, n):
            acc = zv[t] - const
            for k in range(K):
                d[k] = 0.0
            d[0] = -1.0
            for i in range(p):
                acc -= arv[i] * zv[t - 1 - i]
                d[1 + i] = -zv[t - 1 - i]
            for j in range(q):
                s = t - 1 - j
                if s >= p:
                    acc -= mav[j] * e[s]
                    d[1 + p + j] -= e[s]
                    for k in range(K):
                        d[k] -= mav[j] * de[s, k]
            e[t] = acc
            for k in range(K):
                de[t, k] = d[k]
                grad[k] += 2.0 * acc * d[k]
            sse += acc * acc
    return sse, grad_arr
