# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coupling-flow kernels.

Same contract as :mod:`flowvi._pykernels`. Rows are processed in tiles of
``TILE`` so that every activation of every transition stays cache resident
between the forward sweep and the backward sweep; matrix products go through
BLAS ``dgemm`` and the elementwise work is fused into single loops.
Parameter gradients are accumulated tile after tile in row order, so results
are reproducible run to run.
"""
import numpy as np

from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memset
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"
DEF TILE_ROWS = 128
TILE = TILE_ROWS

cdef extern from "_vmath.h" nogil:
    void vm_tanh_exp(const double* o, double* s, double* es, long n, double sign)
    void vm_tanh_array(const double* x, double* out, long n)
    void vm_exp_array(const double* x, double* out, long n)
    void vm_bias_leaky(double* h, const double* b, long R, long H, double slope)
    void vm_leaky_grad(double* dp, const double* h, long n, double slope)
    void vm_colsum(double* g, const double* v, long R, long N)


def _vec_tanh(x):
    """Elementwise tanh through the compiled path (for tests)."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(xv.shape[0])
    cdef double[::1] o = out
    if xv.shape[0]:
        vm_tanh_array(&xv[0], &o[0], xv.shape[0])
    return out


def _vec_exp(x):
    """Elementwise exp for ``|x| <= 40`` through the compiled path (for tests)."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(xv.shape[0])
    cdef double[::1] o = out
    if xv.shape[0]:
        vm_exp_array(&xv[0], &o[0], xv.shape[0])
    return out


cdef inline void _gemm(char ta, char tb, int M, int N, int K, double alpha,
                       const double* A, int lda, const double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha op(A) op(B) + beta C, computed as the column-major C^T
    if M <= 0 or N <= 0:
        return
    dgemm(&tb, &ta, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


cdef inline void _gemm_acc(int M, int N, int K, const double* A, int lda,
                           const double* B, int ldb, double* g, double* tmp) noexcept nogil:
    # g += A^T B for a dense M x N block; a beta = 0 product plus a plain
    # add keeps OpenBLAS on its small-matrix path
    cdef Py_ssize_t q
    _gemm(b'T', b'N', M, N, K, 1.0, A, lda, B, ldb, 0.0, tmp, N)
    for q in range(<Py_ssize_t>M * N):
        g[q] += tmp[q]


cdef struct Net:
    int c0, cn, t0, tn
    int64_t oW1, ob1, oW2, ob2, oW3, ob3


cdef inline Net _net(const int64_t* L) noexcept nogil:
    cdef Net n
    n.c0 = <int>L[0]
    n.cn = <int>L[1]
    n.t0 = <int>L[2]
    n.tn = <int>L[3]
    n.oW1 = L[4]
    n.ob1 = L[5]
    n.oW2 = L[6]
    n.ob2 = L[7]
    n.oW3 = L[8]
    n.ob3 = L[9]
    return n


cdef struct Block:
    # per-transition cache of one tile
    double* xc
    double* xt
    double* s
    double* es
    double* h1
    double* h2


cdef struct Scratch:
    # o / do hold the conditioner output [s | t] per row (2 tn columns)
    double* o
    double* os
    double* do
    double* dxc
    double* gt
    const double* wt  # theta with every weight block transposed (backward products)
    double* dp1
    double* dp2


cdef inline void _bias_leaky(double* h, const double* b, int R, int H, double slope) noexcept nogil:
    vm_bias_leaky(h, b, R, H, slope)


cdef inline void _leaky_grad(double* dp, const double* h, Py_ssize_t n, double slope) noexcept nogil:
    vm_leaky_grad(dp, h, n, slope)


cdef inline void _colsum(double* g, const double* v, int R, int N) noexcept nogil:
    vm_colsum(g, v, R, N)


cdef inline void _outer_add(double* g, const double* u, int nu, const double* v, int nv) noexcept nogil:
    cdef Py_ssize_t i, m
    for i in range(nu):
        for m in range(nv):
            g[i * nv + m] += u[i] * v[m]


cdef inline void _mlp_tile(const double* th, Net n, int H, double slope, int R,
                           Block blk, Scratch sc) noexcept nogil:
    cdef int tn = n.tn
    cdef Py_ssize_t r, a
    _gemm(b'N', b'N', R, H, n.cn, 1.0, blk.xc, n.cn, th + n.oW1, H, 0.0, blk.h1, H)
    _bias_leaky(blk.h1, th + n.ob1, R, H, slope)
    _gemm(b'N', b'N', R, H, H, 1.0, blk.h1, H, th + n.oW2, H, 0.0, blk.h2, H)
    _bias_leaky(blk.h2, th + n.ob2, R, H, slope)
    _gemm(b'N', b'N', R, 2 * tn, H, 1.0, blk.h2, H, th + n.oW3, 2 * tn, 0.0, sc.o, 2 * tn)
    for r in range(R):
        for a in range(2 * tn):
            sc.o[r * 2 * tn + a] += th[n.ob3 + a]
        for a in range(tn):
            sc.os[r * tn + a] = sc.o[r * 2 * tn + a]


cdef inline void _mlp_back_tile(const double* th, Net n, int H, double slope, int R,
                                Block blk, Scratch sc, double* gacc, Py_ssize_t P,
                                bint per_sample) noexcept nogil:
    # consumes sc.do, leaves the cotangent of the conditioning inputs in sc.dxc
    cdef int tn = n.tn, cn = n.cn, no = 2 * n.tn
    cdef Py_ssize_t r, m
    cdef double* gr
    _gemm(b'N', b'N', R, H, no, 1.0, sc.do, no, sc.wt + n.oW3, H, 0.0, sc.dp2, H)
    _leaky_grad(sc.dp2, blk.h2, R * H, slope)
    _gemm(b'N', b'N', R, H, H, 1.0, sc.dp2, H, sc.wt + n.oW2, H, 0.0, sc.dp1, H)
    _leaky_grad(sc.dp1, blk.h1, R * H, slope)
    _gemm(b'N', b'N', R, cn, H, 1.0, sc.dp1, H, sc.wt + n.oW1, cn, 0.0, sc.dxc, cn)
    if gacc == NULL:
        return
    if not per_sample:
        _gemm_acc(H, no, R, blk.h2, H, sc.do, no, gacc + n.oW3, sc.gt)
        _colsum(gacc + n.ob3, sc.do, R, no)
        _gemm_acc(H, H, R, blk.h1, H, sc.dp2, H, gacc + n.oW2, sc.gt)
        _colsum(gacc + n.ob2, sc.dp2, R, H)
        _gemm_acc(cn, H, R, blk.xc, cn, sc.dp1, H, gacc + n.oW1, sc.gt)
        _colsum(gacc + n.ob1, sc.dp1, R, H)
        return
    for r in range(R):
        gr = gacc + r * P
        # W3 rows hold the s block followed by the t block, like sc.do
        _outer_add(gr + n.oW3, &blk.h2[r * H], H, &sc.do[r * no], no)
        _colsum(gr + n.ob3, &sc.do[r * no], 1, no)
        _outer_add(gr + n.oW2, &blk.h1[r * H], H, &sc.dp2[r * H], H)
        _colsum(gr + n.ob2, &sc.dp2[r * H], 1, H)
        _outer_add(gr + n.oW1, &blk.xc[r * cn], cn, &sc.dp1[r * H], H)
        _colsum(gr + n.ob1, &sc.dp1[r * H], 1, H)


cdef inline void _gather(double* xc, const double* X, int R, Py_ssize_t D, int c0, int cn) noexcept nogil:
    cdef Py_ssize_t r, a
    for r in range(R):
        for a in range(cn):
            xc[r * cn + a] = X[r * D + c0 + a]


cdef inline void _fwd_transition(const double* th, Net n, int H, double slope, int R, Py_ssize_t D,
                                 double* X, double* logdet, Block blk, Scratch sc) noexcept nogil:
    cdef int tn = n.tn
    cdef Py_ssize_t r, a, q
    cdef double xo
    _gather(blk.xc, X, R, D, n.c0, n.cn)
    _mlp_tile(th, n, H, slope, R, blk, sc)
    vm_tanh_exp(sc.os, blk.s, blk.es, R * tn, 1.0)
    for r in range(R):
        for a in range(tn):
            q = r * tn + a
            xo = X[r * D + n.t0 + a]
            blk.xt[q] = xo
            X[r * D + n.t0 + a] = xo * blk.es[q] + sc.o[r * 2 * tn + tn + a]
            logdet[r] += blk.s[q]


cdef inline void _inv_transition(const double* th, Net n, int H, double slope, int R, Py_ssize_t D,
                                 double* X, double* logdet, Block blk, Scratch sc) noexcept nogil:
    cdef int tn = n.tn
    cdef Py_ssize_t r, a, q
    cdef double xn
    _gather(blk.xc, X, R, D, n.c0, n.cn)
    _mlp_tile(th, n, H, slope, R, blk, sc)
    vm_tanh_exp(sc.os, blk.s, blk.es, R * tn, -1.0)
    for r in range(R):
        for a in range(tn):
            q = r * tn + a
            xn = (X[r * D + n.t0 + a] - sc.o[r * 2 * tn + tn + a]) * blk.es[q]
            blk.xt[q] = xn
            X[r * D + n.t0 + a] = xn
            logdet[r] -= blk.s[q]


cdef inline void _fwd_back(const double* th, Net n, int H, double slope, int R, Py_ssize_t D,
                           double* G, double c, Block blk, Scratch sc, double* gacc,
                           Py_ssize_t P, bint per_sample) noexcept nogil:
    cdef int tn = n.tn, cn = n.cn
    cdef Py_ssize_t r, a, q
    cdef double s, dyt, ds
    for r in range(R):
        for a in range(tn):
            q = r * tn + a
            s = blk.s[q]
            dyt = G[r * D + n.t0 + a]
            ds = dyt * blk.xt[q] * blk.es[q] + c
            sc.do[2 * r * tn + a] = ds * (1.0 - s * s)
            sc.do[2 * r * tn + tn + a] = dyt
            G[r * D + n.t0 + a] = dyt * blk.es[q]
    _mlp_back_tile(th, n, H, slope, R, blk, sc, gacc, P, per_sample)
    for r in range(R):
        for a in range(cn):
            G[r * D + n.c0 + a] += sc.dxc[r * cn + a]


cdef inline void _inv_back(const double* th, Net n, int H, double slope, int R, Py_ssize_t D,
                           double* G, double c, Block blk, Scratch sc, double* gacc,
                           Py_ssize_t P, bint per_sample, bint forward_cache) noexcept nogil:
    # forward_cache: blk was filled by _fwd_transition (es = exp(+s)); the
    # inverse pass through T(x) revisits exactly those activations
    cdef int tn = n.tn, cn = n.cn
    cdef Py_ssize_t r, a, q
    cdef double s, dxt, ds, ems
    for r in range(R):
        for a in range(tn):
            q = r * tn + a
            s = blk.s[q]
            ems = 1.0 / blk.es[q] if forward_cache else blk.es[q]
            dxt = G[r * D + n.t0 + a]
            ds = -dxt * blk.xt[q] - c
            sc.do[2 * r * tn + a] = ds * (1.0 - s * s)
            sc.do[2 * r * tn + tn + a] = -dxt * ems
            G[r * D + n.t0 + a] = dxt * ems
    _mlp_back_tile(th, n, H, slope, R, blk, sc, gacc, P, per_sample)
    for r in range(R):
        for a in range(cn):
            G[r * D + n.c0 + a] += sc.dxc[r * cn + a]


cdef class _Workspace:
    """Tile caches for ``T`` transitions plus shared scratch."""
    cdef double* mem
    cdef Block* blocks
    cdef Scratch sc
    cdef object wt

    def __cinit__(self, int T, int H, int nmax):
        cdef Py_ssize_t R = TILE_ROWS
        cdef Py_ssize_t total = T * R * (4 * nmax + 2 * H) + R * (6 * nmax + 2 * H) + H * (H + 2 * nmax)
        cdef Py_ssize_t j
        cdef double* p
        self.mem = <double*>malloc(sizeof(double) * total)
        self.blocks = <Block*>malloc(sizeof(Block) * T)
        if self.mem == NULL or self.blocks == NULL:
            raise MemoryError()
        memset(self.mem, 0, sizeof(double) * total)
        p = self.mem
        for j in range(T):
            self.blocks[j].xc = p
            p += R * nmax
            self.blocks[j].xt = p
            p += R * nmax
            self.blocks[j].s = p
            p += R * nmax
            self.blocks[j].es = p
            p += R * nmax
            self.blocks[j].h1 = p
            p += R * H
            self.blocks[j].h2 = p
            p += R * H
        self.sc.o = p
        p += 2 * R * nmax
        self.sc.os = p
        p += R * nmax
        self.sc.do = p
        p += 2 * R * nmax
        self.sc.dxc = p
        p += R * nmax
        self.sc.dp1 = p
        p += R * H
        self.sc.dp2 = p
        p += R * H
        self.sc.gt = p

    def transpose_weights(self, theta, layout, int H):
        """Keep a copy of ``theta`` with W1, W2, W3 of every transition transposed."""
        wt = np.array(theta, copy=True)
        for c0, cn, t0, tn, oW1, ob1, oW2, ob2, oW3, ob3 in layout.tolist():
            for off, rows, cols in ((oW1, cn, H), (oW2, H, H), (oW3, H, 2 * tn)):
                wt[off:off + rows * cols] = theta[off:off + rows * cols].reshape(rows, cols).T.ravel()
        cdef const double[::1] v = wt
        self.wt = wt
        self.sc.wt = &v[0]

    def __dealloc__(self):
        free(self.mem)
        free(self.blocks)


def _prepare(theta, layout, X):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    layout = np.ascontiguousarray(layout, dtype=np.int64)
    X = np.array(X, dtype=np.float64, order="C", copy=True)
    if X.ndim != 2:
        raise ValueError("expected a 2-d sample matrix")
    if layout.ndim != 2 or layout.shape[1] != 10:
        raise ValueError("layout must be a (T, 10) table")
    nmax = int(max(layout[:, 1].max(), layout[:, 3].max()))
    return theta, layout, X, nmax


def forward(theta, layout, int hidden, double slope, X):
    """Push rows of ``X`` through all transitions; returns ``(Y, log_det)``."""
    theta, layout, Y, nmax = _prepare(theta, layout, X)
    logdet = np.zeros(Y.shape[0])
    ws = _Workspace(1, hidden, nmax)
    _run(theta, layout, hidden, slope, Y, logdet, None, 0.0, 0.0, None, ws, 0, False)
    return Y, logdet


def inverse(theta, layout, int hidden, double slope, Y):
    """Invert :func:`forward`; ``log_det`` is ``log|det dT^{-1}|``."""
    theta, layout, X, nmax = _prepare(theta, layout, Y)
    logdet = np.zeros(X.shape[0])
    ws = _Workspace(1, hidden, nmax)
    _run(theta, layout, hidden, slope, X, logdet, None, 0.0, 0.0, None, ws, 1, False)
    return X, logdet


def forward_vjp(theta, layout, int hidden, double slope, X, dY, double logdet_coef, per_sample=False):
    """Gradient of ``sum_i dY_i . Y_i + logdet_coef * log_det_i``.

    Returns ``(Y, log_det, grad_theta, dX)``.
    """
    theta, layout, Y, nmax = _prepare(theta, layout, X)
    G = np.array(dY, dtype=np.float64, order="C", copy=True)
    if G.shape != Y.shape:
        raise ValueError("dY must match X in shape")
    S = Y.shape[0]
    grad = np.zeros((S, theta.size)) if per_sample else np.zeros(theta.size)
    logdet = np.zeros(S)
    ws = _Workspace(layout.shape[0], hidden, nmax)
    ws.transpose_weights(theta, layout, hidden)
    _run(theta, layout, hidden, slope, Y, logdet, G, 0.0, logdet_coef,
         grad.reshape(-1), ws, 2, bool(per_sample))
    return Y, logdet, grad, G


def inverse_vjp(theta, layout, int hidden, double slope, Y, dX=None, double base_coef=0.0,
                double logdet_coef=0.0, param_grad=True, per_sample=False):
    """Gradient of ``sum_i dX_i . X_i + base_coef * log N(X_i) + logdet_coef * log_det_i``.

    ``X = T^{-1}(Y)``. Returns ``(X, log_det, grad_theta or None, dY)``.
    """
    theta, layout, X, nmax = _prepare(theta, layout, Y)
    S = X.shape[0]
    if dX is None:
        G = np.zeros_like(X)
    else:
        G = np.array(dX, dtype=np.float64, order="C", copy=True)
        if G.shape != X.shape:
            raise ValueError("dX must match Y in shape")
    grad = None
    if param_grad:
        grad = np.zeros((S, theta.size)) if per_sample else np.zeros(theta.size)
    logdet = np.zeros(S)
    ws = _Workspace(layout.shape[0], hidden, nmax)
    ws.transpose_weights(theta, layout, hidden)
    _run(theta, layout, hidden, slope, X, logdet, G, base_coef, logdet_coef,
         None if grad is None else grad.reshape(-1), ws, 3, bool(per_sample))
    return X, logdet, grad, G


def reparam_vjp(theta, layout, int hidden, double slope, E, score_fn, bint stl, per_sample=False):
    """Reparameterization gradient of ``sum_i log p(Z_i) - log q(Z_i)``, ``Z = T(E)``.

    ``score_fn(Z_rows) -> (log_p, grad_z log_p)`` is called once per tile.
    With ``stl`` the density parameters are held fixed: ``grad_z log q`` is
    obtained by back-propagating through the inverse pass (which, at
    ``Z = T(E)``, revisits the cached forward activations) and only the path
    through ``Z`` is differentiated. Returns ``(Z, log_det, log_p, grad)``.
    """
    theta, layout, Z, nmax = _prepare(theta, layout, E)
    Ein = np.array(Z, copy=True)
    cdef Py_ssize_t S = Z.shape[0], D = Z.shape[1], T = layout.shape[0]
    cdef Py_ssize_t P = theta.shape[0]
    grad = np.zeros((S, P)) if per_sample else np.zeros(P)
    logdet = np.zeros(S)
    logp = np.empty(S)
    Gbuf = np.empty((TILE_ROWS, D))
    Qbuf = np.empty((TILE_ROWS, D))
    ws = _Workspace(T, hidden, nmax)
    ws.transpose_weights(theta, layout, hidden)
    cdef double[:, ::1] Zv = Z
    cdef double[::1] ldv = logdet
    cdef double[::1] gv = grad.reshape(-1)
    cdef double[:, ::1] Gv = Gbuf
    cdef double[:, ::1] Qv = Qbuf
    cdef const double[::1] thv = theta
    cdef const int64_t[:, ::1] Lv = layout
    cdef const double* th = &thv[0]
    cdef const int64_t* L = &Lv[0, 0]
    cdef Scratch sc = ws.sc
    cdef bint ps = bool(per_sample)
    cdef Py_ssize_t start, j
    cdef int R
    cdef double c = 0.0 if stl else 1.0
    cdef double* Xt
    cdef double* gacc
    for start in range(0, S, TILE_ROWS):
        R = <int>(S - start if S - start < TILE_ROWS else TILE_ROWS)
        Xt = &Zv[start, 0]
        gacc = &gv[0] + (start * P if ps else 0)
        with nogil:
            for j in range(T):
                _fwd_transition(th, _net(L + 10 * j), hidden, slope, R, D, Xt, &ldv[start],
                                ws.blocks[j], sc)
        lp, sp = score_fn(Z[start:start + R])
        logp[start:start + R] = lp
        Gbuf[:R] = sp
        if stl:
            np.negative(Ein[start:start + R], out=Qbuf[:R])
            with nogil:
                for j in range(T):
                    _inv_back(th, _net(L + 10 * j), hidden, slope, R, D, &Qv[0, 0], 1.0,
                              ws.blocks[j], sc, NULL, P, False, True)
            Gbuf[:R] -= Qbuf[:R]
        with nogil:
            for j in range(T - 1, -1, -1):
                _fwd_back(th, _net(L + 10 * j), hidden, slope, R, D, &Gv[0, 0], c,
                          ws.blocks[j], sc, gacc, P, ps)
    return Z, logdet, logp, grad


cdef int _run(const double[::1] theta, const int64_t[:, ::1] layout, int H, double slope,
              double[:, ::1] X, double[::1] logdet, object G_obj, double base, double c,
              object grad_obj, _Workspace ws, int mode, bint per_sample) except -1:
    # mode: 0 forward, 1 inverse, 2 forward + vjp, 3 inverse + vjp
    cdef double[:, ::1] G
    cdef double[::1] grad
    cdef double* gptr = NULL
    cdef double* Gt = NULL
    cdef double* gacc = NULL
    cdef Py_ssize_t S = X.shape[0], D = X.shape[1], T = layout.shape[0]
    cdef Py_ssize_t P = theta.shape[0]
    cdef Py_ssize_t start, j, q
    cdef int R
    cdef const double* th = &theta[0]
    cdef const int64_t* L = &layout[0, 0]
    cdef double* Xt
    cdef double* ld
    cdef Scratch sc = ws.sc
    if S == 0:
        return 0
    if mode >= 2:
        G = G_obj
        if grad_obj is not None:
            grad = grad_obj
            gptr = &grad[0]
    with nogil:
        for start in range(0, S, TILE_ROWS):
            R = <int>(S - start if S - start < TILE_ROWS else TILE_ROWS)
            Xt = &X[start, 0]
            ld = &logdet[start]
            if mode == 0:
                for j in range(T):
                    _fwd_transition(th, _net(L + 10 * j), H, slope, R, D, Xt, ld, ws.blocks[0], sc)
            elif mode == 1:
                for j in range(T - 1, -1, -1):
                    _inv_transition(th, _net(L + 10 * j), H, slope, R, D, Xt, ld, ws.blocks[0], sc)
            else:
                Gt = &G[start, 0]
                if gptr != NULL:
                    gacc = gptr + (start * P if per_sample else 0)
                if mode == 2:
                    for j in range(T):
                        _fwd_transition(th, _net(L + 10 * j), H, slope, R, D, Xt, ld, ws.blocks[j], sc)
                    for j in range(T - 1, -1, -1):
                        _fwd_back(th, _net(L + 10 * j), H, slope, R, D, Gt, c, ws.blocks[j], sc,
                                  gacc, P, per_sample)
                else:
                    for j in range(T - 1, -1, -1):
                        _inv_transition(th, _net(L + 10 * j), H, slope, R, D, Xt, ld, ws.blocks[j], sc)
                    if base != 0.0:
                        for q in range(R * D):
                            Gt[q] -= base * Xt[q]
                    for j in range(T):
                        _inv_back(th, _net(L + 10 * j), H, slope, R, D, Gt, c, ws.blocks[j], sc,
                                  gacc, P, per_sample, False)
    return 0
