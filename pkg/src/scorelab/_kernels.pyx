# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the affine score family.

Random draws follow exactly the (key, lane, block) mapping of ``_rng``; the
pure-numpy twins live in ``_fallback``.  Every kernel releases the GIL and
touches only its own lanes, so callers may split lanes across threads.
"""

from libc.math cimport sqrt, log, cos, sin, exp, expm1, isfinite
from libc.stdint cimport uint32_t, uint64_t, int64_t
from libc.stdlib cimport malloc, free

cdef double TWO_PI = 6.283185307179586
cdef double TWO_M53 = 1.1102230246251565e-16


cdef inline void _philox(uint64_t key, uint64_t lane, uint64_t block,
                         uint64_t* a, uint64_t* b) noexcept nogil:
    cdef uint32_t c0 = <uint32_t>block
    cdef uint32_t c1 = <uint32_t>(block >> 32)
    cdef uint32_t c2 = <uint32_t>lane
    cdef uint32_t c3 = <uint32_t>(lane >> 32)
    cdef uint32_t k0 = <uint32_t>key
    cdef uint32_t k1 = <uint32_t>(key >> 32)
    cdef uint64_t p0, p1
    cdef uint32_t n0, n1, n2, n3
    cdef int r
    for r in range(10):
        p0 = <uint64_t>0xD2511F53 * c0
        p1 = <uint64_t>0xCD9E8D57 * c2
        n0 = (<uint32_t>(p1 >> 32)) ^ c1 ^ k0
        n1 = <uint32_t>p1
        n2 = (<uint32_t>(p0 >> 32)) ^ c3 ^ k1
        n3 = <uint32_t>p0
        c0 = n0
        c1 = n1
        c2 = n2
        c3 = n3
        k0 = k0 + <uint32_t>0x9E3779B9
        k1 = k1 + <uint32_t>0xBB67AE85
    a[0] = ((<uint64_t>c1) << 32) | c0
    b[0] = ((<uint64_t>c3) << 32) | c2


cdef inline void _uniform_pair(uint64_t key, uint64_t lane, uint64_t block,
                               double* ua, double* ub) noexcept nogil:
    cdef uint64_t a, b
    _philox(key, lane, block, &a, &b)
    ua[0] = <double>(a >> 11) * TWO_M53
    ub[0] = <double>(b >> 11) * TWO_M53


cdef inline void _normal_pair(uint64_t key, uint64_t lane, uint64_t block,
                              double* z0, double* z1) noexcept nogil:
    cdef double ua, ub, r, phi
    _uniform_pair(key, lane, block, &ua, &ub)
    r = sqrt(-2.0 * log(1.0 - ua))
    phi = TWO_PI * ub
    z0[0] = r * cos(phi)
    z1[0] = r * sin(phi)


cdef inline void _normals(uint64_t key, uint64_t lane, uint64_t first,
                          int nb, double* buf) noexcept nogil:
    cdef int j
    for j in range(nb):
        _normal_pair(key, lane, first + j, &buf[2 * j], &buf[2 * j + 1])


def normal_pairs(uint64_t key, const int64_t[::1] lanes, const int64_t[::1] blocks,
                 double[::1] z0, double[::1] z1):
    """Elementwise normal pairs; used to cross-check the numpy streams."""
    cdef Py_ssize_t i
    with nogil:
        for i in range(lanes.shape[0]):
            _normal_pair(key, <uint64_t>lanes[i], <uint64_t>blocks[i], &z0[i], &z1[i])


def em_affine(uint64_t key_init, uint64_t key_step, const int64_t[::1] lanes,
              const double[:, ::1] theta, double t_score, double gamma,
              int64_t n_steps, const int64_t[::1] record,
              double[:, ::1] out, double[:, :, ::1] rec):
    """Euler-Maruyama backward run for s(t, th, y) = -y + exp(-t) th.

    Y_{k+1} = Y_k + gamma (Y_k + 2 s(t_score - k gamma, th, Y_k)) + sqrt(2 gamma) Z.
    Returns the number of paths that left the finite range.
    """
    cdef Py_ssize_t n = lanes.shape[0]
    cdef int d = theta.shape[1]
    cdef int nb = (d + 1) // 2
    cdef Py_ssize_t nrec = record.shape[0]
    cdef Py_ssize_t i, ri
    cdef int c
    cdef int64_t k
    cdef uint64_t lane
    cdef double m, s, noise = sqrt(2.0 * gamma)
    cdef int bad = 0
    cdef double* buf = <double*>malloc(2 * nb * sizeof(double))
    cdef double* y = <double*>malloc(d * sizeof(double))
    if buf == NULL or y == NULL:
        free(buf)
        free(y)
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                lane = <uint64_t>lanes[i]
                _normals(key_init, lane, 0, nb, buf)
                for c in range(d):
                    y[c] = buf[c]
                ri = 0
                if ri < nrec and record[ri] == 0:
                    for c in range(d):
                        rec[ri, i, c] = y[c]
                    ri += 1
                for k in range(n_steps):
                    m = exp(-(t_score - k * gamma))
                    _normals(key_step, lane, <uint64_t>(k * nb), nb, buf)
                    for c in range(d):
                        s = -y[c] + m * theta[i, c]
                        y[c] = y[c] + gamma * (y[c] + 2.0 * s) + noise * buf[c]
                    if ri < nrec and record[ri] == k + 1:
                        for c in range(d):
                            rec[ri, i, c] = y[c]
                        ri += 1
                for c in range(d):
                    out[i, c] = y[c]
                    if not isfinite(y[c]):
                        bad += 1
                        break
    finally:
        free(buf)
        free(y)
    return bad


def sgld_faithful(uint64_t key_tau, uint64_t key_x0, uint64_t key_z, uint64_t key_xi,
                  const int64_t[::1] lanes, const double[:, ::1] theta0,
                  const double[::1] mu, double T, double eps, double lam,
                  double noise, int64_t n_iters, const int64_t[::1] record,
                  double[:, ::1] out, double[:, :, ::1] rec):
    """SGLD with the Gaussian-example stochastic gradient, one (tau, x0, z) per step.

    H = 2 m (sigma z + sigma^2 (-(m x0 + sigma z) + m theta)), the
    division-free form of 2 sigma^2 m (z / sigma - m x0 - sigma z + m theta).
    """
    cdef Py_ssize_t n = lanes.shape[0]
    cdef int d = theta0.shape[1]
    cdef int nb = (d + 1) // 2
    cdef Py_ssize_t nrec = record.shape[0]
    cdef Py_ssize_t i, ri
    cdef int c
    cdef int64_t it
    cdef uint64_t lane
    cdef double ua, ub, tau, m, s2, s, x0, h
    cdef int bad = 0
    cdef double* th = <double*>malloc(d * sizeof(double))
    cdef double* bx = <double*>malloc(2 * nb * sizeof(double))
    cdef double* bz = <double*>malloc(2 * nb * sizeof(double))
    cdef double* bxi = <double*>malloc(2 * nb * sizeof(double))
    if th == NULL or bx == NULL or bz == NULL or bxi == NULL:
        free(th); free(bx); free(bz); free(bxi)
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                lane = <uint64_t>lanes[i]
                for c in range(d):
                    th[c] = theta0[i, c]
                ri = 0
                if ri < nrec and record[ri] == 0:
                    for c in range(d):
                        rec[ri, i, c] = th[c]
                    ri += 1
                for it in range(n_iters):
                    _uniform_pair(key_tau, lane, <uint64_t>it, &ua, &ub)
                    tau = eps + (T - eps) * ua
                    m = exp(-tau)
                    s2 = -expm1(-2.0 * tau)
                    s = sqrt(s2)
                    _normals(key_x0, lane, <uint64_t>(it * nb), nb, bx)
                    _normals(key_z, lane, <uint64_t>(it * nb), nb, bz)
                    _normals(key_xi, lane, <uint64_t>(it * nb), nb, bxi)
                    for c in range(d):
                        x0 = mu[c] + bx[c]
                        h = 2.0 * m * (s * bz[c] + s2 * (-(m * x0 + s * bz[c]) + m * th[c]))
                        th[c] = th[c] - lam * h + noise * bxi[c]
                    if ri < nrec and record[ri] == it + 1:
                        for c in range(d):
                            rec[ri, i, c] = th[c]
                        ri += 1
                for c in range(d):
                    out[i, c] = th[c]
                    if not isfinite(th[c]):
                        bad += 1
                        break
    finally:
        free(th); free(bx); free(bz); free(bxi)
    return bad


def sgld_collapsed(uint64_t key_tau, uint64_t key_seg, const int64_t[::1] lanes,
                   const double[:, ::1] theta0, const double[::1] mu, double T,
                   double eps, double lam, double beta_term, int64_t n_iters,
                   const int64_t[::1] stops, double[:, ::1] out, double[:, :, ::1] rec):
    """SGLD sampled exactly in law from the tau sequence alone.

    Given tau_n the update is theta' = a theta + c mu + e with
    a = 1 - 2 lam sigma^2 m^2, c = 2 lam sigma^2 m^2 and
    e ~ N(0, (4 lam^2 sigma^2 m^4 + 2 lam / beta) I).  Products and variances
    are accumulated between consecutive ``stops`` (sorted, ending at n_iters)
    and one Gaussian per stop closes the segment, so the joint law at the
    stops is exact.  Step ``it`` takes its tau from output ``it % 2`` of
    Philox block ``it // 2``.  ``rec[j]`` receives the iterate at ``stops[j]``.
    """
    cdef Py_ssize_t n = lanes.shape[0]
    cdef int d = theta0.shape[1]
    cdef int nb = (d + 1) // 2
    cdef Py_ssize_t nstop = stops.shape[0]
    cdef Py_ssize_t i, si
    cdef int c
    cdef int64_t it
    cdef uint64_t lane
    cdef double ua = 0.0, ub = 0.0, tau, q, w, a, A, Ms, V, sd
    cdef int bad = 0
    cdef double* th = <double*>malloc(d * sizeof(double))
    cdef double* buf = <double*>malloc(2 * nb * sizeof(double))
    if th == NULL or buf == NULL:
        free(th); free(buf)
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                lane = <uint64_t>lanes[i]
                for c in range(d):
                    th[c] = theta0[i, c]
                A = 1.0
                Ms = 0.0
                V = 0.0
                si = 0
                for it in range(n_iters):
                    # steps 2j and 2j+1 share Philox block j
                    if (it & 1) == 0:
                        _uniform_pair(key_tau, lane, <uint64_t>(it >> 1), &ua, &ub)
                        tau = eps + (T - eps) * ua
                    else:
                        tau = eps + (T - eps) * ub
                    q = exp(-2.0 * tau)
                    w = q * (1.0 - q)
                    a = 1.0 - 2.0 * lam * w
                    A = a * A
                    # A would otherwise stick at the smallest subnormal, which is slow
                    if A < 1e-300:
                        A = 0.0
                    Ms = a * Ms + 2.0 * lam * w
                    V = a * a * V + 4.0 * lam * lam * w * q + beta_term
                    if si < nstop and stops[si] == it + 1:
                        _normals(key_seg, lane, <uint64_t>(si * nb), nb, buf)
                        sd = sqrt(V)
                        for c in range(d):
                            th[c] = A * th[c] + Ms * mu[c] + sd * buf[c]
                            rec[si, i, c] = th[c]
                        A = 1.0
                        Ms = 0.0
                        V = 0.0
                        si += 1
                for c in range(d):
                    out[i, c] = th[c]
                    if not isfinite(th[c]):
                        bad += 1
                        break
    finally:
        free(th); free(buf)
    return bad
