"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``.

Same signatures, same (key, lane, block) draw mapping; results agree with
the compiled core up to floating-point rounding.  Loops run over time and
vectorize over lanes, except ``sgld_collapsed`` which also vectorizes over
steps in chunks.
"""

from __future__ import annotations

import numpy as np

from ._rng import normal_pair, normals, uniform_pair

_CHUNK = 1 << 14


def normal_pairs(key, lanes, blocks, z0, z1):
    a, b = normal_pair(key, np.asarray(lanes, dtype=np.uint64), np.asarray(blocks, dtype=np.uint64))
    z0[:] = a
    z1[:] = b


def _lanes(lanes):
    return np.asarray(lanes, dtype=np.int64).astype(np.uint64)


def _count_bad(y):
    return int(np.count_nonzero(~np.all(np.isfinite(y), axis=1)))


def em_affine(key_init, key_step, lanes, theta, t_score, gamma, n_steps, record, out, rec):
    lanes = _lanes(lanes)
    theta = np.asarray(theta)
    d = theta.shape[1]
    nb = (d + 1) // 2
    record = list(np.asarray(record))
    noise = np.sqrt(2.0 * gamma)
    y = normals(key_init, lanes, 0, d)
    ri = 0
    if ri < len(record) and record[ri] == 0:
        rec[ri] = y
        ri += 1
    for k in range(int(n_steps)):
        m = np.exp(-(t_score - k * gamma))
        z = normals(key_step, lanes, k * nb, d)
        s = -y + m * theta
        y = y + gamma * (y + 2.0 * s) + noise * z
        if ri < len(record) and record[ri] == k + 1:
            rec[ri] = y
            ri += 1
    out[:] = y
    return _count_bad(y)


def sgld_faithful(key_tau, key_x0, key_z, key_xi, lanes, theta0, mu, T, eps, lam, noise,
                  n_iters, record, out, rec):
    lanes = _lanes(lanes)
    th = np.array(theta0, dtype=float)
    mu = np.asarray(mu)
    d = th.shape[1]
    nb = (d + 1) // 2
    record = list(np.asarray(record))
    ri = 0
    if ri < len(record) and record[ri] == 0:
        rec[ri] = th
        ri += 1
    for it in range(int(n_iters)):
        ua, _ = uniform_pair(key_tau, lanes, it)
        tau = (eps + (T - eps) * ua)[:, None]
        m = np.exp(-tau)
        s2 = -np.expm1(-2.0 * tau)
        s = np.sqrt(s2)
        x0 = mu + normals(key_x0, lanes, it * nb, d)
        z = normals(key_z, lanes, it * nb, d)
        xi = normals(key_xi, lanes, it * nb, d)
        h = 2.0 * m * (s * z + s2 * (-(m * x0 + s * z) + m * th))
        th = th - lam * h + noise * xi
        if ri < len(record) and record[ri] == it + 1:
            rec[ri] = th
            ri += 1
    out[:] = th
    return _count_bad(th)


def _segment(key_tau, lanes, start, stop, T, eps, lam, beta_term):
    """Aggregate (A, Ms, V) over steps [start, stop) for every lane."""
    A = np.ones(lanes.size)
    Ms = np.zeros(lanes.size)
    V = np.zeros(lanes.size)
    for lo in range(start, stop, _CHUNK):
        hi = min(stop, lo + _CHUNK)
        steps = np.arange(lo, hi, dtype=np.uint64)
        ua, ub = uniform_pair(key_tau, lanes[:, None], (steps >> np.uint64(1))[None, :])
        u = np.where((steps & np.uint64(1)) == 0, ua, ub)
        tau = eps + (T - eps) * u
        q = np.exp(-2.0 * tau)
        w = q * (1.0 - q)
        a = 1.0 - 2.0 * lam * w
        # suffix[:, k] = prod_{j > k} a_j within the chunk
        suffix = np.ones_like(a)
        suffix[:, :-1] = np.cumprod(a[:, :0:-1], axis=1)[:, ::-1]
        a_chunk = suffix[:, 0] * a[:, 0]
        ms_chunk = np.sum(suffix * (2.0 * lam * w), axis=1)
        v_chunk = np.sum(suffix**2 * (4.0 * lam * lam * w * q + beta_term), axis=1)
        Ms = a_chunk * Ms + ms_chunk
        V = a_chunk**2 * V + v_chunk
        A = a_chunk * A
    return A, Ms, V


def sgld_collapsed(key_tau, key_seg, lanes, theta0, mu, T, eps, lam, beta_term, n_iters,
                   stops, out, rec):
    lanes = _lanes(lanes)
    th = np.array(theta0, dtype=float)
    mu = np.asarray(mu)
    d = th.shape[1]
    nb = (d + 1) // 2
    prev = 0
    for si, stop in enumerate(np.asarray(stops)):
        A, Ms, V = _segment(key_tau, lanes, prev, int(stop), T, eps, lam, beta_term)
        g = normals(key_seg, lanes, si * nb, d)
        th = A[:, None] * th + Ms[:, None] * mu + np.sqrt(V)[:, None] * g
        rec[si] = th
        prev = int(stop)
    out[:] = th
    return _count_bad(th)
