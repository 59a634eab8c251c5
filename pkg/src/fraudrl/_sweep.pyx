# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled two-stage threshold sweep.

Mirrors ``fraudrl._sweep_py.sweep_two_stage`` exactly: same candidate
order, same integer accumulation, same tie rule. A candidate replaces the
incumbent when it is strictly more precise, or equally precise with a
strictly lower t0.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline bint _consider(
    cnp.int64_t ff, cnp.int64_t bb, cnp.int64_t f0, cnp.int64_t b0,
    double t0, double t1, cnp.int64_t f_total,
    const double[::1] thetas, double[::1] best, double[::1] t0_v, double[::1] t1_v,
    cnp.int64_t[::1] f_v, cnp.int64_t[::1] b_v, cnp.int64_t[::1] f0_v, cnp.int64_t[::1] b0_v,
) noexcept nogil:
    cdef Py_ssize_t j
    cdef double recall, prec
    cdef bint updated = False
    recall = (<double>ff) / (<double>f_total) if f_total > 0 else 1.0
    prec = (<double>ff) / (<double>bb) if bb > 0 else 1.0
    for j in range(thetas.shape[0]):
        if recall >= thetas[j] and (
            prec > best[j] or (prec == best[j] and t0 < t0_v[j])
        ):
            best[j] = prec
            t0_v[j] = t0
            t1_v[j] = t1
            f_v[j] = ff
            b_v[j] = bb
            f0_v[j] = f0
            b0_v[j] = b0
            updated = True
    return updated


cdef inline bint _settled(double bound, double[::1] best) noexcept nogil:
    # True when no candidate with precision <= bound can replace any incumbent;
    # later candidates win ties on t0, so the bound must be strictly below
    cdef Py_ssize_t j
    for j in range(best.shape[0]):
        if best[j] < 0 or bound >= best[j]:
            return False
    return True


def sweep_two_stage(
    const double[::1] p0,
    const double[::1] p1,
    const cnp.int64_t[::1] fraud_w,
    const cnp.int64_t[::1] w,
    const double[::1] thetas,
):
    cdef Py_ssize_t n = p0.shape[0]
    cdef Py_ssize_t n_theta = thetas.shape[0]
    cdef Py_ssize_t i, k, pos, n0 = 0
    cdef cnp.int64_t f_total = 0
    for i in range(n):
        f_total += fraud_w[i]

    order0_arr = np.argsort(-np.asarray(p0), kind="stable").astype(np.int64)
    order1_arr = np.argsort(-np.asarray(p1), kind="stable").astype(np.int64)
    rank1_arr = np.empty(n, dtype=np.int64)
    rank1_arr[order1_arr] = np.arange(n, dtype=np.int64)
    # stage-1 walk runs over arrays laid out in descending-p1 order
    cdef cnp.int64_t[::1] order0 = order0_arr
    cdef cnp.int64_t[::1] rank1 = rank1_arr
    cdef double[::1] p1_s = np.ascontiguousarray(np.asarray(p1)[order1_arr])
    cdef cnp.int64_t[::1] fw_s = np.ascontiguousarray(np.asarray(fraud_w)[order1_arr])
    cdef cnp.int64_t[::1] w_s = np.ascontiguousarray(np.asarray(w)[order1_arr])
    cdef unsigned char[::1] blocked0 = np.zeros(n, dtype=np.uint8)

    best = np.full(n_theta, -1.0)
    out_t0 = np.full(n_theta, np.nan)
    out_t1 = np.full(n_theta, np.nan)
    out_f = np.zeros(n_theta, dtype=np.int64)
    out_b = np.zeros(n_theta, dtype=np.int64)
    out_f0 = np.zeros(n_theta, dtype=np.int64)
    out_b0 = np.zeros(n_theta, dtype=np.int64)
    cdef double[::1] best_v = best
    cdef double[::1] t0_v = out_t0
    cdef double[::1] t1_v = out_t1
    cdef cnp.int64_t[::1] f_v = out_f
    cdef cnp.int64_t[::1] b_v = out_b
    cdef cnp.int64_t[::1] f0_v = out_f0
    cdef cnp.int64_t[::1] b0_v = out_b0

    cdef cnp.int64_t f0 = 0, b0 = 0, f1, b1
    cdef double t0 = INFINITY, prev, v
    cdef bint have_prev, first = True
    # NaN sorts last and is never a cut; only the finite prefix is walked
    for i in range(n):
        if p0[i] == p0[i]:
            n0 += 1
    pos = 0
    with nogil:
        while True:
            if not first:
                if pos >= n0:
                    break
                # lower t0 to the next distinct Pre-auth score
                t0 = p0[order0[pos]]
                while pos < n and p0[order0[pos]] == t0:
                    k = order0[pos]
                    blocked0[rank1[k]] = 1
                    f0 += fraud_w[k]
                    b0 += w[k]
                    pos += 1
            first = False

            # Any extension of (F, B) has precision <= f_total / (B + unblocked fraud);
            # division of exact integers is monotone so the skip is exact.
            if f_total > 0 and n_theta > 0 and _settled(
                (<double>f_total) / (<double>(b0 + f_total - f0)), best_v
            ):
                break
            _consider(f0, b0, f0, b0, t0, INFINITY, f_total, thetas,
                      best_v, t0_v, t1_v, f_v, b_v, f0_v, b0_v)
            f1 = 0
            b1 = 0
            have_prev = False
            prev = INFINITY
            for i in range(n):
                if blocked0[i]:
                    continue
                v = p1_s[i]
                if v != v:
                    break
                if have_prev and v != prev:
                    _consider(f0 + f1, b0 + b1, f0, b0, t0, prev, f_total, thetas,
                              best_v, t0_v, t1_v, f_v, b_v, f0_v, b0_v)
                    if f_total > 0 and n_theta > 0 and _settled(
                        (<double>f_total) / (<double>(b0 + b1 + f_total - f0 - f1)), best_v
                    ):
                        have_prev = False
                        break
                f1 += fw_s[i]
                b1 += w_s[i]
                prev = v
                have_prev = True
            if have_prev:
                _consider(f0 + f1, b0 + b1, f0, b0, t0, prev, f_total, thetas,
                          best_v, t0_v, t1_v, f_v, b_v, f0_v, b0_v)
    return out_t0, out_t1, out_f, out_b, out_f0, out_b0, int(f_total)
