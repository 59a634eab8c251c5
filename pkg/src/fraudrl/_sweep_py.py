"""Numpy implementation of the two-stage threshold sweep.

Used when the compiled extension is unavailable or disabled. For each
candidate Pre-auth threshold (``+inf`` first, then distinct scores in
descending order) the residual transactions are ranked by Post-auth score
and every distinct Post-auth cut is scored in one vectorised pass.

Ties in precision go to the lower t0, so equally precise decisions are
taken as early as possible; within one t0 the higher t1 is kept.
"""

from __future__ import annotations

import numpy as np


def _settled(bound: float, best: np.ndarray) -> bool:
    """True when no candidate with precision <= bound can replace any incumbent.

    Later candidates have lower t0 and win ties, so equality is not enough.
    """
    return bool(np.all(best >= 0) and np.all(bound < best))


def sweep_two_stage(p0, p1, fraud_w, w, thetas):
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    fraud_w = np.asarray(fraud_w, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    thetas = np.asarray(thetas, dtype=np.float64)
    n = len(p0)
    n_theta = len(thetas)
    f_total = int(fraud_w.sum())

    order0 = np.argsort(-p0, kind="stable")
    order1 = np.argsort(-p1, kind="stable")
    p1_sorted = p1[order1]
    fw_sorted = fraud_w[order1]
    w_sorted = w[order1]
    blocked0_sorted = np.zeros(n, dtype=bool)  # indexed in order1 positions
    rank1 = np.empty(n, dtype=np.int64)
    rank1[order1] = np.arange(n)

    best = np.full(n_theta, -1.0)
    out_t0 = np.full(n_theta, np.nan)
    out_t1 = np.full(n_theta, np.nan)
    out_f = np.zeros(n_theta, dtype=np.int64)
    out_b = np.zeros(n_theta, dtype=np.int64)
    out_f0 = np.zeros(n_theta, dtype=np.int64)
    out_b0 = np.zeros(n_theta, dtype=np.int64)

    # group boundaries of distinct p0 values in descending order
    # NaN sorts last and is never a cut, so only the finite prefix is grouped
    p0_desc = p0[order0]
    n0 = int(np.count_nonzero(~np.isnan(p0_desc)))
    if n0:
        starts = np.flatnonzero(np.r_[True, p0_desc[1:n0] != p0_desc[:n0 - 1]])
        ends = np.r_[starts[1:], n0]
    else:
        starts = ends = np.zeros(0, dtype=np.int64)

    f0 = b0 = 0
    for g in range(len(starts) + 1):
        if g == 0:
            t0 = np.inf
        else:
            members = order0[starts[g - 1]:ends[g - 1]]
            t0 = p0_desc[starts[g - 1]]
            blocked0_sorted[rank1[members]] = True
            f0 += int(fraud_w[members].sum())
            b0 += int(w[members].sum())

        # no extension can beat f_total / (B + unblocked fraud); the bound only
        # shrinks as t0 decreases, so stop once it cannot improve any target
        if f_total > 0 and n_theta and _settled(f_total / float(b0 + f_total - f0), best):
            break

        keep = ~blocked0_sorted & ~np.isnan(p1_sorted)
        v = p1_sorted[keep]
        cf = np.cumsum(fw_sorted[keep])
        cb = np.cumsum(w_sorted[keep])
        m = len(v)
        if m:
            last = np.flatnonzero(np.r_[v[1:] != v[:-1], True])
            cand_f = np.r_[0, cf[last]] + f0
            cand_b = np.r_[0, cb[last]] + b0
            cand_t1 = np.r_[np.inf, v[last]]
        else:
            cand_f = np.array([f0], dtype=np.int64)
            cand_b = np.array([b0], dtype=np.int64)
            cand_t1 = np.array([np.inf])

        ff = cand_f.astype(np.float64)
        bb = cand_b.astype(np.float64)
        recall = ff / float(f_total) if f_total > 0 else np.ones_like(ff)
        with np.errstate(divide="ignore", invalid="ignore"):
            prec = np.where(cand_b > 0, ff / np.where(cand_b > 0, bb, 1.0), 1.0)
        for j in range(n_theta):
            feasible = recall >= thetas[j]
            if not feasible.any():
                continue
            masked = np.where(feasible, prec, -np.inf)
            idx = int(np.argmax(masked))  # first maximum = highest t1
            takes_tie = masked[idx] == best[j] and t0 < out_t0[j]
            if masked[idx] > best[j] or takes_tie:
                best[j] = masked[idx]
                out_t0[j] = t0
                out_t1[j] = cand_t1[idx]
                out_f[j] = cand_f[idx]
                out_b[j] = cand_b[idx]
                out_f0[j] = f0
                out_b0[j] = b0
    return out_t0, out_t1, out_f, out_b, out_f0, out_b0, f_total
