# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backward-induction kernels for the tabular learner."""
from libc.math cimport sqrt, INFINITY

import numpy as np


cdef inline double clip(double x, double hi) noexcept nogil:
    # ternaries compile to branch-free min/max
    x = x if x > 0.0 else 0.0
    return x if x < hi else hi


cdef struct Pair:
    int kind        # 0 unvisited, 1 single successor, 2 several successors
    long succ
    long j0
    long j1
    double first
    double bq
    double bu


def rebuild(
    const long[::1] goals,
    int H,
    int S,
    int A,
    const long[::1] ptr,
    const long[::1] succ,
    const double[::1] prob,
    const long[::1] visits,
    const double[::1] first,
    const double[::1] second,
    double cq1,
    double cq2,
    double cu1,
    double cu2,
    double corr,
    double umult,
    double[:, :, ::1] Vt,
    double[:, :, ::1] Vp,
    double[:, :, ::1] Upi,
    long[:, :, ::1] pi,
):
    cdef Py_ssize_t G = goals.shape[0]
    cdef Py_ssize_t gi, h, s, a, j, p, sp
    cdef long g, besta
    cdef double w, mt, mp, mu, d, var, sd, qt, qp, u, best, bestp, ubest, gap
    cdef double Hd = <double>H
    cdef double *vt_n
    cdef double *vp_n
    cdef double *up_n
    cdef double *vt_c
    cdef double *vp_c
    cdef double *up_c
    cdef long *pi_c
    cdef const long *ps = &succ[0]
    cdef const double *pw = &prob[0]
    cdef Pair *pr
    cdef Pair[::1] pairs_view
    pairs = np.zeros(S * A, dtype=np.dtype([
        ("kind", np.intc), ("succ", np.int64), ("j0", np.int64), ("j1", np.int64),
        ("first", np.float64), ("bq", np.float64), ("bu", np.float64)], align=True))
    pairs_view = pairs
    cdef Pair *table = &pairs_view[0]
    for p in range(S * A):
        pr = &table[p]
        pr.j0 = ptr[p]
        pr.j1 = ptr[p + 1]
        pr.kind = 0 if visits[p] == 0 else (1 if pr.j1 - pr.j0 == 1 else 2)
        pr.succ = succ[pr.j0] if pr.kind == 1 else 0
        pr.first = first[p]
        pr.bq = cq2 * second[p]
        pr.bu = cu2 * second[p]
    with nogil:
        for gi in range(G):
            g = goals[gi]
            for s in range(S):
                Vt[gi, H, s] = 0.0
                Vp[gi, H, s] = 0.0
                Upi[gi, H, s] = 0.0
            for h in range(H - 1, -1, -1):
                vt_n = &Vt[gi, h + 1, 0]
                vp_n = &Vp[gi, h + 1, 0]
                up_n = &Upi[gi, h + 1, 0]
                vt_c = &Vt[gi, h, 0]
                vp_c = &Vp[gi, h, 0]
                up_c = &Upi[gi, h, 0]
                pi_c = &pi[gi, h, 0]
                for s in range(S):
                    if s == g:
                        continue
                    best = INFINITY
                    bestp = INFINITY
                    besta = 0
                    ubest = 0.0
                    for a in range(A):
                        pr = &table[s * A + a]
                        if pr.kind == 0:
                            qt = 1.0
                            qp = Hd
                            u = Hd
                        else:
                            if pr.kind == 1:
                                # one successor with probability 1: the mean is
                                # the successor value and the variance is zero
                                sp = pr.succ
                                mt = vt_n[sp]
                                mp = vp_n[sp]
                                mu = up_n[sp]
                                sd = 0.0
                            else:
                                mt = 0.0
                                mp = 0.0
                                mu = 0.0
                                for j in range(pr.j0, pr.j1):
                                    sp = ps[j]
                                    w = pw[j]
                                    mt += w * vt_n[sp]
                                    mp += w * vp_n[sp]
                                    mu += w * up_n[sp]
                                var = 0.0
                                for j in range(pr.j0, pr.j1):
                                    d = vt_n[ps[j]] - mt
                                    var += pw[j] * d * d
                                if var < 0.0:
                                    var = 0.0
                                sd = sqrt(var * pr.first)
                            gap = corr * (mp - mt)
                            qt = clip(1.0 - (cq1 * sd + pr.bq) - gap + mt, Hd)
                            qp = clip(1.0 + (cq1 * sd + pr.bq) + gap + mp, Hd)
                            u = clip(cu1 * sd + pr.bu + umult * mu, Hd)
                        besta = a if qt < best else besta
                        ubest = u if qt < best else ubest
                        best = qt if qt < best else best
                        bestp = qp if qp < bestp else bestp
                    vt_c[s] = best
                    vp_c[s] = bestp
                    up_c[s] = ubest
                    pi_c[s] = besta
                # goal rows are absorbing and cost free
                vt_c[g] = 0.0
                vp_c[g] = 0.0
                up_c[g] = 0.0
                pi_c[g] = 0


def rollout(
    const double[:, :, ::1] cum,
    const long[:, ::1] actions,
    long s0,
    const double[::1] u,
    long[::1] states,
    long[::1] acts,
):
    """One H-step episode from s0; ``u`` holds one uniform draw per step."""
    cdef Py_ssize_t H = actions.shape[0]
    cdef Py_ssize_t S = cum.shape[0]
    cdef Py_ssize_t h, lo
    cdef long s = s0, a
    with nogil:
        states[0] = s
        for h in range(H):
            a = actions[h, s]
            lo = 0
            while lo < S - 1 and cum[s, a, lo] <= u[h]:
                lo += 1
            acts[h] = a
            s = lo
            states[h + 1] = s


def policy_values(
    const long[::1] ptr,
    const long[::1] succ,
    const double[::1] prob,
    int A,
    long s0,
    const long[::1] goals,
    const long[:, :, ::1] pi,
    double[::1] out,
):
    """Value at s0 of each goal's policy in the H-step absorbed model.

    The true kernel is given in the same flattened sparse layout as the
    empirical one.
    """
    cdef Py_ssize_t G = goals.shape[0]
    cdef Py_ssize_t H = pi.shape[1]
    cdef Py_ssize_t S = pi.shape[2]
    cdef Py_ssize_t gi, h, s, j, cur, nxt, p
    cdef long g
    cdef double acc
    cdef double[:, ::1] buf = np.zeros((2, S))
    with nogil:
        for gi in range(G):
            g = goals[gi]
            nxt = H % 2
            for s in range(S):
                buf[nxt, s] = 0.0
            for h in range(H - 1, -1, -1):
                cur = h % 2
                nxt = 1 - cur
                for s in range(S):
                    if s == g:
                        buf[cur, s] = 0.0
                        continue
                    p = s * A + pi[gi, h, s]
                    acc = 1.0
                    for j in range(ptr[p], ptr[p + 1]):
                        acc += prob[j] * buf[nxt, succ[j]]
                    buf[cur, s] = acc
            out[gi] = buf[0, s0]
