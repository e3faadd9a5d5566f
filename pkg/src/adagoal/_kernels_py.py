"""Pure numpy versions of the compiled kernels, same signatures and outputs."""
import numpy as np


def dense_model(S, A, ptr, succ, prob):
    rows = np.repeat(np.arange(S * A), np.diff(ptr))
    Phat = np.zeros((S * A, S))
    np.add.at(Phat, (rows, succ), prob)
    return Phat


def backup(Phat, seen, first, second, cq1, cq2, cu1, cu2, corr, umult, H, goals, vt, vp, up):
    """One backward step for every goal: returns (Q~, Q_, U) of shape (G, S, A)."""
    G, S = vt.shape
    A = Phat.shape[0] // S
    Hd = float(H)
    support = Phat > 0
    mt = vt @ Phat.T
    mp = vp @ Phat.T
    mu = up @ Phat.T
    dev = vt[:, None, :] - mt[:, :, None]
    var = np.maximum(np.einsum("js,gjs->gj", Phat, np.where(support, dev * dev, 0.0)), 0.0)
    sd = np.sqrt(var * first)
    bq = cq1 * sd + cq2 * second
    bu = cu1 * sd + cu2 * second
    qt = np.clip(1.0 - bq - corr * (mp - mt) + mt, 0.0, Hd)
    qp = np.clip(1.0 + bq + corr * (mp - mt) + mp, 0.0, Hd)
    u = np.clip(bu + umult * mu, 0.0, Hd)
    qt = np.where(seen, qt, 1.0).reshape(G, S, A)
    qp = np.where(seen, qp, Hd).reshape(G, S, A)
    u = np.where(seen, u, Hd).reshape(G, S, A)
    rows = np.arange(G)
    qt[rows, goals] = 0.0
    qp[rows, goals] = 0.0
    u[rows, goals] = 0.0
    return qt, qp, u


def rebuild(goals, H, S, A, ptr, succ, prob, visits, first, second,
            cq1, cq2, cu1, cu2, corr, umult, Vt, Vp, Upi, pi):
    Phat = dense_model(S, A, ptr, succ, prob)
    seen = np.asarray(visits) > 0
    goals = np.asarray(goals)
    Vt[:, H] = 0.0
    Vp[:, H] = 0.0
    Upi[:, H] = 0.0
    for h in range(H - 1, -1, -1):
        qt, qp, u = backup(Phat, seen, first, second, cq1, cq2, cu1, cu2, corr, umult, H, goals,
                           Vt[:, h + 1], Vp[:, h + 1], Upi[:, h + 1])
        act = np.argmin(qt, axis=2)
        pi[:, h] = act
        Vt[:, h] = np.take_along_axis(qt, act[..., None], 2)[..., 0]
        Vp[:, h] = qp.min(axis=2)
        Upi[:, h] = np.take_along_axis(u, act[..., None], 2)[..., 0]


def policy_values(ptr, succ, prob, A, s0, goals, pi, out):
    G, H, S = pi.shape
    P = dense_model(S, A, ptr, succ, prob).reshape(S, A, S)
    idx = np.arange(S)
    goals = np.asarray(goals)
    V = np.zeros((G, S))
    for h in range(H - 1, -1, -1):
        rows = P[idx[None, :], pi[:, h]]
        V = 1.0 + np.einsum("gst,gt->gs", rows, V)
        V[np.arange(G), goals] = 0.0
    out[:] = V[:, s0]


def rollout(cum, actions, s0, u, states, acts):
    S = cum.shape[0]
    s = int(s0)
    states[0] = s
    for h in range(actions.shape[0]):
        a = int(actions[h, s])
        acts[h] = a
        s = min(int(np.searchsorted(cum[s, a], u[h], side="right")), S - 1)
        states[h + 1] = s
