"""Independent reference solutions used by several test modules."""

import math

import numpy as np

from fdjcas.array import steering_vector


def grid_oracle(scn, w_rf, u, step=0.01):
    """Best radar gain of user ``u`` by a dense search over the two mixing angles.

    The search runs over unit vectors in the span of the radar and user
    images after removing the other users' directions.
    """
    lam = scn.wavelength
    cfg = scn.array
    others = [t for k, t in enumerate(scn.theta_comm_deg) if k != u]
    d = steering_vector(cfg, "tx", lam, others).reshape(cfg.l_tx, -1).conj().T @ w_rf
    _, s, vh = np.linalg.svd(d)
    null = vh[int(np.sum(s > 1e-10 * s[0])) :].conj().T
    p = null.conj().T @ (w_rf.conj().T @ steering_vector(cfg, "tx", lam, scn.theta_rad_deg))
    q = null.conj().T @ (w_rf.conj().T @ steering_vector(cfg, "tx", lam, scn.theta_comm_deg[u]))
    e1 = p / np.linalg.norm(p)
    r = q - np.vdot(e1, q) * e1
    e2 = r / np.linalg.norm(r)
    t = np.arange(0, math.pi / 2 + step, step)[:, None]
    phi = np.arange(0, 2 * math.pi, step)[None, :]
    pe1, pe2 = np.vdot(p, e1), np.vdot(p, e2)
    qe1, qe2 = np.vdot(q, e1), np.vdot(q, e2)
    rad = np.abs(pe1 * np.cos(t) + pe2 * np.exp(1j * phi) * np.sin(t)) ** 2
    com = np.abs(qe1 * np.cos(t) + qe2 * np.exp(1j * phi) * np.sin(t)) ** 2
    mu = scn.mu_linear()[u]
    return float(np.max(np.where(com >= mu, rad, -np.inf)))


def rx_eigen_oracle(n, a):
    """Best ``|w^H a|^2`` over unit ``w`` in the range of projector ``n``.

    Dominant eigenvector of ``N a a^H N``; independent of the closed form.
    """
    vals, vecs = np.linalg.eigh(n @ np.outer(a, a.conj()) @ n)
    return abs(np.vdot(vecs[:, -1], a)) ** 2
