"""Hybrid (RF + baseband) multi-user JCAS beamformer design.

The TX side serves ``U`` communication users with one stream each while
steering as much power as possible toward the radar direction. Each TX RF
chain drives a contiguous subarray with a phase-only steering vector; the
baseband (BB) weights of user ``u`` live in the null space of the other
users' directions and maximize the radar gain subject to a minimum gain
``mu_u`` toward user ``u``. Each RX subarray gets the closed-form weights
``w = N a / ||N a||`` where ``N`` projects out the estimated SI images.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .array import ArrayConfig, WaveformConfig, angle_grid, steering_vector, to_db, tx_gain_hbf, rx_gain_subarray, GainPattern
from .errors import ConfigError, Infeasible
from .nsp import NspConfig, iui_constraints, iui_projector, project_unit, projector_from_columns, si_constraints_hbf
from .sichannel import SiChannelSet

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 60_000
_FEAS_RTOL = 1e-9


@dataclass(frozen=True)
class HbfScenario:
    """Hybrid JCAS scenario.

    ``rf_assignment`` selects the direction each TX subarray is steered to:
    ``"search"`` (best phase-only assignment for the radar objective),
    ``"round_robin"``, or an explicit sequence with one entry per RF chain
    (0 = radar, ``u + 1`` = user ``u``).
    """

    array: ArrayConfig
    wf: WaveformConfig
    theta_rad_deg: float
    theta_comm_deg: tuple
    mu_db: tuple
    stream_powers: tuple | None = None
    nsp: NspConfig = field(default_factory=NspConfig)
    rf_assignment: object = "search"

    def __post_init__(self):
        comm = tuple(float(t) for t in np.atleast_1d(self.theta_comm_deg))
        mu = tuple(float(m) for m in np.atleast_1d(self.mu_db))
        object.__setattr__(self, "theta_comm_deg", comm)
        object.__setattr__(self, "mu_db", mu)
        u = len(comm)
        if u < 1:
            raise ConfigError("at least one communication user is required", key="beams.theta_comm")
        if len(mu) != u:
            raise ConfigError("mu_db needs one entry per user", key="beams.mu_db")
        if not u < self.array.l_rf_tx:
            raise ConfigError("the number of users must be below l_rf_tx", key="array.l_rf_tx")
        cap = 10 * math.log10(self.array.l_tx)
        for m in mu:
            if m > cap + 1e-12:
                raise ConfigError(f"mu_db {m} exceeds the full-array gain {cap:.2f} dBi", key="beams.mu_db")
        powers = (1.0,) * u if self.stream_powers is None else tuple(float(p) for p in self.stream_powers)
        if len(powers) != u or min(powers) < 0:
            raise ConfigError("stream_powers needs one nonnegative entry per user", key="beams.stream_powers")
        object.__setattr__(self, "stream_powers", powers)
        for t in (self.theta_rad_deg,) + comm:
            if abs(t) > 90:
                raise ConfigError("angles must lie in [-90, 90] degrees", key="beams")
        ra = self.rf_assignment
        if not isinstance(ra, str):
            ra = tuple(int(k) for k in ra)
            if len(ra) != self.array.l_rf_tx or min(ra) < 0 or max(ra) > u:
                raise ConfigError("explicit rf_assignment needs l_rf_tx entries in [0, U]", key="rf_assignment")
            object.__setattr__(self, "rf_assignment", ra)
        elif ra not in ("search", "round_robin"):
            raise ConfigError(f"unknown rf_assignment {ra!r}", key="rf_assignment")

    @property
    def n_users(self) -> int:
        return len(self.theta_comm_deg)

    @property
    def wavelength(self) -> float:
        """Design wavelength (carrier)."""
        return self.wf.center_wavelength

    @property
    def directions(self) -> np.ndarray:
        """Radar direction followed by the user directions."""
        return np.array((self.theta_rad_deg,) + self.theta_comm_deg)

    def mu_linear(self) -> np.ndarray:
        return np.array([0.0 if m == -math.inf else 10 ** (m / 10) for m in self.mu_db])


@dataclass
class BeamformerWeights:
    """TX RF matrix, frequency-flat TX BB matrix and per-subarray RX weights."""

    w_rf_tx: np.ndarray
    w_bb_tx: np.ndarray
    w_rf_rx: list = field(default_factory=list)

    def tx_effective(self) -> np.ndarray:
        """Per-stream element weights ``W_RF W_BB`` (``l_tx x U``)."""
        return self.w_rf_tx @ self.w_bb_tx

    def rx_matrix(self) -> np.ndarray:
        """Block-diagonal ``l_rx x l_rf_rx`` RX RF matrix."""
        m = sum(len(w) for w in self.w_rf_rx)
        out = np.zeros((m, len(self.w_rf_rx)), dtype=complex)
        r = 0
        for l, w in enumerate(self.w_rf_rx):
            out[r : r + len(w), l] = w
            r += len(w)
        return out

    def to_csv(self, path) -> None:
        """Rows ``role,chain_or_user,subcarrier,element,re,im``; subcarrier -1 means all."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["role", "chain_or_user", "subcarrier", "element", "re", "im"])
            for c in range(self.w_rf_tx.shape[1]):
                for e, v in enumerate(self.w_rf_tx[:, c]):
                    wr.writerow(["tx_rf", c, -1, e, repr(float(v.real)), repr(float(v.imag))])
            for u in range(self.w_bb_tx.shape[1]):
                for e, v in enumerate(self.w_bb_tx[:, u]):
                    wr.writerow(["tx_bb", u, -1, e, repr(float(v.real)), repr(float(v.imag))])
            for l, w in enumerate(self.w_rf_rx):
                for e, v in enumerate(w):
                    wr.writerow(["rx_rf", l, -1, e, repr(float(v.real)), repr(float(v.imag))])

    @classmethod
    def from_csv(cls, path) -> "BeamformerWeights":
        rows: dict[str, dict[int, dict[int, complex]]] = {"tx_rf": {}, "tx_bb": {}, "rx_rf": {}}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows[rec["role"]].setdefault(int(rec["chain_or_user"]), {})[int(rec["element"])] = complex(
                    float(rec["re"]), float(rec["im"])
                )

        def cols(d):
            return [np.array([d[k][e] for e in sorted(d[k])]) for k in sorted(d)]

        return cls(np.column_stack(cols(rows["tx_rf"])), np.column_stack(cols(rows["tx_bb"])), cols(rows["rx_rf"]))


@dataclass
class TxDesign:
    """Result of :func:`design_tx`. Gains are in dBi; ``radar_gain_db`` sums all streams."""

    w_rf_tx: np.ndarray
    w_bb_tx: np.ndarray
    radar_gain_db: float
    comm_gains_db: np.ndarray
    radar_gains_per_user_db: np.ndarray
    assignment: tuple


def rf_matrix(cfg: ArrayConfig, assignment, directions_deg, wavelength: float) -> np.ndarray:
    """Block-diagonal phase-only TX RF matrix with orthonormal columns.

    Column ``s`` carries the subarray-``s`` part of ``a_tx(directions[assignment[s]])``
    scaled by ``1/sqrt(subarray size)``.
    """
    m = cfg.tx_subarray_size
    a = steering_vector(cfg, "tx", wavelength, np.asarray(directions_deg, dtype=float)).reshape(cfg.l_tx, -1)
    w = np.zeros((cfg.l_tx, cfg.l_rf_tx), dtype=complex)
    for s, k in enumerate(assignment):
        w[s * m : (s + 1) * m, s] = a[s * m : (s + 1) * m, k] / math.sqrt(m)
    return w


def _block_responses(cfg: ArrayConfig, directions_deg, wavelength) -> np.ndarray:
    """``h[s, k, e]``: response of subarray ``s`` steered to ``k`` toward direction ``e``."""
    m = cfg.tx_subarray_size
    a = steering_vector(cfg, "tx", wavelength, np.asarray(directions_deg, dtype=float)).reshape(cfg.l_tx, -1)
    blocks = a.reshape(cfg.l_rf_tx, m, -1)
    return np.einsum("smk,sme->ske", blocks.conj(), blocks) / math.sqrt(m)


def _user_quantities(gram: np.ndarray, u: int, rcond: float):
    """Projected inner products of radar and user ``u`` images after IUI nulling.

    Returns ``(prr, puu, pru)`` for a stack of Gram matrices over
    ``[radar, user 0, ..., user U-1]`` reduced steering vectors.
    """
    n_e = gram.shape[-1]
    others = [e for e in range(1, n_e) if e != u + 1]
    keep = [0, u + 1]
    if others:
        g_oo = gram[:, others][:, :, others]
        g_ko = gram[:, keep][:, :, others]
        corr = g_ko @ np.linalg.pinv(g_oo, rcond=rcond, hermitian=True) @ np.conj(np.swapaxes(g_ko, 1, 2))
        red = gram[:, keep][:, :, keep] - corr
    else:
        red = gram[:, keep][:, :, keep]
    return red[:, 0, 0].real, red[:, 1, 1].real, red[:, 0, 1]


def _constrained_radar_gain(prr, puu, pru, mu):
    """Largest ``|p^H v|^2`` with ``|q^H v|^2 >= mu`` over unit ``v``.

    Only the Gram entries ``p^H p``, ``q^H q`` and ``p^H q`` matter. Returns
    ``(gain, feasible)``.
    """
    prr = np.maximum(prr, 0.0)
    puu = np.maximum(puu, 0.0)
    tiny = 1e-14 * np.maximum(prr + puu, 1e-300)
    has_p = prr > tiny
    a2 = np.where(has_p, np.abs(pru) ** 2 / np.where(has_p, prr, 1.0), 0.0)
    a2 = np.minimum(a2, puu)
    feasible = puu >= mu * (1 - _FEAS_RTOL)
    beta = np.sqrt(np.maximum(puu - a2, 0.0))
    r = np.sqrt(puu)
    t0 = np.arctan2(beta, np.sqrt(a2))
    ratio = np.clip(np.sqrt(mu) / np.where(r > 0, r, 1.0), 0.0, 1.0)
    t = np.where(a2 >= mu, 0.0, np.maximum(t0 - np.arccos(ratio), 0.0))
    gain = np.where(has_p, prr * np.cos(t) ** 2, 0.0)
    return gain, feasible


def _score_assignments(h, assign, mu, powers, rcond):
    """Total radar power and feasibility margin for a batch of assignments."""
    s_idx = np.arange(h.shape[0])
    sel = h[s_idx, assign]  # (A, S, E)
    gram = np.einsum("ase,asf->aef", sel.conj(), sel)
    total = np.zeros(assign.shape[0])
    margin = np.full(assign.shape[0], np.inf)
    feas_all = np.ones(assign.shape[0], dtype=bool)
    for u in range(len(mu)):
        prr, puu, pru = _user_quantities(gram, u, rcond)
        g, feas = _constrained_radar_gain(prr, puu, pru, mu[u])
        total += powers[u] * g
        feas_all &= feas
        margin = np.minimum(margin, puu / mu[u] if mu[u] > 0 else np.inf)
    return np.where(feas_all, total, -np.inf), margin


def _search_assignment(scn: HbfScenario) -> tuple:
    cfg = scn.array
    k = scn.n_users + 1
    s = cfg.l_rf_tx
    h = _block_responses(cfg, scn.directions, scn.wavelength)
    mu = scn.mu_linear()
    powers = np.asarray(scn.stream_powers)
    rcond = scn.nsp.svd_rcond
    if cfg.tx_subarray_size == 1:
        # single-element subarrays: every assignment spans the same space
        return (0,) * s
    if k**s <= EXHAUSTIVE_LIMIT:
        best, best_val, best_margin, best_mval = None, -np.inf, None, -np.inf
        for chunk in _chunks(itertools.product(range(k), repeat=s), 8192):
            val, margin = _score_assignments(h, chunk, mu, powers, rcond)
            i = int(np.argmax(val))
            if val[i] > best_val:
                best, best_val = tuple(chunk[i]), val[i]
            j = int(np.argmax(margin))
            if margin[j] > best_mval:
                best_margin, best_mval = tuple(chunk[j]), margin[j]
        return best if best is not None else best_margin
    return _coordinate_ascent(h, s, k, mu, powers, rcond)


def _chunks(it, size):
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield np.array(block, dtype=np.int64)


def _coordinate_ascent(h, s, k, mu, powers, rcond) -> tuple:
    cur = np.arange(s) % k
    def key(vals, margins):
        return np.where(np.isfinite(vals), vals, -1e300 + np.minimum(margins, 1e6))

    val, margin = _score_assignments(h, cur[None], mu, powers, rcond)
    cur_key = key(val, margin)[0]
    for _ in range(50):
        improved = False
        for blk in range(s):
            cand = np.repeat(cur[None], k, axis=0)
            cand[:, blk] = np.arange(k)
            v, m = _score_assignments(h, cand, mu, powers, rcond)
            kk = key(v, m)
            i = int(np.argmax(kk))
            if kk[i] > cur_key * (1 + 1e-12) + 1e-300 and i != cur[blk]:
                cur, cur_key, improved = cand[i], kk[i], True
        if not improved:
            break
    return tuple(int(x) for x in cur)


def resolve_assignment(scn: HbfScenario) -> tuple:
    if isinstance(scn.rf_assignment, tuple):
        return scn.rf_assignment
    if scn.rf_assignment == "round_robin":
        return tuple(i % (scn.n_users + 1) for i in range(scn.array.l_rf_tx))
    return _search_assignment(scn)


def solve_bb_user(w_rf_tx, a_rad, a_user, iui_rows, mu_lin: float, rcond: float = 1e-10):
    """Baseband weights of one user.

    Maximizes ``|a_rad^H W_RF x|^2`` over ``||x|| = 1`` with
    ``|a_user^H W_RF x|^2 >= mu_lin`` and ``iui_rows @ x == 0``. ``W_RF`` must
    have orthonormal columns. The optimum lies in the span of the projected
    radar and user images and is found in closed form.

    Returns
    -------
    x : ndarray
        Unit-norm BB weights.
    achievable : float
        Largest reachable user gain (linear) under the IUI nulls.
    """
    proj = iui_projector(iui_rows, rcond)
    q_basis = proj.basis
    p = q_basis.conj().T @ (w_rf_tx.conj().T @ a_rad)
    q = q_basis.conj().T @ (w_rf_tx.conj().T @ a_user)
    r2 = float(np.vdot(q, q).real)
    if r2 < mu_lin * (1 - _FEAS_RTOL) or r2 == 0 and mu_lin > 0:
        return None, r2
    pn = np.linalg.norm(p)
    if pn <= 1e-12 * max(math.sqrt(r2), 1e-300):
        v = q / math.sqrt(r2) if r2 > 0 else np.eye(len(q), 1, dtype=complex)[:, 0]
        return q_basis @ v, r2
    e1 = p / pn
    alpha = np.vdot(e1, q)
    resid = q - alpha * e1
    beta = np.linalg.norm(resid)
    a_abs = abs(alpha)
    if a_abs**2 >= mu_lin or beta <= 1e-12 * math.sqrt(r2):
        v = e1
    else:
        e2 = resid / beta
        t = max(math.atan2(beta, a_abs) - math.acos(min(math.sqrt(mu_lin / r2), 1.0)), 0.0)
        phase = np.conj(alpha) / a_abs if a_abs > 0 else 1.0
        # q^H v = conj(alpha) cos t + beta e^{j phi} sin t; align both terms
        v = math.cos(t) * e1 + phase * math.sin(t) * e2
    x = q_basis @ v
    return x / np.linalg.norm(x), r2


def design_tx(scn: HbfScenario) -> TxDesign:
    """Radar-maximizing TX RF/BB weights at the design wavelength.

    Raises
    ------
    Infeasible
        When a user's minimum gain cannot be met inside its IUI null space
        for the chosen RF assignment.
    """
    cfg = scn.array
    lam = scn.wavelength
    if scn.theta_rad_deg in scn.theta_comm_deg:
        log.info("radar direction coincides with a user direction; the beam collapses to the matched beam")
    assignment = resolve_assignment(scn)
    w_rf = rf_matrix(cfg, assignment, scn.directions, lam)
    a_rad = steering_vector(cfg, "tx", lam, scn.theta_rad_deg)
    mu = scn.mu_linear()
    w_bb = np.zeros((cfg.l_rf_tx, scn.n_users), dtype=complex)
    for u in range(scn.n_users):
        d_u = iui_constraints(cfg, w_rf, u, scn.theta_comm_deg, lam)
        a_u = steering_vector(cfg, "tx", lam, scn.theta_comm_deg[u])
        x, achievable = solve_bb_user(w_rf, a_rad, a_u, d_u, mu[u], scn.nsp.svd_rcond)
        if x is None:
            raise Infeasible(u, scn.mu_db[u], float(to_db(achievable)))
        w_bb[:, u] = x
    radar = np.array([tx_gain_hbf(cfg, w_rf, w_bb[:, u], lam, scn.theta_rad_deg) for u in range(scn.n_users)])
    comm = np.array([tx_gain_hbf(cfg, w_rf, w_bb[:, u], lam, scn.theta_comm_deg[u]) for u in range(scn.n_users)])
    total = float(np.dot(radar, scn.stream_powers))
    return TxDesign(w_rf, w_bb, float(to_db(total)), to_db(comm), to_db(radar), tuple(int(k) for k in assignment))


def design_rx(scn: HbfScenario, w_rf_tx, w_bb_tx, si_estimate: SiChannelSet | None) -> list:
    """Per-subarray RX weights ``N_l a_l / ||N_l a_l||`` toward the radar direction.

    ``N_l`` nulls the estimated SI images ``H_n[rows_l] W_RF W_BB`` at every
    configured null subcarrier (BB weights reused across the band).
    """
    cfg = scn.array
    nulls = scn.nsp.resolve_subcarriers(scn.wf)
    if nulls.size and si_estimate is None:
        raise ConfigError("frequency nulls need an SI channel estimate", key="si")
    a = steering_vector(cfg, "rx", scn.wavelength, scn.theta_rad_deg)
    out = []
    for l in range(cfg.l_rf_rx):
        rows = cfg.rx_subarray_rows(l)
        if nulls.size:
            b = si_constraints_hbf(si_estimate, w_rf_tx, w_bb_tx, rows, nulls)
            proj = projector_from_columns(b, scn.nsp.svd_rcond)
        else:
            proj = projector_from_columns(np.zeros((cfg.rx_subarray_size, 0)))
        out.append(project_unit(proj, a[rows]))
    return out


def design(scn: HbfScenario, si_estimate: SiChannelSet | None = None) -> tuple[BeamformerWeights, TxDesign]:
    tx = design_tx(scn)
    rx = design_rx(scn, tx.w_rf_tx, tx.w_bb_tx, si_estimate)
    return BeamformerWeights(tx.w_rf_tx, tx.w_bb_tx, rx), tx


def tx_radar_power(scn: HbfScenario, weights: BeamformerWeights) -> float:
    """``sum_u P_u G_tx,u(theta_rad)`` (linear)."""
    g = [
        tx_gain_hbf(scn.array, weights.w_rf_tx, weights.w_bb_tx[:, u], scn.wavelength, scn.theta_rad_deg)
        for u in range(weights.w_bb_tx.shape[1])
    ]
    return float(np.dot(g, scn.stream_powers))


def audit(scn: HbfScenario, weights: BeamformerWeights, si_estimate: SiChannelSet | None = None) -> dict:
    """Check every design constraint on a finished design.

    Returns a dict of measured values and booleans; ``ok`` is their
    conjunction.
    """
    cfg, lam = scn.array, scn.wavelength
    m = cfg.tx_subarray_size
    mask = np.kron(np.eye(cfg.l_rf_tx), np.ones((m, 1))).astype(bool)
    eff = weights.tx_effective()
    norms = np.linalg.norm(eff, axis=0)
    comm = np.array([to_db(tx_gain_hbf(cfg, weights.w_rf_tx, weights.w_bb_tx[:, u], lam, scn.theta_comm_deg[u])) for u in range(scn.n_users)])
    iui = [
        float(to_db(tx_gain_hbf(cfg, weights.w_rf_tx, weights.w_bb_tx[:, u], lam, scn.theta_comm_deg[v])))
        for u in range(scn.n_users)
        for v in range(scn.n_users)
        if v != u
    ]
    res = {
        "block_diagonal": bool(np.all(weights.w_rf_tx[~mask] == 0)),
        "tx_norms": norms.tolist(),
        "tx_norms_ok": bool(np.all(np.abs(norms - 1) <= 1e-10)),
        "comm_gains_db": comm.tolist(),
        "comm_ok": bool(np.all(comm >= np.array(scn.mu_db) - 0.01)),
        "iui_max_db": max(iui) if iui else None,
        "iui_ok": bool(not iui or max(iui) <= -100),
        "rx_norms_ok": bool(all(abs(np.linalg.norm(w) - 1) <= 1e-12 for w in weights.w_rf_rx)),
    }
    if si_estimate is not None and weights.w_rf_rx:
        nulls = scn.nsp.resolve_subcarriers(scn.wf)
        worst = 0.0
        for l, w in enumerate(weights.w_rf_rx):
            b = si_constraints_hbf(si_estimate, weights.w_rf_tx, weights.w_bb_tx, cfg.rx_subarray_rows(l), nulls)
            if b.size:
                worst = max(worst, float(np.max(np.abs(w.conj() @ b)) / max(np.linalg.norm(b), 1e-300)))
        res["si_null_residual"] = worst
        res["si_nulls_ok"] = worst <= 1e-10
    res["ok"] = all(v for k, v in res.items() if k.endswith("_ok") or k == "block_diagonal")
    return res


def tx_patterns(scn: HbfScenario, weights: BeamformerWeights, grid=None) -> list[GainPattern]:
    grid = angle_grid() if grid is None else np.asarray(grid, dtype=float)
    return [
        GainPattern(grid, to_db(tx_gain_hbf(scn.array, weights.w_rf_tx, weights.w_bb_tx[:, u], scn.wavelength, grid)), f"tx_u{u + 1}")
        for u in range(weights.w_bb_tx.shape[1])
    ]


def rx_patterns(scn: HbfScenario, weights: BeamformerWeights, grid=None) -> list[GainPattern]:
    grid = angle_grid() if grid is None else np.asarray(grid, dtype=float)
    return [
        GainPattern(grid, to_db(rx_gain_subarray(scn.array, w, l, scn.wavelength, grid)), f"rx_l{l + 1}")
        for l, w in enumerate(weights.w_rf_rx)
    ]
