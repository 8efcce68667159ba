"""Null-space projection (NSP): constraint matrices and orthogonal projectors.

Constraints are stored column-wise in the weight space. A projector ``P``
built from constraint columns ``B`` satisfies ``P @ B == 0``, so any weight
of the form ``P @ v`` has zero response ``w^H B``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .array import ArrayConfig, WaveformConfig, steering_vector
from .errors import ConfigError, DegenerateDirections, FullRankNullspace
from .sichannel import SiChannelSet

SUPPRESSION_FLOOR_DB = -300.0


@dataclass(frozen=True)
class NspConfig:
    """Frequency and angular null placement.

    Parameters
    ----------
    n_freq : int
        Number of frequency (SI) nulls.
    null_subcarriers : sequence of int, optional
        Explicit null subcarriers; ``None`` spreads ``n_freq`` nulls
        uniformly over the band.
    null_angles_deg : sequence of float
        Directions of the angular nulls (analog RX only).
    svd_rcond : float
        Singular values below ``svd_rcond * sigma_max`` count as zero.
    """

    n_freq: int = 0
    null_subcarriers: tuple | None = None
    null_angles_deg: tuple = ()
    svd_rcond: float = 1e-10

    def __post_init__(self):
        if self.n_freq < 0:
            raise ValueError("n_freq must be >= 0")
        if self.null_subcarriers is not None:
            object.__setattr__(self, "null_subcarriers", tuple(int(n) for n in self.null_subcarriers))
            if len(self.null_subcarriers) != self.n_freq:
                raise ValueError("len(null_subcarriers) must equal n_freq")
        object.__setattr__(self, "null_angles_deg", tuple(float(a) for a in self.null_angles_deg))
        if not 0 < self.svd_rcond < 1:
            raise ValueError("svd_rcond must lie in (0, 1)")

    @property
    def n_ang(self) -> int:
        return len(self.null_angles_deg)

    def resolve_subcarriers(self, wf: WaveformConfig) -> np.ndarray:
        """Sorted, de-duplicated null subcarriers for this waveform."""
        if self.n_freq == 0:
            return np.zeros(0, dtype=np.int64)
        if self.null_subcarriers is None:
            return uniform_null_frequencies(wf, self.n_freq)
        raw = np.asarray(self.null_subcarriers, dtype=np.int64)
        if raw.min() < 0 or raw.max() >= wf.n_subcarriers:
            raise ConfigError("null subcarrier outside the band", key="nsp.null_subcarriers")
        return _dedupe(raw)


def _dedupe(idx) -> np.ndarray:
    out = np.unique(idx)
    if out.size < len(idx):
        warnings.warn(f"{len(idx) - out.size} duplicate null subcarrier(s) dropped", DegenerateDirections, stacklevel=3)
    return out


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector onto the complement of a constraint span.

    ``basis`` holds an orthonormal basis of the projector's range, so
    ``matrix == basis @ basis.conj().T``.
    """

    matrix: np.ndarray
    rank_nulled: int
    basis: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        return self.matrix @ other

    def to_csv(self, path) -> None:
        n = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{p}{j}" for j in range(n) for p in ("re", "im")])
            for row in self.matrix:
                w.writerow([repr(float(x)) for v in row for x in (v.real, v.imag)])


def pseudoinverse(m, rcond: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudoinverse with a relative singular-value cutoff."""
    m = np.asarray(m, dtype=complex)
    if m.size == 0:
        return np.zeros(m.shape[::-1], dtype=complex)
    return np.linalg.pinv(m, rcond=rcond)


def projector_from_columns(b, rcond: float = 1e-10) -> Projector:
    """``P = I - B B^+`` for constraint columns ``b`` (shape ``dim x k``).

    Raises
    ------
    FullRankNullspace
        If the constraints span the whole space.
    """
    b = np.asarray(b, dtype=complex)
    if b.ndim == 1:
        b = b[:, None]
    dim = b.shape[0]
    if dim < 1:
        raise ValueError("constraint matrix needs at least one row")
    if b.shape[1] == 0 or not np.any(b):
        eye = np.eye(dim, dtype=complex)
        return Projector(eye, 0, eye)
    u, s, _ = np.linalg.svd(b, full_matrices=True)
    rank = int(np.sum(s > rcond * s[0]))
    if rank >= dim:
        raise FullRankNullspace(f"{rank} independent constraints leave no free dimension in a {dim}-dim weight space")
    basis = u[:, rank:]
    return Projector(basis @ basis.conj().T, rank, basis)


def project_unit(proj: Projector, v) -> np.ndarray:
    """``P v / ||P v||``; raises FullRankNullspace if ``v`` is fully nulled."""
    w = proj.matrix @ np.asarray(v, dtype=complex)
    nrm = np.linalg.norm(w)
    if nrm <= 1e-12 * max(np.linalg.norm(v), 1e-300):
        raise FullRankNullspace("the target steering vector lies inside the nulled subspace")
    return w / nrm


def si_constraints_hbf(si_estimate: SiChannelSet, w_rf_tx, w_bb, rx_rows: slice, null_subcarriers) -> np.ndarray:
    """Constraint columns ``H_n[rows] W_RF W_BB,n`` stacked over null subcarriers.

    Parameters
    ----------
    w_bb : ndarray or mapping
        A single ``l_rf_tx x U`` matrix used at every subcarrier, or a
        mapping from subcarrier index to such a matrix.
    rx_rows : slice
        RX element rows of the subarray being designed.

    Returns
    -------
    ndarray, shape ``(subarray size, n_freq * U)``
    """
    idx = np.asarray(null_subcarriers, dtype=np.int64)
    w_rf_tx = np.asarray(w_rf_tx, dtype=complex)
    n_rows = len(range(*rx_rows.indices(si_estimate.shape[0])))
    if idx.size == 0:
        return np.zeros((n_rows, 0), dtype=complex)
    h = si_estimate.at(idx)[:, rx_rows, :]
    blocks = []
    for k, n in enumerate(idx):
        if isinstance(w_bb, dict):
            if int(n) not in w_bb:
                raise ConfigError(f"no baseband weights for null subcarrier {int(n)}", key="w_bb")
            bb = w_bb[int(n)]
        else:
            bb = w_bb
        blocks.append(h[k] @ w_rf_tx @ np.asarray(bb, dtype=complex))
    return np.hstack(blocks)


def si_constraints_abf(si_estimate: SiChannelSet, w_tx, null_subcarriers, rx_steering_at_null_angles=None) -> np.ndarray:
    """``F = [H_n1 w_tx, ..., a_rx(theta_1), ...]`` with ``l_rx`` rows."""
    w_tx = np.asarray(w_tx, dtype=complex)
    idx = np.asarray(null_subcarriers, dtype=np.int64)
    n_rx = si_estimate.shape[0]
    cols = [si_estimate.at(idx) @ w_tx] if idx.size else []
    f_cols = np.asarray(cols[0]).T if cols else np.zeros((n_rx, 0), dtype=complex)
    if rx_steering_at_null_angles is None:
        return f_cols
    ang = np.asarray(rx_steering_at_null_angles, dtype=complex).reshape(n_rx, -1)
    return np.hstack([f_cols, ang])


def iui_constraints(cfg: ArrayConfig, w_rf_tx, user_index: int, comm_angles_deg, wavelength: float) -> np.ndarray:
    """Rows ``a_tx(theta_c,u')^H W_RF`` for every other user ``u'``.

    Warns with :class:`DegenerateDirections` when user directions repeat.
    """
    comm = np.atleast_1d(np.asarray(comm_angles_deg, dtype=float))
    if comm.size < 1:
        raise ValueError("at least one user direction is required")
    if np.unique(comm).size < comm.size:
        warnings.warn("duplicate user directions give rank-deficient IUI constraints", DegenerateDirections, stacklevel=2)
    others = np.delete(comm, user_index)
    w_rf_tx = np.asarray(w_rf_tx, dtype=complex)
    if others.size == 0:
        return np.zeros((0, w_rf_tx.shape[1]), dtype=complex)
    a = steering_vector(cfg, "tx", wavelength, others)
    return a.conj().T @ w_rf_tx


def iui_projector(d_u, rcond: float = 1e-10) -> Projector:
    """``I - D^+ D`` (projector onto the null space of the rows of ``d_u``)."""
    d_u = np.asarray(d_u, dtype=complex)
    return projector_from_columns(d_u.conj().T, rcond)


def uniform_null_frequencies(wf: WaveformConfig, n_freq: int) -> np.ndarray:
    """Subcarriers nearest ``f_low + BW * k / (n_freq + 1)``, ``k = 1..n_freq``.

    ``BW = N * delta_f`` and ``f_low = f_center - BW / 2``.
    """
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    if n_freq >= wf.n_subcarriers:
        raise ValueError(f"n_freq={n_freq} must be below the subcarrier count {wf.n_subcarriers}")
    bw = wf.bandwidth
    targets = wf.f_center - bw / 2 + bw * np.arange(1, n_freq + 1) / (n_freq + 1)
    f0 = wf.subcarrier_freqs([0])[0]
    idx = np.clip(np.rint((targets - f0) / wf.delta_f), 0, wf.n_subcarriers - 1).astype(np.int64)
    return _dedupe(idx)


def beamformed_si(si: SiChannelSet, w_tx_eff, w_rx_blk, indices=None) -> np.ndarray:
    """``|w_rx,l^H H_n w_tx,u|^2`` with shape ``(len(indices), l_rf_rx, U)``.

    ``w_tx_eff`` is ``l_tx x U`` (effective per-stream TX weights) and
    ``w_rx_blk`` is ``l_rx x l_rf_rx`` (block-diagonal for subarrays).
    """
    idx = si.subcarrier_indices if indices is None else np.asarray(indices, dtype=np.int64)
    w_tx_eff = np.asarray(w_tx_eff, dtype=complex).reshape(si.shape[1], -1)
    w_rx_blk = np.asarray(w_rx_blk, dtype=complex).reshape(si.shape[0], -1)
    out = np.empty((idx.size, w_rx_blk.shape[1], w_tx_eff.shape[1]))
    # chunked to bound memory on dense channels
    step = 512
    for s in range(0, idx.size, step):
        h = si.at(idx[s : s + step])
        c = w_rx_blk.conj().T[None] @ h @ w_tx_eff[None]
        out[s : s + step] = np.abs(c) ** 2
    return out


def average_si_suppression(si_true: SiChannelSet, w_tx_eff, w_rx_blk, indices=None) -> np.ndarray:
    """Band-averaged beamformed SI power in dB per ``(subarray, user)``.

    Evaluated against the given (true) channel over all of its subcarriers
    unless ``indices`` is given; clamped at -300 dB.
    """
    p = beamformed_si(si_true, w_tx_eff, w_rx_blk, indices).mean(axis=0)
    return 10.0 * np.log10(np.maximum(p, 10.0 ** (SUPPRESSION_FLOOR_DB / 10.0)))
