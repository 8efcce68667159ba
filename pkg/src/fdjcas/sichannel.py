"""TX-to-RX self-interference (SI) coupling channels: synthesis, file I/O, estimation error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .array import ArrayConfig, WaveformConfig
from .errors import LoadError

HEADER = ["subcarrier", "rx", "tx", "re", "im"]


@dataclass(frozen=True)
class SiChannelSet:
    """Per-subcarrier coupling matrices of shape ``(l_rx, l_tx)``.

    ``matrices[k]`` belongs to subcarrier ``subcarrier_indices[k]``. Matrices
    at unlisted subcarriers are obtained by linear interpolation of the real
    and imaginary parts (constant beyond the listed range), see :meth:`at`.
    """

    subcarrier_indices: np.ndarray
    matrices: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        idx = np.asarray(self.subcarrier_indices, dtype=np.int64).ravel()
        mats = np.asarray(self.matrices, dtype=complex)
        if mats.ndim != 3 or mats.shape[0] != idx.size:
            raise ValueError("matrices must have shape (len(subcarrier_indices), l_rx, l_tx)")
        if idx.size == 0:
            raise ValueError("at least one subcarrier is required")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("subcarrier indices must be strictly increasing")
        if not np.all(np.isfinite(mats)):
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "subcarrier_indices", idx)
        object.__setattr__(self, "matrices", mats)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrices.shape[1], self.matrices.shape[2]

    def at(self, indices) -> np.ndarray:
        """Matrices at ``indices``; shape ``(len(indices), l_rx, l_tx)``."""
        q = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        idx = self.subcarrier_indices
        if q.size == idx.size and np.array_equal(q, idx):
            # read-only view; avoids copying dense channels
            view = self.matrices.view()
            view.flags.writeable = False
            return view
        pos = np.searchsorted(idx, q)
        exact = (pos < idx.size) & (idx[np.minimum(pos, idx.size - 1)] == q)
        if np.all(exact):
            return self.matrices[pos]
        hi = np.clip(pos, 1, idx.size - 1) if idx.size > 1 else np.zeros_like(pos)
        lo = np.maximum(hi - 1, 0)
        span = np.where(idx[hi] > idx[lo], idx[hi] - idx[lo], 1)
        t = np.clip((q - idx[lo]) / span, 0.0, 1.0)[:, None, None]
        out = (1.0 - t) * self.matrices[lo] + t * self.matrices[hi]
        out[exact] = self.matrices[pos[exact]]
        return out

    def expanded(self, n_subcarriers: int) -> "SiChannelSet":
        """Dense copy holding every subcarrier ``0..n_subcarriers-1``."""
        if self.subcarrier_indices[-1] >= n_subcarriers:
            raise ValueError("channel lists subcarriers beyond n_subcarriers")
        return SiChannelSet(np.arange(n_subcarriers), self.at(np.arange(n_subcarriers)), self.source)

    def save(self, path) -> None:
        """Write the CSV format ``subcarrier,rx,tx,re,im`` (lossless floats)."""
        n_rx, n_tx = self.shape
        rr, tt = np.meshgrid(np.arange(n_rx), np.arange(n_tx), indexing="ij")
        rr, tt = rr.ravel(), tt.ravel()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for n, m in zip(self.subcarrier_indices, self.matrices):
                flat = m.ravel()
                for r, t, v in zip(rr, tt, flat):
                    w.writerow([int(n), int(r), int(t), repr(float(v.real)), repr(float(v.imag))])


@dataclass(frozen=True)
class SiErrorConfig:
    """Relative estimation error level ``epsilon`` and RNG seed."""

    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be a finite value >= 0")


def element_distances(cfg: ArrayConfig) -> np.ndarray:
    """Distances between every RX (rows) and TX (columns) element."""
    return np.abs(cfg.rx_positions()[:, None] - cfg.tx_positions()[None, :])


def synth_si_channel(cfg: ArrayConfig, wf: WaveformConfig, isolation_db: float, indices=None) -> SiChannelSet:
    """Free-space, inverse-distance coupling between colinear TX and RX arrays.

    Entry ``(r, t)`` at subcarrier ``n`` is
    ``alpha * exp(-2j*pi*d_rt/lambda_n) * d_min/d_rt``. ``alpha`` is chosen so
    that the mean entry power is ``-isolation_db`` (the magnitude law does not
    depend on frequency). Deterministic.

    Parameters
    ----------
    indices : array_like of int, optional
        Subcarriers to generate; defaults to the whole band.
    """
    if not isolation_db > 0:
        raise ValueError("isolation_db must be positive")
    dist = element_distances(cfg)
    rel = dist.min() / dist
    alpha = math.sqrt(10.0 ** (-isolation_db / 10.0) / np.mean(rel**2))
    idx = np.arange(wf.n_subcarriers) if indices is None else np.unique(np.asarray(indices, dtype=np.int64))
    lam = wf.wavelengths(idx)
    mats = alpha * rel[None] * np.exp(-2j * np.pi * dist[None] / lam[:, None, None])
    return SiChannelSet(idx, mats, "synthetic")


def mean_entry_power(mats) -> np.ndarray:
    """Average ``|h|^2`` over the entries of each matrix."""
    return np.mean(np.abs(np.asarray(mats)) ** 2, axis=(-2, -1))


def perturb_estimate(true: SiChannelSet, err: SiErrorConfig, indices=None) -> SiChannelSet:
    """Noisy channel estimate ``H + E``.

    Entries of ``E`` at subcarrier ``n`` are circular complex Gaussian with
    variance ``epsilon**2`` times the mean entry power of ``H_n``. Each
    subcarrier draws from its own stream seeded by ``(seed, n)``, so the
    estimate at a subcarrier does not depend on which others are requested.

    Parameters
    ----------
    indices : array_like of int, optional
        Restrict the estimate to these subcarriers (interpolating the true
        channel where needed). Defaults to the subcarriers of ``true``.
    """
    idx = true.subcarrier_indices if indices is None else np.unique(np.asarray(indices, dtype=np.int64))
    h = true.at(idx)
    if err.epsilon == 0:
        return SiChannelSet(idx, h.copy(), "estimate")
    out = np.empty_like(h)
    shape = h.shape[1:]
    scale = err.epsilon * np.sqrt(mean_entry_power(h) / 2.0)
    for k, n in enumerate(idx):
        rng = np.random.default_rng([err.seed, int(n)])
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        out[k] = h[k] + scale[k] * noise
    return SiChannelSet(idx, out, "estimate")


def _fail(msg, row):
    raise LoadError(msg, row)


def load_si_channel(path, n_subcarriers: int | None = None) -> SiChannelSet:
    """Read a ``subcarrier,rx,tx,re,im`` CSV file.

    Rows are grouped by subcarrier in ascending order and every group must
    list each ``(rx, tx)`` pair exactly once. With ``n_subcarriers`` given the
    result is expanded to the full band by linear interpolation.

    Raises
    ------
    LoadError
        On malformed rows, inconsistent dimensions or unordered subcarriers;
        ``row`` is the 1-based line number in the file.
    """
    groups: list[tuple[int, dict]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or [h.strip() for h in head] != HEADER:
            _fail(f"expected header {','.join(HEADER)}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                _fail(f"expected 5 fields, got {len(row)}", line_no)
            try:
                n, r, t = (int(c) for c in row[:3])
                v = complex(float(row[3]), float(row[4]))
            except ValueError:
                _fail("unparsable field", line_no)
            if min(n, r, t) < 0:
                _fail("negative index", line_no)
            if not (math.isfinite(v.real) and math.isfinite(v.imag)):
                _fail("non-finite value", line_no)
            if not groups or groups[-1][0] != n:
                if groups and n < groups[-1][0]:
                    _fail(f"subcarrier {n} after {groups[-1][0]}", line_no)
                if any(g[0] == n for g in groups):
                    _fail(f"subcarrier {n} listed in two separate groups", line_no)
                groups.append((n, {}))
            entries = groups[-1][1]
            if (r, t) in entries:
                _fail(f"duplicate entry rx={r} tx={t}", line_no)
            entries[(r, t)] = (v, line_no)
    if not groups:
        raise LoadError("file holds no channel entries")
    n_rx = 1 + max(r for _, e in groups for r, _ in e)
    n_tx = 1 + max(t for _, e in groups for _, t in e)
    mats = np.zeros((len(groups), n_rx, n_tx), dtype=complex)
    for k, (n, entries) in enumerate(groups):
        if len(entries) != n_rx * n_tx:
            last = max(ln for _, ln in entries.values())
            _fail(f"subcarrier {n} has {len(entries)} entries, expected {n_rx * n_tx}", last)
        for (r, t), (v, _) in entries.items():
            mats[k, r, t] = v
    chan = SiChannelSet(np.array([g[0] for g in groups]), mats, "file")
    if n_subcarriers is not None:
        chan = chan.expanded(n_subcarriers)
    return chan
