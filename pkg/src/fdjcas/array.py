"""ULA geometry, OFDM numerology, steering vectors and gain patterns.

Angles are azimuth in degrees measured from broadside. Element ``i`` of a
steering vector carries the phase ``i * 2*pi*(d_ant/lambda)*sin(theta)``, so
element 0 is always ``1+0j``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

C0 = 299_792_458.0
DB_FLOOR = -200.0


def to_db(x, floor_db: float = DB_FLOOR):
    """Power ratio to dB with values below ``floor_db`` clamped to it."""
    x = np.asarray(x, dtype=float)
    return 10.0 * np.log10(np.maximum(x, 10.0 ** (floor_db / 10.0)))


def from_db(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def angle_grid(start: float = -90.0, stop: float = 90.0, step: float = 0.25) -> np.ndarray:
    """Inclusive, evenly spaced angle grid in degrees."""
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


@dataclass(frozen=True)
class WaveformConfig:
    """OFDM numerology and power budget.

    Subcarrier ``n`` sits at ``f_center + (n - (N-1)/2) * delta_f``, i.e. the
    grid is centred on the carrier.
    """

    f_center: float = 28e9
    n_subcarriers: int = 3168
    delta_f: float = 120e3
    n_symbols: int = 10
    tx_power_dbm: float = 20.0
    noise_power_dbm: float = -88.0

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")
        if self.subcarrier_freqs()[0] <= 0:
            raise ValueError("lowest subcarrier frequency must be positive")

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.delta_f

    @property
    def center_wavelength(self) -> float:
        return C0 / self.f_center

    @property
    def center_index(self) -> int:
        """Subcarrier closest to the carrier (lower one on a tie)."""
        return (self.n_subcarriers - 1) // 2

    def subcarrier_freqs(self, indices=None) -> np.ndarray:
        n = np.arange(self.n_subcarriers) if indices is None else np.asarray(indices)
        return self.f_center + (n - (self.n_subcarriers - 1) / 2.0) * self.delta_f

    def wavelengths(self, indices=None) -> np.ndarray:
        return C0 / self.subcarrier_freqs(indices)


@dataclass(frozen=True)
class ArrayConfig:
    """Separate, colinear TX and RX uniform linear arrays.

    ``tx_rx_gap`` is the distance between the last TX element and the first
    RX element; it defaults to ``2 * d_ant``. RF chains feed contiguous
    subarrays of ``l_tx // l_rf_tx`` (TX) and ``l_rx // l_rf_rx`` (RX)
    elements.
    """

    l_tx: int
    l_rx: int
    d_ant: float
    l_rf_tx: int = 1
    l_rf_rx: int = 1
    tx_rx_gap: float | None = None

    def __post_init__(self):
        for name in ("l_tx", "l_rx", "l_rf_tx", "l_rf_rx"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.l_tx % self.l_rf_tx:
            raise ValueError("l_rf_tx must divide l_tx")
        if self.l_rx % self.l_rf_rx:
            raise ValueError("l_rf_rx must divide l_rx")
        if not self.d_ant > 0:
            raise ValueError("d_ant must be positive")
        if self.tx_rx_gap is None:
            object.__setattr__(self, "tx_rx_gap", 2.0 * self.d_ant)
        if not self.tx_rx_gap > 0:
            raise ValueError("tx_rx_gap must be positive")

    @classmethod
    def half_wavelength(cls, wf: WaveformConfig, l_tx=32, l_rx=32, **kw) -> "ArrayConfig":
        """Arrays with ``d_ant`` equal to half the carrier wavelength."""
        return cls(l_tx=l_tx, l_rx=l_rx, d_ant=wf.center_wavelength / 2.0, **kw)

    @property
    def tx_subarray_size(self) -> int:
        return self.l_tx // self.l_rf_tx

    @property
    def rx_subarray_size(self) -> int:
        return self.l_rx // self.l_rf_rx

    def rx_subarray_rows(self, index: int) -> slice:
        """Global RX element indices of subarray ``index`` (0-based)."""
        if not 0 <= index < self.l_rf_rx:
            raise IndexError(f"subarray index {index} outside [0, {self.l_rf_rx})")
        m = self.rx_subarray_size
        return slice(index * m, (index + 1) * m)

    def tx_positions(self) -> np.ndarray:
        return np.arange(self.l_tx) * self.d_ant

    def rx_positions(self) -> np.ndarray:
        start = (self.l_tx - 1) * self.d_ant + self.tx_rx_gap
        return start + np.arange(self.l_rx) * self.d_ant

    def n_elements(self, side: str) -> int:
        if side == "tx":
            return self.l_tx
        if side == "rx":
            return self.l_rx
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")


@dataclass(frozen=True)
class GainPattern:
    angles_deg: np.ndarray
    gains_db: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        a = np.asarray(self.angles_deg, dtype=float)
        g = np.asarray(self.gains_db, dtype=float)
        if a.shape != g.shape or a.ndim != 1:
            raise ValueError("angles and gains must be 1-D arrays of equal length")
        if a.size > 1 and np.any(np.diff(a) <= 0):
            raise ValueError("angles must be strictly increasing")
        object.__setattr__(self, "angles_deg", a)
        object.__setattr__(self, "gains_db", g)

    def at(self, theta_deg: float) -> float:
        """Gain at the grid point nearest ``theta_deg``."""
        return float(self.gains_db[np.argmin(np.abs(self.angles_deg - theta_deg))])

    def peak(self) -> tuple[float, float]:
        i = int(np.argmax(self.gains_db))
        return float(self.angles_deg[i]), float(self.gains_db[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["angle_deg", "gain_db"])
            for a, g in zip(self.angles_deg, self.gains_db):
                w.writerow([repr(float(a)), repr(float(g))])

    @classmethod
    def from_csv(cls, path) -> "GainPattern":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def ula_steering(n_elements: int, d_over_lambda, theta_deg) -> np.ndarray:
    """Steering vectors of an ``n_elements`` ULA.

    Returns shape ``(n_elements,)`` for scalar inputs, otherwise
    ``(n_elements,) + broadcast(d_over_lambda, theta_deg).shape``.
    """
    phi = 2.0 * np.pi * np.asarray(d_over_lambda) * np.sin(np.deg2rad(theta_deg))
    idx = np.arange(n_elements).reshape((-1,) + (1,) * np.ndim(phi))
    return np.exp(1j * idx * phi)


def steering_vector(cfg: ArrayConfig, side: str, subcarrier_wavelength: float, theta_deg) -> np.ndarray:
    """TX or RX array steering vector(s); one column per angle for array input."""
    return ula_steering(cfg.n_elements(side), cfg.d_ant / subcarrier_wavelength, theta_deg)


def _check_vec(w, n, name):
    w = np.asarray(w, dtype=complex)
    if w.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {w.shape}")
    return w


def array_gain(weights, steering) -> np.ndarray:
    """``|a^H w|^2`` for each column of ``steering``."""
    return np.abs(np.tensordot(np.conj(steering), weights, axes=(0, 0))) ** 2


def tx_gain_hbf(cfg: ArrayConfig, w_rf_tx, w_bb_u, subcarrier_wavelength, theta_deg):
    """Effective TX gain ``|a_tx^H W_RF w_bb|^2`` of one stream (linear)."""
    w_rf_tx = np.asarray(w_rf_tx, dtype=complex)
    if w_rf_tx.shape != (cfg.l_tx, cfg.l_rf_tx):
        raise ValueError(f"w_rf_tx must be {cfg.l_tx}x{cfg.l_rf_tx}, got {w_rf_tx.shape}")
    w_bb_u = _check_vec(w_bb_u, cfg.l_rf_tx, "w_bb_u")
    a = steering_vector(cfg, "tx", subcarrier_wavelength, theta_deg)
    g = array_gain(w_rf_tx @ w_bb_u, a)
    return float(g) if np.ndim(g) == 0 else g


def rx_gain_subarray(cfg: ArrayConfig, w_rf_rx_l, subarray_index: int, subcarrier_wavelength, theta_deg):
    """RX gain ``|w^H a_l|^2`` of one subarray (0-based ``subarray_index``).

    The subarray steering vector keeps the global element indices, so its
    first entry is not 1 unless ``subarray_index == 0``.
    """
    rows = cfg.rx_subarray_rows(subarray_index)
    w = _check_vec(w_rf_rx_l, cfg.rx_subarray_size, "w_rf_rx_l")
    a = steering_vector(cfg, "rx", subcarrier_wavelength, theta_deg)[rows]
    g = array_gain(w, a)
    return float(g) if np.ndim(g) == 0 else g


def abf_gains(cfg: ArrayConfig, w_tx, w_rx, subcarrier_wavelength, theta_grid):
    """TX, RX and combined radar patterns of an analog TX/RX pair.

    Returns
    -------
    tx, rx, crp : GainPattern
        The CRP is the pointwise product of the TX and RX patterns, so
        ``crp.gains_db == tx.gains_db + rx.gains_db``.
    """
    theta_grid = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    if theta_grid.size == 0:
        raise ValueError("theta_grid is empty")
    w_tx = _check_vec(w_tx, cfg.l_tx, "w_tx")
    w_rx = _check_vec(w_rx, cfg.l_rx, "w_rx")
    g_tx = to_db(array_gain(w_tx, steering_vector(cfg, "tx", subcarrier_wavelength, theta_grid)))
    g_rx = to_db(array_gain(w_rx, steering_vector(cfg, "rx", subcarrier_wavelength, theta_grid)))
    return (
        GainPattern(theta_grid, g_tx, "tx"),
        GainPattern(theta_grid, g_rx, "rx"),
        GainPattern(theta_grid, g_tx + g_rx, "crp"),
    )
