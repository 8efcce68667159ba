"""OFDM monostatic radar simulation and range-angle imaging.

Targets are static point scatterers. The received subcarrier samples after
RX beamforming are

    y_n = w_rx^H (sum_k a_rx(theta_k) h_k,n a_tx(theta_k)^H + H_SI,n) T x_n + noise

with steering vectors evaluated at each subcarrier's wavelength. Range
profiles come from dividing (or correlating) by the known TX symbols,
windowing across subcarriers and an inverse DFT.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import abf, hbf
from ._parallel import pmap
from .array import C0, ArrayConfig, WaveformConfig, steering_vector
from .errors import FullRankNullspace
from .nsp import NspConfig, projector_from_columns
from .sichannel import SiChannelSet

MAG_FLOOR = 1e-15


@dataclass(frozen=True)
class TargetSpec:
    theta_deg: float
    range_m: float
    rcs_m2: float = 1.0

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError("target range must be positive")
        if self.rcs_m2 < 0:
            raise ValueError("RCS must be >= 0")
        if abs(self.theta_deg) > 90:
            raise ValueError("target angle must lie in [-90, 90] degrees")


def far_field_distance(cfg: ArrayConfig, wavelength: float) -> float:
    """``2 (L d_ant)^2 / lambda`` for the larger of the two arrays."""
    aperture = max(cfg.l_tx, cfg.l_rx) * cfg.d_ant
    return 2 * aperture**2 / wavelength


def check_far_field(targets, cfg: ArrayConfig, wavelength: float) -> None:
    limit = far_field_distance(cfg, wavelength)
    near = [t for t in targets if t.range_m < limit]
    if near:
        warnings.warn(f"{len(near)} target(s) closer than the far-field distance {limit:.2f} m", stacklevel=2)


def target_channel_coeff(wf: WaveformConfig, target: TargetSpec, n):
    """``b_n exp(-2j pi n delta_f tau)`` with ``b_n = sqrt(lambda_n^2 sigma / ((4 pi)^3 d^4))``."""
    n_arr = np.asarray(n)
    lam = wf.wavelengths(n_arr)
    b = np.sqrt(lam**2 * target.rcs_m2 / ((4 * np.pi) ** 3 * target.range_m**4))
    tau = 2 * target.range_m / C0
    h = b * np.exp(-2j * np.pi * n_arr * wf.delta_f * tau)
    return complex(h) if h.ndim == 0 else h


def range_bin_width(wf: WaveformConfig, fft_size: int) -> float:
    return C0 / (2 * fft_size * wf.delta_f)


def default_fft_size(n_subcarriers: int) -> int:
    return 1 << (int(n_subcarriers) - 1).bit_length()


def qpsk(rng, shape) -> np.ndarray:
    """Unit-modulus QPSK symbols."""
    bits = rng.integers(0, 4, size=shape)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))


def dbm_to_watt(p_dbm: float) -> float:
    return 10 ** ((p_dbm - 30) / 10)


def tx_symbols(wf: WaveformConfig, n_streams: int, seed: int) -> np.ndarray:
    """QPSK symbols ``(U, N, n_symbols)``; the streams share the TX power equally."""
    rng = np.random.default_rng([seed, 0])
    amp = math.sqrt(dbm_to_watt(wf.tx_power_dbm) / (wf.n_subcarriers * n_streams))
    return amp * qpsk(rng, (n_streams, wf.n_subcarriers, wf.n_symbols))


@dataclass
class Beams:
    """Weights used for one look direction.

    ``tx`` is ``l_tx x U`` (one column per stream), ``rx`` the effective
    ``l_rx`` combiner and ``ref`` the per-stream coefficients forming the
    processing reference ``sum_u ref_u x_u``.
    """

    tx: np.ndarray
    rx: np.ndarray
    ref: np.ndarray

    def reference(self, symbols) -> np.ndarray:
        return np.tensordot(self.ref, symbols, axes=(0, 0))


def _array_response(n_el: int, weights, d_over_lambda, sin_theta, conj_weights: bool):
    """``sum_i c_i exp(+/- j i phi)`` over targets x subcarriers.

    Returns ``(K, N)`` for a vector of weights or ``(K, N, U)`` for a matrix.
    """
    phi = 2 * np.pi * np.outer(sin_theta, d_over_lambda)  # (K, N)
    idx = np.arange(n_el)
    w = np.asarray(weights)
    if conj_weights:
        # w^H a = sum conj(w_i) e^{+j i phi}
        e = np.exp(1j * phi[..., None] * idx)
        return e @ np.conj(w)
    # a^H W = sum e^{-j i phi} W_i
    e = np.exp(-1j * phi[..., None] * idx)
    return e @ w


def beamformed_channel(cfg: ArrayConfig, wf: WaveformConfig, beams: Beams, targets, si_true: SiChannelSet | None):
    """Scalar channel per subcarrier and stream, ``(N, U)``."""
    n = np.arange(wf.n_subcarriers)
    tx = np.asarray(beams.tx, dtype=complex).reshape(cfg.l_tx, -1)
    rx = np.asarray(beams.rx, dtype=complex)
    g = np.zeros((wf.n_subcarriers, tx.shape[1]), dtype=complex)
    live = [t for t in targets if t.rcs_m2 > 0]
    if live:
        d_over_lambda = cfg.d_ant / wf.wavelengths(n)
        s = np.sin(np.deg2rad([t.theta_deg for t in live]))
        r_resp = _array_response(cfg.l_rx, rx, d_over_lambda, s, True)  # (K, N)
        t_resp = _array_response(cfg.l_tx, tx, d_over_lambda, s, False)  # (K, N, U)
        h = np.array([target_channel_coeff(wf, t, n) for t in live])  # (K, N)
        g += np.einsum("kn,kn,knu->nu", r_resp, h, t_resp)
    if si_true is not None:
        step = 512
        for a in range(0, wf.n_subcarriers, step):
            hs = si_true.at(n[a : a + step])
            g[a : a + step] += np.tensordot(rx.conj(), hs, axes=(0, 1)) @ tx
    return g


def synth_received(
    cfg: ArrayConfig,
    wf: WaveformConfig,
    beams: Beams,
    targets,
    si_true: SiChannelSet | None,
    symbols,
    noise_seed=None,
) -> np.ndarray:
    """Received samples ``(N, n_symbols)`` after RX beamforming.

    ``noise_seed=None`` disables noise. Otherwise the noise is circular
    Gaussian with total power ``noise_power_dbm`` spread evenly across
    subcarriers and scaled by ``||w_rx||^2``.
    """
    symbols = np.asarray(symbols)
    g = beamformed_channel(cfg, wf, beams, targets, si_true)
    if symbols.shape[:2] != (g.shape[1], wf.n_subcarriers):
        raise ValueError(f"symbols must have shape (U={g.shape[1]}, N={wf.n_subcarriers}, S)")
    y = np.einsum("nu,uns->ns", g, symbols)
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        var = dbm_to_watt(wf.noise_power_dbm) / wf.n_subcarriers * float(np.vdot(beams.rx, beams.rx).real)
        y = y + math.sqrt(var / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def range_profile(rx_samples, tx_symbols, window: str = "hamming", fft_size: int | None = None, mode: str = "divide"):
    """Symbol-averaged range profile magnitude (length ``fft_size``).

    ``mode="divide"`` uses ``y_n / x_n``; ``"correlate"`` uses
    ``y_n conj(x_n) / mean|x|^2`` (robust when ``x`` is a sum of streams).
    Bin ``k`` corresponds to range ``k * c0 / (2 fft_size delta_f)``.
    """
    y = np.asarray(rx_samples)
    x = np.asarray(tx_symbols)
    if y.ndim == 1:
        y, x = y[:, None], x[:, None]
    n = y.shape[0]
    fft_size = default_fft_size(n) if fft_size is None else int(fft_size)
    if fft_size < n:
        raise ValueError("fft_size must be >= the number of subcarriers")
    if mode == "divide":
        nz = np.abs(x) > 0
        z = np.where(nz, y / np.where(nz, x, 1), 0)
    elif mode == "correlate":
        z = y * np.conj(x) / max(float(np.mean(np.abs(x) ** 2)), 1e-300)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if window == "hamming":
        win = np.hamming(n)
    elif window == "rect":
        win = np.ones(n)
    else:
        raise ValueError(f"unknown window {window!r}")
    prof = np.fft.ifft(z * win[:, None], n=fft_size, axis=0)
    return np.mean(np.abs(prof), axis=1)


@dataclass
class RadarImage:
    """Range-angle magnitude map; ``magnitude_db`` is ``angles x ranges``."""

    range_bins_m: np.ndarray
    angles_deg: np.ndarray
    magnitude_db: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.range_bins_m = np.asarray(self.range_bins_m, dtype=float)
        self.angles_deg = np.asarray(self.angles_deg, dtype=float)
        self.magnitude_db = np.asarray(self.magnitude_db, dtype=float)
        if self.magnitude_db.shape != (self.angles_deg.size, self.range_bins_m.size):
            raise ValueError("magnitude_db must be angles x ranges")
        if not np.all(np.isfinite(self.magnitude_db)):
            raise ValueError("image entries must be finite")

    def to_csv(self, path) -> None:
        """First row holds the range bins, first column the angles."""
        with open(path, "w") as fh:
            fh.write("angle_deg\\range_m," + ",".join(repr(float(r)) for r in self.range_bins_m) + "\n")
            for a, row in zip(self.angles_deg, self.magnitude_db):
                fh.write(repr(float(a)) + "," + ",".join(repr(float(v)) for v in row) + "\n")

    def save(self, stem) -> tuple[str, str]:
        """Write ``<stem>.csv`` and the ``<stem>.json`` metadata sidecar."""
        stem = str(stem)
        self.to_csv(stem + ".csv")
        with open(stem + ".json", "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return stem + ".csv", stem + ".json"

    @classmethod
    def load(cls, stem) -> "RadarImage":
        stem = str(stem)
        with open(stem + ".csv") as fh:
            head = fh.readline().rstrip("\n").split(",")[1:]
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        try:
            with open(stem + ".json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            meta = {}
        return cls(np.array([float(h) for h in head]), data[:, 0], data[:, 1:], meta)


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(type(o).__name__)


def _drop_near(angles, theta, guard):
    return tuple(a for a in angles if abs(a - theta) > guard)


@dataclass
class AbfDesigner:
    """Analog beams for a look direction; user directions stay fixed.

    Angular nulls (and user beams in the RX) closer than ``null_guard_deg``
    to the look direction are dropped so the radar beam itself is not nulled.
    """

    array: ArrayConfig
    wf: WaveformConfig
    theta_comm_deg: tuple
    rho_rad: float
    rho_comm: tuple
    nsp: NspConfig
    config: str
    si_estimate: SiChannelSet | None = None
    mask: dict = field(default_factory=dict)
    solver: abf.CpslOptions = field(default_factory=abf.CpslOptions)
    null_guard_deg: float = 7.0

    def scenario(self, theta: float) -> abf.AbfScenario:
        ang = self.nsp.null_angles_deg or self.theta_comm_deg
        nsp = NspConfig(
            self.nsp.n_freq,
            self.nsp.null_subcarriers,
            _drop_near(ang, theta, self.null_guard_deg),
            self.nsp.svd_rcond,
        )
        return abf.AbfScenario(self.array, self.wf, theta, self.theta_comm_deg, self.rho_rad, self.rho_comm, nsp, self.config)

    def __call__(self, theta: float) -> Beams:
        scn = self.scenario(theta)
        w_tx = abf.cf_tx_weights(scn)
        if self.config == "CF_C" and not scn.nsp.null_angles_deg:
            # CF_C with every user inside the guard behaves like CF_B
            scn = abf.AbfScenario(scn.array, scn.wf, theta, scn.theta_comm_deg, scn.rho_rad, scn.rho_comm, scn.nsp, "CF_B")
        mask = abf.CrpMask(theta, **self.mask)
        w_rx = abf.design_rx(scn, w_tx, self.si_estimate, mask, self.solver)
        return Beams(w_tx[:, None], w_rx, np.ones(1))


@dataclass
class HbfDesigner:
    """Hybrid beams for a look direction.

    The RX subarray outputs are merged by a second-stage combiner matched to
    the look direction with nulls toward the user directions.
    """

    array: ArrayConfig
    wf: WaveformConfig
    theta_comm_deg: tuple
    mu_db: tuple
    nsp: NspConfig
    si_estimate: SiChannelSet | None = None
    stream_powers: tuple | None = None
    rf_assignment: object = "search"
    null_guard_deg: float = 7.0

    def __call__(self, theta: float) -> Beams:
        scn = hbf.HbfScenario(
            self.array, self.wf, theta, self.theta_comm_deg, self.mu_db, self.stream_powers, self.nsp, self.rf_assignment
        )
        weights, _ = hbf.design(scn, self.si_estimate)
        w_blk = weights.rx_matrix()
        lam = scn.wavelength

        def sub_resp(t):
            return w_blk.conj().T @ steering_vector(self.array, "rx", lam, t)

        nulls = _drop_near(self.theta_comm_deg, theta, self.null_guard_deg)
        cols = np.column_stack([sub_resp(t) for t in nulls]) if nulls else np.zeros((w_blk.shape[1], 0))
        target = sub_resp(theta)
        try:
            proj = projector_from_columns(cols)
            c = proj.matrix @ target
        except FullRankNullspace:
            c = target
        if np.linalg.norm(c) < 1e-12 * max(np.linalg.norm(target), 1e-300):
            c = target
        c = c / np.linalg.norm(c)
        rx = w_blk @ c
        a_rad = steering_vector(self.array, "tx", lam, theta)
        ref = a_rad.conj() @ weights.tx_effective()
        return Beams(weights.tx_effective(), rx, ref)


@dataclass(frozen=True)
class ScanSettings:
    angles_deg: tuple = tuple(float(a) for a in range(-60, 61))
    window: str = "hamming"
    fft_size: int | None = None
    max_range_m: float | None = 60.0
    seed: int = 0
    noise: bool = True


def _scan_one(shared, item):
    cfg, wf, designer, targets, si, symbols, settings, fft_size, n_bins = shared
    k, theta = item
    beams = designer(theta)
    noise_seed = [settings.seed, 1, k] if settings.noise else None
    y = synth_received(cfg, wf, beams, targets, si, symbols, noise_seed)
    mode = "divide" if beams.tx.shape[1] == 1 else "correlate"
    prof = range_profile(y, beams.reference(symbols), settings.window, fft_size, mode)
    return 20 * np.log10(np.maximum(prof[:n_bins], MAG_FLOOR))


def scan(cfg: ArrayConfig, wf: WaveformConfig, designer, targets, si_true, settings: ScanSettings | None = None, metadata=None, workers=None):
    """Sweep the look direction and stack the range profiles into an image.

    ``designer(theta)`` returns the :class:`Beams` for look direction
    ``theta``. The same TX symbols are reused at every angle; noise uses a
    stream derived from ``(seed, angle index)``.
    """
    settings = ScanSettings() if settings is None else settings
    targets = list(targets)
    check_far_field(targets, cfg, wf.center_wavelength)
    fft_size = settings.fft_size or default_fft_size(wf.n_subcarriers)
    width = range_bin_width(wf, fft_size)
    n_bins = fft_size if settings.max_range_m is None else min(fft_size, int(settings.max_range_m // width) + 1)
    probe = designer(settings.angles_deg[0])
    symbols = tx_symbols(wf, probe.tx.shape[1], settings.seed)
    shared = (cfg, wf, designer, targets, si_true, symbols, settings, fft_size, n_bins)
    rows = pmap(_scan_one, list(enumerate(settings.angles_deg)), shared, workers)
    meta = {"window": settings.window, "fft_size": fft_size, "seed": settings.seed, "noise": settings.noise}
    meta.update(metadata or {})
    return RadarImage(np.arange(n_bins) * width, np.array(settings.angles_deg), np.vstack(rows), meta)
