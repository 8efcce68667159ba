"""Analog-array JCAS designs.

The TX array forms a multibeam toward the radar and user directions. The RX
array looks at the radar direction while nulling SI images at selected
subcarriers (frequency nulls) and, optionally, the user directions (angular
nulls). Configurations:

========  ==========================================
CF_A      matched RX beam, no nulls
CF_B      frequency nulls
CF_C      frequency and angular nulls
CPSL      CF_C start refined by the sidelobe optimizer
========  ==========================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .array import ArrayConfig, GainPattern, WaveformConfig, angle_grid, array_gain, steering_vector, to_db
from .errors import ConfigError, FullRankNullspace
from .nsp import NspConfig, Projector, project_unit, projector_from_columns, si_constraints_abf
from .sichannel import SiChannelSet

CONFIGS = ("CF_A", "CF_B", "CF_C", "CPSL")
_K = 10.0 / math.log(10.0)
_GAIN_FLOOR = 1e-20


@dataclass(frozen=True)
class AbfScenario:
    array: ArrayConfig
    wf: WaveformConfig
    theta_rad_deg: float
    theta_comm_deg: tuple = ()
    rho_rad: float = 1.0
    rho_comm: tuple = ()
    nsp: NspConfig = field(default_factory=NspConfig)
    config: str = "CF_A"

    def __post_init__(self):
        comm = tuple(float(t) for t in np.atleast_1d(self.theta_comm_deg))
        rho = tuple(float(r) for r in np.atleast_1d(self.rho_comm))
        object.__setattr__(self, "theta_comm_deg", comm)
        object.__setattr__(self, "rho_comm", rho)
        if self.array.l_rf_tx != 1 or self.array.l_rf_rx != 1:
            raise ConfigError("analog arrays use a single RF chain per side", key="array.l_rf_tx")
        if len(rho) != len(comm):
            raise ConfigError("rho needs one share per user direction", key="beams.rho")
        if min((self.rho_rad,) + rho) < 0 or abs(self.rho_rad + sum(rho) - 1) > 1e-12:
            raise ConfigError("energy shares must be >= 0 and sum to 1", key="beams.rho")
        if self.config not in CONFIGS:
            raise ConfigError(f"config must be one of {CONFIGS}", key="config")

    @property
    def wavelength(self) -> float:
        return self.wf.center_wavelength

    def angular_nulls(self) -> tuple:
        """Configured null angles, defaulting to the user directions."""
        return self.nsp.null_angles_deg or self.theta_comm_deg


@dataclass(frozen=True)
class CrpMask:
    """Piecewise parabolic desired CRP around the radar direction.

    Inside ``|theta - theta_rad| <= delta/2`` the mask falls parabolically
    from ``g_max_db`` to ``g_max_db + cpsl_db``; outside it stays flat at that
    level. ``desired_db`` replaces the formula with explicit values on
    ``grid``.
    """

    theta_rad_deg: float
    g_max_db: float = 35.0
    delta_deg: float = 14.0
    cpsl_db: float = -75.0
    grid: np.ndarray | None = None
    eta: np.ndarray | None = None
    desired_db: np.ndarray | None = None

    def __post_init__(self):
        if not self.delta_deg > 0:
            raise ConfigError("mask width must be positive", key="mask.delta_deg")
        if not self.cpsl_db < 0:
            raise ConfigError("mask sidelobe level must be negative", key="mask.cpsl_db")
        grid = angle_grid(-90, 90, 0.5) if self.grid is None else np.asarray(self.grid, dtype=float)
        if grid.size == 0:
            raise ConfigError("mask grid is empty", key="mask.grid")
        half = self.delta_deg / 2
        if grid.min() > self.theta_rad_deg - half or grid.max() < self.theta_rad_deg + half:
            raise ConfigError("mask grid must cover the mainlobe", key="mask.grid")
        eta = np.ones(grid.size) if self.eta is None else np.asarray(self.eta, dtype=float)
        if eta.shape != grid.shape or np.any(eta < 0):
            raise ConfigError("eta needs one nonnegative weight per grid angle", key="mask.eta")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "eta", eta)
        if self.desired_db is not None:
            d = np.asarray(self.desired_db, dtype=float)
            if d.shape != grid.shape:
                raise ConfigError("desired_db must match the grid", key="mask.desired_db")
            object.__setattr__(self, "desired_db", d)

    def mainlobe(self, theta) -> np.ndarray:
        return np.abs(np.asarray(theta, dtype=float) - self.theta_rad_deg) <= self.delta_deg / 2

    def target(self) -> np.ndarray:
        """Desired CRP on the mask grid."""
        return desired_crp(self, self.grid) if self.desired_db is None else self.desired_db


def desired_crp(mask: CrpMask, theta_s):
    """Mask value(s) in dB at ``theta_s`` (ignores ``desired_db``)."""
    dth = np.asarray(theta_s, dtype=float) - mask.theta_rad_deg
    inside = np.abs(dth) <= mask.delta_deg / 2
    out = np.where(inside, dth**2 * mask.cpsl_db / (mask.delta_deg**2 / 4) + mask.g_max_db, mask.g_max_db + mask.cpsl_db)
    return float(out) if out.ndim == 0 else out


def cf_tx_weights(scn: AbfScenario) -> np.ndarray:
    """Unit-norm sum of matched beams weighted by ``sqrt(rho)``."""
    angles = (scn.theta_rad_deg,) + scn.theta_comm_deg
    rho = np.array((scn.rho_rad,) + scn.rho_comm)
    a = steering_vector(scn.array, "tx", scn.wavelength, np.array(angles)).reshape(scn.array.l_tx, -1)
    w = (a / np.sqrt(scn.array.l_tx)) @ np.sqrt(rho)
    nrm = np.linalg.norm(w)
    if nrm == 0:
        raise ConfigError("the TX beams cancel each other", key="beams")
    return w / nrm


def rx_projector(scn: AbfScenario, w_tx, si_estimate: SiChannelSet | None, config: str | None = None) -> Projector:
    """Projector ``I - F F^+`` for the nulls used by ``config``."""
    config = scn.config if config is None else config
    cfg = scn.array
    freq = config in ("CF_B", "CF_C", "CPSL")
    ang = config == "CF_C"
    nulls = scn.nsp.resolve_subcarriers(scn.wf) if freq else np.zeros(0, dtype=np.int64)
    if nulls.size and si_estimate is None:
        raise ConfigError("frequency nulls need an SI channel estimate", key="si")
    steer = None
    if ang and scn.angular_nulls():
        steer = steering_vector(cfg, "rx", scn.wavelength, np.array(scn.angular_nulls())).reshape(cfg.l_rx, -1)
    if si_estimate is None:
        f = steer if steer is not None else np.zeros((cfg.l_rx, 0))
    else:
        f = si_constraints_abf(si_estimate, w_tx, nulls, steer)
    return projector_from_columns(f, scn.nsp.svd_rcond)


def cf_rx_weights(scn: AbfScenario, w_tx, si_estimate: SiChannelSet | None, config: str | None = None) -> np.ndarray:
    """Closed-form RX weights ``N a_rx(theta_rad) / ||N a_rx(theta_rad)||``.

    ``config`` overrides ``scn.config``; ``"CPSL"`` yields its frequency-null
    starting space (same as CF_B).
    """
    proj = rx_projector(scn, w_tx, si_estimate, config)
    a = steering_vector(scn.array, "rx", scn.wavelength, scn.theta_rad_deg)
    return project_unit(proj, a)


def crp_db(cfg: ArrayConfig, w_tx, w_rx, wavelength, grid) -> np.ndarray:
    g_tx = array_gain(w_tx, steering_vector(cfg, "tx", wavelength, grid))
    g_rx = array_gain(w_rx, steering_vector(cfg, "rx", wavelength, grid))
    return to_db(g_tx) + to_db(g_rx)


def measure_cpsl(crp: GainPattern, theta_rad: float, delta_deg: float) -> float:
    """Highest CRP outside the mainlobe relative to the CRP peak, in dB."""
    out = np.abs(crp.angles_deg - theta_rad) > delta_deg / 2
    if not np.any(out):
        raise ValueError("pattern grid has no points outside the mainlobe")
    return float(crp.gains_db[out].max() - crp.gains_db.max())


@dataclass(frozen=True)
class CpslOptions:
    """Solver settings.

    ``penalty="floor"`` penalizes sidelobes only where they rise above the
    mask; ``"two_sided"`` fits the mask everywhere.
    """

    restarts: int = 8
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    perturbation: float = 0.3
    penalty: str = "floor"

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1 or not self.tol > 0:
            raise ConfigError("restarts and max_iters must be >= 1 and tol positive", key="solver")
        if self.penalty not in ("floor", "two_sided"):
            raise ConfigError("penalty must be 'floor' or 'two_sided'", key="solver.penalty")


@dataclass
class CpslResult:
    w_rx: np.ndarray
    objective: float
    history: list
    converged: bool
    restart_objectives: list
    best_restart: int


class CrpFit:
    """dB-domain least-squares fit of the CRP to a mask in reduced coordinates.

    The RX weight is ``w = V z`` with ``V`` an orthonormal basis of the SI
    null space, and ``x = [Re z, Im z]``. Residuals are invariant to the
    scale of ``z``, so unit norm is restored freely after each step.
    """

    def __init__(self, cfg: ArrayConfig, w_tx, basis, mask: CrpMask, wavelength: float, penalty: str = "floor"):
        self.basis = basis
        grid = mask.grid
        self.tx_db = to_db(array_gain(w_tx, steering_vector(cfg, "tx", wavelength, grid)))
        # y_s = b_s^H z with b_s = V^H a_rx(theta_s); store conj rows for y = Bc @ z
        self.bc = (basis.conj().T @ steering_vector(cfg, "rx", wavelength, grid)).conj().T
        self.target = mask.target()
        self.sqrt_w = np.sqrt(mask.eta / grid.size)
        self.one_sided = (~mask.mainlobe(grid)) if penalty == "floor" else np.zeros(grid.size, dtype=bool)

    def split(self, x):
        r = x.size // 2
        return x[:r] + 1j * x[r:]

    def stack(self, z):
        return np.concatenate([z.real, z.imag])

    def residuals(self, x):
        z = self.split(x)
        y = self.bc @ z
        g = np.abs(y) ** 2
        nz = float(np.vdot(z, z).real)
        e = self.tx_db + _K * np.log(np.maximum(g, _GAIN_FLOOR)) - _K * math.log(nz) - self.target
        active = ~(self.one_sided & (e < 0))
        return np.where(active, e, 0.0) * self.sqrt_w, (y, g, nz, active)

    def jacobian(self, x, cache):
        y, g, nz, active = cache
        cy = np.conj(y)[:, None] * self.bc
        jac = np.hstack([2 * cy.real, -2 * cy.imag]) / np.maximum(g, _GAIN_FLOOR)[:, None]
        jac[g <= _GAIN_FLOOR] = 0.0
        jac -= 2 * x[None, :] / nz
        jac *= _K * self.sqrt_w[:, None]
        jac[~active] = 0.0
        return jac

    def objective(self, x) -> float:
        r, _ = self.residuals(x)
        return float(r @ r)

    def gradient(self, x):
        r, cache = self.residuals(x)
        return 2 * self.jacobian(x, cache).T @ r

    def weights(self, x):
        w = self.basis @ self.split(x)
        return w / np.linalg.norm(w)


def check_gradient(fit: CrpFit, x, step: float = 1e-6) -> float:
    """Relative error between the analytic and central-difference gradients."""
    g = fit.gradient(x)
    fd = np.empty_like(g)
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = step
        fd[i] = (fit.objective(x + dx) - fit.objective(x - dx)) / (2 * step)
    return float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-300))


def levenberg_marquardt(fit: CrpFit, x0, max_iters: int = 500, tol: float = 1e-8):
    """Damped Gauss-Newton that only accepts decreasing steps.

    Returns ``(x, history, converged)``; ``history`` is non-increasing.
    """
    x = x0 / np.linalg.norm(x0)
    r, cache = fit.residuals(x)
    f = float(r @ r)
    hist = [f]
    damping = 1e-3
    converged = False
    for _ in range(max_iters):
        jac = fit.jacobian(x, cache)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj) + 1e-12
        while True:
            try:
                dx = np.linalg.solve(jtj + damping * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                dx = -grad
            xn = x + dx
            xn /= np.linalg.norm(xn)
            rn, cn = fit.residuals(xn)
            fn = float(rn @ rn)
            if fn < f or damping > 1e12:
                break
            damping *= 10
        if not fn < f:
            converged = True
            break
        rel = (f - fn) / max(f, 1e-300)
        x, r, cache, f = xn, rn, cn, fn
        hist.append(f)
        damping = max(damping / 3, 1e-9)
        if rel < tol:
            converged = True
            break
    return x, hist, converged


def cpsl_optimize(
    scn: AbfScenario, w_tx, si_estimate: SiChannelSet | None, mask: CrpMask, opts: CpslOptions | None = None
) -> CpslResult:
    """RX weights whose CRP best fits ``mask`` while keeping the SI nulls.

    Restart 0 starts from CF_C, restart 1 from CF_B, and the rest from seeded
    perturbations of CF_C. The best objective wins (lowest index on ties).
    """
    opts = CpslOptions() if opts is None else opts
    cfg = scn.array
    proj = rx_projector(scn, w_tx, si_estimate, "CPSL")
    fit = CrpFit(cfg, w_tx, proj.basis, mask, scn.wavelength, opts.penalty)
    a = steering_vector(cfg, "rx", scn.wavelength, scn.theta_rad_deg)
    w_b = project_unit(proj, a)
    try:
        w_c = cf_rx_weights(scn, w_tx, si_estimate, "CF_C")
    except FullRankNullspace:
        w_c = w_b
    x_c = fit.stack(proj.basis.conj().T @ w_c)
    x_b = fit.stack(proj.basis.conj().T @ w_b)
    rng = np.random.default_rng(opts.seed)
    starts = [x_c, x_b]
    while len(starts) < opts.restarts:
        starts.append(x_c + opts.perturbation * rng.standard_normal(x_c.size) / math.sqrt(x_c.size))
    starts = starts[: opts.restarts]
    best = None
    objs = []
    for k, x0 in enumerate(starts):
        x, hist, conv = levenberg_marquardt(fit, x0, opts.max_iters, opts.tol)
        objs.append(hist[-1])
        if best is None or hist[-1] < best[1][-1]:
            best = (x, hist, conv, k)
    x, hist, conv, k = best
    return CpslResult(fit.weights(x), hist[-1], hist, conv, objs, k)


def design_rx(scn: AbfScenario, w_tx, si_estimate, mask: CrpMask | None = None, opts: CpslOptions | None = None):
    """RX weights for ``scn.config``; CPSL needs a mask."""
    if scn.config != "CPSL":
        return cf_rx_weights(scn, w_tx, si_estimate)
    if mask is None:
        mask = CrpMask(scn.theta_rad_deg)
    return cpsl_optimize(scn, w_tx, si_estimate, mask, opts).w_rx
