"""Scenario-level evaluation: SI-suppression and trade-off sweeps, detection scoring."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import abf, hbf
from ._parallel import pmap
from .array import array_gain, steering_vector, to_db
from .errors import Infeasible
from .nsp import NspConfig, beamformed_si
from .radarsim import RadarImage, _json_default
from .sichannel import SiChannelSet, SiErrorConfig, perturb_estimate


@dataclass
class SweepResult:
    """Swept parameter values with named series (NaN marks a missing point)."""

    x_name: str
    x_values: list
    series: dict
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.series.items():
            if len(v) != len(self.x_values):
                raise ValueError(f"series {k!r} length differs from x_values")

    def to_csv(self, path) -> None:
        names = list(self.series)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x"] + names)
            for i, x in enumerate(self.x_values):
                w.writerow([repr(float(x))] + [repr(float(self.series[n][i])) for n in names])

    def to_json(self, path) -> None:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        doc = {
            "x_name": self.x_name,
            "x_values": [float(x) for x in self.x_values],
            "series": {k: [clean(float(v)) for v in vals] for k, vals in self.series.items()},
            "provenance": self.provenance,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def save(self, stem) -> tuple[str, str]:
        stem = str(stem)
        self.to_csv(stem + ".csv")
        self.to_json(stem + ".json")
        return stem + ".csv", stem + ".json"


def _with_nfreq(scn: abf.AbfScenario, n_freq: int, config: str) -> abf.AbfScenario:
    # an explicit null list of the requested size is kept; otherwise nulls are spread uniformly
    keep = scn.nsp.null_subcarriers if scn.nsp.null_subcarriers is not None and scn.nsp.n_freq == n_freq else None
    nsp = NspConfig(n_freq, keep, scn.nsp.null_angles_deg, scn.nsp.svd_rcond)
    return replace(scn, nsp=nsp, config=config)


def _abf_point(scn, si_true, si_est, n_freq):
    """Band-averaged SI power and radar-direction CRP gain (both linear)."""
    s = _with_nfreq(scn, n_freq, "CF_B" if n_freq else "CF_A")
    w_tx = abf.cf_tx_weights(s)
    w_rx = abf.cf_rx_weights(s, w_tx, si_est)
    si_pow = float(beamformed_si(si_true, w_tx, w_rx).mean())
    lam = s.wavelength
    crp = array_gain(w_tx, steering_vector(s.array, "tx", lam, s.theta_rad_deg)) * array_gain(
        w_rx, steering_vector(s.array, "rx", lam, s.theta_rad_deg)
    )
    return si_pow, float(crp)


def _null_union(scn, nfreq_list) -> np.ndarray:
    idx = [_with_nfreq(scn, k, "CF_B").nsp.resolve_subcarriers(scn.wf) for k in nfreq_list if k > 0]
    return np.unique(np.concatenate(idx)) if idx else np.zeros(0, dtype=np.int64)


def sweep_nfreq(scn: abf.AbfScenario, si_true: SiChannelSet, nfreq_list, si_estimate: SiChannelSet | None = None) -> SweepResult:
    """Band-averaged beamformed SI versus the number of frequency nulls.

    ``N_freq = 0`` is the matched (CF_A) baseline; other points use CF_B with
    uniformly spread nulls, or the scenario's explicit null list when it has
    that many entries. ``si_estimate`` defaults to the true channel.
    """
    est = si_true if si_estimate is None else si_estimate
    vals = [_abf_point(scn, si_true, est, int(k)) for k in nfreq_list]
    si_db = [float(to_db(v[0], -300)) for v in vals]
    crp_db = [float(to_db(v[1])) for v in vals]
    base = float(to_db(_abf_point(scn, si_true, est, 0)[0], -300))
    return SweepResult(
        "n_freq",
        [int(k) for k in nfreq_list],
        {"si_db": si_db, "si_rel_db": [v - base for v in si_db], "crp_db": crp_db},
        {"scenario": scn, "baseline_si_db": base},
    )


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _eps_trial(shared, item):
    scn, si_true, nfreq_list, union = shared
    eps, seed = item
    est = perturb_estimate(si_true, SiErrorConfig(eps, seed), union) if union.size else None
    return [_abf_point(scn, si_true, est, k) for k in nfreq_list]


def sweep_epsilon(scn: abf.AbfScenario, si_true: SiChannelSet, eps_list, nfreq_list, n_trials: int = 20, seed: int = 0, workers=None) -> SweepResult:
    """SI suppression and CRP gain versus the estimation error level.

    For each ``epsilon`` the same ``n_trials`` seeded estimates feed every
    ``N_freq``. Series hold the dB value of the linear mean over trials:
    ``si_db_nfreq<k>`` and ``crp_db_nfreq<k>``; ``N_freq = 0`` is the CF_A
    baseline. ``crp_loss_db_nfreq<k>`` is the CRP gain drop versus CF_A.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    nfreq_list = [int(k) for k in nfreq_list]
    if 0 not in nfreq_list:
        nfreq_list = [0] + nfreq_list
    union = _null_union(scn, nfreq_list)
    items = [(float(e), trial_seed(seed, t)) for e in eps_list for t in range(n_trials)]
    res = pmap(_eps_trial, items, (scn, si_true, nfreq_list, union), workers)
    arr = np.array(res).reshape(len(eps_list), n_trials, len(nfreq_list), 2).mean(axis=1)
    series = {}
    for j, k in enumerate(nfreq_list):
        series[f"si_db_nfreq{k}"] = [float(v) for v in to_db(arr[:, j, 0], -300)]
    for j, k in enumerate(nfreq_list):
        series[f"crp_db_nfreq{k}"] = [float(v) for v in to_db(arr[:, j, 1])]
    for j, k in enumerate(nfreq_list):
        if k:
            series[f"crp_loss_db_nfreq{k}"] = [
                float(a - b) for a, b in zip(series[f"crp_db_nfreq{0}"], series[f"crp_db_nfreq{k}"])
            ]
    return SweepResult(
        "epsilon", [float(e) for e in eps_list], series, {"scenario": scn, "n_trials": n_trials, "seed": seed, "nfreq": nfreq_list}
    )


def _mu_point(shared, item):
    scn = shared
    mu, lrf = item
    cfg = replace(scn.array, l_rf_tx=int(lrf))
    s = replace(scn, array=cfg, mu_db=(float(mu),) * scn.n_users)
    try:
        return hbf.design_tx(s).radar_gain_db
    except Infeasible:
        return math.nan


def sweep_mu(scn: hbf.HbfScenario, mu_list, lrf_list, workers=None) -> SweepResult:
    """Total radar gain (dBi, summed over streams) versus ``mu`` per TX RF chain count.

    Infeasible points are NaN.
    """
    items = [(m, l) for l in lrf_list for m in mu_list]
    vals = pmap(_mu_point, items, scn, workers)
    series = {}
    for i, l in enumerate(lrf_list):
        series[f"radar_db_lrf{int(l)}"] = vals[i * len(mu_list) : (i + 1) * len(mu_list)]
    return SweepResult("mu_db", [float(m) for m in mu_list], series, {"scenario": scn, "lrf": [int(l) for l in lrf_list]})


@dataclass
class DetectionScore:
    detected: list
    n_peaks: int
    false_alarms: int
    threshold_db: float

    @property
    def hits(self) -> int:
        return int(sum(self.detected))

    @property
    def recall(self) -> float:
        return self.hits / len(self.detected) if self.detected else 1.0

    @property
    def precision(self) -> float:
        return (self.n_peaks - self.false_alarms) / self.n_peaks if self.n_peaks else 1.0

    def as_dict(self) -> dict:
        return {
            "detected": [bool(d) for d in self.detected],
            "hits": self.hits,
            "recall": self.recall,
            "n_peaks": self.n_peaks,
            "false_alarms": self.false_alarms,
            "precision": self.precision,
            "threshold_db": self.threshold_db,
        }


def local_maxima(m: np.ndarray) -> np.ndarray:
    """Cells not exceeded by any of their 8 neighbours."""
    pad = np.pad(m, 1, constant_values=-np.inf)
    rows, cols = m.shape
    out = np.ones(m.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                out &= m >= pad[1 + dr : 1 + dr + rows, 1 + dc : 1 + dc + cols]
    return out


def score_detections(
    img: RadarImage, truth, gate_bins: float = 1, gate_deg: float = 1.0, threshold_db: float = -30.0, min_range_m: float = 1.0
) -> DetectionScore:
    """Match image peaks to true targets.

    A peak is a 3x3 local maximum within ``threshold_db`` of the strongest
    cell beyond ``min_range_m``. A target is detected when a peak lies within
    ``gate_bins`` range bins and ``gate_deg`` degrees of it; peaks matching no
    target are false alarms.
    """
    m = np.array(img.magnitude_db, dtype=float)
    if m.size == 0:
        raise ValueError("empty image")
    m[:, img.range_bins_m < min_range_m] = -np.inf
    if not np.any(np.isfinite(m)):
        return DetectionScore([False] * len(truth), 0, 0, threshold_db)
    level = float(np.max(m)) + threshold_db
    peaks = local_maxima(m) & (m >= level) & np.isfinite(m)
    ai, ri = np.nonzero(peaks)
    width = img.range_bins_m[1] - img.range_bins_m[0] if img.range_bins_m.size > 1 else 1.0
    pa, pr = img.angles_deg[ai], img.range_bins_m[ri]
    matched = np.zeros(ai.size, dtype=bool)
    detected = []
    for t in truth:
        near = (np.abs(pa - t.theta_deg) <= gate_deg + 1e-9) & (np.abs(pr - t.range_m) <= gate_bins * width + 1e-9)
        detected.append(bool(np.any(near)))
        matched |= near
    return DetectionScore(detected, int(ai.size), int(np.sum(~matched)), threshold_db)
