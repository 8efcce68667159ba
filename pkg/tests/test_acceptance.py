"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts the same condition, so a red line always means a failed test.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from fdjcas import abf, hbf, metrics
from fdjcas.abf import AbfScenario, CrpFit, CrpMask
from fdjcas.array import ArrayConfig, GainPattern, WaveformConfig, steering_vector
from fdjcas.cli import main
from fdjcas.errors import Infeasible
from fdjcas.hbf import HbfScenario
from fdjcas.nsp import NspConfig, beamformed_si, projector_from_columns, si_constraints_hbf
from fdjcas.radarsim import AbfDesigner, ScanSettings, TargetSpec, default_fft_size, range_bin_width, scan
from fdjcas.sichannel import SiChannelSet, synth_si_channel

from conftest import ACCEPTANCE, crandn
from oracles import grid_oracle, rx_eigen_oracle

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"
WF = WaveformConfig()
ARR = ArrayConfig.half_wavelength(WF, 32, 32)
THIRD = 1 / 3


def report(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] C{n:<2d} {title}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def analog(comm, n_freq=2, config="CF_B", null_angles=()):
    return AbfScenario(ARR, WF, 10.0, comm, THIRD, (THIRD, THIRD), NspConfig(n_freq, None, null_angles), config)


@pytest.fixture(scope="module")
def si_full():
    return synth_si_channel(ARR, WF, 36.0)


def test_c01_projector_correctness():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = [0.0, 0.0, 0.0]
    for _ in range(1000):
        dim = int(rng.integers(2, 65))
        k = int(rng.integers(1, min(16, dim - 1) + 1))
        b = crandn(rng, dim, k)
        m = projector_from_columns(b).matrix
        nm = np.linalg.norm(m)
        worst[0] = max(worst[0], np.linalg.norm(m - m.conj().T) / nm)
        worst[1] = max(worst[1], np.linalg.norm(m @ m - m) / nm)
        worst[2] = max(worst[2], float(np.max(np.linalg.norm(m @ b, axis=0))) / np.linalg.norm(b))
    dt = time.perf_counter() - t0
    ok = worst[0] <= 1e-10 and worst[1] <= 1e-9 and worst[2] <= 1e-10 and dt < 10
    report(1, "projector", ok, f"hermitian {worst[0]:.1e}, idempotent {worst[1]:.1e}, null {worst[2]:.1e}, {dt:.1f} s")


def test_c02_rx_closed_form_matches_eigenvector_oracle():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        l_rf_rx = int(rng.choice([1, 2, 4, 8]))
        n_users = int(rng.integers(1, 3))
        cfg = ArrayConfig.half_wavelength(WF, 32, 32, l_rf_tx=8, l_rf_rx=l_rf_rx)
        rows_per = 32 // l_rf_rx
        n_nulls = int(rng.integers(1, max(1, (rows_per - 1) // n_users) + 1))
        n_nulls = min(n_nulls, 6)
        idx = np.sort(rng.choice(WF.n_subcarriers, n_nulls, replace=False))
        si = SiChannelSet(idx, crandn(rng, n_nulls, 32, 32) * 1e-2)
        w_rf = crandn(rng, 32, 8)
        w_bb = crandn(rng, 8, n_users)
        theta = float(rng.uniform(-60, 60))
        comm = tuple(float(c) for c in rng.uniform(-60, 60, n_users))
        scn = HbfScenario(cfg, WF, theta, comm, (-math.inf,) * n_users, nsp=NspConfig(n_nulls, tuple(int(i) for i in idx)))
        rx = hbf.design_rx(scn, w_rf, w_bb, si)
        a = steering_vector(cfg, "rx", scn.wavelength, theta)
        for l, w in enumerate(rx):
            rows = cfg.rx_subarray_rows(l)
            n = projector_from_columns(si_constraints_hbf(si, w_rf, w_bb, rows, idx)).matrix
            oracle = rx_eigen_oracle(n, a[rows])
            got = abs(np.vdot(w, a[rows])) ** 2
            worst = max(worst, abs(got - oracle) / oracle)
    dt = time.perf_counter() - t0
    report(2, "RX oracle", worst <= 1e-9 and dt < 30, f"max relative gap {worst:.1e}, {dt:.1f} s")


def test_c03_hybrid_constraint_audit():
    cfg = ArrayConfig.half_wavelength(WF, 32, 32, l_rf_tx=8, l_rf_rx=4)
    scn = HbfScenario(cfg, WF, 10.0, (-30.0, 30.0), (15.0, 15.0), nsp=NspConfig(2))
    si = synth_si_channel(cfg, WF, 36.0, indices=scn.nsp.resolve_subcarriers(WF))
    t0 = time.perf_counter()
    try:
        weights, tx = hbf.design(scn, si)
    except Infeasible as exc:
        report(3, "hybrid audit", False, f"infeasible, at most {exc.achievable_db:.2f} dBi per user is achievable")
        return
    rep = hbf.audit(scn, weights, si)
    gap = max(
        abs(tx.radar_gains_per_user_db[u] - 10 * math.log10(grid_oracle(scn, weights.w_rf_tx, u))) for u in range(2)
    )
    dt = time.perf_counter() - t0
    ok = (
        min(rep["comm_gains_db"]) >= 14.99
        and rep["iui_max_db"] <= -100
        and rep["tx_norms_ok"]
        and gap <= 0.2
        and dt < 5
    )
    report(3, "hybrid audit", ok, f"comm {min(rep['comm_gains_db']):.2f} dBi, IUI {rep['iui_max_db']:.1f} dB, oracle gap {gap:.3f} dB, {dt:.1f} s")


def test_c04_tradeoff_monotone():
    cfg = ArrayConfig.half_wavelength(WF, 32, 32, l_rf_tx=8, l_rf_rx=4)
    scn = HbfScenario(cfg, WF, 10.0, (-30.0, 30.0), (0.0, 0.0))
    t0 = time.perf_counter()
    res = metrics.sweep_mu(scn, [0, 3, 6, 9, 12, 15], [4, 8, 32])
    dt = time.perf_counter() - t0
    # an infeasible point counts as no radar gain at all
    s = {l: [-math.inf if math.isnan(v) else v for v in res.series[f"radar_db_lrf{l}"]] for l in (4, 8, 32)}
    mono = all(b <= a + 1e-9 for v in s.values() for a, b in zip(v, v[1:]))
    dom = all(c >= b - 1e-9 and b >= a - 1e-9 for a, b, c in zip(s[4], s[8], s[32]))
    fmt = "; ".join(f"L{l}: " + " ".join(f"{v:.2f}" for v in s[l]) for l in (4, 8, 32))
    report(4, "trade-off", mono and dom and dt < 30, f"{fmt}, {dt:.1f} s")


def test_c05_wideband_nulling(si_full):
    t0 = time.perf_counter()
    base_scn = analog((-40.0, 40.0), 0, "CF_A")
    w_tx = abf.cf_tx_weights(base_scn)
    base = float(beamformed_si(si_full, w_tx, abf.cf_rx_weights(base_scn, w_tx, si_full)).mean())
    worst = -math.inf
    for k in (1, 2, 4):
        scn = analog((-40.0, 40.0), k)
        idx = scn.nsp.resolve_subcarriers(WF)
        p = beamformed_si(si_full, w_tx, abf.cf_rx_weights(scn, w_tx, si_full), idx)
        worst = max(worst, 10 * math.log10(max(float(p.max()), 1e-300) / base))
    avg = metrics.sweep_nfreq(analog((-40.0, 40.0)), si_full, [0, 1, 2, 4]).series["si_db"]
    dt = time.perf_counter() - t0
    ok = worst <= -200 and avg[1] < avg[0] and avg[2] < avg[1] and avg[3] < avg[2] and dt < 20
    report(5, "wideband nulling", ok, f"null residual {worst:.0f} dB vs CF-A, average " + " / ".join(f"{v:.1f}" for v in avg) + f" dB, {dt:.1f} s")


@pytest.fixture(scope="module")
def eps_sweep(si_full):
    t0 = time.perf_counter()
    res = metrics.sweep_epsilon(analog((-30.0, 30.0)), si_full, [1e-4, 1e-1], [1, 2, 4], n_trials=20, seed=0)
    return res, time.perf_counter() - t0


def test_c06_estimation_error_convergence(eps_sweep):
    res, dt = eps_sweep
    s = res.series
    offs = [s[f"si_db_nfreq{k}"][1] - s["si_db_nfreq0"][1] for k in (1, 2, 4)]
    gain = s["si_db_nfreq1"][0] - s["si_db_nfreq4"][0]
    ok = all(abs(o) <= 3 for o in offs) and gain >= 20 and dt < 60
    report(6, "estimation error", ok, "offsets at 1e-1 " + " / ".join(f"{o:+.2f}" for o in offs) + f" dB, 4 vs 1 nulls at 1e-4 {gain:.1f} dB, {dt:.1f} s")


def test_c07_crp_robustness(si_full):
    t0 = time.perf_counter()
    crp = metrics.sweep_nfreq(analog((-30.0, 30.0)), si_full, [0, 1, 2, 4]).series["crp_db"]
    dt = time.perf_counter() - t0
    loss = max(crp[0] - v for v in crp[1:])
    report(7, "CRP robustness", loss <= 1 and dt < 10, f"max loss {loss:.2f} dB, {dt:.1f} s")


def test_c08_cpsl_optimization():
    scn = analog((-40.0, 40.0), 2, "CPSL", (-40.0, 40.0))
    si = synth_si_channel(ARR, WF, 36.0, indices=scn.nsp.resolve_subcarriers(WF))
    t0 = time.perf_counter()
    w_tx = abf.cf_tx_weights(scn)
    mask = CrpMask(10.0, 35.0, 14.0, -75.0)
    res = abf.cpsl_optimize(scn, w_tx, si, mask)
    w_c = abf.cf_rx_weights(scn, w_tx, si, "CF_C")
    grid = mask.grid
    cps = abf.measure_cpsl(GainPattern(grid, abf.crp_db(ARR, w_tx, res.w_rx, WF.center_wavelength, grid)), 10.0, 14.0)
    cfc = abf.measure_cpsl(GainPattern(grid, abf.crp_db(ARR, w_tx, w_c, WF.center_wavelength, grid)), 10.0, 14.0)
    mono = all(b <= a for a, b in zip(res.history, res.history[1:]))
    basis = abf.rx_projector(scn, w_tx, si, "CPSL").basis
    fit = CrpFit(ARR, w_tx, basis, mask, WF.center_wavelength)
    x = np.random.default_rng(8).standard_normal(2 * basis.shape[1])
    grad = abf.check_gradient(fit, x / np.linalg.norm(x))
    dt = time.perf_counter() - t0
    ok = cps <= -55 and cps <= cfc - 10 and mono and grad <= 1e-5 and dt < 120
    report(8, "CPSL", ok, f"CPSL {cps:.1f} dB vs CF-C {cfc:.1f} dB, monotone {mono}, gradient {grad:.1e}, {dt:.1f} s")


def test_c09_range_mapping():
    rng = np.random.default_rng(909)
    des = AbfDesigner(ARR, WF, (), 1.0, (), NspConfig(0), "CF_A")
    width = range_bin_width(WF, default_fft_size(WF.n_subcarriers))
    t0 = time.perf_counter()
    worst_bins, worst_deg = 0.0, 0.0
    for _ in range(20):
        t = TargetSpec(float(rng.uniform(-50, 50)), float(rng.uniform(3, 55)))
        c = round(t.theta_deg)
        img = scan(ARR, WF, des, [t], None, ScanSettings(tuple(float(a) for a in range(c - 3, c + 4)), noise=False))
        m = np.where(img.range_bins_m[None, :] >= 1.0, img.magnitude_db, -np.inf)
        ai, ri = np.unravel_index(int(np.argmax(m)), m.shape)
        worst_bins = max(worst_bins, abs(img.range_bins_m[ri] - t.range_m) / width)
        worst_deg = max(worst_deg, abs(img.angles_deg[ai] - t.theta_deg))
    dt = time.perf_counter() - t0
    ok = worst_bins <= 1 and worst_deg <= 1 and dt < 60
    report(9, "range mapping", ok, f"worst {worst_bins:.2f} bins, {worst_deg:.2f} deg, {dt:.1f} s")


@pytest.mark.slow
def test_c10_twenty_target_scene(tmp_path):
    t0 = time.perf_counter()
    assert main(["sense", str(SCEN / "sensing_20_targets.json"), "--out", str(tmp_path)]) == 0
    dt = time.perf_counter() - t0
    det = json.loads((tmp_path / "detections.json").read_text())
    weak = [i for i, t in enumerate(det["targets"]) if t["rcs_m2"] == 1.0]
    c = det["configs"]
    si_margin = c["CF_A"]["si_over_targets_db"]
    weak_hits = sum(c["CPSL"]["detected"][i] for i in weak)
    ok = si_margin >= 30 and weak_hits == len(weak) and c["CPSL"]["recall"] >= c["CF_B"]["recall"] and dt < 600
    recalls = ", ".join(f"{k} {v['recall']:.2f}" for k, v in c.items())
    report(10, "sensing scene", ok, f"CF-A SI margin {si_margin:.1f} dB, CPSL weak targets {weak_hits}/{len(weak)}, recall {recalls}, {dt:.0f} s")


def _small_sense(tmp_path):
    doc = json.loads((SCEN / "sensing_20_targets.json").read_text())
    doc["scan"].update(start_deg=-2, stop_deg=2)
    doc["configs"] = ["CF_A", "CF_C", "HBF"]
    p = tmp_path / "sense.json"
    p.write_text(json.dumps(doc))
    return p


def test_c11_determinism(tmp_path):
    sense = _small_sense(tmp_path)
    commands = {
        "patterns_hybrid": ["patterns", str(SCEN / "hybrid_two_users.json"), "--seed", "3"],
        "patterns_analog": ["patterns", str(SCEN / "analog_multibeam.json"), "--seed", "3"],
        "sweep_nfreq": ["sweep", str(SCEN / "analog_multibeam.json"), "--sweep", "nfreq=0,1,2"],
        "sweep_epsilon": ["sweep", str(SCEN / "analog_multibeam.json"), "--sweep", "epsilon=1e-3,1e-1", "--trials", "2", "--seed", "4"],
        "sweep_mu": ["sweep", str(SCEN / "hybrid_two_users.json"), "--sweep", "mu=0,6,12", "--lrf", "4,8"],
        "sense": ["sense", str(sense), "--seed", "5"],
    }
    differing = []
    for name, argv in commands.items():
        runs = []
        for r in ("a", "b"):
            out = tmp_path / name / r
            assert main(argv + ["--out", str(out)]) == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if runs[0] != runs[1]:
            differing.append(name)
        replay = tmp_path / name / "replay"
        assert main(["replay", str(tmp_path / name / "a" / "manifest.json"), "--out", str(replay)]) == 0
        if {p.name: p.read_bytes() for p in sorted(replay.iterdir())} != runs[0]:
            differing.append(name + " (replay)")
    ok = not differing
    report(11, "determinism", ok, f"{len(commands)} commands twice plus replay, " + ("all identical" if ok else "differ: " + ", ".join(differing)))
