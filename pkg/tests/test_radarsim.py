import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdjcas import abf
from fdjcas.array import C0, ArrayConfig, WaveformConfig, steering_vector
from fdjcas.nsp import NspConfig
from fdjcas.radarsim import (
    AbfDesigner,
    Beams,
    HbfDesigner,
    RadarImage,
    ScanSettings,
    TargetSpec,
    check_far_field,
    config_hash,
    default_fft_size,
    far_field_distance,
    range_bin_width,
    range_profile,
    scan,
    synth_received,
    target_channel_coeff,
    tx_symbols,
)
from fdjcas.sichannel import synth_si_channel

WF = WaveformConfig()
ARR = ArrayConfig.half_wavelength(WF, 32, 32)
SMALL = ArrayConfig.half_wavelength(WF, 8, 8)
FFT = default_fft_size(WF.n_subcarriers)
BIN = range_bin_width(WF, FFT)


def matched_beams(cfg, theta):
    a = steering_vector(cfg, "tx", WF.center_wavelength, theta) / math.sqrt(cfg.l_tx)
    b = steering_vector(cfg, "rx", WF.center_wavelength, theta) / math.sqrt(cfg.l_rx)
    return Beams(a[:, None], b, np.ones(1))


def profile_db(cfg, targets, window="hamming", theta=0.0, seed=0, si=None, noise=None):
    beams = matched_beams(cfg, theta)
    x = tx_symbols(WF, 1, seed)
    y = synth_received(cfg, WF, beams, targets, si, x, noise)
    return 20 * np.log10(np.maximum(range_profile(y, beams.reference(x), window, FFT), 1e-300))


def test_target_validation():
    for kw in (dict(range_m=0.0), dict(rcs_m2=-1.0), dict(theta_deg=91.0)):
        args = dict(theta_deg=0.0, range_m=10.0, rcs_m2=1.0) | kw
        with pytest.raises(ValueError):
            TargetSpec(**args)


def test_coefficient_magnitude():
    wf = WaveformConfig(n_subcarriers=1)
    h = target_channel_coeff(wf, TargetSpec(0.0, 15.0, 1.0), 0)
    assert abs(h) == pytest.approx(1.0682314e-6, rel=1e-6)
    assert target_channel_coeff(wf, TargetSpec(0.0, 15.0, 0.0), 0) == 0


def test_coefficient_phase_slope_and_period():
    t = TargetSpec(0.0, 15.0, 1.0)
    n = np.arange(100)
    h = target_channel_coeff(WF, t, n)
    step = np.angle(h[1:] / h[:-1])
    want = -2 * np.pi * WF.delta_f * 2 * 15.0 / C0
    np.testing.assert_allclose(np.angle(np.exp(1j * (step - want))), 0.0, atol=1e-9)
    wf = WaveformConfig(delta_f=C0 / (2 * 15.0) / 40)  # period of exactly 40 subcarriers
    h = target_channel_coeff(wf, t, np.array([3, 43]))
    assert np.angle(h[1] / h[0]) == pytest.approx(0.0, abs=1e-9)


def test_far_field():
    lim = far_field_distance(ARR, WF.center_wavelength)
    assert lim == pytest.approx(2 * (32 * ARR.d_ant) ** 2 / WF.center_wavelength)
    with pytest.warns(UserWarning):
        check_far_field([TargetSpec(0.0, lim / 2)], ARR, WF.center_wavelength)


def test_symbols_power_and_determinism():
    x = tx_symbols(WF, 2, 4)
    assert x.shape == (2, WF.n_subcarriers, WF.n_symbols)
    total = np.sum(np.abs(x[:, :, 0]) ** 2)
    assert total == pytest.approx(10 ** ((WF.tx_power_dbm - 30) / 10), rel=1e-12)
    np.testing.assert_array_equal(x, tx_symbols(WF, 2, 4))


def test_empty_scene_is_silent():
    beams = matched_beams(SMALL, 0.0)
    y = synth_received(SMALL, WF, beams, [], None, tx_symbols(WF, 1, 0), None)
    assert not np.any(y)


def test_symbol_shape_mismatch():
    with pytest.raises(ValueError):
        synth_received(SMALL, WF, matched_beams(SMALL, 0.0), [], None, tx_symbols(WF, 2, 0))


def test_single_target_phase_regression():
    d = 17.3
    beams = matched_beams(SMALL, 5.0)
    x = tx_symbols(WF, 1, 0)
    y = synth_received(SMALL, WF, beams, [TargetSpec(5.0, d)], None, x)
    ph = np.unwrap(np.angle(y[:, 0] / x[0, :, 0]))
    slope = np.polyfit(np.arange(WF.n_subcarriers), ph, 1)[0]
    assert slope == pytest.approx(-2 * np.pi * WF.delta_f * 2 * d / C0, rel=1e-6)


def test_si_null_survives_in_received_samples():
    wf = WaveformConfig(n_subcarriers=64, delta_f=5e6)
    nsp = NspConfig(1)
    si = synth_si_channel(ARR, wf, 36.0)
    scn = abf.AbfScenario(ARR, wf, 10.0, nsp=nsp, config="CF_B")
    w_tx = abf.cf_tx_weights(scn)
    n1 = int(nsp.resolve_subcarriers(wf)[0])
    x = tx_symbols(wf, 1, 0)
    p = {}
    for c in ("CF_A", "CF_B"):
        w_rx = abf.cf_rx_weights(scn, w_tx, si, c)
        y = synth_received(ARR, wf, Beams(w_tx[:, None], w_rx, np.ones(1)), [], si, x)
        p[c] = np.mean(np.abs(y[n1] / x[0, n1]) ** 2)
    assert 10 * math.log10(max(p["CF_B"], 1e-300) / p["CF_A"]) <= -200


def test_noise_scaling():
    beams = matched_beams(SMALL, 0.0)
    beams.rx = beams.rx * 2.0
    y = synth_received(SMALL, WF, beams, [], None, tx_symbols(WF, 1, 0), [0, 1])
    var = np.mean(np.abs(y) ** 2)
    want = 10 ** ((WF.noise_power_dbm - 30) / 10) / WF.n_subcarriers * 4.0
    assert var == pytest.approx(want, rel=0.03)


def test_profile_peak_bin():
    d = 21.7
    prof = profile_db(SMALL, [TargetSpec(0.0, d)])
    assert abs(int(np.argmax(prof)) - round(d / BIN)) <= 1


def test_rect_window_resolves_two_targets():
    d1 = 20.0
    prof = profile_db(SMALL, [TargetSpec(0.0, d1), TargetSpec(0.0, d1 + 2.5 * BIN * FFT / WF.n_subcarriers)], "rect")
    k1 = round(d1 / BIN)
    seg = prof[k1 - 3 : k1 + 20]
    peaks = np.nonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] > seg[2:]) & (seg[1:-1] > seg.max() - 6))[0]
    assert len(peaks) >= 2


def _peak_sidelobe(prof):
    k = int(np.argmax(prof))
    right = prof[k:]
    # first null: first local minimum right of the peak
    m = int(np.argmax((right[1:-1] < right[:-2]) & (right[1:-1] <= right[2:]))) + 1
    return float(right[m:].max() - prof[k])


def test_hamming_sidelobe_level():
    psl = _peak_sidelobe(profile_db(SMALL, [TargetSpec(0.0, 2.0)]))
    assert psl == pytest.approx(-42.7, abs=1.0)
    rect = _peak_sidelobe(profile_db(SMALL, [TargetSpec(0.0, 2.0)], "rect"))
    assert psl <= rect - 25


def test_profile_validation():
    with pytest.raises(ValueError):
        range_profile(np.ones(8), np.ones(8), fft_size=4)
    with pytest.raises(ValueError):
        range_profile(np.ones(8), np.ones(8), window="kaiser")
    with pytest.raises(ValueError):
        range_profile(np.ones(8), np.ones(8), mode="mix")


def test_amplitude_doubling_adds_six_db():
    a = profile_db(SMALL, [TargetSpec(3.0, 12.0, 1.0), TargetSpec(-20.0, 30.0, 2.0)], theta=3.0)
    b = profile_db(SMALL, [TargetSpec(3.0, 12.0, 4.0), TargetSpec(-20.0, 30.0, 8.0)], theta=3.0)
    np.testing.assert_allclose(b - a, 20 * math.log10(2), atol=0.01)


@settings(max_examples=20, deadline=None)
@given(d=st.floats(5.0, 50.0))
def test_range_mapping(d):
    prof = profile_db(SMALL, [TargetSpec(0.0, d)])
    assert abs(int(np.argmax(prof[: int(60 / BIN)])) - d / BIN) <= 1


def cf_a_designer(cfg):
    return AbfDesigner(cfg, WF, (), 1.0, (), NspConfig(0), "CF_A")


def test_angle_response():
    t = TargetSpec(7.4, 25.0)
    img = scan(ARR, WF, cf_a_designer(ARR), [t], None, ScanSettings(tuple(float(a) for a in range(-20, 21)), noise=False))
    col = int(np.argmin(np.abs(img.range_bins_m - 25.0)))
    assert img.angles_deg[np.argmax(img.magnitude_db[:, col])] == 7.0


def test_empty_scene_image_at_noise_floor():
    angles = tuple(float(a) for a in range(-10, 11, 5))
    quiet = scan(SMALL, WF, cf_a_designer(SMALL), [], None, ScanSettings(angles, noise=False))
    assert np.all(quiet.magnitude_db == 20 * math.log10(1e-15))
    noisy = scan(SMALL, WF, cf_a_designer(SMALL), [], None, ScanSettings(angles, noise=True))
    # rms of the windowed, divided noise after the inverse DFT
    x2 = 10 ** ((WF.tx_power_dbm - 30) / 10) / WF.n_subcarriers
    sigma2 = 10 ** ((WF.noise_power_dbm - 30) / 10) / WF.n_subcarriers
    rms = math.sqrt(np.sum(np.hamming(WF.n_subcarriers) ** 2) * sigma2 / x2) / FFT
    assert noisy.magnitude_db.max() <= 20 * math.log10(rms) + 6


def test_scan_deterministic_and_metadata():
    angles = (-5.0, 0.0, 5.0)
    t = [TargetSpec(0.0, 30.0)]
    a = scan(SMALL, WF, cf_a_designer(SMALL), t, None, ScanSettings(angles, seed=3), {"tag": "x"})
    b = scan(SMALL, WF, cf_a_designer(SMALL), t, None, ScanSettings(angles, seed=3), {"tag": "x"})
    np.testing.assert_array_equal(a.magnitude_db, b.magnitude_db)
    assert a.metadata["window"] == "hamming" and a.metadata["fft_size"] == FFT and a.metadata["tag"] == "x"
    assert a.range_bins_m[-1] <= 60.0


def test_hbf_designer_beams():
    cfg = ArrayConfig.half_wavelength(WF, 32, 32, l_rf_tx=8, l_rf_rx=4)
    des = HbfDesigner(cfg, WF, (-40.0, 40.0), (6.0, 6.0), NspConfig(0))
    beams = des(10.0)
    assert beams.tx.shape == (32, 2) and beams.rx.shape == (32,)
    assert np.linalg.norm(beams.rx) == pytest.approx(1.0, abs=1e-12)
    for t in (-40.0, 40.0):
        assert abs(np.vdot(beams.rx, steering_vector(cfg, "rx", WF.center_wavelength, t))) ** 2 <= 1e-20
    img = scan(cfg, WF, des, [TargetSpec(10.0, 20.0)], None, ScanSettings((10.0,), noise=False))
    assert abs(img.range_bins_m[np.argmax(img.magnitude_db[0])] - 20.0) <= BIN


def test_abf_designer_guard_keeps_look_direction():
    des = AbfDesigner(ARR, WF, (-40.0, 40.0), 1 / 3, (1 / 3, 1 / 3), NspConfig(0), "CF_C")
    assert des.scenario(38.0).nsp.null_angles_deg == (-40.0,)
    beams = des(40.0)
    g = abs(np.vdot(beams.rx, steering_vector(ARR, "rx", WF.center_wavelength, 40.0))) ** 2
    assert 10 * math.log10(g) >= 10 * math.log10(32) - 0.1


def test_image_round_trip(tmp_path):
    img = RadarImage([0.0, 0.5, 1.0], [-1.0, 1.0], np.arange(6.0).reshape(2, 3) - 100, {"window": "rect"})
    img.save(tmp_path / "im")
    head = (tmp_path / "im.csv").read_text().splitlines()[0]
    assert head.startswith("angle_deg\\range_m,")
    back = RadarImage.load(tmp_path / "im")
    np.testing.assert_array_equal(back.magnitude_db, img.magnitude_db)
    assert back.metadata == {"window": "rect"}
    with pytest.raises(ValueError):
        RadarImage([0.0], [0.0], [[np.nan]])
    with pytest.raises(ValueError):
        RadarImage([0.0, 1.0], [0.0], [[1.0]])


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
