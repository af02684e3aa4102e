import math

import numpy as np
import pytest

import oracles
from dtloc.channel import (
    RSS_FLOOR_DBM,
    array_response,
    dft_codebook,
    rss,
    rss_matrix,
    subband_channels,
    subcarrier_layout,
    subcarrier_response,
    to_dbm,
)
from dtloc.raytrace import Path, PathSet, trace_between
from dtloc.scene import ArraySpec
from toy import make_scene


def _path(gain_db=-80.0, delay_s=1e-6, phase=0.0, az=0.0, el=0.0, bounces=0):
    return Path(gain_db=gain_db, phase_rad=phase, delay_s=delay_s, aod_az_deg=az, aod_el_deg=el,
                aoa_az_deg=0.0, aoa_el_deg=0.0, bounces=bounces)


def _pathset(*paths):
    return PathSet(tx=(0.0, 0.0, 10.0), rx=(1.0, 0.0, 2.0), paths=tuple(paths))


def _scene(n_antennas=1, **kw):
    return make_scene(base_station={"position": [0.0, 0.0, 10.0], "tx_power_dbm": 0.0,
                                    "array": {"n_antennas": n_antennas, "spacing_wavelengths": 0.5,
                                              "boresight_az_deg": 0.0}}, **kw)


def test_single_antenna_codebook_is_all_pass():
    cb = dft_codebook(1)
    assert cb.n_beams == 1 and cb.beams[0, 0] == 1.0


def test_dft_beams_are_orthonormal():
    cb = dft_codebook(64)
    gram = cb.beams.conj() @ cb.beams.T
    assert np.max(np.abs(gram - np.eye(64))) < 1e-12
    assert np.allclose(np.abs(cb.beams), 1 / 8)


def test_oversampled_codebook_spacing():
    cb = dft_codebook(8, oversampling=4)
    assert cb.n_beams == 32
    assert np.allclose(np.diff(cb.spatial_freqs), 1 / 32)
    assert np.allclose(np.linalg.norm(cb.beams, axis=1), 1.0)
    with pytest.raises(ValueError):
        dft_codebook(0)


def test_broadside_beam_gain_is_6_db_for_four_antennas():
    arr = ArraySpec(n_antennas=4)
    a = array_response(arr, 0.0, 0.0)
    assert np.allclose(a, 1.0)
    cb = dft_codebook(4)
    broadside = int(np.argmin(np.abs(cb.spatial_freqs)))
    gain = abs(np.vdot(a, cb.beams[broadside])) ** 2
    assert 10 * math.log10(gain) == pytest.approx(10 * math.log10(4), abs=1e-12)
    assert 10 * math.log10(4) == pytest.approx(6.02, abs=0.005)


def test_endfire_two_element_response():
    a = array_response(ArraySpec(n_antennas=2), 90.0, 0.0)
    assert np.allclose(a, [1.0, -1.0])


def test_array_response_matches_oracle_and_is_unit_modulus():
    arr = ArraySpec(n_antennas=16, spacing_wavelengths=0.5, boresight_az_deg=30.0)
    for az, el in ((0.0, 0.0), (47.0, 10.0), (-120.0, -5.0)):
        got = array_response(arr, az, el)
        assert np.allclose(got, oracles.ula_response(16, 0.5, az - 30.0, el), atol=1e-12)
        assert np.allclose(np.abs(got), 1.0)
    assert array_response(arr, np.zeros((3, 2)), 0.0).shape == (3, 2, 16)


def test_subcarrier_layout_is_centred():
    freqs, band = subcarrier_layout(_scene())
    assert len(freqs) == 1333
    assert freqs[0] == pytest.approx(-freqs[-1])
    assert band.min() == 0 and band.max() == 19
    assert set(np.bincount(band)) <= {66, 67}


def test_matched_beam_gives_full_array_gain():
    az = math.degrees(math.asin(2 * 5 / 64))  # exactly on DFT beam with spatial frequency 5/64
    ps = _pathset(_path(az=az))
    one = rss_matrix(subband_channels(_scene(1), ps), dft_codebook(1))[0, 0]
    big = rss_matrix(subband_channels(_scene(64), ps), dft_codebook(64))
    k = int(np.argmax(big[:, 0]))
    assert big[k, 0] - one == pytest.approx(10 * math.log10(64), abs=1e-9)
    assert 10 * math.log10(64) == pytest.approx(18.06, abs=0.005)
    others = np.delete(big[:, 0], k)
    assert np.all(others == RSS_FLOOR_DBM)


def test_parseval_over_dft_beams():
    ps = _pathset(_path(az=17.0, el=4.0), _path(gain_db=-86.0, delay_s=1.3e-6, az=-40.0, phase=1.0))
    n_t = 32
    ch = subband_channels(_scene(n_t), ps)
    total = ch.beam_power_mw(dft_codebook(n_t)).sum(axis=0)
    assert np.allclose(total, np.sum(np.abs(ch.coeffs) ** 2, axis=1), rtol=1e-9)
    single = subband_channels(_scene(1), _pathset(_path(az=17.0, el=4.0))).beam_power_mw(dft_codebook(1))[0]
    one_path = subband_channels(_scene(n_t), _pathset(_path(az=17.0, el=4.0))).beam_power_mw(dft_codebook(n_t))
    assert np.allclose(one_path.sum(axis=0), n_t * single, rtol=1e-9)


def test_two_path_closed_form_per_subcarrier():
    subband_hz = 1e6
    dtau = 1 / (2 * subband_hz)
    tau0 = 2e-7
    ps = _pathset(_path(delay_s=tau0), _path(delay_s=tau0 + dtau))
    freqs, H = subcarrier_response(_scene(1), ps)
    a = 10 ** (-80 / 20)
    want = np.abs(a * np.exp(-2j * np.pi * freqs * tau0) + a * np.exp(-2j * np.pi * freqs * (tau0 + dtau)))
    assert np.max(np.abs(np.abs(H[:, 0]) - want)) < 1e-9 * a
    # the fade sits where the path phases oppose: |cos(pi f dtau)| = 0
    fade = np.argmin(np.abs(H[:, 0]))
    assert abs(math.cos(math.pi * freqs[fade] * dtau)) < 0.05


def test_single_path_phase_slope_and_flat_magnitude():
    tau = 1.234e-6
    scene = _scene(1)
    freqs, H = subcarrier_response(scene, _pathset(_path(delay_s=tau)))
    assert np.allclose(np.abs(H[:, 0]), np.abs(H[0, 0]), rtol=1e-12)
    step = np.angle(H[1:, 0] / H[:-1, 0])
    want = math.remainder(-2 * math.pi * tau * scene.subcarrier_hz, 2 * math.pi)
    assert np.allclose(step, want, atol=1e-9)


def test_single_path_subband_equals_any_subcarrier():
    scene = _scene(8)
    ps = _pathset(_path(delay_s=1e-6, az=12.0))
    cb = dft_codebook(8)
    sub = rss_matrix(subband_channels(scene, ps), cb)
    freqs, H = subcarrier_response(scene, ps)
    per_sc = 10 * np.log10(np.abs(H.conj() @ cb.beams.T) ** 2)  # (n_sc, K)
    _, band = subcarrier_layout(scene)
    for b in range(scene.n_subbands):
        assert np.max(np.abs(per_sc[band == b] - sub[:, b])) <= 0.05


def test_coherent_subband_matches_two_ray_oracle(free_scene):
    bs = np.array(free_scene.bs.position)
    ps = trace_between(free_scene, bs, bs + [73.0, 0.0, -8.0])
    got = rss_matrix(subband_channels(free_scene, ps), dft_codebook(1))[0]
    for b in (0, 7, 19):
        f = oracles.subcarrier_freqs(20e6, 15e3, 1e6, b)
        want = oracles.two_ray_subband_power_dbm(73.0, 10.0, 2.0, 3.5e9, 30.0, f)
        assert got[b] == pytest.approx(want, abs=1e-6)


def test_doubling_carrier_costs_6_db():
    ps_kw = dict(base_station={"position": [0.0, 0.0, 10.0], "tx_power_dbm": 30.0,
                               "array": {"n_antennas": 16}})
    lo = make_scene(**ps_kw)
    hi = make_scene(frequency={"carrier_hz": 7e9}, **ps_kw)
    rx = (80.0, 30.0, 10.0)
    peak = []
    for s in (lo, hi):
        ps = trace_between(s, s.bs.position, rx, max_depth=0)
        peak.append(rss_matrix(subband_channels(s, ps), dft_codebook(16)).max(axis=0))
    assert np.allclose(peak[0] - peak[1], 20 * math.log10(2), atol=1e-9)
    assert 20 * math.log10(2) == pytest.approx(6.02, abs=0.005)


def test_empty_pathset_gives_zero_channel_and_floor():
    for mode in ("coherent", "power"):
        ch = subband_channels(_scene(4), _pathset(), aggregation=mode)
        assert np.all(ch.coeffs == 0)
        assert np.all(rss_matrix(ch, dft_codebook(4)) == RSS_FLOOR_DBM)
        assert rss(ch, dft_codebook(4), 0, 0) == RSS_FLOOR_DBM


def test_power_aggregation_is_mean_of_subcarrier_powers():
    scene = _scene(4)
    ps = _pathset(_path(az=10.0), _path(gain_db=-83.0, delay_s=1.4e-6, az=-25.0))
    ch = subband_channels(scene, ps, aggregation="power")
    cb = dft_codebook(4)
    _, H = subcarrier_response(scene, ps)
    _, band = subcarrier_layout(scene)
    per = np.abs(H.conj() @ cb.beams.T) ** 2
    want = np.stack([per[band == b].mean(axis=0) for b in range(scene.n_subbands)], axis=1)
    assert np.allclose(ch.beam_power_mw(cb), want, rtol=1e-12)
    # by Cauchy-Schwarz the coherent mean can never exceed the power mean
    coh = subband_channels(scene, ps).beam_power_mw(cb)
    assert np.all(coh <= want * (1 + 1e-12))
    with pytest.raises(ValueError):
        subband_channels(scene, ps, aggregation="median")


def test_to_dbm_floor():
    assert np.array_equal(to_dbm([0.0, 1.0, 1e-30]), [RSS_FLOOR_DBM, 0.0, RSS_FLOOR_DBM])
