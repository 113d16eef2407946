import numpy as np
import pytest

from binremix.design import (DesiredResponse, FirFilter, FreqFilter, RemixSpec, design_msdw_mwf,
                             load_fir, realized_response, response_matrices, save_fir,
                             to_causal_fir)
from binremix.errors import ConfigError
from binremix.scene import (FULL_RANK, MicArrayGeometry, SceneSpec, SourceChannel,
                            make_frequency_grid, rank1_channel)
from binremix.testing import random_remix, random_scene

from oracles import lstsq_filter, sherman_morrison_row


def _rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


def _white(grid, m, var):
    return SourceChannel(FULL_RANK, psd=np.broadcast_to(var * np.eye(m), (grid.num_bins, m, m)),
                         label='noise')


# responses

def test_diotic_broadcast_and_validation():
    r = DesiredResponse.diotic(0.5, num_bins=4)
    assert r.gains(4).tolist() == [0.5] * 4
    with pytest.raises(ValueError):
        DesiredResponse.diotic(np.array([1.0 + 1j]))
    with pytest.raises(ValueError):
        DesiredResponse.diotic(np.nan)
    with pytest.raises(ValueError):
        DesiredResponse('stereo', gain=1.0)


def test_general_response_shape_checked():
    geo = MicArrayGeometry(np.zeros((3, 3)))
    r = DesiredResponse.general(np.ones((5, 2, 3)))
    assert r.matrix_for(geo, 5).shape == (5, 2, 3)
    with pytest.raises(ValueError):
        r.matrix_for(geo, 6)
    with pytest.raises(ValueError):
        DesiredResponse.general(np.ones((5, 3, 3)))


def test_remix_spec_validation():
    with pytest.raises(ValueError):
        RemixSpec.from_gains([1, 0.5], weights=[1, 0])
    with pytest.raises(ValueError):
        RemixSpec.from_gains([1, 0.5], weights=[1, 1, 1])
    spec = RemixSpec.from_gains([1.0, 0.25])
    assert spec.all_diotic
    assert spec.diotic_gains(3).tolist() == [[1, 1, 1], [0.25, 0.25, 0.25]]


def test_response_count_must_match(small_scene):
    with pytest.raises(ValueError, match='responses'):
        design_msdw_mwf(small_scene, RemixSpec.from_gains([1.0] * 3))


# noncausal design

def test_identical_gains_give_scaled_selector(small_scene):
    spec = RemixSpec.from_gains([0.7] * 4, weights=[1, 2, 3, 4])
    filt = design_msdw_mwf(small_scene, spec)
    expected = 0.7 * small_scene.geometry.selector()
    assert np.abs(filt.taps - expected).max() < 1e-12


def test_single_source_sherman_morrison(rng):
    g = make_frequency_grid(16000, 16)
    m = 5
    geo = MicArrayGeometry(rng.uniform(-0.1, 0.1, (m, 3)), ref_left=1, ref_right=3)
    a = rng.standard_normal((g.num_bins, m)) + 1j * rng.standard_normal((g.num_bins, m))
    rs = rng.uniform(0.5, 2.0, g.num_bins)
    scene = SceneSpec(geo, g, [rank1_channel(a, rs), _white(g, m, 0.3)])
    filt = design_msdw_mwf(scene, RemixSpec.from_gains([1.0, 0.0]))
    for f in range(g.num_bins):
        assert np.allclose(filt.taps[f, 0], sherman_morrison_row(a[f], rs[f], 0.3, 1), atol=1e-12)
        assert np.allclose(filt.taps[f, 1], sherman_morrison_row(a[f], rs[f], 0.3, 3), atol=1e-12)


def test_weight_scale_invariance(small_scene, rng):
    spec = random_remix(rng, small_scene)
    base = design_msdw_mwf(small_scene, spec).taps
    for c in (1e-3, 7.0, 1e4):
        scaled = RemixSpec(spec.responses, c * spec.weights)
        assert _rel(design_msdw_mwf(small_scene, scaled).taps, base) < 1e-12


def test_matches_lstsq_oracle_random_gains(rng):
    scene = random_scene(rng, num_channels=5, num_mics=6, nfft=16)
    spec = random_remix(rng, scene)
    filt = design_msdw_mwf(scene, spec)
    oracle = lstsq_filter(scene.psds, response_matrices(scene, spec), spec.weights)
    assert _rel(filt.taps, oracle) < 1e-9


def test_general_responses_match_oracle(rng):
    scene = random_scene(rng, num_channels=3, num_mics=4, nfft=16)
    f = scene.grid.num_bins
    mats = [rng.standard_normal((f, 2, 4)) + 1j * rng.standard_normal((f, 2, 4)) for _ in range(3)]
    spec = RemixSpec(tuple(DesiredResponse.general(x) for x in mats), [1.0, 0.5, 2.0])
    filt = design_msdw_mwf(scene, spec)
    oracle = lstsq_filter(scene.psds, np.stack(mats), spec.weights)
    assert _rel(filt.taps, oracle) < 1e-9
    assert not spec.all_diotic


def test_mvdr_limit_distortionless(rng):
    g = make_frequency_grid(16000, 16)
    m = 4
    geo = MicArrayGeometry(rng.uniform(-0.1, 0.1, (m, 3)))
    a = rng.standard_normal((g.num_bins, m)) + 1j * rng.standard_normal((g.num_bins, m))
    b = rng.standard_normal((g.num_bins, m)) + 1j * rng.standard_normal((g.num_bins, m))
    scene = SceneSpec(geo, g, [rank1_channel(a, 1.0), rank1_channel(b, 1.0), _white(g, m, 0.1)])
    spec = RemixSpec.from_gains([1.0, 0.0, 0.0], weights=[1e8, 1.0, 1.0])
    out = np.einsum('fam,fm->fa', design_msdw_mwf(scene, spec).taps, a)
    assert np.allclose(out, a[:, :2], rtol=0, atol=1e-6 * np.abs(a).max())


def test_ill_conditioned_bins_are_loaded(rng):
    g = make_frequency_grid(16000, 16)
    m = 4
    geo = MicArrayGeometry(rng.uniform(-0.1, 0.1, (m, 3)))
    a = rng.standard_normal((g.num_bins, m)) + 1j * rng.standard_normal((g.num_bins, m))
    scene = SceneSpec(geo, g, [rank1_channel(a, 1.0), _white(g, m, 1e-13)])
    filt = design_msdw_mwf(scene, RemixSpec.from_gains([1.0, 0.0]))
    assert filt.loaded_bins == tuple(range(g.num_bins))
    assert np.all(np.isfinite(filt.taps))
    # a well-conditioned scene loads nothing
    ok = design_msdw_mwf(random_scene(rng), random_remix(rng, random_scene(rng)))
    assert ok.loaded_bins == ()


def test_passthrough():
    geo = MicArrayGeometry(np.zeros((3, 3)), ref_left=2, ref_right=0)
    g = make_frequency_grid(16000, 8)
    p = FreqFilter.passthrough(geo, g)
    assert p.taps.shape == (5, 2, 3)
    assert np.array_equal(p.taps[0], geo.selector())
    assert (p.ref_left, p.ref_right) == (2, 0)


def test_freq_filter_validation():
    g = make_frequency_grid(16000, 8)
    with pytest.raises(ValueError):
        FreqFilter(np.zeros((4, 2, 3)), g)
    with pytest.raises(ValueError):
        FreqFilter(np.full((5, 2, 3), np.nan), g)


# FIR realization

def _flat(g, m, gain):
    return FreqFilter(np.broadcast_to(gain * np.eye(2, m), (g.num_bins, 2, m)), g)


def test_flat_filter_becomes_delayed_pulse():
    g = make_frequency_grid(16000, 1024)
    fir = to_causal_fir(_flat(g, 3, 0.8), delay_ms=16, length_ms=64)
    assert fir.delay_samples == 256 and fir.length == 1024
    taps = np.array(fir.taps)
    assert taps[0, 0, 256] == pytest.approx(0.8, abs=1e-12)
    taps[0, 0, 256] = taps[1, 1, 256] = 0
    assert np.abs(taps).max() < 1e-3


def test_passthrough_fir():
    geo = MicArrayGeometry(np.zeros((3, 3)))
    g = make_frequency_grid(16000, 256)
    fir = to_causal_fir(FreqFilter.passthrough(geo, g), delay_ms=2, length_ms=8)
    expected = np.zeros((2, 3, 128))
    expected[0, 0, 32] = expected[1, 1, 32] = 1.0
    assert np.abs(fir.taps - expected).max() < 1e-12


def test_flat_realized_response_close_to_gain():
    g = make_frequency_grid(16000, 512)
    fir = to_causal_fir(_flat(g, 2, 0.5), delay_ms=4, length_ms=16)
    real = realized_response(fir, g)
    assert np.abs(real.taps - _flat(g, 2, 0.5).taps).max() < 1e-3


def _smooth_filter(rng, g, m, tau=20.0):
    """Noncausal filter whose impulse response decays in both time directions."""
    t = np.arange(g.nfft)
    lag = np.minimum(t, g.nfft - t)
    h = rng.standard_normal((g.nfft, 2, m)) * np.exp(-lag / tau)[:, None, None]
    return FreqFilter(np.fft.rfft(h, axis=0), g)


def test_fir_deviation_shrinks_with_length(rng):
    g = make_frequency_grid(16000, 2048)
    filt = _smooth_filter(rng, g, 3)
    devs = []
    for length in (128, 256, 512, 1024):
        ms = 1000 * length / g.sample_rate_hz
        fir = to_causal_fir(filt, ms / 2, ms)
        devs.append(np.abs(realized_response(fir, g).taps - filt.taps)[:-1].max())
    assert all(b < a for a, b in zip(devs, devs[1:]))
    assert devs[-1] < 1e-6


def test_fir_timing_errors():
    g = make_frequency_grid(16000, 256)
    filt = _flat(g, 2, 1.0)
    with pytest.raises(ValueError):
        to_causal_fir(filt, delay_ms=8, length_ms=8)
    with pytest.raises(ValueError):
        to_causal_fir(filt, delay_ms=-1, length_ms=8)
    with pytest.raises(ValueError, match='nfft'):
        to_causal_fir(filt, delay_ms=4, length_ms=32)
    fir = to_causal_fir(filt, 2, 16)
    with pytest.raises(ValueError):
        realized_response(fir, make_frequency_grid(16000, 128))


def test_fir_filter_validation():
    with pytest.raises(ValueError):
        FirFilter(np.zeros((3, 2, 8)), 0, 16000.0)
    with pytest.raises(ValueError):
        FirFilter(np.zeros((2, 2, 8)), 8, 16000.0)


def test_save_load_bit_exact(tmp_path, rng):
    fir = FirFilter(rng.standard_normal((2, 5, 77)), 11, 16000.0)
    stem = save_fir(fir, tmp_path / 'sub' / 'w')
    assert sorted(p.name for p in (tmp_path / 'sub').iterdir()) == ['w.txt', 'w_left.wav', 'w_right.wav']
    back = load_fir(stem)
    assert np.array_equal(back.taps, fir.taps)
    assert back.delay_samples == 11 and back.sample_rate_hz == 16000.0
    header = (tmp_path / 'sub' / 'w.txt').read_text()
    assert 'delay_samples=11' in header and 'num_mics=5' in header and 'format=float64' in header


def test_load_fir_missing_header(tmp_path):
    with pytest.raises(ConfigError):
        load_fir(tmp_path / 'nothing')
