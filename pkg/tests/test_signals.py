import numpy as np
import pytest

from binremix.design import FirFilter, FreqFilter, to_causal_fir
from binremix.harness import synthetic_scene
from binremix.scene import (MicArrayGeometry, SceneSpec, geometry_preset, make_frequency_grid,
                            rank1_channel, speech_spectrum, synth_head_atf)
from binremix.signals import (MultichannelSignal, StftTensor, apply_fir, empirical_cue_report,
                              empirical_itf, istft, read_wav, render_images, sqrt_hann, stft,
                              synth_speech_shaped_noise)

from oracles import welch_csd
from scenes import white_channel

FS = 16000.0


def _sig(x):
    return MultichannelSignal(np.atleast_2d(x), FS)


# dry signals

def test_speech_noise_deterministic():
    g = make_frequency_grid(FS, 512)
    a = synth_speech_shaped_noise(1.0, 7, g)
    b = synth_speech_shaped_noise(1.0, 7, g)
    c = synth_speech_shaped_noise(1.0, 8, g)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    assert a.samples.shape == (1, 16000)


def test_speech_noise_zero_duration():
    g = make_frequency_grid(FS, 512)
    assert synth_speech_shaped_noise(0.0, 1, g).num_samples == 0


def test_speech_noise_psd_follows_spectrum():
    g = make_frequency_grid(FS, 512)
    x = synth_speech_shaped_noise(60.0, 3, g).samples[0]
    est = welch_csd(x, x, FS, 512).real
    freqs = np.fft.rfftfreq(512, 1 / FS)
    band = (freqs >= 100) & (freqs <= 6000)
    err_db = 10 * np.log10(est[band] / speech_spectrum(freqs[band]))
    assert np.abs(err_db).max() < 1.0


def test_signal_validation_and_ops(tmp_path):
    with pytest.raises(ValueError):
        MultichannelSignal(np.array([[np.nan, 0.0]]), FS)
    a = _sig(np.ones((2, 4)))
    b = a + a
    assert np.array_equal(b.samples, 2 * np.ones((2, 4)))
    with pytest.raises(ValueError):
        a + MultichannelSignal(np.ones((2, 4)), 8000.0)
    assert a.segment(1, 3).num_samples == 2
    x = _sig(np.linspace(-0.5, 0.5, 20).reshape(2, 10))
    x.to_wav(tmp_path / 'x.wav')
    back = read_wav(tmp_path / 'x.wav')
    assert back.sample_rate_hz == FS
    assert np.allclose(back.samples, x.samples, atol=1e-7)


# STFT

def test_sqrt_hann_cola():
    w = sqrt_hann(512)
    acc = w[:256] ** 2 + w[256:] ** 2
    assert np.allclose(acc, 1.0)


def test_stft_round_trip(rng):
    x = rng.standard_normal((3, 10000))
    y = istft(stft(x, 512, 256))
    inner = slice(256, y.shape[1] - 256)
    assert np.abs(y[:, inner] - x[:, inner]).max() < 1e-12


@pytest.mark.parametrize('window,hop', [(512, 128), (256, 64), (64, 32)])
def test_stft_round_trip_other_hops(rng, window, hop):
    x = rng.standard_normal((1, 4096))
    y = istft(stft(x, window, hop))
    inner = slice(window, y.shape[1] - window)
    assert np.abs(y[:, inner] - x[:, inner]).max() < 1e-12


def test_stft_rejects_non_cola():
    x = np.zeros((1, 2048))
    with pytest.raises(ValueError):
        stft(x, 512, 200)
    with pytest.raises(ValueError):
        stft(x, 512, 512)


def test_stft_parseval(rng):
    # energy fully inside the region covered by complete overlaps
    x = np.zeros((1, 8192))
    x[0, 1024:7168] = rng.standard_normal(6144)
    t = stft(x, 512, 256)
    frames = t.frames[0]
    one_sided = np.abs(frames[:, 0]) ** 2 + np.abs(frames[:, -1]) ** 2 \
        + 2 * np.sum(np.abs(frames[:, 1:-1]) ** 2, axis=1)
    assert one_sided.sum() / 512 == pytest.approx(np.sum(x ** 2), rel=1e-12)


def test_stft_sinusoid_peaks_at_bin():
    n = np.arange(8192)
    x = np.cos(2 * np.pi * 20 * n / 512)
    t = stft(x, 512, 256)
    mag = np.abs(t.frames[0]).mean(axis=0)
    assert int(np.argmax(mag)) == 20
    # the sine window leaks with 1/k^2 decay
    assert np.delete(mag, range(17, 24)).max() < 0.03 * mag[20]
    assert np.all(np.diff(mag[14:21]) > 0) and np.all(np.diff(mag[20:27]) < 0)


def test_stft_short_signal_has_no_frames():
    t = stft(np.zeros((2, 100)), 512, 256)
    assert t.frames.shape == (2, 0, 257)
    assert isinstance(t, StftTensor) and t.num_frames == 0


# rendering and filtering

def _unit_scene(g, m=3):
    e1 = np.zeros((g.num_bins, m), dtype=complex)
    e1[:, 0] = 1.0
    return SceneSpec(MicArrayGeometry(np.zeros((m, 3))), g,
                     [rank1_channel(e1, 1.0), white_channel(g.num_bins, m, 0.1)])


def test_render_unit_atf_reproduces_dry(rng):
    g = make_frequency_grid(FS, 64)
    dry = _sig(rng.standard_normal(2000))
    images, mix = render_images(_unit_scene(g), [dry], seed=1)
    assert np.abs(images[0].samples[0] - dry.samples[0]).max() < 1e-12
    assert np.abs(images[0].samples[1:]).max() < 1e-12
    assert np.allclose(mix.samples, images[0].samples + images[1].samples, rtol=0, atol=1e-15)


def test_render_is_seeded(rng):
    g = make_frequency_grid(FS, 64)
    dry = _sig(rng.standard_normal(2000))
    a = render_images(_unit_scene(g), [dry], seed=5)[1]
    b = render_images(_unit_scene(g), [dry], seed=5)[1]
    c = render_images(_unit_scene(g), [dry], seed=6)[1]
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_render_errors(rng):
    g = make_frequency_grid(FS, 64)
    with pytest.raises(ValueError, match='dry signals'):
        render_images(_unit_scene(g), [], seed=0)
    with pytest.raises(ValueError, match='shorter'):
        render_images(_unit_scene(g), [_sig(np.zeros(10))], seed=0)


def test_rendered_cross_psd_matches_model(grid1024):
    geo = geometry_preset('earpiece4')
    g = make_frequency_grid(FS, 512)
    scene = synthetic_scene(geo, g, azimuths_deg=(45.0,), noise_db=0.0)
    dry = synth_speech_shaped_noise(60.0, 11, g)
    images, _ = render_images(scene, [dry], seed=2)
    freqs = g.freqs_hz
    band = (freqs >= 100) & (freqs <= 6000)
    for n, img in enumerate(images):
        x = img.samples
        want = scene.psds[n]
        for i, j in ((0, 0), (0, 1), (1, 2)):
            est = welch_csd(x[i], x[j], FS, 512)
            scale = np.sqrt(want[:, i, i].real * want[:, j, j].real)
            err = np.abs(est - want[:, i, j]) / scale
            assert np.median(err[band]) < 0.1
            assert np.quantile(err[band], 0.9) < 0.2


def test_apply_fir_pulses_delay_references(rng):
    taps = np.zeros((2, 3, 16))
    taps[0, 0, 4] = taps[1, 1, 4] = 1.0
    x = _sig(rng.standard_normal((3, 100)))
    y = apply_fir(FirFilter(taps, 4, FS), x)
    assert y.num_samples == 115
    assert np.allclose(y.samples[0, 4:104], x.samples[0])
    assert np.allclose(y.samples[1, 4:104], x.samples[1])
    with pytest.raises(ValueError):
        apply_fir(FirFilter(taps, 4, FS), _sig(np.zeros((2, 10))))


def test_apply_fir_linear(rng):
    fir = FirFilter(rng.standard_normal((2, 3, 20)), 5, FS)
    x = _sig(rng.standard_normal((3, 300)))
    y = _sig(rng.standard_normal((3, 300)))
    lhs = apply_fir(fir, _sig(2 * x.samples - 0.5 * y.samples)).samples
    rhs = 2 * apply_fir(fir, x).samples - 0.5 * apply_fir(fir, y).samples
    assert np.abs(lhs - rhs).max() < 1e-10


# empirical ITF

def test_empirical_itf_passthrough_equal(rng):
    x = _sig(rng.standard_normal((3, 8192)))
    short = x.segment(0, 8192)
    out = _sig(x.samples[:2])
    itf_in, itf_out = empirical_itf([short], [out])
    assert np.allclose(itf_in, itf_out)


def test_empirical_itf_of_frontal_source_is_balanced():
    g = make_frequency_grid(FS, 1024)
    geo = geometry_preset('earpiece4')
    a = synth_head_atf(geo, 0.0, 1.5, g)
    scene = SceneSpec(geo, g, [rank1_channel(a, speech_spectrum(g.freqs_hz)),
                               white_channel(g.num_bins, 4, 1e-6)])
    dry = synth_speech_shaped_noise(10.0, 4, g)
    images, _ = render_images(scene, [dry], seed=1)
    itf_in, _ = empirical_itf([images[0]], [_sig(images[0].samples[:2])])
    ild = 20 * np.log10(np.abs(itf_in[0, 1:]))
    assert np.abs(ild).max() < 0.2


def test_empirical_itf_converges_to_conjugate_ratio():
    g = make_frequency_grid(FS, 1024)
    geo = geometry_preset('earpiece4')
    a = synth_head_atf(geo, np.deg2rad(45), 1.5, g)
    scene = SceneSpec(geo, g, [rank1_channel(a, 1.0), white_channel(g.num_bins, 4, 1e-6)])
    images, _ = render_images(scene, [_sig(np.random.default_rng(0).standard_normal(160000))], seed=1)
    itf_in, _ = empirical_itf([images[0]], [_sig(images[0].samples[:2])])
    model = (a[:, 1] / a[:, 0])[::2]
    band = slice(4, 200)
    assert np.allclose(itf_in[0, band], np.conj(model[band]), rtol=0.02)
    rep = empirical_cue_report(np.fft.rfftfreq(512, 1 / FS), (0,), ('s',), itf_in, itf_in)
    assert np.allclose(rep.itf_in[0, band], model[band], rtol=0.02)
    assert rep.variant == 'empirical'


def test_flat_fir_preserves_empirical_cues(rng):
    g = make_frequency_grid(FS, 512)
    geo = MicArrayGeometry(np.zeros((3, 3)))
    fir = to_causal_fir(FreqFilter.passthrough(geo, g), 4, 16)
    x = _sig(rng.standard_normal((3, 16000)))
    y = apply_fir(fir, x)
    itf_in, itf_out = empirical_itf([x.segment(0, 15000)], [y.segment(fir.delay_samples, fir.delay_samples + 15000)])
    assert np.allclose(itf_in, itf_out, rtol=1e-9)
