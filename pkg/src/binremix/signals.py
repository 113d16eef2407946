"""Time-domain simulation and STFT-domain measurement of interaural cues."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import oaconvolve

from .analysis import CueReport
from .design import FreqFilter, to_causal_fir
from .fileio import write_wav
from .scene import speech_spectrum

__all__ = [
    'MultichannelSignal',
    'StftTensor',
    'synth_speech_shaped_noise',
    'render_images',
    'apply_fir',
    'stft',
    'istft',
    'sqrt_hann',
    'empirical_itf',
    'empirical_cue_report',
    'empirical_error_power',
    'read_wav',
]

DEFAULT_WINDOW = 512
DEFAULT_HOP = 256


@dataclass(frozen=True, eq=False)
class MultichannelSignal:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if x.ndim != 2:
            raise ValueError(f'samples must be channels x T, got {x.shape}')
        if not np.all(np.isfinite(x)):
            raise ValueError('signal has non-finite samples')
        object.__setattr__(self, 'samples', x)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def __add__(self, other):
        if other.sample_rate_hz != self.sample_rate_hz:
            raise ValueError('sample rates differ')
        return MultichannelSignal(self.samples + other.samples, self.sample_rate_hz)

    def segment(self, start, stop=None):
        return MultichannelSignal(self.samples[:, start:stop], self.sample_rate_hz)

    def to_wav(self, path):
        write_wav(path, self.samples, self.sample_rate_hz)


def read_wav(path) -> MultichannelSignal:
    rate, data = wavfile.read(path)
    if data.dtype.kind != 'f':
        data = data / float(np.iinfo(data.dtype).max + 1)
    return MultichannelSignal(np.atleast_2d(data.T), float(rate))


@dataclass(frozen=True, eq=False)
class StftTensor:
    frames: np.ndarray
    window_len: int
    hop: int
    window: str = 'sqrt_hann'
    num_samples: int = 0

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


def sqrt_hann(n) -> np.ndarray:
    """Periodic square-root Hann window."""
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


def _cola_gain(window, hop):
    n = len(window)
    acc = np.zeros(hop)
    w2 = window ** 2
    for start in range(0, n, hop):
        seg = w2[start:start + hop]
        acc[:len(seg)] += seg
    if np.ptp(acc) > 1e-10 * acc.max():
        raise ValueError(f'window of {n} samples with hop {hop} does not overlap-add to a constant')
    return acc.mean()


def stft(signal, window_len=DEFAULT_WINDOW, hop=DEFAULT_HOP) -> StftTensor:
    """Frames only where the window fits completely; no padding."""
    x = signal.samples if isinstance(signal, MultichannelSignal) else np.atleast_2d(signal)
    if window_len % hop:
        raise ValueError('hop must divide the window length')
    win = sqrt_hann(window_len)
    _cola_gain(win, hop)
    t = x.shape[1]
    if t < window_len:
        frames = np.zeros((x.shape[0], 0, window_len // 2 + 1), dtype=complex)
    else:
        view = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=1)[:, ::hop]
        frames = np.fft.rfft(view * win, axis=-1)
    return StftTensor(frames, window_len, hop, 'sqrt_hann', t)


def istft(tensor) -> np.ndarray:
    """Weighted overlap-add inverse, channels x ((K - 1) hop + window_len)."""
    n, hop = tensor.window_len, tensor.hop
    win = sqrt_hann(n)
    gain = _cola_gain(win, hop)
    c, k, _ = tensor.frames.shape
    out = np.zeros((c, max(k - 1, 0) * hop + n if k else 0))
    chunks = np.fft.irfft(tensor.frames, n=n, axis=-1) * win
    for i in range(k):
        out[:, i * hop:i * hop + n] += chunks[:, i]
    return out / gain


def synth_speech_shaped_noise(duration_s, seed, grid) -> MultichannelSignal:
    """Seeded Gaussian noise whose PSD follows the speech-shaped spectrum."""
    fs = grid.sample_rate_hz
    t = int(round(duration_s * fs))
    if t <= 0:
        return MultichannelSignal(np.zeros((1, 0)), fs)
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(t)
    spec = np.fft.rfft(white) * np.sqrt(speech_spectrum(np.fft.rfftfreq(t, 1 / fs)))
    return MultichannelSignal(np.fft.irfft(spec, n=t)[None], fs)


def _hermitian_sqrt(psd):
    eig, vec = np.linalg.eigh(psd)
    root = np.sqrt(np.maximum(eig, 0))
    return np.einsum('fik,fk,fjk->fij', vec, root, np.conj(vec))


def _render_diffuse(channel, grid, num_samples, rng):
    nfft = grid.nfft
    factor = _hermitian_sqrt(channel.psd)
    ir = np.fft.irfft(factor, n=nfft, axis=0)
    ir = np.roll(ir, nfft // 2, axis=0)
    m = ir.shape[1]
    streams = rng.standard_normal((m, num_samples + nfft))
    size = num_samples + 2 * nfft
    z = np.fft.rfft(streams, n=size, axis=-1)
    out = np.empty((m, num_samples))
    for i in range(m):
        h = np.fft.rfft(ir[:, i, :], n=size, axis=0)
        y = np.fft.irfft(np.einsum('fj,jf->f', h, z), n=size)
        out[i] = y[nfft:nfft + num_samples]
    return out


def render_images(scene, dry_signals, seed=0):
    """Microphone images of every channel and their sum.

    ``dry_signals`` holds one single-channel signal per rank-1 channel, in
    scene order. Full-rank channels are synthesized from seeded white noise
    shaped by a per-bin Hermitian square root of their PSD.

    Returns
    -------
    images : list of MultichannelSignal, one per scene channel (M x T)
    mixture : MultichannelSignal
    """
    grid = scene.grid
    fs = grid.sample_rate_hz
    rank1 = scene.rank1_indices()
    if len(dry_signals) != len(rank1):
        raise ValueError(f'need {len(rank1)} dry signals, got {len(dry_signals)}')
    lengths = {s.num_samples for s in dry_signals}
    if len(lengths) > 1:
        raise ValueError('dry signals must have equal length')
    t = lengths.pop() if lengths else 0
    if t < grid.nfft:
        raise ValueError(f'signals of {t} samples are shorter than the impulse responses ({grid.nfft})')
    dry = dict(zip(rank1, dry_signals))
    rng = np.random.default_rng(seed)
    images = []
    for n, ch in enumerate(scene.channels):
        if ch.is_rank1:
            ir = np.fft.irfft(ch.atf, n=grid.nfft, axis=0).T
            x = dry[n].samples[0]
            img = oaconvolve(x[None, :], ir, axes=-1)[:, :t]
        else:
            img = _render_diffuse(ch, grid, t, rng)
        images.append(MultichannelSignal(img, fs))
    mixture = MultichannelSignal(np.sum([im.samples for im in images], axis=0), fs)
    return images, mixture


def apply_fir(fir, x) -> MultichannelSignal:
    """Filter an M-channel signal to 2 outputs; full linear convolution."""
    samples = x.samples
    if samples.shape[0] != fir.num_mics:
        raise ValueError(f'filter expects {fir.num_mics} channels, signal has {samples.shape[0]}')
    length = samples.shape[1] + fir.length - 1
    out = np.zeros((2, length))
    for row in range(2):
        out[row] = oaconvolve(samples, fir.taps[row], axes=-1).sum(axis=0)
    return MultichannelSignal(out, x.sample_rate_hz)


def _cross_ratio(tensor, first, second):
    """sum_k X_first conj(X_second) / sum_k |X_first|^2 over interior frames."""
    frames = tensor.frames[:, 1:-1]
    a, b = frames[first], frames[second]
    num = np.sum(a * np.conj(b), axis=0)
    den = np.sum(np.abs(a) ** 2, axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = num / den
    return np.where(den > 0, out, np.nan + 0j)


def empirical_itf(images_in, images_out, ref_left=0, ref_right=1,
                  window_len=DEFAULT_WINDOW, hop=DEFAULT_HOP):
    """STFT cross-correlation ITF estimates, per source and bin.

    Uses the printed estimator literally: conj-products of left with right
    over left power. For a rank-1 source this converges to the complex
    conjugate of the right/left transfer-function ratio. The first and last
    frames are skipped.

    Returns
    -------
    itf_in, itf_out : (S, window_len // 2 + 1) complex, NaN where undefined
    """
    itf_in, itf_out = [], []
    for img, out in zip(images_in, images_out):
        itf_in.append(_cross_ratio(stft(img, window_len, hop), ref_left, ref_right))
        itf_out.append(_cross_ratio(stft(out, window_len, hop), 0, 1))
    return np.array(itf_in), np.array(itf_out)


def empirical_cue_report(freqs_hz, sources, labels, itf_in, itf_out) -> CueReport:
    """Measured cues in the right-over-left orientation of the analytic ITF."""
    return CueReport(np.asarray(freqs_hz), tuple(sources), tuple(labels),
                     np.conj(itf_in), np.conj(itf_out), variant='empirical')


def empirical_error_power(scene, spec, fir, images, steady):
    """Time-averaged weighted squared error, sum_n lam_n mean ||d_hat_n - d_n||^2.

    Desired images are the reference signals passed through each channel's
    desired response, realized with the same delay and length as ``fir`` so
    both sides are time-aligned. ``steady`` is a slice excluding transients.
    """
    grid = scene.grid
    geo = scene.geometry
    l_ms = 1000 * fir.length / grid.sample_rate_hz
    d_ms = 1000 * fir.delay_samples / grid.sample_rate_hz
    total = 0.0
    for resp, lam, img in zip(spec.responses, spec.weights, images):
        target = FreqFilter(resp.matrix_for(geo, grid.num_bins), grid, geo.ref_left, geo.ref_right)
        desired = apply_fir(to_causal_fir(target, d_ms, l_ms), img).samples[:, steady]
        got = apply_fir(fir, img).samples[:, steady]
        total += lam * np.mean(np.sum((got - desired) ** 2, axis=0))
    return float(total)
