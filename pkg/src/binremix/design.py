"""Remixing filter design: noncausal MSDW-MWF and its causal FIR realization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError
from .scene import FrequencyGrid, weighted_mixture_psd

__all__ = [
    'DIOTIC',
    'GENERAL',
    'DesiredResponse',
    'RemixSpec',
    'FreqFilter',
    'FirFilter',
    'design_msdw_mwf',
    'regularized_mixture',
    'to_causal_fir',
    'realized_response',
    'response_matrices',
    'save_fir',
    'load_fir',
]

DIOTIC = 'diotic'
GENERAL = 'general'

COND_LIMIT = 1e12
LOADING = 1e-10
TAPER_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class DesiredResponse:
    form: str
    gain: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.form == DIOTIC:
            gain = np.asarray(self.gain)
            if np.iscomplexobj(gain):
                if np.any(gain.imag != 0):
                    raise ValueError('diotic gains must be real')
                gain = gain.real
            gain = gain.astype(float)
            if not np.all(np.isfinite(gain)):
                raise ValueError('diotic gains must be finite')
            gain.setflags(write=False)
            object.__setattr__(self, 'gain', gain)
        elif self.form == GENERAL:
            mat = np.asarray(self.matrix, dtype=complex)
            if mat.ndim != 3 or mat.shape[1] != 2:
                raise ValueError(f'general response must be (F, 2, M), got {mat.shape}')
            mat.setflags(write=False)
            object.__setattr__(self, 'matrix', mat)
        else:
            raise ValueError(f'unknown response form {self.form!r}')

    @classmethod
    def diotic(cls, gain, num_bins=None):
        """Same real gain on both reference mics; a scalar is broadcast over bins."""
        gain = np.asarray(gain)
        if num_bins is not None:
            gain = np.broadcast_to(gain, (num_bins,)).copy()
        return cls(DIOTIC, gain=gain)

    @classmethod
    def general(cls, matrix):
        return cls(GENERAL, matrix=matrix)

    @property
    def is_diotic(self) -> bool:
        return self.form == DIOTIC

    def gains(self, num_bins) -> np.ndarray:
        return np.broadcast_to(self.gain, (num_bins,))

    def matrix_for(self, geometry, num_bins) -> np.ndarray:
        if self.is_diotic:
            sel = geometry.selector()
            return (self.gains(num_bins)[:, None, None] * sel[None]).astype(complex)
        if self.matrix.shape != (num_bins, 2, geometry.num_mics):
            raise ValueError(f'general response shape {self.matrix.shape} does not match'
                             f' ({num_bins}, 2, {geometry.num_mics})')
        return np.array(self.matrix)


@dataclass(frozen=True, eq=False)
class RemixSpec:
    responses: tuple
    weights: np.ndarray

    def __post_init__(self):
        responses = tuple(self.responses)
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(responses),):
            raise ValueError(f'{len(responses)} responses but weights have shape {weights.shape}')
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError('distortion weights must be finite and strictly positive')
        weights.setflags(write=False)
        object.__setattr__(self, 'responses', responses)
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def from_gains(cls, gains, weights=None):
        """Frequency-flat diotic responses."""
        if weights is None:
            weights = np.ones(len(gains))
        return cls(tuple(DesiredResponse.diotic(g) for g in gains), weights)

    @property
    def all_diotic(self) -> bool:
        return all(r.is_diotic for r in self.responses)

    def diotic_gains(self, num_bins) -> np.ndarray:
        """(N, F) real gains; only valid when every response is diotic."""
        if not self.all_diotic:
            raise ValueError('responses are not all diotic')
        return np.stack([r.gains(num_bins) for r in self.responses])


def response_matrices(scene, spec) -> np.ndarray:
    """Desired responses as 2 x M matrices, shape (N, F, 2, M)."""
    if len(spec.responses) != scene.num_channels:
        raise ValueError(
            f'remix spec has {len(spec.responses)} responses, scene has {scene.num_channels} channels')
    return np.stack([r.matrix_for(scene.geometry, scene.grid.num_bins) for r in spec.responses])


@dataclass(frozen=True, eq=False)
class FreqFilter:
    taps: np.ndarray
    grid: FrequencyGrid
    ref_left: int = 0
    ref_right: int = 1
    loaded_bins: tuple = ()

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=complex)
        if taps.ndim != 3 or taps.shape[1] != 2 or taps.shape[0] != self.grid.num_bins:
            raise ValueError(f'filter taps {taps.shape} do not match grid with {self.grid.num_bins} bins')
        if not np.all(np.isfinite(taps)):
            raise ValueError('filter has non-finite entries')
        taps.setflags(write=False)
        object.__setattr__(self, 'taps', taps)

    @property
    def num_mics(self) -> int:
        return self.taps.shape[2]

    @classmethod
    def passthrough(cls, geometry, grid):
        taps = np.broadcast_to(geometry.selector(), (grid.num_bins, 2, geometry.num_mics))
        return cls(taps, grid, geometry.ref_left, geometry.ref_right)


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    delay_samples: int
    sample_rate_hz: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 3 or taps.shape[0] != 2:
            raise ValueError(f'FIR taps must be (2, M, L), got {taps.shape}')
        if not 0 <= self.delay_samples < taps.shape[2]:
            raise ValueError(f'delay {self.delay_samples} must lie in [0, {taps.shape[2]})')
        taps.setflags(write=False)
        object.__setattr__(self, 'taps', taps)
        object.__setattr__(self, 'delay_samples', int(self.delay_samples))

    @property
    def num_mics(self) -> int:
        return self.taps.shape[1]

    @property
    def length(self) -> int:
        return self.taps.shape[2]


def regularized_mixture(scene, weights):
    """Weighted mixture PSD with diagonal loading on ill-conditioned bins.

    Returns the (F, M, M) matrices and the indices of the loaded bins.
    """
    rbar = weighted_mixture_psd(scene, weights)
    eig = np.linalg.eigvalsh(rbar)
    loaded = np.flatnonzero(eig[:, -1] > COND_LIMIT * eig[:, 0])
    if loaded.size:
        rbar = rbar.copy()
        trace = np.real(np.trace(rbar[loaded], axis1=-2, axis2=-1))
        rbar[loaded] += LOADING * trace[:, None, None] * np.eye(rbar.shape[-1])
    return rbar, loaded


def design_msdw_mwf(scene, spec) -> FreqFilter:
    """Noncausal multiple-distortion-weighted multichannel Wiener filter.

    Per bin W = (sum_n lam_n G_n R_n) Rbar^-1 with Rbar = sum_n lam_n R_n.
    W is obtained from the Hermitian system Rbar W^H = (sum_n lam_n G_n R_n)^H
    (LU with partial pivoting, no explicit inverse). Bins where Rbar has
    condition number above 1e12 get 1e-10 trace diagonal loading and are
    listed in ``loaded_bins``.
    """
    g = response_matrices(scene, spec)
    lam = spec.weights
    rbar, loaded = regularized_mixture(scene, lam)
    cross = np.einsum('n,nfij,nfjk->fik', lam, g, scene.psds)
    w_h = np.linalg.solve(rbar, np.conj(np.swapaxes(cross, -1, -2)))
    taps = np.conj(np.swapaxes(w_h, -1, -2))
    geo = scene.geometry
    return FreqFilter(taps, scene.grid, geo.ref_left, geo.ref_right, tuple(int(b) for b in loaded))


def _taper(length):
    n = max(1, int(round(TAPER_FRACTION * length)))
    win = np.ones(length)
    k = np.arange(1, n + 1)
    win[length - n:] = 0.5 * (1 + np.cos(np.pi * k / n))
    return win


def to_causal_fir(filt, delay_ms, length_ms) -> FirFilter:
    """Frequency-sampling realization of a noncausal design.

    The impulse response on the full nfft circle is rotated by the delay,
    truncated to the requested length and faded out with a raised cosine over
    the last 10% of taps. The imaginary part of the Nyquist bin cannot be
    realized by real taps and is dropped.
    """
    fs = filt.grid.sample_rate_hz
    if delay_ms < 0:
        raise ValueError('delay must be nonnegative')
    if not length_ms > delay_ms:
        raise ValueError(f'filter length {length_ms} ms must exceed the delay {delay_ms} ms')
    delay = int(round(delay_ms * fs / 1000))
    length = int(round(length_ms * fs / 1000))
    if length <= delay:
        raise ValueError(f'{length} taps cannot hold a delay of {delay} samples')
    nfft = filt.grid.nfft
    if length > nfft:
        raise ValueError(f'nfft {nfft} is too small for {length} taps')
    h = np.fft.irfft(filt.taps, n=nfft, axis=0)
    h = np.roll(h, delay, axis=0)[:length] * _taper(length)[:, None, None]
    return FirFilter(np.moveaxis(h, 0, -1), delay, fs)


def realized_response(fir, grid) -> FreqFilter:
    """DTFT of the taps on ``grid`` with the nominal delay removed."""
    if fir.length > grid.nfft:
        raise ValueError(f'grid nfft {grid.nfft} is shorter than the filter ({fir.length} taps)')
    spec = np.fft.rfft(fir.taps, n=grid.nfft, axis=-1)
    spec = np.moveaxis(spec, -1, 0) * np.exp(1j * grid.digital * fir.delay_samples)[:, None, None]
    return FreqFilter(spec, grid)


def _atomic_write(path, write):
    path = Path(path)
    tmp = path.with_name(path.name + '.tmp')
    write(tmp)
    tmp.replace(path)


def save_fir(fir, stem):
    """Write ``<stem>_left.wav``, ``<stem>_right.wav`` and ``<stem>.txt``.

    Each WAVE file holds one output row as an M-channel, 64-bit float signal,
    so reading it back is bit-exact.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    rate = int(round(fir.sample_rate_hz))
    for row, side in enumerate(('left', 'right')):
        data = np.ascontiguousarray(fir.taps[row].T, dtype=np.float64)
        _atomic_write(stem.with_name(f'{stem.name}_{side}.wav'),
                      lambda p, d=data: wavfile.write(p, rate, d))
    header = (f'delay_samples={fir.delay_samples}\n'
              f'sample_rate={fir.sample_rate_hz!r}\n'
              f'num_mics={fir.num_mics}\n'
              f'num_taps={fir.length}\n'
              'format=float64\n')
    _atomic_write(stem.with_name(stem.name + '.txt'), lambda p: p.write_text(header))
    return stem


def load_fir(stem) -> FirFilter:
    stem = Path(stem)
    header = {}
    try:
        text = stem.with_name(stem.name + '.txt').read_text()
    except FileNotFoundError:
        raise ConfigError(f'missing FIR header {stem}.txt') from None
    for line in text.splitlines():
        if '=' in line:
            key, value = line.split('=', 1)
            header[key.strip()] = value.strip()
    rows = []
    for side in ('left', 'right'):
        rate, data = wavfile.read(stem.with_name(f'{stem.name}_{side}.wav'))
        rows.append(np.atleast_2d(data.T) if data.ndim == 2 else data[None])
    fs = float(header['sample_rate'])
    if int(round(fs)) != rate:
        raise ConfigError(f'header sample rate {fs} disagrees with WAVE rate {rate}')
    return FirFilter(np.stack(rows), int(header['delay_samples']), fs)
