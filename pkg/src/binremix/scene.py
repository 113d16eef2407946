"""Acoustic scene description.

Shapes follow one convention throughout the package: frequency first, then
the spatial dimensions.

    atf:  (F, M)
    psd:  (F, M, M)
    grid: F = nfft // 2 + 1 bins
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, SingularMixtureError

__all__ = [
    'FrequencyGrid',
    'MicArrayGeometry',
    'SourceChannel',
    'SceneSpec',
    'RANK1',
    'FULL_RANK',
    'make_frequency_grid',
    'speech_spectrum',
    'synth_head_atf',
    'rank1_channel',
    'diffuse_noise_channel',
    'channel_psd',
    'weighted_mixture_psd',
    'load_impulse_responses',
    'geometry_preset',
    'ARRAY_PRESETS',
    'HEAD_RADIUS_M',
]

RANK1 = 'rank1'
FULL_RANK = 'full'

HEAD_RADIUS_M = 0.0875
SOUND_SPEED_MPS = 343.0

_HERMITIAN_TOL = 1e-12
_PSD_EIG_FLOOR = 1e-10
DIFFUSE_LOADING = 1e-10


@dataclass(frozen=True)
class FrequencyGrid:
    sample_rate_hz: float
    nfft: int

    @property
    def num_bins(self) -> int:
        return self.nfft // 2 + 1

    @property
    def freqs_hz(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate_hz / self.nfft

    @property
    def bins(self) -> np.ndarray:
        """Angular frequencies in rad/s, DC up to Nyquist."""
        return 2 * np.pi * self.freqs_hz

    @property
    def digital(self) -> np.ndarray:
        """Normalized angular frequencies in rad/sample."""
        return 2 * np.pi * np.arange(self.num_bins) / self.nfft


def make_frequency_grid(sample_rate_hz, nfft) -> FrequencyGrid:
    if not sample_rate_hz > 0:
        raise ValueError(f'sample rate must be positive, got {sample_rate_hz}')
    if int(nfft) != nfft or nfft % 2 or nfft < 8:
        raise ValueError(f'nfft must be an even integer >= 8, got {nfft}')
    return FrequencyGrid(float(sample_rate_hz), int(nfft))


@dataclass(frozen=True, eq=False)
class MicArrayGeometry:
    """Microphone positions in meters, head center at the origin.

    Axes: x points forward, y to the left, z up. Azimuth is measured
    counterclockwise from the front, so +90 degrees is the left side.
    """
    positions: np.ndarray
    ref_left: int = 0
    ref_right: int = 1

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f'positions must be (M, 3), got {pos.shape}')
        m = pos.shape[0]
        if m < 2:
            raise ValueError('need at least two microphones')
        if self.ref_left == self.ref_right:
            raise ValueError('left and right reference must differ')
        for ref in (self.ref_left, self.ref_right):
            if not 0 <= ref < m:
                raise ValueError(f'reference index {ref} out of range for M={m}')
        pos.setflags(write=False)
        object.__setattr__(self, 'positions', pos)

    @property
    def num_mics(self) -> int:
        return self.positions.shape[0]

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def selector(self) -> np.ndarray:
        """The 2 x M matrix [e_left e_right]^T."""
        sel = np.zeros((2, self.num_mics))
        sel[0, self.ref_left] = 1.0
        sel[1, self.ref_right] = 1.0
        return sel


def _check_psd_stack(psd, what):
    scale = np.maximum(np.abs(psd).max(axis=(-2, -1)), np.finfo(float).tiny)
    asym = np.abs(psd - np.conj(np.swapaxes(psd, -1, -2))).max(axis=(-2, -1))
    if np.any(asym > _HERMITIAN_TOL * scale):
        bad = int(np.argmax(asym / scale))
        raise ValueError(f'{what}: PSD is not Hermitian at bin {bad}')
    eig = np.linalg.eigvalsh(psd)
    trace = np.real(np.trace(psd, axis1=-2, axis2=-1))
    if np.any(eig[..., 0] < -_PSD_EIG_FLOOR * np.maximum(trace, 0)):
        bad = int(np.argmin(eig[..., 0]))
        raise ValueError(f'{what}: PSD has a negative eigenvalue at bin {bad}')


@dataclass(frozen=True, eq=False)
class SourceChannel:
    """One group of sounds that share a desired response.

    Rank-1 channels carry an acoustic transfer function and a dry spectrum;
    full-rank channels carry their spatial PSD directly.
    """
    kind: str
    atf: np.ndarray | None = None
    dry_psd: np.ndarray | None = None
    psd: np.ndarray | None = None
    label: str = ''

    def __post_init__(self):
        if self.kind == RANK1:
            if self.atf is None or self.dry_psd is None:
                raise ValueError('rank-1 channel needs atf and dry_psd')
            atf = np.asarray(self.atf, dtype=complex)
            dry = np.asarray(self.dry_psd, dtype=float)
            if atf.ndim != 2 or dry.shape != atf.shape[:1]:
                raise ValueError(f'atf {atf.shape} and dry_psd {dry.shape} disagree')
            if np.any(dry < 0) or not np.all(np.isfinite(dry)):
                raise ValueError('dry_psd must be finite and nonnegative')
            if not np.all(np.isfinite(atf)):
                raise ValueError('atf must be finite')
            atf.setflags(write=False)
            dry.setflags(write=False)
            object.__setattr__(self, 'atf', atf)
            object.__setattr__(self, 'dry_psd', dry)
        elif self.kind == FULL_RANK:
            if self.psd is None:
                raise ValueError('full-rank channel needs psd')
            psd = np.asarray(self.psd, dtype=complex)
            if psd.ndim != 3 or psd.shape[1] != psd.shape[2]:
                raise ValueError(f'psd must be (F, M, M), got {psd.shape}')
            _check_psd_stack(psd, self.label or 'channel')
            psd.setflags(write=False)
            object.__setattr__(self, 'psd', psd)
        else:
            raise ValueError(f'unknown channel kind {self.kind!r}')

    @property
    def is_rank1(self) -> bool:
        return self.kind == RANK1

    @property
    def num_bins(self) -> int:
        return (self.atf if self.is_rank1 else self.psd).shape[0]

    @property
    def num_mics(self) -> int:
        return (self.atf if self.is_rank1 else self.psd).shape[1]


def rank1_channel(atf, dry_psd, label='') -> SourceChannel:
    atf = np.asarray(atf, dtype=complex)
    dry = np.broadcast_to(np.asarray(dry_psd, dtype=float), atf.shape[:1]).copy()
    return SourceChannel(RANK1, atf=atf, dry_psd=dry, label=label)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    geometry: MicArrayGeometry
    grid: FrequencyGrid
    channels: tuple
    sound_speed_mps: float = SOUND_SPEED_MPS
    _psds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        channels = tuple(self.channels)
        object.__setattr__(self, 'channels', channels)
        if not channels:
            raise ValueError('scene needs at least one channel')
        m, f = self.geometry.num_mics, self.grid.num_bins
        for ch in channels:
            if ch.num_bins != f or ch.num_mics != m:
                raise ValueError(
                    f'channel {ch.label!r} is ({ch.num_bins} bins, {ch.num_mics} mics),'
                    f' scene is ({f}, {m})')
        psds = np.stack([channel_psd(ch, self.grid) for ch in channels])
        psds.setflags(write=False)
        object.__setattr__(self, '_psds', psds)
        if not any(self._full_rank_everywhere(n) for n in range(len(channels))):
            raise ValueError(
                'no channel has a full-rank PSD on every bin; add a diffuse noise channel')

    def _full_rank_everywhere(self, n):
        if self.channels[n].is_rank1 and self.geometry.num_mics > 1:
            return False
        eig = np.linalg.eigvalsh(self._psds[n])
        return bool(np.all(eig[:, 0] > 0))

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def psds(self) -> np.ndarray:
        """Stacked channel PSDs, shape (N, F, M, M)."""
        return self._psds

    def rank1_indices(self) -> list:
        return [n for n, ch in enumerate(self.channels) if ch.is_rank1]


def speech_spectrum(freqs_hz, corner_hz=500.0) -> np.ndarray:
    """Long-term speech-shaped power spectrum: flat, then -6 dB/octave."""
    f = np.asarray(freqs_hz, dtype=float)
    return np.where(f <= corner_hz, 1.0, (corner_hz / np.maximum(f, corner_hz)) ** 2)


def _far_field_path_offsets(positions, direction, head_radius):
    """Extra path length per mic relative to the head center (plane wave)."""
    r = np.maximum(np.linalg.norm(positions, axis=1), head_radius)
    safe_r = np.where(r > 0, r, 1.0)
    cos_gamma = np.clip(positions @ direction / safe_r, -1.0, 1.0)
    gamma = np.arccos(cos_gamma)
    tangent = np.arccos(np.clip(head_radius / r, -1.0, 1.0))
    shadowed = gamma > np.pi / 2 + tangent
    lit = -r * cos_gamma
    wrapped = np.sqrt(np.maximum(r ** 2 - head_radius ** 2, 0.0)) \
        + head_radius * (gamma - np.pi / 2 - tangent)
    return np.where(shadowed, wrapped, lit), gamma


def synth_head_atf(geometry, azimuth_rad, distance_m, grid, head_radius_m=HEAD_RADIUS_M,
                   sound_speed_mps=SOUND_SPEED_MPS, elevation_rad=0.0, min_shadow=0.1):
    """Spherical-head transfer function from a distant point source.

    Delays are far-field: the source-to-center travel time plus a per-mic
    offset that follows the straight path for lit mics and wraps around the
    rigid sphere for shadowed ones (Woodworth). Mics facing away from the
    source also get a one-pole/one-zero shadow filter whose high-frequency
    gain drops to ``min_shadow`` directly opposite the source.

    Returns
    -------
    atf : (F, M) complex
    """
    if not head_radius_m > 0:
        raise ValueError('head radius must be positive')
    if not distance_m > head_radius_m:
        raise ValueError(
            f'source at {distance_m} m is inside the head radius {head_radius_m} m')
    direction = np.array([np.cos(elevation_rad) * np.cos(azimuth_rad),
                          np.cos(elevation_rad) * np.sin(azimuth_rad),
                          np.sin(elevation_rad)])
    offsets, gamma = _far_field_path_offsets(geometry.positions, direction, head_radius_m)
    delay = (distance_m + offsets) / sound_speed_mps

    omega = grid.bins[:, None]
    alpha = np.where(gamma > np.pi / 2,
                     1.0 - (1.0 - min_shadow) * np.sin(np.clip(gamma - np.pi / 2, 0, np.pi / 2)),
                     1.0)
    omega0 = sound_speed_mps / head_radius_m
    shadow = (1 + 1j * alpha * omega / (2 * omega0)) / (1 + 1j * omega / (2 * omega0))
    return shadow * np.exp(-1j * omega * delay[None, :]) / distance_m


def diffuse_noise_channel(geometry, grid, level_psd, sound_speed_mps=SOUND_SPEED_MPS,
                          label='diffuse') -> SourceChannel:
    """Spherically isotropic noise with sinc coherence between mics."""
    level = np.broadcast_to(np.asarray(level_psd, dtype=float), (grid.num_bins,))
    if np.any(level < 0):
        raise ValueError('noise level must be nonnegative')
    arg = grid.bins[:, None, None] * geometry.distances()[None] / sound_speed_mps
    coherence = np.sinc(arg / np.pi)
    psd = level[:, None, None] * coherence
    m = geometry.num_mics
    psd = psd + DIFFUSE_LOADING * level[:, None, None] * np.eye(m)
    return SourceChannel(FULL_RANK, psd=psd.astype(complex), label=label)


def channel_psd(channel, grid=None) -> np.ndarray:
    if channel.is_rank1:
        a = channel.atf
        return channel.dry_psd[:, None, None] * a[:, :, None] * np.conj(a[:, None, :])
    return np.array(channel.psd)


def weighted_mixture_psd(scene, weights, check=True) -> np.ndarray:
    """Sum of channel PSDs weighted by the distortion weights, (F, M, M)."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (scene.num_channels,):
        raise ValueError(f'need {scene.num_channels} weights, got {weights.shape}')
    if np.any(weights <= 0):
        raise ValueError('distortion weights must be strictly positive')
    mix = np.einsum('n,nfij->fij', weights, scene.psds)
    if check:
        eig = np.linalg.eigvalsh(mix)
        bad = np.flatnonzero(eig[:, 0] <= 0)
        if bad.size:
            raise SingularMixtureError(int(bad[0]))
    return mix


def _wav_to_float(data):
    if data.dtype.kind == 'f':
        return data.astype(float)
    if data.dtype == np.int16:
        return data / 32768.0
    if data.dtype == np.int32:
        # scipy returns 24-bit PCM left-justified in int32
        return data / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(float) - 128) / 128.0
    raise ConfigError(f'unsupported WAVE sample type {data.dtype}')


def _ir_files(path):
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob('*.wav'))
        if not files:
            raise ConfigError(f'no .wav files in {path}')
        return files
    return [path]


def load_impulse_responses(path, geometry, grid, dry_psd=None, files: Sequence[str] | None = None):
    """Read one M-channel impulse response per source and return rank-1 channels.

    ``path`` is a single WAVE file, or a directory whose ``*.wav`` files are
    read in sorted order (or in the order of ``files`` when given).
    """
    if files is not None:
        paths = [Path(path) / f for f in files]
    else:
        paths = _ir_files(path)
    if dry_psd is None:
        dry_psd = speech_spectrum(grid.freqs_hz)
    channels = []
    for p in paths:
        try:
            rate, data = wavfile.read(p)
        except FileNotFoundError:
            raise ConfigError(f'impulse response file not found: {p}') from None
        if rate != grid.sample_rate_hz:
            raise ConfigError(f'{p.name}: sample rate {rate} Hz, grid expects {grid.sample_rate_hz:g}')
        ir = _wav_to_float(data)
        if ir.ndim == 1:
            ir = ir[:, None]
        if ir.shape[1] != geometry.num_mics:
            raise ConfigError(f'{p.name}: {ir.shape[1]} channels, array has {geometry.num_mics}')
        atf = np.fft.rfft(ir, n=grid.nfft, axis=0)
        channels.append(rank1_channel(atf, dry_psd, label=p.stem))
    return channels


def _earpiece4(a):
    return [(0.0, a, 0.0), (0.0, -a, 0.0), (0.015, a, 0.0), (0.015, -a, 0.0)]


def _head8(a):
    s = np.sqrt(0.5)
    return _earpiece4(a) + [(a, 0.0, 0.0), (-a, 0.0, 0.0),
                            (s * a, s * a, 0.02), (s * a, -s * a, 0.02)]


def _body16(a):
    torso = [(0.0, 0.18, -0.22), (0.0, -0.18, -0.22),
             (0.12, 0.08, -0.30), (0.12, -0.08, -0.30),
             (0.13, 0.14, -0.42), (0.13, -0.14, -0.42),
             (-0.10, 0.10, -0.32), (-0.10, -0.10, -0.32)]
    return _head8(a) + torso


ARRAY_PRESETS = {'earpiece4': _earpiece4, 'head8': _head8, 'body16': _body16}


def geometry_preset(name, head_radius_m=HEAD_RADIUS_M) -> MicArrayGeometry:
    """Schematic wearable arrays; each larger preset contains the smaller one."""
    try:
        build = ARRAY_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f'unknown array preset {name!r}; choose from {sorted(ARRAY_PRESETS)}') from None
    return MicArrayGeometry(np.array(build(head_radius_m)))
