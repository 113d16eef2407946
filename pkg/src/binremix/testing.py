"""Random scene generators for consistency checks."""

import numpy as np

from .design import DesiredResponse, RemixSpec
from .scene import FULL_RANK, MicArrayGeometry, SceneSpec, SourceChannel, make_frequency_grid, rank1_channel


def random_geometry(rng, num_mics):
    return MicArrayGeometry(rng.uniform(-0.2, 0.2, size=(num_mics, 3)))


def random_full_rank_psd(rng, num_bins, num_mics, floor=0.1):
    b = rng.standard_normal((num_bins, num_mics, num_mics)) \
        + 1j * rng.standard_normal((num_bins, num_mics, num_mics))
    psd = b @ np.conj(np.swapaxes(b, -1, -2)) / num_mics
    psd = 0.5 * (psd + np.conj(np.swapaxes(psd, -1, -2)))
    return psd + floor * np.eye(num_mics)


def random_atf(rng, num_bins, num_mics):
    return rng.standard_normal((num_bins, num_mics)) + 1j * rng.standard_normal((num_bins, num_mics))


def random_scene(rng, num_channels=4, num_mics=6, nfft=32, noise_power=1.0):
    """``num_channels - 1`` rank-1 channels plus one full-rank noise channel."""
    grid = make_frequency_grid(16000, nfft)
    geometry = random_geometry(rng, num_mics)
    f = grid.num_bins
    channels = [rank1_channel(random_atf(rng, f, num_mics), rng.uniform(0.2, 2.0, f), f'src{n}')
                for n in range(num_channels - 1)]
    noise = noise_power * random_full_rank_psd(rng, f, num_mics)
    channels.append(SourceChannel(FULL_RANK, psd=noise, label='noise'))
    return SceneSpec(geometry, grid, channels)


def random_remix(rng, scene, flat=False):
    f = scene.grid.num_bins
    responses = []
    for _ in range(scene.num_channels):
        gain = rng.uniform(0.0, 1.0) if flat else rng.uniform(0.0, 1.0, f)
        responses.append(DesiredResponse.diotic(gain, f))
    return RemixSpec(tuple(responses), rng.uniform(0.5, 2.0, scene.num_channels))
