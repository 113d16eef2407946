"""Fast analytic consistency checks run by ``binremix selftest``."""

import numpy as np

from .analysis import (itf, itf_error_exact, output_itf, weighted_error_psd_direct,
                       weighted_error_psd_pairwise)
from .design import RemixSpec, design_msdw_mwf
from .signals import istft, stft
from .testing import random_remix, random_scene


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), np.finfo(float).tiny))


def run_checks(seed=0):
    """Returns a list of (name, passed, detail) tuples."""
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, num_channels=5, num_mics=8, nfft=64)
    results = []

    uniform = RemixSpec.from_gains([0.7] * scene.num_channels)
    filt = design_msdw_mwf(scene, uniform)
    err = weighted_error_psd_direct(scene, uniform, filt).weighted_total
    scale = np.abs(np.einsum('nfii->f', scene.psds)).max()
    worst = float(np.abs(err).max() / scale)
    results.append(('uniform responses give zero error', worst < 1e-10, f'{worst:.2e}'))

    spec = random_remix(rng, scene)
    filt = design_msdw_mwf(scene, spec)
    direct = weighted_error_psd_direct(scene, spec, filt)
    pair = weighted_error_psd_pairwise(scene, spec)
    gap = _rel(pair.weighted_total, direct.weighted_total)
    results.append(('direct and pairwise error agree', gap < 1e-9, f'{gap:.2e}'))
    ear_gap = max(_rel(pair.left, direct.left), _rel(pair.right, direct.right))
    results.append(('per-ear error spectra agree', ear_gap < 1e-9, f'{ear_gap:.2e}'))

    n = scene.rank1_indices()[0]
    a = scene.channels[n].atf
    ratio = output_itf(filt, a, strict=False) / itf(a, scene.geometry, strict=False)
    delta = itf_error_exact(scene, spec, n)
    ok = np.isfinite(delta)
    gap = _rel(np.exp(delta[ok]), ratio[ok])
    results.append(('closed-form ITF error matches filter output', gap < 1e-10, f'{gap:.2e}'))

    x = rng.standard_normal((2, 8192))
    y = istft(stft(x))
    inner = slice(512, 8192 - 512)
    gap = _rel(y[:, inner], x[:, inner])
    results.append(('STFT round trip', gap < 1e-10, f'{gap:.2e}'))
    return results
