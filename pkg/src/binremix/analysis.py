"""Closed-form performance of remixing filters: error spectra and interaural cues."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .design import regularized_mixture, response_matrices
from .errors import UndefinedITFError
from .fileio import atomic_write_text

__all__ = [
    'ErrorSpectra',
    'CueReport',
    'CUE_COLUMNS',
    'SPECTRA_COLUMNS',
    'BAND_COLUMNS',
    'weighted_error_psd_direct',
    'weighted_error_psd_pairwise',
    'integrated_error_power',
    'itf',
    'output_itf',
    'itf_error_exact',
    'itf_error_first_order',
    'itf_error_rank1',
    'cue_report',
    'third_octave_bands',
    'DEFAULT_SUMMARY_BAND',
]

NULL_TOL = 1e-12
NEPER_TO_DB = 20 / np.log(10)
DEFAULT_SUMMARY_BAND = (1000.0, 8000.0)

CUE_COLUMNS = ('frequency_hz', 'source', 'ild_err_db', 'ipd_err_rad',
               'delta_itf_re', 'delta_itf_im', 'variant')
SPECTRA_COLUMNS = ('frequency_hz', 'err_left', 'err_right', 'err_trace')
BAND_COLUMNS = ('band_lo_hz', 'band_center_hz', 'band_hi_hz', 'source',
                'mean_abs_ild_err_db', 'mean_abs_ipd_err_rad', 'n_bins', 'n_excluded')


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return 'nan' if not np.isfinite(x) else f'{float(x):.12g}'


def write_csv(rows, columns, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text


@dataclass(frozen=True, eq=False)
class ErrorSpectra:
    weighted_total: np.ndarray
    left: np.ndarray
    right: np.ndarray
    freqs_hz: np.ndarray

    def to_csv(self, path=None):
        trace = np.real(np.trace(self.weighted_total, axis1=-2, axis2=-1))
        rows = zip(self.freqs_hz, self.left, self.right, trace)
        return write_csv(rows, SPECTRA_COLUMNS, path)


def _gains_or_raise(spec, num_bins, what):
    if not spec.all_diotic:
        raise ValueError(f'{what} needs diotic responses; use weighted_error_psd_direct'
                         ' for general responses')
    return spec.diotic_gains(num_bins)


def weighted_error_psd_direct(scene, spec, filt) -> ErrorSpectra:
    """sum_n lam_n (G_n - W) R_n (G_n - W)^H for any filter W."""
    g = response_matrices(scene, spec)
    diff = g - filt.taps[None]
    total = np.einsum('n,nfai,nfij,nfbj->fab', spec.weights, diff, scene.psds, np.conj(diff))
    return ErrorSpectra(total, total[:, 0, 0].real.copy(), total[:, 1, 1].real.copy(),
                        scene.grid.freqs_hz)


def weighted_error_psd_pairwise(scene, spec) -> ErrorSpectra:
    """Error spectra of the optimal filter from source pairs, without forming W.

    Pairs with equal desired responses contribute nothing. Each ear's
    spectrum is half the double sum of lam_n lam_m |G_n - G_m|^2 times the
    reference entry of R_m Rbar^-1 R_n.
    """
    grid = scene.grid
    gains = _gains_or_raise(spec, grid.num_bins, 'pairwise error formula')
    lam = spec.weights
    rbar, _ = regularized_mixture(scene, lam)
    geo = scene.geometry
    refs = [geo.ref_left, geo.ref_right]

    psds = scene.psds
    # Rbar^-1 R_n columns at the reference mics, (N, F, M, 2)
    cols = np.linalg.solve(rbar[None], psds[..., refs])
    rows = psds[:, :, refs, :]
    # coupling[m, n, f] = S R_m Rbar^-1 R_n S^T
    coupling = np.einsum('mfai,nfib->mnfab', rows, cols)

    gdiff = gains[None, :, :] - gains[:, None, :]      # [m, n] -> G_n - G_m
    lam2 = lam[:, None] * lam[None, :]
    kernel = lam2[:, :, None] * gdiff * gains[None, :, :]
    total = np.einsum('mnf,mnfab->fab', kernel, coupling)

    half = 0.5 * lam2[:, :, None] * gdiff ** 2
    left = np.einsum('mnf,mnf->f', half, coupling[..., 0, 0].real)
    right = np.einsum('mnf,mnf->f', half, coupling[..., 1, 1].real)
    return ErrorSpectra(total, left, right, grid.freqs_hz)


def integrated_error_power(spectra, nfft=None) -> float:
    """Total error power per sample: the mean of the trace over the full circle."""
    trace = np.real(np.trace(spectra.weighted_total, axis1=-2, axis2=-1))
    if nfft is None:
        nfft = 2 * (len(trace) - 1)
    return float((trace[0] + trace[-1] + 2 * trace[1:-1].sum()) / nfft)


def _ratio(num, den, scale, strict, what):
    num = np.asarray(num)
    den = np.asarray(den)
    bad = (np.abs(den) <= NULL_TOL * scale) | (np.abs(num) <= NULL_TOL * scale)
    if strict and np.any(bad):
        idx = np.flatnonzero(np.atleast_1d(bad))
        raise UndefinedITFError(f'{what} is undefined (vanishing ear component)',
                                int(idx[0]) if idx.size else None)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = num / np.where(bad, 1.0, den)
    return np.where(bad, np.nan + 0j, out)


def itf(vec, geometry, strict=True):
    """Interaural transfer function: right-reference over left-reference entry.

    ``vec`` may be one M-vector or a stack (..., M). A vanishing reference
    entry makes the ITF zero or infinite; that raises ``UndefinedITFError``
    unless ``strict`` is False, in which case the entry becomes NaN.
    """
    vec = np.asarray(vec, dtype=complex)
    scale = np.linalg.norm(vec, axis=-1)
    out = _ratio(vec[..., geometry.ref_right], vec[..., geometry.ref_left], scale,
                 strict, 'input ITF')
    return out[()] if out.ndim == 0 else out


def output_itf(filt, vec, strict=True):
    """ITF of W vec per bin; ``vec`` is (F, M) or a single M-vector."""
    vec = np.asarray(vec, dtype=complex)
    if vec.ndim == 1:
        vec = np.broadcast_to(vec, (filt.taps.shape[0], vec.shape[0]))
    out = np.einsum('fam,fm->fa', filt.taps, vec)
    scale = np.linalg.norm(filt.taps, axis=(1, 2)) * np.linalg.norm(vec, axis=-1)
    return _ratio(out[:, 1], out[:, 0], scale, strict, 'output ITF')


def _coupling_terms(scene, spec, n):
    """Per-ear coupling ratios e^T R_m Rbar^-1 A_n / e^T A_n and gain factors."""
    ch = scene.channels[n]
    if not ch.is_rank1:
        raise ValueError(f'channel {n} is not rank-1; analytic ITF needs a transfer function')
    grid = scene.grid
    gains = _gains_or_raise(spec, grid.num_bins, 'ITF error formula')
    geo = scene.geometry
    lam = spec.weights
    rbar, _ = regularized_mixture(scene, lam)
    a = ch.atf
    y = np.linalg.solve(rbar, a[..., None])[..., 0]
    ry = np.einsum('mfij,fj->mfi', scene.psds, y)

    a_l, a_r = a[:, geo.ref_left], a[:, geo.ref_right]
    g_n = gains[n]
    scale = np.linalg.norm(a, axis=-1)
    undefined = (g_n == 0) | (np.abs(a_l) <= NULL_TOL * scale) | (np.abs(a_r) <= NULL_TOL * scale)
    with np.errstate(divide='ignore', invalid='ignore'):
        factor = lam[:, None] * (gains - g_n) / np.where(undefined, 1.0, g_n)
        safe_l = np.where(undefined, 1.0, a_l)
        safe_r = np.where(undefined, 1.0, a_r)
        coup_l = ry[:, :, geo.ref_left] / safe_l
        coup_r = ry[:, :, geo.ref_right] / safe_r
    return factor, coup_l, coup_r, undefined, y


def itf_error_exact(scene, spec, n):
    """Log ratio of output to input ITF of the optimal filter, channel ``n``.

    Real part: ILD error in nepers. Imaginary part: IPD error in radians.
    NaN where G_n = 0 (source fully suppressed) or a reference entry of
    A_n vanishes.
    """
    factor, coup_l, coup_r, undefined, _ = _coupling_terms(scene, spec, n)
    num = 1 + np.sum(factor * coup_r, axis=0)
    den = 1 + np.sum(factor * coup_l, axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.log(num / den)
    return np.where(undefined, np.nan + 0j, out)


def itf_error_first_order(scene, spec, n):
    """First-order expansion ln(1 + u) ~ u of ``itf_error_exact``."""
    factor, coup_l, coup_r, undefined, _ = _coupling_terms(scene, spec, n)
    out = np.sum(factor * (coup_r - coup_l), axis=0)
    return np.where(undefined, np.nan + 0j, out)


def itf_error_rank1(scene, spec, n):
    """First-order ITF error with every directional channel taken as rank-1.

    Full-rank (diffuse) channels are left out of the sum; they still enter
    through the mixture PSD. Only meaningful when they are weak.
    """
    factor, _, _, undefined, y = _coupling_terms(scene, spec, n)
    geo = scene.geometry
    a_n = scene.channels[n].atf
    with np.errstate(divide='ignore', invalid='ignore'):
        a_l = np.where(undefined, 1.0, a_n[:, geo.ref_left])
        a_r = np.where(undefined, 1.0, a_n[:, geo.ref_right])
    out = np.zeros(scene.grid.num_bins, dtype=complex)
    for m in scene.rank1_indices():
        ch = scene.channels[m]
        a_m = ch.atf
        inner = np.einsum('fi,fi->f', np.conj(a_m), y)
        cue_diff = a_m[:, geo.ref_right] / a_r - a_m[:, geo.ref_left] / a_l
        out = out + factor[m] * ch.dry_psd * inner * cue_diff
    return np.where(undefined, np.nan + 0j, out)


def third_octave_bands(f_lo, f_hi):
    """(lo, center, hi) triples of base-2 third-octave bands overlapping [f_lo, f_hi]."""
    k_lo = int(np.floor(3 * np.log2(max(f_lo, 1.0) / 1000.0)))
    k_hi = int(np.ceil(3 * np.log2(f_hi / 1000.0)))
    bands = []
    for k in range(k_lo, k_hi + 1):
        c = 1000.0 * 2 ** (k / 3)
        lo, hi = c * 2 ** (-1 / 6), c * 2 ** (1 / 6)
        if hi > f_lo and lo <= f_hi:
            bands.append((lo, c, hi))
    return bands


@dataclass(frozen=True, eq=False)
class CueReport:
    """Per-source, per-bin interaural cue errors.

    Arrays are (S, F) over the rank-1 channels listed in ``sources``. The
    ``variant`` names how ``itf_out`` was obtained: ``exact`` for a filter
    evaluated analytically, ``empirical`` for STFT measurements.
    """
    freqs_hz: np.ndarray
    sources: tuple
    labels: tuple
    itf_in: np.ndarray
    itf_out: np.ndarray
    delta_itf_exact: np.ndarray | None = None
    delta_itf_first_order: np.ndarray | None = None
    delta_itf_rank1: np.ndarray | None = None
    variant: str = 'exact'

    @property
    def ratio(self):
        return self.itf_out / self.itf_in

    @property
    def ild_err_db(self):
        with np.errstate(divide='ignore', invalid='ignore'):
            return 20 * np.log10(np.abs(self.ratio))

    @property
    def ipd_err_rad(self):
        return np.angle(self.ratio)

    @property
    def defined(self):
        return np.isfinite(self.ratio)

    def band_mean(self, f_lo, f_hi, sources=None, include_hi=True):
        """Mean |ILD| and |IPD| error over bins with f_lo <= f <= f_hi.

        Undefined bins are excluded and counted. ``sources`` selects rows by
        channel index; the default pools all rows.
        """
        rows = self._rows(sources)
        f = self.freqs_hz
        sel = (f >= f_lo) & ((f <= f_hi) if include_hi else (f < f_hi))
        ild = np.abs(self.ild_err_db[rows][:, sel])
        ipd = np.abs(self.ipd_err_rad[rows][:, sel])
        ok = np.isfinite(ild) & np.isfinite(ipd)
        n_ok = int(ok.sum())
        if n_ok:
            ild_mean, ipd_mean = float(ild[ok].mean()), float(ipd[ok].mean())
        else:
            ild_mean = ipd_mean = float('nan')
        return {'ild_db': ild_mean, 'ipd_rad': ipd_mean,
                'n_bins': n_ok, 'n_excluded': int(ok.size - n_ok)}

    def mean_over_sources(self):
        """Per-bin mean |ILD| and |IPD| error over sources, plus defined counts."""
        ild = np.abs(self.ild_err_db)
        ipd = np.abs(self.ipd_err_rad)
        ok = np.isfinite(ild) & np.isfinite(ipd)
        count = ok.sum(axis=0)
        with np.errstate(invalid='ignore'):
            m_ild = np.where(ok, ild, 0).sum(axis=0) / count
            m_ipd = np.where(ok, ipd, 0).sum(axis=0) / count
        return m_ild, m_ipd, count

    def _rows(self, sources):
        if sources is None:
            return np.arange(len(self.sources))
        return np.array([self.sources.index(s) for s in sources])

    def csv_rows(self):
        """Rows in the cue CSV schema, one per (variant, source, bin)."""
        ild, ipd = self.ild_err_db, self.ipd_err_rad
        blocks = []
        if self.variant == 'exact':
            primary = self.delta_itf_exact
        else:
            with np.errstate(divide='ignore', invalid='ignore'):
                primary = np.log(self.ratio)
        if primary is None:
            primary = np.full(ild.shape, np.nan + 0j)
        blocks.append((self.variant, ild, ipd, primary))
        for name, delta in (('first_order', self.delta_itf_first_order),
                            ('rank1', self.delta_itf_rank1)):
            if delta is not None:
                blocks.append((name, NEPER_TO_DB * delta.real, delta.imag, delta))
        for variant, b_ild, b_ipd, b_delta in blocks:
            for s, label in enumerate(self.labels):
                for f, freq in enumerate(self.freqs_hz):
                    yield (freq, label, b_ild[s, f], b_ipd[s, f],
                           b_delta[s, f].real, b_delta[s, f].imag, variant)

    def to_csv(self, path=None):
        return write_csv(self.csv_rows(), CUE_COLUMNS, path)

    def band_csv(self, path=None):
        """Third-octave band summary per source and pooled over sources."""
        f_top = float(self.freqs_hz[-1])
        positive = self.freqs_hz[self.freqs_hz > 0]
        groups = [(label, [s]) for label, s in zip(self.labels, self.sources)]
        groups.append(('all', None))
        rows = []
        for lo, c, hi in third_octave_bands(float(positive[0]), f_top):
            for label, srcs in groups:
                # half-open bands; the top band keeps the Nyquist bin
                stats = self.band_mean(lo, hi, srcs, include_hi=hi >= f_top)
                if stats['n_bins'] + stats['n_excluded'] == 0:
                    continue
                rows.append((lo, c, hi, label, stats['ild_db'], stats['ipd_rad'],
                             stats['n_bins'], stats['n_excluded']))
        return write_csv(rows, BAND_COLUMNS, path)

def cue_report(scene, spec, filt) -> CueReport:
    """Analytic cue errors of ``filt`` for every rank-1 channel.

    ILD/IPD errors come from the filter's own output ITF. The closed-form
    columns describe the optimal filter for (scene, spec) and are NaN where
    a response is not diotic or the target gain is zero.
    """
    geo = scene.geometry
    sources = tuple(scene.rank1_indices())
    if not sources:
        raise ValueError('scene has no rank-1 channels to report cues for')
    atfs = [scene.channels[n].atf for n in sources]
    itf_in = np.stack([itf(a, geo, strict=False) for a in atfs])
    itf_out = np.stack([output_itf(filt, a, strict=False) for a in atfs])
    if spec.all_diotic:
        exact = np.stack([itf_error_exact(scene, spec, n) for n in sources])
        first = np.stack([itf_error_first_order(scene, spec, n) for n in sources])
        rank1 = np.stack([itf_error_rank1(scene, spec, n) for n in sources])
    else:
        exact = first = rank1 = np.full(itf_in.shape, np.nan + 0j)
    labels = tuple(scene.channels[n].label or f'src{n}' for n in sources)
    return CueReport(scene.grid.freqs_hz, sources, labels, itf_in, itf_out,
                     exact, first, rank1, variant='exact')
