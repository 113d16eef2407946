"""Experiment orchestration: presets, synthetic scenes, runs and figure data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (DEFAULT_SUMMARY_BAND, cue_report, write_csv, integrated_error_power,
                       weighted_error_psd_direct, weighted_error_psd_pairwise)
from .design import RemixSpec, design_msdw_mwf, realized_response, save_fir, to_causal_fir
from .errors import ConfigError, NumericalError
from .fileio import atomic_write_text
from .scene import (FULL_RANK, HEAD_RADIUS_M, ARRAY_PRESETS, MicArrayGeometry, SceneSpec,
                    SourceChannel, diffuse_noise_channel, geometry_preset, load_impulse_responses,
                    make_frequency_grid, rank1_channel, speech_spectrum, synth_head_atf)
from .signals import (apply_fir, empirical_cue_report, empirical_error_power, empirical_itf,
                      render_images, synth_speech_shaped_noise)

__all__ = [
    'PRESET_GAINS',
    'ExperimentConfig',
    'ExperimentError',
    'preset_remix',
    'synthetic_scene',
    'build_scene',
    'build_remix',
    'load_config',
    'effective_fir_timing',
    'run_experiment',
    'scenario_fig3',
    'scenario_fig4',
    'FIGURE_COLUMNS',
]

# directional gains, then the noise gain; 20 dB attenuation is amplitude 0.1
PRESET_GAINS = {
    'mild': ((1.0, 0.8, 0.7, 0.6, 0.5), 0.1),
    'aggressive': ((1.0, 0.4, 0.3, 0.2, 0.1), 0.1),
    'beamformer': ((1.0, 0.0, 0.0, 0.0, 0.0), 0.0),
}

DEFAULT_AZIMUTHS_DEG = (0.0, 45.0, -45.0, 90.0, -90.0)
FALLBACK_TIMING_MS = (8.0, 64.0)
FIGURE_COLUMNS = ('series', 'frequency_hz', 'mean_abs_ild_err_db', 'mean_abs_ipd_err_rad',
                  'n_sources_defined')

DECISIONS = {
    'head_model': 'woodworth far-field delay + one-pole/one-zero contralateral shadow',
    'dry_spectrum': 'flat to 500 Hz then -6 dB/octave',
    'diffuse_coherence': 'spherically isotropic sinc, 1e-10 diagonal loading',
    'fir_design': 'frequency sampling, circular shift, truncation, 10% raised-cosine taper',
    'band_average': 'third-octave bands, mean of absolute errors, summary band 1-8 kHz',
    'empirical_itf': 'sum_k X_L conj(X_R) / sum_k |X_L|^2, edge frames dropped, conjugated for report',
}


class ExperimentError(Exception):
    """A run failed; ``stage`` names where and ``cause`` holds the original error."""

    def __init__(self, stage, cause):
        super().__init__(f'{stage} stage failed: {cause}')
        self.stage = stage
        self.cause = cause


def preset_remix(name, n, weights=None) -> RemixSpec:
    """Named remixing preset for five directional channels plus one noise channel."""
    try:
        directional, noise = PRESET_GAINS[name]
    except KeyError:
        raise ConfigError(f'unknown remix preset {name!r}; choose from {sorted(PRESET_GAINS)}') from None
    if n != len(directional) + 1:
        raise ConfigError(f'preset {name!r} needs {len(directional) + 1} channels, scene has {n}')
    return RemixSpec.from_gains(list(directional) + [noise], weights)


def synthetic_scene(geometry, grid, azimuths_deg=DEFAULT_AZIMUTHS_DEG, distance_m=1.5,
                    noise_db=-10.0, sensor_noise_db=-20.0, head_radius_m=HEAD_RADIUS_M,
                    sound_speed_mps=343.0) -> SceneSpec:
    """Speech-shaped point sources on a horizontal circle plus one noise channel.

    The noise channel is an isotropic diffuse field ``noise_db`` below a single
    source's level at the head center, plus a spatially white floor
    ``sensor_noise_db`` below the diffuse level (microphone self-noise).
    """
    dry = speech_spectrum(grid.freqs_hz)
    channels = []
    for az in azimuths_deg:
        atf = synth_head_atf(geometry, np.deg2rad(az), distance_m, grid, head_radius_m,
                             sound_speed_mps)
        channels.append(rank1_channel(atf, dry, label=f'az{az:+g}'))
    level = 10 ** (noise_db / 10) * dry / distance_m ** 2
    diffuse = diffuse_noise_channel(geometry, grid, level, sound_speed_mps)
    floor = 10 ** (sensor_noise_db / 10) * level
    psd = diffuse.psd + floor[:, None, None] * np.eye(geometry.num_mics)
    channels.append(SourceChannel(FULL_RANK, psd=psd, label='noise'))
    return SceneSpec(geometry, grid, channels, sound_speed_mps)


@dataclass
class ExperimentConfig:
    scene: str = 'synthetic'
    ir_files: list | None = None
    array: str = 'earpiece4'
    positions: list | None = None
    ref_left: int = 0
    ref_right: int = 1
    remix: str = 'mild'
    gains: list | None = None
    weights: list | None = None
    sample_rate: float = 16000.0
    nfft: int = 1024
    delay_ms: float = 16.0
    length_ms: float = 256.0
    seed: int = 0
    out: str = 'results'
    simulate: bool = False
    duration_s: float = 60.0
    window: int = 512
    hop: int = 256
    azimuths_deg: list = field(default_factory=lambda: list(DEFAULT_AZIMUTHS_DEG))
    distance_m: float = 1.5
    noise_db: float = -10.0
    sensor_noise_db: float = -20.0

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError('config must be a mapping of keys to values')
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        if self.array != 'custom' and self.array not in ARRAY_PRESETS:
            raise ConfigError(f'unknown array {self.array!r}; choose from '
                              f'{sorted(ARRAY_PRESETS) + ["custom"]}')
        if self.array == 'custom' and not self.positions:
            raise ConfigError('custom array needs positions')
        if self.remix != 'custom' and self.remix not in PRESET_GAINS:
            raise ConfigError(f'unknown remix preset {self.remix!r}')
        if self.remix == 'custom' and not self.gains:
            raise ConfigError('custom remix needs gains')
        try:
            make_frequency_grid(self.sample_rate, self.nfft)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.delay_ms < 0 or self.length_ms <= self.delay_ms:
            raise ConfigError('need 0 <= delay_ms < length_ms')
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ConfigError('weights must be strictly positive')
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError('seed must be a nonnegative integer')
        if self.hop <= 0 or self.window % self.hop:
            raise ConfigError('hop must divide the STFT window')
        if self.simulate and self.duration_s <= 0:
            raise ConfigError('duration_s must be positive')


def load_config(path) -> ExperimentConfig:
    """Read a YAML key/value config file."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f'config file not found: {path}') from None
    except yaml.YAMLError as e:
        raise ConfigError(f'cannot parse {path}: {e}') from None
    return ExperimentConfig.from_dict(data)


def effective_fir_timing(cfg):
    """(delay_ms, length_ms, scaled) honoring the design grid size."""
    delay, length = cfg.delay_ms, cfg.length_ms
    scaled = False
    if cfg.sample_rate * length / 1000 > cfg.nfft:
        delay, length = FALLBACK_TIMING_MS
        scaled = True
    if cfg.sample_rate * length / 1000 > cfg.nfft:
        raise ConfigError(f'nfft {cfg.nfft} is too small even for a {length} ms filter')
    return delay, length, scaled


def _geometry(cfg):
    if cfg.array == 'custom':
        try:
            return MicArrayGeometry(np.array(cfg.positions, dtype=float), cfg.ref_left, cfg.ref_right)
        except ValueError as e:
            raise ConfigError(f'bad custom array: {e}') from None
    return geometry_preset(cfg.array)


def build_scene(cfg) -> SceneSpec:
    grid = make_frequency_grid(cfg.sample_rate, cfg.nfft)
    geometry = _geometry(cfg)
    if cfg.scene == 'synthetic':
        return synthetic_scene(geometry, grid, cfg.azimuths_deg, cfg.distance_m,
                               cfg.noise_db, cfg.sensor_noise_db)
    channels = load_impulse_responses(cfg.scene, geometry, grid, files=cfg.ir_files)
    level = 10 ** (cfg.noise_db / 10) * speech_spectrum(grid.freqs_hz)
    noise = diffuse_noise_channel(geometry, grid, level)
    floor = 10 ** (cfg.sensor_noise_db / 10) * level
    psd = noise.psd + floor[:, None, None] * np.eye(geometry.num_mics)
    channels.append(SourceChannel(FULL_RANK, psd=psd, label='noise'))
    return SceneSpec(geometry, grid, channels)


def build_remix(cfg, num_channels) -> RemixSpec:
    if cfg.remix == 'custom':
        if len(cfg.gains) != num_channels:
            raise ConfigError(f'{len(cfg.gains)} gains for {num_channels} channels')
        weights = cfg.weights
        if weights is not None and len(weights) != num_channels:
            raise ConfigError(f'{len(weights)} weights for {num_channels} channels')
        return RemixSpec.from_gains(cfg.gains, weights)
    if cfg.weights is not None and len(cfg.weights) != num_channels:
        raise ConfigError(f'{len(cfg.weights)} weights for {num_channels} channels')
    return preset_remix(cfg.remix, num_channels, cfg.weights)


def _summary(report):
    out = {}
    for label, band in (('summary_band', DEFAULT_SUMMARY_BAND), ('below_300hz', (0.0, 300.0)),
                        ('band_1k_4k', (1000.0, 4000.0))):
        out[label] = {'band_hz': list(band), **report.band_mean(*band)}
    return out


def _staged(stage, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except (ConfigError, NumericalError, ValueError, OSError) as e:
        raise ExperimentError(stage, e) from e


def _simulate(cfg, scene, spec, fir):
    grid = scene.grid
    rank1 = scene.rank1_indices()
    dry = [synth_speech_shaped_noise(cfg.duration_s, cfg.seed * 1000 + 1 + i, grid)
           for i in range(len(rank1))]
    images, _ = render_images(scene, dry, seed=cfg.seed * 1000)
    start = grid.nfft + fir.length
    stop = dry[0].num_samples if dry else 0
    if stop - start < 4 * cfg.window:
        raise ConfigError(f'duration {cfg.duration_s} s is too short for the filters and STFT')
    steady = slice(start, stop)
    outputs = [apply_fir(fir, images[n]).segment(start, stop) for n in rank1]
    inputs = [images[n].segment(start, stop) for n in rank1]
    geo = scene.geometry
    itf_in, itf_out = empirical_itf(inputs, outputs, geo.ref_left, geo.ref_right,
                                    cfg.window, cfg.hop)
    freqs = np.fft.rfftfreq(cfg.window, 1 / grid.sample_rate_hz)
    labels = [scene.channels[n].label for n in rank1]
    report = empirical_cue_report(freqs, rank1, labels, itf_in, itf_out)
    power = empirical_error_power(scene, spec, fir, images, steady)
    return report, power


def run_experiment(cfg, simulate=None, stages=('design', 'analyze')):
    """Design, analyze and optionally simulate one configuration.

    Returns a dict of written file paths plus summary numbers. All outputs
    are deterministic given the config (including the seed).
    """
    if simulate is None:
        simulate = cfg.simulate
    out = Path(cfg.out)
    scene = _staged('scene', build_scene, cfg)
    spec = _staged('remix', build_remix, cfg, scene.num_channels)
    delay_ms, length_ms, scaled = _staged('design', effective_fir_timing, cfg)

    filt = _staged('design', design_msdw_mwf, scene, spec)
    fir = _staged('design', to_causal_fir, filt, delay_ms, length_ms)
    _staged('design', save_fir, fir, out / 'fir')
    bundle = {'fir': str(out / 'fir')}
    manifest = {
        'package_version': __version__,
        'config': asdict(cfg),
        'expanded_remix': {'gains': [float(r.gain) if r.gain.ndim == 0 else r.gain.tolist()
                                     for r in spec.responses],
                           'weights': spec.weights.tolist()},
        'channels': [ch.label for ch in scene.channels],
        'array_positions_m': scene.geometry.positions.tolist(),
        'fir': {'delay_ms': delay_ms, 'length_ms': length_ms,
                'delay_samples': fir.delay_samples, 'num_taps': fir.length,
                'scaled_to_fit_nfft': scaled},
        'loaded_bins': list(filt.loaded_bins),
        'decisions': DECISIONS,
    }

    if 'analyze' in stages:
        report = _staged('analyze', cue_report, scene, spec, filt)
        fir_report = _staged('analyze', cue_report, scene, spec, realized_response(fir, scene.grid))
        if spec.all_diotic:
            spectra = _staged('analyze', weighted_error_psd_pairwise, scene, spec)
        else:
            spectra = _staged('analyze', weighted_error_psd_direct, scene, spec, filt)
        report.to_csv(out / 'cues.csv')
        fir_report.to_csv(out / 'cues_fir.csv')
        report.band_csv(out / 'bands.csv')
        spectra.to_csv(out / 'error_spectra.csv')
        bundle.update(cues=str(out / 'cues.csv'), cues_fir=str(out / 'cues_fir.csv'),
                      bands=str(out / 'bands.csv'), error_spectra=str(out / 'error_spectra.csv'))
        manifest['summary'] = {'noncausal': _summary(report), 'fir': _summary(fir_report),
                               'closed_form_error_power': integrated_error_power(spectra)}

    if simulate:
        emp, power = _staged('simulate', _simulate, cfg, scene, spec, fir)
        emp.to_csv(out / 'cues_empirical.csv')
        bundle['cues_empirical'] = str(out / 'cues_empirical.csv')
        manifest.setdefault('summary', {})['empirical'] = _summary(emp)
        manifest['summary']['empirical_error_power'] = power

    atomic_write_text(out / 'manifest.json', json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    bundle['manifest'] = str(out / 'manifest.json')
    bundle['summary'] = manifest.get('summary', {})
    return bundle


def _figure_rows(series, report):
    ild, ipd, count = report.mean_over_sources()
    for f, freq in enumerate(report.freqs_hz):
        yield (series, freq, ild[f], ipd[f], int(count[f]))


def _write_figure(path, rows):
    return write_csv(rows, FIGURE_COLUMNS, path)


def _figure_reports(cfg, combos):
    reports = {}
    for series, array, remix in combos:
        run_cfg = ExperimentConfig(**{**asdict(cfg), 'array': array, 'remix': remix})
        run_cfg.validate()
        scene = _staged('scene', build_scene, run_cfg)
        spec = _staged('remix', build_remix, run_cfg, scene.num_channels)
        filt = _staged('design', design_msdw_mwf, scene, spec)
        reports[series] = _staged('analyze', cue_report, scene, spec, filt)
    return reports


def scenario_fig3(output_dir, cfg=None):
    """Cue errors on the 4-mic earpiece array for the three remix presets."""
    cfg = cfg or ExperimentConfig()
    combos = [(name, 'earpiece4', name) for name in ('mild', 'aggressive', 'beamformer')]
    reports = _figure_reports(cfg, combos)
    rows = [row for series, rep in reports.items() for row in _figure_rows(series, rep)]
    path = Path(output_dir) / 'fig3.csv'
    _write_figure(path, rows)
    return path, reports


def scenario_fig4(output_dir, cfg=None):
    """Cue errors of aggressive remixing for the three array sizes."""
    cfg = cfg or ExperimentConfig()
    combos = [(array, array, 'aggressive') for array in ('earpiece4', 'head8', 'body16')]
    reports = _figure_reports(cfg, combos)
    rows = [row for series, rep in reports.items() for row in _figure_rows(series, rep)]
    path = Path(output_dir) / 'fig4.csv'
    _write_figure(path, rows)
    return path, reports
