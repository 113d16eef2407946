"""Command-line entry point.

    binremix design   --config run.yaml --out results/
    binremix analyze  --preset aggressive --array head8
    binremix simulate --config run.yaml --seed 3
    binremix fig3 --out figs/
    binremix fig4 --out figs/
    binremix selftest

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (ExperimentConfig, ExperimentError, load_config, run_experiment,
                      scenario_fig3, scenario_fig4)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.out is not None:
        overrides['out'] = args.out
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.preset is not None:
        overrides['remix'] = args.preset
    if args.array is not None:
        overrides['array'] = args.array
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _print_summary(summary, key):
    block = summary.get(key, {}).get('summary_band')
    if block:
        print(f'{key}: mean |ILD err| {block["ild_db"]:.3f} dB, mean |IPD err| '
              f'{block["ipd_rad"]:.4f} rad over {block["band_hz"][0]:g}-{block["band_hz"][1]:g} Hz'
              f' ({block["n_excluded"]} undefined bins excluded)')


def cmd_run(args, stages, simulate):
    cfg = _config(args)
    bundle = run_experiment(cfg, simulate=simulate, stages=stages)
    for name, path in bundle.items():
        if name != 'summary':
            print(f'{name}: {path}')
    for key in ('noncausal', 'fir', 'empirical'):
        _print_summary(bundle['summary'], key)
    return EXIT_OK


def cmd_figure(args, scenario):
    cfg = _config(args)
    path, reports = scenario(cfg.out, cfg)
    print(f'wrote {path}')
    for series, rep in reports.items():
        b = rep.band_mean(1000.0, 8000.0)
        print(f'{series:>12}: |ILD err| {b["ild_db"]:.3f} dB  |IPD err| {b["ipd_rad"]:.4f} rad (1-8 kHz)')
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_checks
    results = run_checks(seed=args.seed or 0)
    for name, ok, detail in results:
        print(f'{"PASS" if ok else "FAIL"} {name}: {detail}')
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog='binremix', description=__doc__.split('\n')[0])
    sub = parser.add_subparsers(dest='command', required=True)
    for name, help_text in (('design', 'design the filter and write FIR files'),
                            ('analyze', 'design and write closed-form cue and error reports'),
                            ('simulate', 'analyze plus time-domain simulation and STFT measurement'),
                            ('fig3', 'cue errors of the three remix presets, 4-mic earpieces'),
                            ('fig4', 'cue errors of aggressive remixing across arrays'),
                            ('selftest', 'run the built-in analytic consistency checks')):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', help='YAML config file')
        p.add_argument('--out', help='output directory')
        p.add_argument('--seed', type=int)
        p.add_argument('--preset', help='remix preset: mild, aggressive, beamformer, custom')
        p.add_argument('--array', help='array preset: earpiece4, head8, body16, custom')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == 'design':
            return cmd_run(args, ('design',), False)
        if args.command == 'analyze':
            return cmd_run(args, ('design', 'analyze'), False)
        if args.command == 'simulate':
            return cmd_run(args, ('design', 'analyze'), True)
        if args.command == 'fig3':
            return cmd_figure(args, scenario_fig3)
        if args.command == 'fig4':
            return cmd_figure(args, scenario_fig4)
        return cmd_selftest(args)
    except ExperimentError as e:
        print(f'error: {e}', file=sys.stderr)
        return _exit_code(e.cause)
    except (ConfigError, NumericalError) as e:
        print(f'error: {e}', file=sys.stderr)
        return _exit_code(e)


def _exit_code(err):
    if isinstance(err, NumericalError):
        if err.bin_index is not None:
            print(f'failing bin: {err.bin_index}', file=sys.stderr)
        return EXIT_NUMERIC
    if isinstance(err, np.linalg.LinAlgError):
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
