#!/usr/bin/env python3
"""
MDRNN Cell Toolkit - Command Line Front End
Training sweeps, gradient property probes, frequency responses and corpus generation
"""

import argparse
import copy
import csv
import json
import logging
import statistics
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from analysis import (PID_PRESETS, VIOLATED, TransferFunction, butterworth, cod_probe, cutoff_frequency,
                      explosion_oracle, explosion_series, frequency_response, neg_probe, nvg_probe,
                      series_diverges, transfer_function, write_spectrum_csv)
from data import gen_synthetic, load_corpus, save_corpus, split_corpus
from errors import ContractViolation, CorpusError, DivergedRunError, MDCellsError
from lattice import count_paths
from network import (Model, NetworkSpec, build, describe_layers, evaluate, gradient_check, layer_from_dict,
                     load_model, save_model, train_sgd)

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_PROPERTY = 2
EXIT_DIVERGED = 3

DEFAULT_CONFIG_PATH = 'mdrnn_config.json'


def _get_default_config() -> Dict:
    """Return default configuration"""
    return {
        "run_settings": {
            "output_directory": "runs",
            "log_level": "INFO",
            "seeds": [0],
            "learning_rates": [0.0005],
            "epochs": 30,
            "momentum": 0.9
        },
        "network": {
            "layers": [
                {"type": "md", "cell": "leakylp", "cells": 4},
                {"type": "subsample", "block": [3, 2]},
                {"type": "tanh", "width": 12},
                {"type": "md", "cell": "leakylp", "cells": 8},
                {"type": "output", "labels": 4}
            ],
            "init_scale": 0.1,
            "forget_bias": 0.0,
            "input_channels": 1
        },
        "data": {
            "corpus": None,
            "seed": 1234,
            "train_count": 300,
            "valid_count": 100,
            "alphabet_size": 3,
            "glyph_size": 12,
            "length_range": [1, 4],
            "noise": 0.1,
            "jitter": 2,
            "margin": 2,
            "gap": 2
        },
        "analysis": {
            "trials": 200,
            "seed": 0,
            "epsilon": 0.001,
            "drive_length": 50,
            "spectrum_length": 4096
        }
    }


def _merge(base: Dict, override: Dict) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _load_config(config_path: str) -> Dict:
    """Load configuration from JSON file, merged over the defaults"""
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            return _merge(_get_default_config(), json.load(f))
    except FileNotFoundError:
        logger.error(f"Configuration file {config_path} not found")
        return _get_default_config()
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing configuration file: {e}")
        return _get_default_config()


def _apply_log_level(level: str):
    logging.getLogger().setLevel(getattr(logging, str(level).upper(), logging.INFO))


def _write_json(path: Path, payload) -> Path:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def _parse_coord(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _parse_list(text: str, kind=float) -> list:
    try:
        return [kind(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list, got '{text}'") from None


class ExperimentRunner:
    """Seed and learning-rate sweeps over one network layout"""

    def __init__(self, config: Dict):
        self.config = config
        self.settings = config['run_settings']
        self.output_dir = Path(self.settings['output_directory'])

    def network_spec(self, seed: int) -> NetworkSpec:
        net = self.config['network']
        spec = NetworkSpec(
            layers=[layer_from_dict(entry) for entry in net['layers']],
            input_channels=int(net.get('input_channels', 1)),
            seed=int(seed),
            init_scale=float(net.get('init_scale', 0.1)),
            forget_bias=float(net.get('forget_bias', 0.0)),
        ).validate()
        alphabet = self.config['data'].get('alphabet_size')
        if alphabet is not None and spec.labels != int(alphabet) + 1:
            raise ContractViolation(
                f"output layer has {spec.labels} labels but the alphabet needs {int(alphabet) + 1} (with blank)"
            )
        return spec

    def load_data(self):
        data = self.config['data']
        n_train, n_valid = int(data['train_count']), int(data['valid_count'])
        if data.get('corpus'):
            samples = load_corpus(data['corpus'], alphabet_size=data.get('alphabet_size'))
        else:
            samples = gen_synthetic(
                seed=int(data['seed']),
                count=n_train + n_valid,
                alphabet_size=int(data['alphabet_size']),
                glyph_size=int(data['glyph_size']),
                length_range=tuple(data['length_range']),
                noise=float(data['noise']),
                jitter=int(data['jitter']),
                margin=int(data['margin']),
                gap=int(data['gap']),
            )
        return split_corpus(samples, n_train, n_valid)

    def _single_run(self, seed: int, delta: float, train, valid) -> Dict:
        run_dir = self.output_dir / f"seed_{seed}_lr_{delta:g}"
        run_dir.mkdir(parents=True, exist_ok=True)
        result = {'seed': seed, 'learning_rate': delta, 'status': 'ok', 'error': None,
                  'best_ler': None, 'best_epoch': None, 'skipped_samples': 0, 'directory': run_dir.name}
        model = build(self.network_spec(seed))
        log = train_sgd(model, train, valid, delta, int(self.settings['epochs']),
                        momentum=float(self.settings.get('momentum', 0.9)), seed=seed)
        log.to_csv(run_dir / 'training_log.csv')
        result['status'] = log.status
        result['error'] = log.error
        result['skipped_samples'] = log.skipped_samples
        if log.status == 'ok':
            result['best_ler'] = log.best_ler
            result['best_epoch'] = log.best_epoch
            best = Model(model.spec, log.best_params, log.best_epoch, delta)
            save_model(best, run_dir / 'best_model.bin')
        return result

    def run(self) -> Dict:
        """Train every (learning rate, seed) pair and summarise best validation LERs"""
        seeds = [int(s) for s in self.settings['seeds']]
        rates = [float(r) for r in self.settings['learning_rates']]
        if not seeds:
            raise ContractViolation("the seeds list must not be empty")
        if not rates:
            raise ContractViolation("the learning_rates list must not be empty")
        layout = describe_layers(self.network_spec(seeds[0]).layers)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        train, valid = self.load_data()

        results = {'layout': layout, 'runs': [], 'summary': []}
        logger.info(f"Training {layout} for {len(seeds)} seed(s) x {len(rates)} learning rate(s)")
        for delta in rates:
            for seed in seeds:
                results['runs'].append(self._single_run(seed, delta, train, valid))
            finished = [r['best_ler'] for r in results['runs']
                        if r['learning_rate'] == delta and r['status'] == 'ok']
            row = {
                'layout': layout,
                'learning_rate': delta,
                'runs': len(seeds),
                'diverged': len(seeds) - len(finished),
                'min_ler': min(finished) if finished else None,
                'max_ler': max(finished) if finished else None,
                'median_ler': statistics.median(finished) if finished else None,
            }
            results['summary'].append(row)
        return results

    def write_summary(self, results: Dict):
        _write_json(self.output_dir / 'summary.json', results)
        fields = ['layout', 'learning_rate', 'runs', 'diverged', 'min_ler', 'max_ler', 'median_ler']
        with open(self.output_dir / 'summary.csv', 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(fields)
            for row in results['summary']:
                writer.writerow(['' if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                                 for k in fields])

    def generate_report(self, results: Dict) -> str:
        """Generate a summary report of the training sweep"""
        report = []
        report.append("=== MDRNN Training Report ===\n")
        report.append(f"Layout: {results['layout']}")
        report.append(f"Seeds: {', '.join(str(s) for s in self.settings['seeds'])}")
        report.append(f"Epochs: {self.settings['epochs']}  Momentum: {self.settings.get('momentum', 0.9)}")

        report.append("\nBest validation LER over seeds:")
        report.append(f"{'delta':>12} {'min':>8} {'max':>8} {'median':>8} {'diverged':>9}")
        for row in results['summary']:
            if row['median_ler'] is None:
                report.append(f"{row['learning_rate']:>12g} {'-':>8} {'-':>8} {'-':>8} {row['diverged']:>9}")
            else:
                report.append(f"{row['learning_rate']:>12g} {row['min_ler'] * 100:>7.2f}% {row['max_ler'] * 100:>7.2f}% "
                              f"{row['median_ler'] * 100:>7.2f}% {row['diverged']:>9}")

        report.append("\nDetails by Run:")
        for run in results['runs']:
            report.append(f"\n• seed {run['seed']}, delta {run['learning_rate']:g}: {run['status']}")
            if run['status'] == 'ok':
                report.append(f"  Best LER: {run['best_ler'] * 100:.2f}% at epoch {run['best_epoch']}")
            else:
                report.append(f"  Error: {run['error']}")
            if run['skipped_samples']:
                report.append(f"  Skipped samples (infeasible targets): {run['skipped_samples']}")

        report.append(f"\nRuns saved to: {self.output_dir}")
        return "\n".join(report)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args, config: Dict) -> int:
    if args.seeds:
        config['run_settings']['seeds'] = args.seeds
    if args.learning_rates:
        config['run_settings']['learning_rates'] = args.learning_rates
    if args.epochs is not None:
        config['run_settings']['epochs'] = args.epochs
    if args.momentum is not None:
        config['run_settings']['momentum'] = args.momentum
    if args.output:
        config['run_settings']['output_directory'] = args.output
    if args.corpus:
        config['data']['corpus'] = args.corpus
    if args.cells:
        md_layers = [entry for entry in config['network']['layers'] if entry.get('type') == 'md']
        if len(args.cells) != len(md_layers):
            raise ContractViolation(f"--cells names {len(args.cells)} kinds for {len(md_layers)} recurrent layers")
        for entry, kind in zip(md_layers, args.cells):
            entry['cell'] = kind

    runner = ExperimentRunner(config)
    runner.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(runner.output_dir / 'effective_config.json', config)
    started = datetime.now().isoformat()

    print("=== MDRNN Training Sweep ===\n")
    results = runner.run()
    runner.write_summary(results)
    report = runner.generate_report(results)
    with open(runner.output_dir / 'report.txt', 'w', encoding='utf-8') as f:
        f.write(report)
    _write_json(runner.output_dir / 'metadata.json', {'started': started, 'finished': datetime.now().isoformat()})

    print(report)
    print(f"\n📊 Summary saved to: {runner.output_dir / 'summary.csv'}")
    if any(row['diverged'] == row['runs'] for row in results['summary']):
        print("❌ Every seed diverged for at least one learning rate")
        return EXIT_DIVERGED
    print("✅ Training sweep complete")
    return EXIT_OK


def cmd_eval(args, config: Dict) -> int:
    model = load_model(args.model)
    samples = load_corpus(args.corpus, alphabet_size=model.spec.labels - 1, strict=not args.lenient)
    scores = evaluate(model, samples)
    scores['model'] = str(args.model)
    scores['corpus'] = str(args.corpus)
    print(f"📊 {scores['samples']} samples, LER {scores['micro'] * 100:.2f}% "
          f"(per-sample mean {scores['macro'] * 100:.2f}%)")
    if args.output:
        _write_json(Path(args.output), scores)
        print(f"✅ Scores saved to: {args.output}")
    return EXIT_OK


def cmd_propcheck(args, config: Dict) -> int:
    analysis = config['analysis']
    prop = args.prop.lower()
    seed = args.seed if args.seed is not None else int(analysis['seed'])
    if prop == 'neg':
        trials = args.trials if args.trials is not None else int(analysis['trials'])
        report = neg_probe(args.kind, args.dim, trials, seed=seed)
    elif prop == 'nvg':
        p_in = args.p_in or (0,) * args.dim
        p_out = args.p_out or (3,) * args.dim
        report = nvg_probe(args.kind, args.dim, p_in, p_out, args.delta)
    else:
        report = cod_probe(args.kind, drive_length=int(analysis['drive_length']),
                           epsilon=float(analysis['epsilon']))

    print(report.to_text())
    if args.output:
        with open(args.output, 'w', encoding='utf-8') as f:
            f.write(report.to_json() + '\n')
    violated = report.verdict == VIOLATED
    if violated == args.expect_violation:
        print(f"✅ {report.property} {report.verdict} as expected")
        return EXIT_OK
    print(f"❌ {report.property} unexpectedly {report.verdict}")
    return EXIT_PROPERTY


def _half_power_frequency(frequency: np.ndarray, h: np.ndarray) -> Optional[float]:
    below = np.flatnonzero(h <= h[0] / np.sqrt(2.0))
    return float(frequency[below[0]]) if below.size else None


def cmd_freqresp(args, config: Dict) -> int:
    n = args.n if args.n is not None else int(config['analysis']['spectrum_length'])
    if args.preset:
        tf = transfer_function('typee', PID_PRESETS[args.preset])
        source = f"type E preset '{args.preset}'"
    elif args.kind:
        gates = dict(args.gate or [])
        tf = transfer_function(args.kind, gates)
        source = f"{args.kind} with gates {gates}"
    elif args.butterworth:
        if args.phi is None:
            raise ContractViolation("--butterworth needs --phi")
        tf = butterworth(args.phi)
        source = f"Butterworth configuration, y_phi={args.phi}"
    else:
        alpha1 = args.alpha1 if args.alpha1 is not None else (args.phi if args.phi is not None else 0.0)
        alpha0 = args.alpha0 if args.alpha0 is not None else 1.0 - alpha1
        tf = TransferFunction(alpha0, alpha1, args.b0, args.b1)
        source = "explicit coefficients"

    response = frequency_response(tf, n)
    output = Path(args.output)
    write_spectrum_csv(output, response['frequency'], response[args.component])

    report = ["=== Frequency Response ===",
              f"Source: {source}",
              f"alpha0={tf.alpha0:g} alpha1={tf.alpha1:g} b0={tf.b0:g} b1={tf.b1:g}",
              f"Bins: {len(response['frequency'])} (N={n})",
              f"|H| at f=0: {response['h'][0]:.6g}, at f=0.5: {response['h'][-1]:.6g}"]
    if args.butterworth and not (args.preset or args.kind):
        report.append(f"f_cutoff = {cutoff_frequency(args.phi):.4f}")
    else:
        estimate = _half_power_frequency(response['frequency'], response['h'])
        report.append("Half-power frequency: " + (f"{estimate:.4f}" if estimate is not None else "none (no -3 dB drop)"))
    print("\n".join(report))
    print(f"✅ Spectrum saved to: {output}")
    return EXIT_OK


def cmd_gradcheck(args, config: Dict) -> int:
    error = gradient_check(args.cells, args.dim, seed=args.seed, coordinates=args.coordinates)
    print(f"📊 {args.cells} D={args.dim}: max relative error {error:.3e}")
    if error <= args.tolerance:
        print("✅ Gradient check passed")
        return EXIT_OK
    print(f"❌ Gradient check failed (tolerance {args.tolerance:g})")
    return EXIT_PROPERTY


def cmd_explosion(args, config: Dict) -> int:
    series = explosion_series(args.dim, args.phi, args.kmax)
    print(f"{'k':>4} {'J(k,...,k)':>16} {'closed form':>16}")
    for k, value in series:
        print(f"{k:>4} {value:>16.6f} {explosion_oracle(args.dim, args.phi, k):>16.6f}")
    if args.output:
        with open(args.output, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['k', 'jacobian', 'closed_form'])
            for k, value in series:
                writer.writerow([k, repr(value), repr(explosion_oracle(args.dim, args.phi, k))])
    trend = "diverging" if series_diverges(series) else "bounded"
    print(f"📊 Series is {trend}")
    return EXIT_OK


def cmd_pathcount(args, config: Dict) -> int:
    print(count_paths(args.p, args.q))
    return EXIT_OK


def cmd_gen_data(args, config: Dict) -> int:
    data = config['data']
    samples = gen_synthetic(
        seed=args.seed if args.seed is not None else int(data['seed']),
        count=args.count if args.count is not None else int(data['train_count']) + int(data['valid_count']),
        alphabet_size=args.alphabet_size if args.alphabet_size is not None else int(data['alphabet_size']),
        glyph_size=int(data['glyph_size']),
        length_range=tuple(data['length_range']),
        noise=float(data['noise']),
        jitter=int(data['jitter']),
        margin=int(data['margin']),
        gap=int(data['gap']),
    )
    directory = save_corpus(samples, args.output)
    print(f"✅ {len(samples)} samples written to: {directory}")
    return EXIT_OK


class ToolkitArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the contract-violation code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        logger.error(f"Invalid arguments: {message}")
        self.exit(EXIT_CONTRACT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = ToolkitArgumentParser(prog='mdrnn_cli', description='MDRNN cell toolkit')
    parser.add_argument('--config', default=DEFAULT_CONFIG_PATH, help='JSON configuration file')
    parser.add_argument('--log-level', help='Override run_settings.log_level')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='Train one layout over seeds and learning rates')
    p.add_argument('--seeds', type=lambda s: _parse_list(s, int))
    p.add_argument('--learning-rates', type=_parse_list)
    p.add_argument('--epochs', type=int)
    p.add_argument('--momentum', type=float)
    p.add_argument('--cells', type=lambda s: _parse_list(s, str), help='Cell kind per recurrent layer')
    p.add_argument('--corpus', help='Corpus directory instead of synthetic data')
    p.add_argument('--output', help='Run directory')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('eval', help='Score a saved model on a corpus')
    p.add_argument('--model', required=True)
    p.add_argument('--corpus', required=True)
    p.add_argument('--lenient', action='store_true', help='Skip unreadable records')
    p.add_argument('--output')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('propcheck', help='Probe NEG, NVG or COD for a cell kind')
    p.add_argument('--kind', required=True)
    p.add_argument('--dim', type=int, default=1)
    p.add_argument('--prop', required=True, choices=['neg', 'nvg', 'cod', 'NEG', 'NVG', 'COD'])
    p.add_argument('--trials', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--p-in', type=_parse_coord)
    p.add_argument('--p-out', type=_parse_coord)
    p.add_argument('--delta', type=float, default=0.1)
    p.add_argument('--expect-violation', action='store_true')
    p.add_argument('--output', help='Write the report as JSON')
    p.set_defaults(handler=cmd_propcheck)

    p = sub.add_parser('freqresp', help='Frequency response of the first-order cell model')
    p.add_argument('--phi', type=float)
    p.add_argument('--butterworth', action='store_true')
    p.add_argument('--alpha0', type=float)
    p.add_argument('--alpha1', type=float)
    p.add_argument('--b0', type=float, default=1.0)
    p.add_argument('--b1', type=float, default=0.0)
    p.add_argument('--kind', help='Derive the model from a tied-input cell kind')
    p.add_argument('--gate', nargs=2, action='append', metavar=('NAME', 'VALUE'),
                   type=str, help='Gate value for --kind, repeatable')
    p.add_argument('--preset', choices=sorted(PID_PRESETS))
    p.add_argument('--component', choices=['h', 'h1', 'h2'], default='h')
    p.add_argument('--n', type=int)
    p.add_argument('--output', default='spectrum.csv')
    p.set_defaults(handler=cmd_freqresp)

    p = sub.add_parser('gradcheck', help='Finite-difference check of full BPTT')
    p.add_argument('--cells', required=True, help='Cell kind')
    p.add_argument('--dim', type=int, default=2)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--coordinates', type=int, default=32)
    p.add_argument('--tolerance', type=float, default=1e-6)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser('explosion', help='MD LSTM truncated gradient along the diagonal')
    p.add_argument('--dim', type=int, default=2)
    p.add_argument('--phi', type=float, required=True)
    p.add_argument('--kmax', type=int, default=10)
    p.add_argument('--output')
    p.set_defaults(handler=cmd_explosion)

    p = sub.add_parser('pathcount', help='Number of monotone lattice paths')
    p.add_argument('p', type=_parse_coord)
    p.add_argument('q', type=_parse_coord)
    p.set_defaults(handler=cmd_pathcount)

    p = sub.add_parser('gen-data', help='Write a synthetic corpus')
    p.add_argument('--output', required=True)
    p.add_argument('--count', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--alphabet-size', type=int)
    p.set_defaults(handler=cmd_gen_data)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main execution function"""
    args = build_parser().parse_args(argv)
    config = _load_config(args.config)
    _apply_log_level(args.log_level or config['run_settings'].get('log_level', 'INFO'))

    if getattr(args, 'gate', None):
        try:
            args.gate = [(name, float(value)) for name, value in args.gate]
        except ValueError as e:
            logger.error(f"Invalid gate value: {e}")
            return EXIT_CONTRACT

    try:
        return args.handler(args, config)
    except (ContractViolation, CorpusError) as e:
        logger.error(f"Invalid input: {e}")
        print(f"❌ {e}")
        return EXIT_CONTRACT
    except DivergedRunError as e:
        logger.error(f"Diverged: {e}")
        print(f"❌ {e}")
        return EXIT_DIVERGED
    except MDCellsError as e:
        logger.error(f"Error: {e}")
        print(f"❌ {e}")
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
