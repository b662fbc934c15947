#!/usr/bin/env python3
"""
Command-line entry point.

    python latent_network_app.py ingest   --encounters enc.csv --attributes attrs.csv --out run
    python latent_network_app.py simulate --benchmark swallow --seed 3 --out run
    python latent_network_app.py fit      --config run.json --seed 3 --out run
    python latent_network_app.py estimate --out run
    python latent_network_app.py snapshot --time 41.5 --threshold 0.8 --out run
    python latent_network_app.py diagnostics --chain run/chain.csv --out run

Every command writes <out>/manifest_<command>.json with the effective config, its
hash, the seed and the installed package versions.
"""

import argparse
import json
import logging
import os
import sys

from config import config_hash, load_run_config, resolve_time
from dataset import BundleStore, ingest_files, read_activity, read_attributes
from diagnostics import write_diagnostics
from environment import environment_report
from errors import ConfigError, DataError, LatentNetError
from events import Actor
from intensity import DEFAULT_FREQUENCIES
from models import build_model_spec
from netestimate import (EdgeEstimator, export, grid_times, write_mean_edges_csv,
                         write_snapshot_manifest)
from posterior import PosteriorTarget, read_chain_csv, sample_posterior, write_chain_csv
from simulate import generate_dataset, swallow_benchmark, windows_from_activity, write_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _set_path(target, dotted, value):
    node = target
    parts = dotted.split('.')
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _parse_assignment(text):
    if '=' not in text:
        raise ConfigError(f"--set expects KEY=VALUE, got '{text}'")
    key, raw = text.split('=', 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def build_parser():
    parser = _Parser(prog='latent_network_app', description='Latent network inference from dyadic event data')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run config')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--threads', type=int, help='worker threads (default: available cores)')
    common.add_argument('--out', help='output directory')
    common.add_argument('--model', help="model preset ('mit' or 'swallow')")
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override any config key, e.g. mcmc.iterations=2000')
    common.add_argument('--verbose', action='store_true')

    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('ingest', parents=[common], help='clean raw files into a dataset bundle')
    p.add_argument('--encounters')
    p.add_argument('--attributes')
    p.add_argument('--activity')
    p.add_argument('--gap-threshold', type=float, help='merge gap in hours')
    p.add_argument('--floor-threshold', type=float, help='drop encounters with same-floor probability at or below')

    p = sub.add_parser('simulate', parents=[common], help='write a synthetic dataset with its ground truth')
    p.add_argument('--benchmark', choices=['swallow'])
    p.add_argument('--theta', help='JSON file with parameter values for the configured model')
    p.add_argument('--attributes')
    p.add_argument('--activity')

    p = sub.add_parser('fit', parents=[common], help='sample the posterior')
    p.add_argument('--bundle')
    p.add_argument('--encounters')
    p.add_argument('--attributes')
    p.add_argument('--activity')
    p.add_argument('--iterations', type=int)
    p.add_argument('--burn-in', type=int)
    p.add_argument('--prior-only', action='store_true', default=None)

    p = sub.add_parser('estimate', parents=[common], help='edge-probability series and time averages')
    p.add_argument('--chain')
    p.add_argument('--bundle')
    p.add_argument('--thin', type=int)
    p.add_argument('--grid-hours', type=float)

    p = sub.add_parser('snapshot', parents=[common], help='network snapshots at given times')
    p.add_argument('--chain')
    p.add_argument('--bundle')
    p.add_argument('--time', action='append', required=True, help='hours, or a date when an epoch is set')
    p.add_argument('--threshold', type=float)
    p.add_argument('--thin', type=int)

    p = sub.add_parser('diagnostics', parents=[common], help='convergence report for a chain')
    p.add_argument('--chain')
    p.add_argument('--no-html', action='store_true')
    return parser


def overrides_from_args(args):
    """Map flags onto config keys; unset flags are left out"""
    overrides = {}
    flat = {
        'seed': args.seed,
        'threads': args.threads,
        'out': args.out,
        'model': args.model,
        'data.encounters': getattr(args, 'encounters', None),
        'data.attributes': getattr(args, 'attributes', None),
        'data.activity': getattr(args, 'activity', None),
        'data.bundle': getattr(args, 'bundle', None),
        'cleaning.gap_threshold_hours': getattr(args, 'gap_threshold', None),
        'cleaning.floor_prob_threshold': getattr(args, 'floor_threshold', None),
        'simulate.benchmark': getattr(args, 'benchmark', None),
        'simulate.theta': getattr(args, 'theta', None),
        'mcmc.iterations': getattr(args, 'iterations', None),
        'mcmc.burn_in': getattr(args, 'burn_in', None),
        'mcmc.prior_only': getattr(args, 'prior_only', None),
        'estimate.thin': getattr(args, 'thin', None),
        'estimate.grid_hours': getattr(args, 'grid_hours', None),
        'estimate.threshold': getattr(args, 'threshold', None),
    }
    for key, value in flat.items():
        if value is not None:
            _set_path(overrides, key, value)
    for text in args.set:
        key, value = _parse_assignment(text)
        _set_path(overrides, key, value)
    return overrides


def write_manifest(config, command, extra=None):
    manifest = {
        'command': command,
        'config': config,
        'config_hash': config_hash(config),
        'seed': config['seed'],
        'environment': environment_report(),
    }
    manifest.update(extra or {})
    path = os.path.join(config['out'], f'manifest_{command}.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    return path


def _threads(config):
    return config.get('threads') or os.cpu_count() or 1


def load_dataset(config):
    """Dataset from a bundle, from raw files, or from <out>/bundle"""
    data = config['data']
    if data.get('bundle'):
        return BundleStore(data['bundle']).load()
    if data.get('encounters'):
        return ingest_files(data['encounters'], data.get('attributes'), data.get('activity'), config['cleaning'])
    default_bundle = os.path.join(config['out'], 'bundle')
    if os.path.isdir(default_bundle):
        return BundleStore(default_bundle).load()
    raise ConfigError("No input data: give --bundle, --encounters or run 'ingest' first")


def load_fitted(config, chain_path=None):
    """Chain, dataset and the model spec the chain was fitted with"""
    chain_path = chain_path or os.path.join(config['out'], 'chain.csv')
    directory = os.path.dirname(chain_path) or '.'
    meta, model = {}, config['model']
    meta_path = os.path.join(directory, 'chain_meta.json')
    if os.path.exists(meta_path):
        with open(meta_path, encoding='utf-8') as f:
            meta = json.load(f)
    model_path = os.path.join(directory, 'model.json')
    if os.path.exists(model_path):
        with open(model_path, encoding='utf-8') as f:
            model = json.load(f)
    chain = read_chain_csv(chain_path, meta)
    dataset = load_dataset(config)
    spec = build_model_spec(model, dataset)
    if list(chain.names) != list(spec.param_names):
        raise DataError(f"{chain_path}: parameters {chain.names} do not match the model {list(spec.param_names)}")
    return chain, dataset, spec


def cmd_ingest(config):
    data = config['data']
    if not data.get('encounters'):
        raise ConfigError("ingest needs --encounters")
    dataset = ingest_files(data['encounters'], data.get('attributes'), data.get('activity'), config['cleaning'])
    bundle = os.path.join(config['out'], 'bundle')
    BundleStore(bundle).save(dataset)
    summary = dataset.summary()
    logger.info(f"{summary['events']} interactions among {summary['dyads']} dyads, {summary['actors']} actors")
    return {'summary': summary, 'bundle': bundle}


def _read_theta(value):
    if isinstance(value, dict):
        return value
    try:
        with open(value, encoding='utf-8') as f:
            loaded = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read parameter file {value}: {e}") from e
    theta = loaded.get('theta', loaded) if isinstance(loaded, dict) else None
    if not isinstance(theta, dict):
        raise ConfigError(f"Parameter file {value} must hold an object of parameter values")
    return theta


def cmd_simulate(config):
    sim = config['simulate']
    directory = os.path.join(config['out'], 'data')
    if sim.get('theta') is not None:
        data = config['data']
        if not (data.get('attributes') and data.get('activity')):
            raise ConfigError("Simulating a configured model needs --attributes and --activity")
        actors = read_attributes(data['attributes'])
        activity = read_activity(data['activity'])
        for actor_id in activity:
            actors.setdefault(actor_id, Actor(actor_id, {}))
        model = dict(config['model'])
        if isinstance(model.get('frequencies'), str):
            logger.warning("Frequencies are 'auto'; simulating with the daily, weekly and half-day harmonics")
            model['frequencies'] = list(DEFAULT_FREQUENCIES)
        spec = build_model_spec(model)
        synthetic = generate_dataset(spec, _read_theta(sim['theta']), actors, windows_from_activity(activity),
                                     config['seed'], activity)
    elif sim.get('benchmark') == 'swallow':
        synthetic = swallow_benchmark(config['seed'])
    else:
        raise ConfigError("simulate needs --benchmark swallow or --theta")
    write_dataset(synthetic, directory)
    return {'data': directory, 'events': synthetic.n_events, 'dyads': len(synthetic.streams)}


def cmd_fit(config):
    dataset = load_dataset(config)
    spec = build_model_spec(config['model'], dataset)
    mcmc = config['mcmc']
    target = PosteriorTarget(spec, dataset, threads=_threads(config), prior_only=bool(mcmc.get('prior_only')))
    chain = sample_posterior(target, mcmc, seed=config['seed'])

    out = config['out']
    write_chain_csv(chain, os.path.join(out, 'chain.csv'))
    with open(os.path.join(out, 'chain_meta.json'), 'w', encoding='utf-8') as f:
        json.dump(chain.meta(), f, indent=2, sort_keys=True)
    with open(os.path.join(out, 'model.json'), 'w', encoding='utf-8') as f:
        json.dump(spec.resolved, f, indent=2, sort_keys=True)
    summary = write_diagnostics(chain, os.path.join(out, 'diagnostics'))
    return {'chain': os.path.join(out, 'chain.csv'), 'diagnostics': summary}


def cmd_estimate(config, chain_path=None):
    chain, dataset, spec = load_fitted(config, chain_path)
    est = config['estimate']
    estimator = EdgeEstimator(chain, dataset, spec, thin=est.get('thin', 1), threads=_threads(config),
                              show_progress=config['mcmc'].get('show_progress', True))
    series = [estimator.series(d, grid_times(dataset.streams[d].window, float(est.get('grid_hours', 1.0))))
              for d in estimator.dyads]
    directory = os.path.join(config['out'], 'estimate')
    export(series, os.path.join(directory, 'series.json'), 'json')
    write_mean_edges_csv({d: estimator.mean_probability(d) for d in estimator.dyads},
                         os.path.join(directory, 'mean_edges.csv'))
    return {'estimate': directory, 'draws_used': estimator.n_draws}


def cmd_snapshot(config, times, chain_path=None):
    chain, dataset, spec = load_fitted(config, chain_path)
    est = config['estimate']
    estimator = EdgeEstimator(chain, dataset, spec, thin=est.get('thin', 1), threads=_threads(config),
                              show_progress=config['mcmc'].get('show_progress', True))
    directory = os.path.join(config['out'], 'snapshots')
    epoch = spec.resolved.get('epoch')
    entries = []
    for value in times:
        t = resolve_time(value, epoch)
        snap = estimator.snapshot(t, est.get('threshold'))
        name = f'edges_{t:.6f}.csv'
        export(snap, os.path.join(directory, name), 'csv')
        entries.append({'time': t, 'threshold': snap.threshold, 'file': name, 'dyads': len(snap.probs),
                        'edges': [[d.i, d.j] for d in snap.edges],
                        'unmonitored_actors': [a for a, on in snap.monitored.items() if not on]})
    write_snapshot_manifest(entries, os.path.join(directory, 'snapshots.json'))
    return {'snapshots': directory}


def cmd_diagnostics(config, chain_path=None, html=True):
    chain_path = chain_path or os.path.join(config['out'], 'chain.csv')
    meta = {}
    meta_path = os.path.join(os.path.dirname(chain_path) or '.', 'chain_meta.json')
    if os.path.exists(meta_path):
        with open(meta_path, encoding='utf-8') as f:
            meta = json.load(f)
    chain = read_chain_csv(chain_path, meta)
    return {'diagnostics': write_diagnostics(chain, os.path.join(config['out'], 'diagnostics'), html=html)}


def run(args):
    config = load_run_config(args.config, overrides_from_args(args))
    os.makedirs(config['out'], exist_ok=True)
    if args.command == 'ingest':
        result = cmd_ingest(config)
    elif args.command == 'simulate':
        result = cmd_simulate(config)
    elif args.command == 'fit':
        result = cmd_fit(config)
    elif args.command == 'estimate':
        result = cmd_estimate(config, args.chain)
    elif args.command == 'snapshot':
        result = cmd_snapshot(config, args.time, args.chain)
    else:
        result = cmd_diagnostics(config, args.chain, html=not args.no_html)
    write_manifest(config, args.command, {'result': result})
    return result


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        run(args)
    except LatentNetError as e:
        logger.error(str(e))
        return e.exit_code
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
