"""
Run configuration for the latent network tool.

Defaults live in module-level dictionaries. A run's effective configuration is the
deep merge of: defaults <- JSON config file <- LATENTNET_* environment variables <-
command-line flags. Times are in hours everywhere; calendar boundaries may be given
as date strings, which are resolved against the configured epoch.
"""

import copy
import hashlib
import json
import logging
import math
import os
from datetime import datetime

import dateparser

from errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = 'LATENTNET_'

# Ingestion / cleaning
DEFAULT_CLEANING_CONFIG = {
    'gap_threshold_hours': 0.0,
    'floor_prob_threshold': None,
    'study_spans': [],
    'epoch': None,
}

# 30-minute merge window and 0.2 same-floor filter for the dormitory Bluetooth logs
MIT_CLEANING_CONFIG = {
    'gap_threshold_hours': 0.5,
    'floor_prob_threshold': 0.2,
    'epoch': '2008-09-01 00:00',
    'study_spans': [
        ['2008-09-03', '2008-12-13'],
        ['2009-01-05', '2009-03-20'],
        ['2009-03-30', '2009-05-15'],
    ],
}

def _swallow_sessions():
    """Eight three-hour observation sessions: evening of day 0 through morning of day 4"""
    sessions = []
    for day in range(5):
        if day > 0:
            sessions.append([24.0 * day + 6.0, 24.0 * day + 9.0])
        if day < 4:
            sessions.append([24.0 * day + 17.0, 24.0 * day + 20.0])
    return sessions


# 30-second merge window for the proximity loggers; only the sessions are analysed
SWALLOW_CLEANING_CONFIG = {
    'gap_threshold_hours': 30.0 / 3600.0,
    'floor_prob_threshold': None,
    'epoch': None,
    'study_spans': _swallow_sessions(),
}


MIT_MODEL_CONFIG = {
    'kind': 'mit',
    'epoch': '2008-09-01 00:00',
    # starts of the second and third terms; the first term runs until the second starts
    'term_starts': ['2009-01-05', '2009-03-30'],
    'daytime_hours': [8.0, 17.0],
    # hours to add to a timestamp to get local time since a local midnight
    'day_offset_hours': 0.0,
    # 'auto' fixes the three frequencies from the weekly histogram of the data
    'frequencies': 'auto',
    'bindings': {'floor': 'floor', 'year': 'year'},
    'priors': {
        'c0_t1': {'family': 'point_mass', 'value': 1.0},
        'c0_t2': {'family': 'exponential', 'rate': 1.0},
        'c0_t3': {'family': 'exponential', 'rate': 1.0},
        'c1': {'family': 'exponential', 'rate': 1.0},
        'c2_1': {'family': 'exponential', 'rate': 100.0},
        'c2_2': {'family': 'exponential', 'rate': 100.0},
        'c3': {'family': 'exponential', 'rate': 1.0},
        'k0': {'family': 'exponential', 'rate': 1.0},
        'k1_1': {'family': 'exponential', 'rate': 1.0},
        'k2_1': {'family': 'exponential', 'rate': 1.0},
        'k3_1': {'family': 'exponential', 'rate': 1.0},
        'k1_3': {'family': 'uniform', 'low': 0.0, 'high': 2.0 * math.pi, 'transform': 'wrap'},
        'k2_3': {'family': 'uniform', 'low': 0.0, 'high': 2.0 * math.pi, 'transform': 'wrap'},
        'k3_3': {'family': 'uniform', 'low': 0.0, 'high': 2.0 * math.pi, 'transform': 'wrap'},
        's0': {'family': 'beta', 'a': 1.0, 'b': 49.0},
        's1': {'family': 'exponential', 'rate': 1.0},
        's2': {'family': 'exponential', 'rate': 1.0},
        'q': {'family': 'exponential', 'rate': 1e10},
    },
}

SWALLOW_MODEL_CONFIG = {
    'kind': 'swallow',
    'epoch': None,
    'sessions': _swallow_sessions(),
    'bindings': {'sex': 'sex'},
    'priors': {
        **{f'k{i}': {'family': 'exponential', 'rate': 1.0} for i in range(1, 9)},
        'c_FF': {'family': 'exponential', 'rate': 2.0},
        'c_MF': {'family': 'exponential', 'rate': 2.0},
        'c_MM': {'family': 'exponential', 'rate': 2.0},
        's': {'family': 'beta', 'a': 1.0, 'b': 9.0},
        'q': {'family': 'exponential', 'rate': 1000.0},
    },
}

MODEL_PRESETS = {
    'mit': MIT_MODEL_CONFIG,
    'swallow': SWALLOW_MODEL_CONFIG,
}

CLEANING_PRESETS = {
    'mit': MIT_CLEANING_CONFIG,
    'swallow': SWALLOW_CLEANING_CONFIG,
}

DEFAULT_MCMC_CONFIG = {
    'iterations': 10000,
    'burn_in': 1000,
    'target_accept': [0.2, 0.4],
    'init': {},
    'prior_only': False,
    'show_progress': True,
}

DEFAULT_ESTIMATE_CONFIG = {
    'thin': 10,
    'grid_hours': 1.0,
    'threshold': None,
}

DEFAULT_SIMULATE_CONFIG = {
    'benchmark': 'swallow',
    'theta': None,
}

DEFAULT_RUN_CONFIG = {
    'data': {
        'encounters': None,
        'attributes': None,
        'activity': None,
        'bundle': None,
    },
    'cleaning': DEFAULT_CLEANING_CONFIG,
    'model': 'swallow',
    'mcmc': DEFAULT_MCMC_CONFIG,
    'estimate': DEFAULT_ESTIMATE_CONFIG,
    'simulate': DEFAULT_SIMULATE_CONFIG,
    'out': 'run',
    'seed': 0,
    'threads': None,
}


def deep_merge(base, override):
    """Return a copy of base with override merged in; nested dicts merge key by key"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def env_overrides(environ=None, prefix=ENV_PREFIX):
    """
    Collect overrides from environment variables.

    LATENTNET_SEED=7 sets 'seed'; LATENTNET_MCMC__ITERATIONS=500 sets
    mcmc.iterations. Values are parsed as JSON when possible.
    """
    environ = os.environ if environ is None else environ
    overrides = {}
    for name, raw in environ.items():
        if not name.startswith(prefix):
            continue
        path = [part.lower() for part in name[len(prefix):].split('__') if part]
        if not path:
            continue
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = overrides
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return overrides


def load_run_config(path=None, overrides=None, environ=None):
    """
    Build the effective run configuration.

    Args:
        path: optional JSON config file
        overrides: dict of flag values (None entries are ignored)
        environ: environment mapping, defaults to os.environ

    Returns:
        dict: merged configuration with model and cleaning presets expanded
    """
    config = copy.deepcopy(DEFAULT_RUN_CONFIG)
    file_config = {}
    if path:
        try:
            with open(path, encoding='utf-8') as f:
                file_config = json.load(f)
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        except ValueError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(file_config, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")

    layers = [
        file_config,
        env_overrides(environ),
        {k: v for k, v in (overrides or {}).items() if v is not None},
    ]

    # A preset name selects the model and its matching cleaning rules
    preset = config['model']
    for layer in layers:
        preset = layer.get('model', preset)
    if isinstance(preset, dict):
        preset = preset.get('preset', preset.get('kind'))
    if isinstance(preset, str):
        config['cleaning'] = deep_merge(config['cleaning'], CLEANING_PRESETS.get(preset, {}))

    for layer in layers:
        config = deep_merge(config, layer)
    config['model'] = resolve_model_config(config['model'])
    return config


def resolve_model_config(model):
    """Expand a preset name, or a dict with a 'preset' key, into a full model config"""
    if isinstance(model, str):
        if model not in MODEL_PRESETS:
            raise ConfigError(f"Unknown model preset '{model}'; expected one of {sorted(MODEL_PRESETS)}")
        return copy.deepcopy(MODEL_PRESETS[model])
    if not isinstance(model, dict):
        raise ConfigError("'model' must be a preset name or an object")
    preset = model.get('preset')
    if preset is not None:
        base = resolve_model_config(preset)
        rest = {k: v for k, v in model.items() if k != 'preset'}
        return deep_merge(base, rest)
    if 'kind' not in model:
        raise ConfigError("Model config needs a 'kind' (mit, swallow or custom)")
    return copy.deepcopy(model)


def parse_epoch(epoch):
    """Parse the epoch string; None means times are already plain hours"""
    if epoch is None:
        return None
    parsed = dateparser.parse(str(epoch), settings={'RETURN_AS_TIMEZONE_AWARE': False})
    if parsed is None:
        raise ConfigError(f"Cannot parse epoch '{epoch}'")
    return parsed


def resolve_time(value, epoch=None):
    """
    Convert a configured time to hours since the epoch.

    Args:
        value: number of hours, or a date string such as '2009-01-05'
        epoch: epoch string or datetime; required for date strings

    Returns:
        float: hours
    """
    if isinstance(value, bool):
        raise ConfigError(f"Invalid time value {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"Invalid time value {value!r}")
    try:
        return float(value)
    except ValueError:
        pass
    origin = epoch if isinstance(epoch, datetime) else parse_epoch(epoch)
    if origin is None:
        raise ConfigError(f"Date '{value}' given but no epoch configured")
    parsed = dateparser.parse(value, settings={'RETURN_AS_TIMEZONE_AWARE': False})
    if parsed is None:
        raise ConfigError(f"Cannot parse date '{value}'")
    return (parsed - origin).total_seconds() / 3600.0


def resolve_spans(spans, epoch=None):
    """Resolve a list of [start, end] pairs to hours"""
    resolved = []
    for span in spans or []:
        if len(span) != 2:
            raise ConfigError(f"Span {span!r} must have exactly two endpoints")
        start, end = resolve_time(span[0], epoch), resolve_time(span[1], epoch)
        if not start < end:
            raise ConfigError(f"Span {span!r} must have start < end")
        resolved.append((start, end))
    return resolved


def config_hash(config):
    """SHA-256 of the canonical JSON form of a configuration"""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
