"""
Model specification: intensity model, sparsity model, priors and covariate bindings
assembled from a model config.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from config import parse_epoch, resolve_spans, resolve_time
from ctmc import SparsityModel
from errors import ConfigError
from intensity import build_intensity, fix_frequencies, weekly_histogram
from posterior import PriorSpec

logger = logging.getLogger(__name__)


@dataclass
class ModelSpec:
    kind: str
    intensity: object
    sparsity: SparsityModel
    prior: PriorSpec
    bindings: Dict[str, str] = field(default_factory=dict)
    # constants resolved from the config, recorded in run manifests
    resolved: Dict = field(default_factory=dict)

    @property
    def param_names(self):
        return tuple(self.intensity.param_names) + tuple(self.sparsity.param_names)


def resolve_constants(config):
    """Convert date-valued constants in a model config to hours"""
    epoch = parse_epoch(config.get('epoch'))
    resolved = dict(config)
    if 'term_starts' in config:
        resolved['term_starts'] = [resolve_time(v, epoch) for v in config['term_starts']]
    if 'sessions' in config:
        resolved['sessions'] = [list(span) for span in resolve_spans(config['sessions'], epoch)]
    if 'pieces' in config:
        pieces = []
        for piece in config['pieces']:
            piece = dict(piece)
            piece['start'] = resolve_time(piece['start'], epoch)
            piece['end'] = resolve_time(piece['end'], epoch)
            pieces.append(piece)
        resolved['pieces'] = pieces
    return resolved


def build_model_spec(config, dataset=None):
    """
    Build a ModelSpec from a resolved model config.

    For the MIT model with frequencies 'auto', the three frequencies are fixed from
    the weekly histogram of the dataset's event times.
    """
    resolved = resolve_constants(config)
    kind = resolved.get('kind')

    frequencies = None
    if kind == 'mit' and isinstance(resolved.get('frequencies', 'auto'), str):
        if dataset is None:
            raise ConfigError("MIT frequencies are 'auto'; a dataset is needed to fix them")
        counts = weekly_histogram(dataset.all_event_times(), 1.0, resolved.get('day_offset_hours', 0.0))
        frequencies = fix_frequencies(counts, 1.0)
        resolved['frequencies'] = [float(f) for f in frequencies]
        logger.info(f"Fixed weekly frequencies from data: {np.round(frequencies, 5).tolist()} rad/h")

    intensity = build_intensity(resolved, frequencies)
    sparsity = SparsityModel('mit' if kind == 'mit' else resolved.get('sparsity', 'constant'))
    prior = PriorSpec.from_config(resolved.get('priors', {}))

    names = tuple(intensity.param_names) + tuple(sparsity.param_names)
    missing = [n for n in names if n not in prior.names]
    if missing:
        raise ConfigError(f"No prior given for parameter(s) {missing}")
    extra = [n for n in prior.names if n not in names]
    if extra:
        raise ConfigError(f"Priors given for unknown parameter(s) {extra}")
    prior = prior.ordered(names)

    return ModelSpec(kind, intensity, sparsity, prior, dict(resolved.get('bindings', {})), resolved)
