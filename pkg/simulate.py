"""
Synthetic data from the full generative model: a CTMC path per dyad, then
inhomogeneous Poisson events by thinning.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Optional

import numpy as np
import pandas as pd

from config import SWALLOW_MODEL_CONFIG
from ctmc import LatentPath, sample_path, sparsity_for
from dataset import ACTIVITY_COLUMNS, ATTRIBUTE_COLUMNS, ENCOUNTER_COLUMNS, Dataset
from errors import ConfigError, InvalidParameters
from events import Actor, Dyad, EventStream, ObservationWindow, dyad_covariates, intersect_spans
from intensity import eval_lambda, split_spans, upper_bounds
from models import build_model_spec

logger = logging.getLogger(__name__)


def simulate_events(model, theta, x, path: LatentPath, window: ObservationWindow, rng: np.random.Generator):
    """
    Event times of one dyad given its latent path.

    The window is cut at the model's structural breakpoints and at the path's state
    changes. On each piece candidates come from a homogeneous process at the piece's
    upper bound and are kept with probability lambda(t) / bound.

    Returns:
        sorted array of event times inside the window
    """
    if window.is_empty:
        return np.zeros(0)
    spans = window.as_array()
    cuts = np.union1d(model.breakpoints(spans[0, 0], spans[-1, 1]), path.change_times[1:])
    a, b, _ = split_spans(spans, cuts)
    states = path.state_at(0.5 * (a + b))

    bounds = np.where(states == 1, upper_bounds(model, theta, x, 1, a, b), upper_bounds(model, theta, x, 0, a, b))
    if np.any(bounds < 0):
        raise InvalidParameters(f"{model.kind} intensity has a negative upper bound")
    counts = rng.poisson(bounds * (b - a))
    owner = np.repeat(np.arange(a.size), counts)
    if owner.size == 0:
        return np.zeros(0)
    candidates = rng.uniform(a[owner], b[owner])
    u = rng.random(owner.size)

    cand_states = states[owner]
    rates = np.empty(owner.size)
    for y in (0, 1):
        mask = cand_states == y
        if mask.any():
            rates[mask] = eval_lambda(model, theta, candidates[mask], x, y)
    keep = u * bounds[owner] < rates
    return np.unique(candidates[keep])


@dataclass
class SyntheticDataset:
    actors: Dict[int, Actor]
    windows: Dict[Dyad, ObservationWindow]
    paths: Dict[Dyad, LatentPath]
    streams: Dict[Dyad, EventStream]
    theta: Dict[str, float]
    seed: int
    activity: Optional[Dict[int, list]] = None
    model: Dict = field(default_factory=dict)

    def dataset(self):
        return Dataset(dict(self.actors), dict(self.streams), [])

    @property
    def n_events(self):
        return sum(s.n_events for s in self.streams.values())


def generate_dataset(spec, theta, actors, windows, seed, activity=None):
    """
    Simulate every dyad of a model.

    Each dyad draws from its own generator seeded by (seed, i, j), so results do not
    depend on the order dyads are visited in.

    Args:
        spec: ModelSpec
        theta: parameter values
        actors: {actor_id: Actor}; ids must be non-negative integers
        windows: {Dyad: ObservationWindow}
        seed: master seed
        activity: per-actor activity spans the windows were built from, kept for export
    """
    missing = [name for name in spec.param_names if name not in theta]
    if missing:
        raise ConfigError(f"Parameter values are missing for {missing}")
    try:
        theta = {name: float(theta[name]) for name in spec.param_names}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Parameter values must be numbers: {e}") from e
    paths, streams = {}, {}
    for dyad in sorted(windows):
        window = windows[dyad]
        if window.is_empty:
            continue
        rng = np.random.default_rng([int(seed), dyad.i, dyad.j])
        x = dyad_covariates(actors[dyad.i], actors[dyad.j], spec.bindings)
        path = sample_path(sparsity_for(spec.sparsity, theta, x), window, rng)
        times = simulate_events(spec.intensity, theta, x, path, window, rng)
        paths[dyad] = path
        streams[dyad] = EventStream(dyad, times, window)
    synthetic = SyntheticDataset(dict(actors), dict(windows), paths, streams, dict(theta), int(seed), activity,
                                 dict(spec.resolved))
    logger.info(f"Simulated {synthetic.n_events} events over {len(streams)} dyads (seed {seed})")
    return synthetic


def windows_from_activity(activity):
    """Dyad windows as the intersection of both actors' activity spans"""
    windows = {}
    for i, j in combinations(sorted(activity), 2):
        spans = intersect_spans(activity[i], activity[j])
        if spans:
            windows[Dyad(i, j)] = ObservationWindow(tuple(spans))
    return windows


def swallow_benchmark(seed, n_males=9, n_females=8):
    """
    Desk-scale analog of the colony study: 17 birds observed in eight three-hour
    sessions, session rates near 0.5 per hour, strong male pairings.

    Returns:
        SyntheticDataset
    """
    rng = np.random.default_rng(int(seed))
    sessions = [tuple(s) for s in SWALLOW_MODEL_CONFIG['sessions']]
    theta = {f'k{i + 1}': float(v) for i, v in enumerate(rng.uniform(0.4, 0.6, len(sessions)))}
    theta.update({'c_MM': 2.0, 'c_MF': 2.0, 'c_FF': 0.5, 's': 0.1, 'q': 0.05})

    sexes = ['M'] * n_males + ['F'] * n_females
    actors = {a: Actor(a, {'sex': sex}) for a, sex in enumerate(sexes)}
    activity = {a: list(sessions) for a in actors}
    spec = build_model_spec(SWALLOW_MODEL_CONFIG)
    return generate_dataset(spec, theta, actors, windows_from_activity(activity), seed, activity)


def write_dataset(synthetic: SyntheticDataset, directory):
    """
    Write a synthetic dataset in the ingestion formats plus the truth files.

    Files: encounters.csv, attributes.csv, activity.csv, truth_paths.csv,
    truth_theta.json. Events become zero-duration encounters, so re-ingesting with a
    positive merge gap collapses each run of events closer than the gap into its first
    event and cuts the run out of the window; use a zero gap to read the events back as
    simulated.
    """
    os.makedirs(directory, exist_ok=True)
    rows = [(d.i, d.j, t, t) for d in sorted(synthetic.streams) for t in synthetic.streams[d].times.tolist()]
    pd.DataFrame(rows, columns=ENCOUNTER_COLUMNS).to_csv(os.path.join(directory, 'encounters.csv'), index=False)

    attr_rows = [(a, key, value) for a in sorted(synthetic.actors)
                 for key, value in sorted(synthetic.actors[a].attributes.items())]
    pd.DataFrame(attr_rows, columns=ATTRIBUTE_COLUMNS).to_csv(os.path.join(directory, 'attributes.csv'), index=False)

    activity = synthetic.activity
    if activity is None:
        activity = {}
        for dyad, window in synthetic.windows.items():
            for actor_id in (dyad.i, dyad.j):
                activity.setdefault(actor_id, []).extend(window.spans)
        logger.warning("No actor activity recorded; writing the union of each actor's dyad windows")
    act_rows = [(a, s, e) for a in sorted(activity) for s, e in sorted(set(map(tuple, activity[a])))]
    pd.DataFrame(act_rows, columns=ACTIVITY_COLUMNS).to_csv(os.path.join(directory, 'activity.csv'), index=False)

    path_rows = [(d.i, d.j, s, e, state) for d in sorted(synthetic.paths) for s, e, state in synthetic.paths[d].pieces()]
    pd.DataFrame(path_rows, columns=['i', 'j', 't_start', 't_end', 'state']).to_csv(
        os.path.join(directory, 'truth_paths.csv'), index=False)

    with open(os.path.join(directory, 'truth_theta.json'), 'w', encoding='utf-8') as f:
        json.dump({'seed': synthetic.seed, 'theta': synthetic.theta}, f, indent=2, sort_keys=True)
    logger.info(f"Wrote synthetic dataset to {directory}")
