"""
Edge-probability estimates from posterior draws.

For each retained draw the latent path of every dyad is smoothed by forward-backward;
the estimate at time t is the average over draws of the interpolated smoothed
probability. Interval midpoints only depend on the event times, so the per-draw
probabilities are averaged at the midpoints once and interpolated afterwards.

Times outside a dyad's observation window are UNMONITORED, never 0.
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import ConfigError, DataError
from events import Dyad, dyad_covariates
from latentpath import DyadBatch, PathPosterior, dyad_geometry, interp_prob

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ('csv', 'json')


class Coverage(Enum):
    UNMONITORED = 'unmonitored'

    def __repr__(self):
        return 'UNMONITORED'


UNMONITORED = Coverage.UNMONITORED


@dataclass
class EdgeSeries:
    """Estimated P(edge at t) on a set of times; NaN where the dyad is unmonitored"""
    dyad: Dyad
    times: np.ndarray
    probs: np.ndarray

    @property
    def monitored(self):
        return ~np.isnan(self.probs)


@dataclass
class Snapshot:
    time: float
    probs: Dict[Dyad, float]
    monitored: Dict[int, bool]
    threshold: Optional[float] = None

    @property
    def edges(self):
        """Dyads with probability at or above the threshold, sorted"""
        if self.threshold is None:
            return []
        return sorted(d for d, p in self.probs.items() if p >= self.threshold)

    def rows(self):
        return [(d.i, d.j, self.probs[d]) for d in sorted(self.probs)]


class EdgeEstimator:
    """
    Posterior-averaged path probabilities of a set of dyads.

    Args:
        chain: posterior Chain
        dataset: Dataset the chain was fitted to
        spec: ModelSpec
        thin: use every thin-th retained draw (1 uses all of them)
        dyads: restrict to these dyads (default: all modeled dyads)
        threads: worker threads for the per-draw smoothing
    """

    def __init__(self, chain, dataset, spec, thin=1, dyads=None, threads=None, show_progress=False):
        if len(chain) == 0:
            raise DataError("Chain has no draws")
        self.chain = chain.thin(thin)
        self.dataset = dataset
        self.spec = spec
        self.dyads = sorted(dyads) if dyads is not None else dataset.dyads
        unknown = [d for d in self.dyads if d not in dataset.streams]
        if unknown:
            raise DataError(f"Dyad(s) not modeled in this dataset: {[str(d) for d in unknown[:5]]}")
        self.index = {d: k for k, d in enumerate(self.dyads)}
        self.threads = max(1, int(threads or 1))
        self.show_progress = show_progress
        self._posteriors: Optional[List[PathPosterior]] = None
        self._chunks = None

    @property
    def n_draws(self):
        return len(self.chain)

    def _batch(self):
        geometries = [dyad_geometry(self.dataset.streams[d], self.spec.intensity) for d in self.dyads]
        covariates = [dyad_covariates(self.dataset.actor(d.i), self.dataset.actor(d.j), self.spec.bindings)
                      for d in self.dyads]
        return DyadBatch(geometries, covariates)

    def per_draw(self, k):
        """Smoothed path posteriors of every dyad under draw k"""
        theta = self.chain.theta(k)
        if self._chunks is None:
            self._chunks = self._batch().chunks(self.threads)
        chunks = self._chunks
        if len(chunks) == 1:
            return chunks[0].smooth(self.spec.intensity, self.spec.sparsity, theta)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = pool.map(lambda c: c.smooth(self.spec.intensity, self.spec.sparsity, theta), chunks)
            return [post for part in parts for post in part]

    def posteriors(self):
        """Draw-averaged path posteriors, one per dyad"""
        if self._posteriors is not None:
            return self._posteriors
        if not self.dyads:
            self._posteriors = []
            return self._posteriors
        sums = None
        zero = None
        for k in tqdm(range(self.n_draws), desc='Smoothing', disable=None if self.show_progress else True, leave=False):
            posts = self.per_draw(k)
            if sums is None:
                sums = [np.zeros_like(p.probs) for p in posts]
                zero = [0.0 if p.zero_event_prob is not None else None for p in posts]
            for d, post in enumerate(posts):
                sums[d] += post.probs
                if post.zero_event_prob is not None:
                    zero[d] += post.zero_event_prob
        n = float(self.n_draws)
        averaged = [PathPosterior(post.midpoints, sums[d] / n, float('nan'),
                                  None if zero[d] is None else zero[d] / n)
                    for d, post in enumerate(posts)]
        self._posteriors = averaged
        logger.info(f"Smoothed {len(self.dyads)} dyad(s) under {self.n_draws} draw(s)")
        return averaged

    def posterior(self, dyad):
        return self.posteriors()[self.index[dyad]]

    def probability(self, dyad, t):
        """P(edge at t); UNMONITORED outside the dyad's window"""
        window = self.dataset.streams[dyad].window
        if not bool(window.contains(float(t))):
            return UNMONITORED
        return float(interp_prob(self.posterior(dyad), float(t)))

    def series(self, dyad, times):
        times = np.asarray(times, dtype=float)
        window = self.dataset.streams[dyad].window
        inside = np.asarray(window.contains(times), dtype=bool)
        probs = np.full(times.shape, np.nan)
        if inside.any():
            probs[inside] = interp_prob(self.posterior(dyad), times[inside])
        return EdgeSeries(dyad, times, probs)

    def mean_probability(self, dyad):
        """Average of the estimate over the observed time of the dyad's window"""
        window = self.dataset.streams[dyad].window
        return time_average(self.posterior(dyad), window.as_array())

    def snapshot(self, t, threshold=None):
        t = float(t)
        probs = {}
        for dyad in self.dyads:
            value = self.probability(dyad, t)
            if value is not UNMONITORED:
                probs[dyad] = value
        monitored = {actor_id: False for actor_id in sorted(self.dataset.actors)}
        for dyad in probs:
            monitored[dyad.i] = monitored[dyad.j] = True
        if not probs:
            logger.warning(f"No modeled dyad is observed at t={t}; the snapshot is empty")
        return Snapshot(t, probs, monitored, threshold)


def time_average(post: PathPosterior, spans):
    """
    Exact average of the interpolated probability over a union of spans.

    The interpolant is linear between midpoints and constant outside them, so the
    trapezoid rule on the merged breakpoints is exact.
    """
    spans = np.asarray(spans, dtype=float).reshape(-1, 2)
    measure = float(np.sum(spans[:, 1] - spans[:, 0]))
    if measure <= 0.0:
        return float('nan')
    if post.midpoints.size == 0:
        return float(post.zero_event_prob)
    pieces = []
    for a, b in spans:
        inner = post.midpoints[(post.midpoints > a) & (post.midpoints < b)]
        points = np.concatenate([[a], inner, [b]])
        values = np.interp(points, post.midpoints, post.probs)
        pieces.extend((0.5 * (values[:-1] + values[1:]) * np.diff(points)).tolist())
    return min(max(math.fsum(pieces) / measure, 0.0), 1.0)


def edge_probability(dyad, t, chain, dataset, spec, thin=1):
    """
    Posterior edge probability of one dyad at time t.

    Returns UNMONITORED when t falls outside the dyad's observation window.
    """
    return EdgeEstimator(chain, dataset, spec, thin=thin, dyads=[dyad]).probability(dyad, t)


def edge_series(dyad, times, chain, dataset, spec, thin=1):
    return EdgeEstimator(chain, dataset, spec, thin=thin, dyads=[dyad]).series(dyad, times)


def snapshot(t, chain, dataset, spec, threshold=None, thin=1):
    """Edge probabilities of all dyads observed at t, plus per-actor monitored flags"""
    return EdgeEstimator(chain, dataset, spec, thin=thin).snapshot(t, threshold)


def mean_edge_probability(dyad, chain, dataset, spec, thin=1):
    return EdgeEstimator(chain, dataset, spec, thin=thin, dyads=[dyad]).mean_probability(dyad)


def grid_times(window, step_hours):
    """Regular grid over the window's extent, restricted to observed times"""
    if step_hours <= 0:
        raise ConfigError(f"Grid step must be positive, got {step_hours}")
    if window.is_empty:
        return np.zeros(0)
    n = int(math.floor((window.end - window.start) / step_hours)) + 1
    times = window.start + step_hours * np.arange(n)
    return times[np.asarray(window.contains(times), dtype=bool)]


def write_edges_csv(snap: Snapshot, path):
    """Edge list i,j,prob of every observed dyad, sorted by (i, j)"""
    pd.DataFrame(snap.rows(), columns=['i', 'j', 'prob']).to_csv(path, index=False)


def read_edges_csv(path):
    """{Dyad: prob} from an edge list written by write_edges_csv"""
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read edge list {path}: {e}") from e
    if list(df.columns) != ['i', 'j', 'prob']:
        raise DataError(f"{path}: line 1: expected header 'i,j,prob'")
    return {Dyad(int(r.i), int(r.j)): float(r.prob) for r in df.itertuples(index=False)}


def write_series_json(series: List[EdgeSeries], path):
    """Time series per dyad; unmonitored times carry null"""
    records = []
    for item in sorted(series, key=lambda s: s.dyad):
        order = np.argsort(item.times, kind='stable')
        records.append({
            'dyad': [item.dyad.i, item.dyad.j],
            'times': item.times[order].tolist(),
            'probs': [None if math.isnan(p) else p for p in item.probs[order].tolist()],
        })
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(records, f)


def read_series_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            records = json.load(f)
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read series {path}: {e}") from e
    return [EdgeSeries(Dyad(*r['dyad']), np.asarray(r['times'], dtype=float),
                       np.array([np.nan if p is None else p for p in r['probs']], dtype=float))
            for r in records]


def write_mean_edges_csv(means: Dict[Dyad, float], path):
    rows = [(d.i, d.j, means[d]) for d in sorted(means)]
    pd.DataFrame(rows, columns=['i', 'j', 'mean_prob']).to_csv(path, index=False)


def export(result, path, fmt):
    """
    Write a snapshot (csv) or a list of edge series (json).

    Raises:
        ConfigError: unknown format or a result the format cannot hold
    """
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(f"Unknown export format '{fmt}'; expected one of {list(EXPORT_FORMATS)}")
    directory = os.path.dirname(str(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    if fmt == 'csv':
        if not isinstance(result, Snapshot):
            raise ConfigError("CSV export takes a snapshot")
        write_edges_csv(result, path)
    else:
        if isinstance(result, EdgeSeries):
            result = [result]
        write_series_json(list(result), path)
    logger.info(f"Exported {fmt} to {path}")


def write_snapshot_manifest(entries, path):
    """entries: list of {time, threshold, file, dyads, edges}, written sorted by time"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(sorted(entries, key=lambda e: e['time']), f, indent=2, sort_keys=True)
