"""
Latent edge paths as a hidden Markov model over event-anchored intervals.

A dyad's window is split into one interval per event, with boundaries at the
wall-clock midpoints between consecutive events. The latent state is held constant
within an interval and evolves as the two-state CTMC between interval midpoints.
Each interval emits its single event through the Poisson likelihood, which gives a
discrete HMM whose forward variables marginalise the latent path.

All recursions run in log space. The batched kernels take a leading dyad axis;
shorter dyads are padded with identity transitions and zero log-emissions, which
leaves their forward variables unchanged.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ctmc import CtmcParams, log_transition_matrix
from errors import NumericalError
from events import EventStream
from intensity import segment_integrals, split_spans

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Partition:
    boundaries: np.ndarray
    midpoints: np.ndarray

    @property
    def n_events(self):
        return int(self.midpoints.size)

    @property
    def n_intervals(self):
        """Rows of the emission table: one per event, or one for an event-free window"""
        return max(self.n_events, 1)

    @property
    def gaps(self):
        """Wall-clock time between consecutive midpoints"""
        return np.diff(self.midpoints)


@dataclass(frozen=True, eq=False)
class EmissionTable:
    """log_emit[l, y] = log lambda_y(t_l) - integral of lambda_y over interval l"""
    log_emit: np.ndarray


@dataclass(frozen=True, eq=False)
class PathPosterior:
    midpoints: np.ndarray
    probs: np.ndarray
    loglik: float
    zero_event_prob: Optional[float] = None


def partition_events(stream: EventStream):
    """
    Event-anchored partition of a dyad's window.

    Boundaries are the window start, the midpoints between consecutive events and the
    window end, all in wall-clock time. A stream without events gives the single
    interval [start, end) and no midpoints.
    """
    window = stream.window
    if window.is_empty:
        return Partition(np.zeros(2), np.zeros(0))
    times = stream.times
    inner = 0.5 * (times[:-1] + times[1:])
    boundaries = np.concatenate([[window.start], inner, [window.end]])
    if times.size == 0:
        return Partition(boundaries, np.zeros(0))
    midpoints = 0.5 * (boundaries[:-1] + boundaries[1:])
    return Partition(boundaries, midpoints)


def interval_segments(partition: Partition, window, breakpoints=()):
    """
    Observed pieces of each interval, split at the model's structural breakpoints.

    Returns:
        a, b, label: segment endpoints and the interval each segment belongs to
    """
    if window.is_empty:
        empty = np.zeros(0)
        return empty, empty, np.zeros(0, dtype=int)
    cuts = np.union1d(partition.boundaries[1:-1], np.asarray(breakpoints, dtype=float))
    a, b, _ = split_spans(window.as_array(), cuts)
    label = np.searchsorted(partition.boundaries[1:-1], 0.5 * (a + b), side='right')
    return a, b, label


def _log_rates(model, theta, x, y, t):
    if t.size == 0:
        return np.zeros(0)
    const, amps, freqs, phases = model.terms(theta, x, y, t)
    rate = const + (amps * np.cos(np.outer(t, freqs) + phases)).sum(axis=-1)
    with np.errstate(divide='ignore'):
        return np.where(rate > 0, np.log(np.where(rate > 0, rate, 1.0)), -np.inf)


def emissions(partition: Partition, stream: EventStream, model, theta, x):
    """
    Per-interval log-emissions for both latent states.

    The compensator only counts observed time: integrals skip window holes. An event
    at which the intensity is zero gives -inf for that state.
    """
    a, b, label = interval_segments(partition, stream.window,
                                    model.breakpoints(*_extent(partition)))
    table = np.zeros((partition.n_intervals, 2))
    for y in (0, 1):
        integrals = np.bincount(label, weights=segment_integrals(model, theta, x, y, a, b),
                                minlength=partition.n_intervals)
        table[:, y] = -integrals
        if partition.n_events:
            table[:, y] += _log_rates(model, theta, x, y, stream.times)
    return EmissionTable(table)


def _extent(partition):
    return float(partition.boundaries[0]), float(partition.boundaries[-1])


def forward_batch(log_emit, log_trans, log_pi):
    """
    Log-space forward recursion.

    Args:
        log_emit: (D, M, 2) log-emissions
        log_trans: (D, M - 1, 2, 2) log transition matrices between midpoints
        log_pi: (D, 2) log initial distribution

    Returns:
        log_alpha (D, M, 2), loglik (D,)
    """
    log_alpha = np.empty_like(log_emit)
    log_alpha[:, 0] = log_pi + log_emit[:, 0]
    for l in range(1, log_emit.shape[1]):
        prev = log_alpha[:, l - 1]
        trans = log_trans[:, l - 1]
        for y in (0, 1):
            log_alpha[:, l, y] = np.logaddexp(prev[:, 0] + trans[:, 0, y],
                                              prev[:, 1] + trans[:, 1, y]) + log_emit[:, l, y]
    loglik = np.logaddexp(log_alpha[:, -1, 0], log_alpha[:, -1, 1])
    return log_alpha, loglik


def backward_batch(log_emit, log_trans):
    """Log-space backward recursion; returns log_beta (D, M, 2)"""
    log_beta = np.zeros_like(log_emit)
    for l in range(log_emit.shape[1] - 2, -1, -1):
        nxt = log_emit[:, l + 1] + log_beta[:, l + 1]
        trans = log_trans[:, l]
        for y in (0, 1):
            log_beta[:, l, y] = np.logaddexp(trans[:, y, 0] + nxt[:, 0], trans[:, y, 1] + nxt[:, 1])
    return log_beta


def _log_pi(s):
    s = np.asarray(s, dtype=float)
    return np.stack([np.log1p(-s), np.log(s)], axis=-1)


def _single(emis: EmissionTable, partition: Partition, ctmc: CtmcParams):
    log_emit = emis.log_emit[None]
    log_trans = log_transition_matrix(ctmc.s, ctmc.q, partition.gaps)[None]
    log_pi = _log_pi(ctmc.s)[None]
    return log_emit, log_trans, log_pi


def forward_loglik(emis: EmissionTable, partition: Partition, ctmc: CtmcParams):
    """log p(event times | theta) for one dyad"""
    log_emit, log_trans, log_pi = _single(emis, partition, ctmc)
    _, loglik = forward_batch(log_emit, log_trans, log_pi)
    return float(loglik[0])


def _posterior_from(log_alpha, log_beta, loglik):
    with np.errstate(invalid='ignore'):
        log_gamma = log_alpha + log_beta - loglik[:, None, None]
    return np.clip(np.exp(log_gamma[..., 1]), 0.0, 1.0)


def forward_backward(emis: EmissionTable, partition: Partition, ctmc: CtmcParams):
    """Smoothed P(y(t*_l) = 1 | events, theta) at each interval midpoint"""
    log_emit, log_trans, log_pi = _single(emis, partition, ctmc)
    log_alpha, loglik = forward_batch(log_emit, log_trans, log_pi)
    if not np.isfinite(loglik[0]):
        raise NumericalError("Dyad likelihood is zero under these parameters; cannot smooth")
    log_beta = backward_batch(log_emit, log_trans)
    probs = _posterior_from(log_alpha, log_beta, loglik)[0]
    if partition.n_events == 0:
        return PathPosterior(partition.midpoints, np.zeros(0), float(loglik[0]), float(probs[0]))
    return PathPosterior(partition.midpoints, probs, float(loglik[0]))


def interp_prob(post: PathPosterior, t):
    """
    Edge probability at time(s) t by linear interpolation between midpoints.

    Constant beyond the first and last midpoint; an event-free dyad returns its
    zero-event posterior everywhere.
    """
    t_arr = np.asarray(t, dtype=float)
    if post.midpoints.size == 0:
        if post.zero_event_prob is None:
            raise ValueError("Empty path posterior without a zero-event probability")
        value = np.full(t_arr.shape, post.zero_event_prob)
    else:
        value = np.interp(t_arr, post.midpoints, post.probs)
    value = np.clip(value, 0.0, 1.0)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True, eq=False)
class DyadGeometry:
    """Parameter-free layout of one dyad: partition plus integration segments"""
    stream: EventStream
    partition: Partition
    seg_a: np.ndarray
    seg_b: np.ndarray
    seg_label: np.ndarray


def dyad_geometry(stream: EventStream, model):
    partition = partition_events(stream)
    a, b, label = interval_segments(partition, stream.window, model.breakpoints(*_extent(partition)))
    return DyadGeometry(stream, partition, a, b, label)


def _stack_covariates(covariates, index):
    keys = sorted({key for x in covariates for key in x})
    out = {}
    for key in keys:
        if key == 'sex_pair':
            column = np.array([x.get(key) for x in covariates], dtype=object)
        else:
            column = np.array([float(x.get(key, 0.0)) for x in covariates])
        out[key] = column[index]
    return out


class DyadBatch:
    """
    Many dyads packed for vectorised likelihood evaluation.

    Segments and events of all dyads are concatenated once; each evaluation is a few
    array operations plus one sweep of the forward recursion over the longest dyad.
    """

    def __init__(self, geometries: Sequence[DyadGeometry], covariates: Sequence[dict]):
        if len(geometries) != len(covariates):
            raise ValueError("One covariate record per dyad is required")
        self.geometries = list(geometries)
        self.covariates = [dict(x) for x in covariates]
        self.n_dyads = len(self.geometries)
        lengths = np.array([g.partition.n_intervals for g in self.geometries], dtype=int)
        self.lengths = lengths
        self.max_len = int(lengths.max()) if self.n_dyads else 1
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int) if self.n_dyads else np.zeros(0, int)

        seg_dyad = [np.full(g.seg_a.size, d) for d, g in enumerate(self.geometries)]
        self.seg_a = np.concatenate([g.seg_a for g in self.geometries] or [np.zeros(0)])
        self.seg_b = np.concatenate([g.seg_b for g in self.geometries] or [np.zeros(0)])
        self.seg_label = np.concatenate([g.seg_label + offsets[d] for d, g in enumerate(self.geometries)]
                                        or [np.zeros(0, int)]).astype(int)
        seg_dyad = np.concatenate(seg_dyad or [np.zeros(0, int)]).astype(int)

        ev_dyad = [np.full(g.stream.n_events, d) for d, g in enumerate(self.geometries)]
        self.event_times = np.concatenate([g.stream.times for g in self.geometries] or [np.zeros(0)])
        self.event_label = np.concatenate([np.arange(g.stream.n_events) + offsets[d]
                                           for d, g in enumerate(self.geometries)] or [np.zeros(0, int)]).astype(int)
        ev_dyad = np.concatenate(ev_dyad or [np.zeros(0, int)]).astype(int)

        self.seg_x = _stack_covariates(self.covariates, seg_dyad)
        self.event_x = _stack_covariates(self.covariates, ev_dyad)
        self.dyad_x = _stack_covariates(self.covariates, np.arange(self.n_dyads))

        # flat interval index -> (dyad, position) in the padded table
        self.flat_dyad = np.repeat(np.arange(self.n_dyads), lengths)
        self.flat_pos = np.arange(int(lengths.sum())) - np.repeat(offsets, lengths)

        gaps = np.zeros((self.n_dyads, max(self.max_len - 1, 0)))
        self.gap_mask = np.zeros_like(gaps, dtype=bool)
        for d, g in enumerate(self.geometries):
            n = g.partition.gaps.size
            gaps[d, :n] = g.partition.gaps
            self.gap_mask[d, :n] = True
        self.gaps = gaps

    def chunks(self, n_chunks):
        """Split into at most n_chunks contiguous sub-batches"""
        n_chunks = max(1, min(int(n_chunks), self.n_dyads))
        bounds = np.linspace(0, self.n_dyads, n_chunks + 1).astype(int)
        return [DyadBatch(self.geometries[lo:hi], self.covariates[lo:hi])
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def log_emissions(self, model, theta):
        """Padded (D, M, 2) log-emission table"""
        total = int(self.lengths.sum())
        table = np.zeros((self.n_dyads, self.max_len, 2))
        for y in (0, 1):
            integrals = np.bincount(self.seg_label,
                                    weights=segment_integrals(model, theta, self.seg_x, y, self.seg_a, self.seg_b),
                                    minlength=total)
            flat = -integrals
            if self.event_times.size:
                flat[self.event_label] += _log_rates(model, theta, self.event_x, y, self.event_times)
            table[self.flat_dyad, self.flat_pos, y] = flat
        return table

    def log_transitions(self, s, q):
        """Padded (D, M - 1, 2, 2) log transitions; padding is the identity"""
        log_trans = log_transition_matrix(s[:, None], q[:, None], self.gaps)
        identity = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
        log_trans[~self.gap_mask] = identity
        return log_trans

    def ctmc_arrays(self, sparsity, theta):
        s = np.broadcast_to(np.asarray(sparsity.s_for(theta, self.dyad_x), dtype=float), (self.n_dyads,))
        q = np.broadcast_to(np.asarray(sparsity.q_for(theta, self.dyad_x), dtype=float), (self.n_dyads,))
        return np.array(s), np.array(q)

    def logliks(self, model, sparsity, theta):
        """Per-dyad log p(events | theta); InvalidParameters propagates"""
        if self.n_dyads == 0:
            return np.zeros(0)
        s, q = self.ctmc_arrays(sparsity, theta)
        if np.any(s >= 1.0) or np.any(s <= 0.0) or np.any(q <= 0.0):
            return np.full(self.n_dyads, -np.inf)
        _, loglik = forward_batch(self.log_emissions(model, theta), self.log_transitions(s, q), _log_pi(s))
        return loglik

    def smooth(self, model, sparsity, theta):
        """
        Forward-backward for every dyad.

        Returns:
            list of PathPosterior, one per dyad
        """
        s, q = self.ctmc_arrays(sparsity, theta)
        log_emit = self.log_emissions(model, theta)
        log_trans = self.log_transitions(s, q)
        log_alpha, loglik = forward_batch(log_emit, log_trans, _log_pi(s))
        if not np.all(np.isfinite(loglik)):
            raise NumericalError("Some dyad likelihoods are zero under these parameters; cannot smooth")
        probs = _posterior_from(log_alpha, backward_batch(log_emit, log_trans), loglik)
        out = []
        for d, g in enumerate(self.geometries):
            n = g.partition.n_events
            if n == 0:
                out.append(PathPosterior(g.partition.midpoints, np.zeros(0), float(loglik[d]), float(probs[d, 0])))
            else:
                out.append(PathPosterior(g.partition.midpoints, probs[d, :n].copy(), float(loglik[d])))
        return out
