#!/usr/bin/env python3
"""
Tests for the event-anchored HMM: partitioning, emissions and the log-space recursions.

The recursions are checked against exhaustive enumeration of every latent path.
"""

import itertools
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import logsumexp

from config import SWALLOW_MODEL_CONFIG
from ctmc import CtmcParams, SparsityModel, transition_matrix
from events import Dyad, EventStream, ObservationWindow
from intensity import MitIntensity, PiecewiseIntensity, SwallowIntensity, eval_lambda, segment_integrals
from latentpath import (DyadBatch, EmissionTable, PathPosterior, dyad_geometry, emissions, forward_backward,
                        forward_loglik, interp_prob, interval_segments, partition_events)


def constant_model():
    return PiecewiseIntensity([{'start': -1e6, 'end': 1e6, 'w': 'w', 'm': 'c'}])


def stream(times, spans, dyad=Dyad(0, 1)):
    return EventStream(dyad, np.asarray(times, dtype=float), ObservationWindow(tuple(spans)))


def enumerate_paths(log_emit, gaps, s, q):
    """log-likelihood and state-1 marginals by summing over all 2^N paths"""
    p = CtmcParams(s, q)
    n = log_emit.shape[0]
    mats = [transition_matrix(p, g) for g in gaps]
    log_weights = []
    paths = list(itertools.product((0, 1), repeat=n))
    for path in paths:
        lw = math.log(s if path[0] else 1 - s) + log_emit[0, path[0]]
        for l in range(1, n):
            lw += math.log(mats[l - 1][path[l - 1], path[l]]) + log_emit[l, path[l]]
        log_weights.append(lw)
    log_weights = np.array(log_weights)
    total = logsumexp(log_weights)
    states = np.array(paths)
    marginals = np.array([np.exp(logsumexp(log_weights[states[:, l] == 1]) - total) for l in range(n)])
    return total, marginals


def test_partition_single_event():
    part = partition_events(stream([4.0], [(0.0, 10.0)]))
    np.testing.assert_allclose(part.boundaries, [0.0, 10.0])
    np.testing.assert_allclose(part.midpoints, [5.0])


def test_partition_two_events():
    part = partition_events(stream([2.0, 4.0], [(0.0, 10.0)]))
    np.testing.assert_allclose(part.boundaries, [0.0, 3.0, 10.0])
    np.testing.assert_allclose(part.midpoints, [1.5, 6.5])


def test_partition_four_events():
    part = partition_events(stream([1.0, 2.0, 6.0, 9.0], [(0.0, 10.0)]))
    assert part.n_intervals == 4
    np.testing.assert_allclose(part.boundaries, [0.0, 1.5, 4.0, 7.5, 10.0])


def test_partition_without_events():
    part = partition_events(stream([], [(0.0, 10.0)]))
    assert part.n_events == 0 and part.n_intervals == 1


def test_emission_constant_rate():
    s = stream([4.0], [(0.0, 10.0)])
    emis = emissions(partition_events(s), s, constant_model(), {'w': 0.3, 'c': 2.0}, {})
    assert emis.log_emit[0, 0] == pytest.approx(math.log(0.3) - 3.0)
    assert emis.log_emit[0, 1] == pytest.approx(math.log(0.9) - 9.0)


def test_emission_swallow_male_pair():
    sessions = SWALLOW_MODEL_CONFIG['sessions']
    model = SwallowIntensity(sessions)
    theta = {**{f'k{i}': 0.5 for i in range(1, 9)}, 'c_FF': 0.5, 'c_MF': 1.0, 'c_MM': 2.0}
    a, b = sessions[0]
    s = stream([a + 1.0], [(a, b)])
    emis = emissions(partition_events(s), s, model, theta, {'sex_pair': 'MM'})
    assert emis.log_emit[0, 1] == pytest.approx(math.log(1.5) - 1.5 * 3.0)


def test_emission_skips_window_holes():
    model = PiecewiseIntensity([{'start': -1e6, 'end': 1e6, 'w': 'w', 'm': 'c'}],
                               cosines=[{'frequency': 0.7, 'amplitude': 'amp', 'phase': 0.3}])
    theta = {'w': 1.0, 'c': 0.5, 'amp': 0.4}
    spans = [(0.0, 2.5), (3.5, 10.0)]
    s = stream([1.0, 6.0], spans)
    emis = emissions(partition_events(s), s, model, theta, {})
    # interval 0 is [0, 3.5) with the hole [2.5, 3.5)
    integral = integrate.quad(lambda t: eval_lambda(model, theta, t, {}, 0), 0.0, 2.5, epsabs=0, epsrel=1e-12)[0]
    expected = math.log(eval_lambda(model, theta, 1.0, {}, 0)) - integral
    assert emis.log_emit[0, 0] == pytest.approx(expected, rel=1e-10)


def test_single_event_mixture():
    emis = EmissionTable(np.array([[-1.3, -0.4]]))
    part = partition_events(stream([4.0], [(0.0, 10.0)]))
    ctmc = CtmcParams(0.2, 0.5)
    expected = math.log(0.8 * math.exp(-1.3) + 0.2 * math.exp(-0.4))
    assert forward_loglik(emis, part, ctmc) == pytest.approx(expected, rel=1e-12)
    post = forward_backward(emis, part, ctmc)
    assert post.probs[0] == pytest.approx(0.2 * math.exp(-0.4) / math.exp(expected), rel=1e-12)


def test_exhaustive_path_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 11))
        times = np.sort(rng.uniform(0.0, 50.0, n))
        part = partition_events(stream(times, [(0.0, 50.0)]))
        log_emit = rng.normal(-2.0, 1.5, (n, 2))
        s, q = float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.01, 2.0))
        total, marginals = enumerate_paths(log_emit, part.gaps, s, q)
        emis = EmissionTable(log_emit)
        assert forward_loglik(emis, part, CtmcParams(s, q)) == pytest.approx(total, rel=1e-10, abs=1e-10)
        post = forward_backward(emis, part, CtmcParams(s, q))
        np.testing.assert_allclose(post.probs, marginals, rtol=1e-10, atol=1e-13)
        assert post.loglik == pytest.approx(total, rel=1e-10, abs=1e-10)


def test_uninformative_data_gives_prior_marginals():
    part = partition_events(stream([1.0, 3.0, 8.0], [(0.0, 10.0)]))
    emis = EmissionTable(np.full((3, 2), -1.7))
    post = forward_backward(emis, part, CtmcParams(0.15, 0.4))
    np.testing.assert_allclose(post.probs, 0.15, atol=1e-12)


def test_degenerate_chain_pinned_at_zero():
    log_emit = np.array([[-1.0, -5.0], [-2.0, -0.5], [-0.7, -3.0]])
    part = partition_events(stream([1.0, 3.0, 8.0], [(0.0, 10.0)]))
    value = forward_loglik(EmissionTable(log_emit), part, CtmcParams(1e-12, 1e-12))
    assert value == pytest.approx(log_emit[:, 0].sum(), abs=1e-9)


def test_zero_events_closed_form():
    model = constant_model()
    theta = {'w': 0.2, 'c': 1.5}
    s = stream([], [(0.0, 4.0), (6.0, 10.0)])
    geometry = dyad_geometry(s, model)
    batch = DyadBatch([geometry], [{}])
    sp = 0.3
    value = batch.logliks(model, SparsityModel('constant'), dict(theta, s=sp, q=0.1))[0]
    T = 8.0
    expected = math.log((1 - sp) * math.exp(-0.2 * T) + sp * math.exp(-2.5 * 0.2 * T))
    assert value == pytest.approx(expected, rel=1e-12)


def test_batch_matches_single_dyad_recursions():
    rng = np.random.default_rng(3)
    model = constant_model()
    sparsity = SparsityModel('constant')
    theta = {'w': 0.4, 'c': 1.2, 's': 0.25, 'q': 0.3}
    streams = []
    for k, n in enumerate([0, 1, 5, 12, 3]):
        times = np.sort(rng.uniform(0.0, 30.0, n))
        streams.append(stream(times, [(0.0, 30.0)], Dyad(0, k + 1)))
    batch = DyadBatch([dyad_geometry(s, model) for s in streams], [{}] * len(streams))
    values = batch.logliks(model, sparsity, theta)
    posts = batch.smooth(model, sparsity, theta)
    for d, s in enumerate(streams):
        part = partition_events(s)
        emis = emissions(part, s, model, theta, {})
        ctmc = CtmcParams(0.25, 0.3)
        assert values[d] == pytest.approx(forward_loglik(emis, part, ctmc), rel=1e-12)
        single = forward_backward(emis, part, ctmc)
        np.testing.assert_allclose(posts[d].probs, single.probs, rtol=1e-12, atol=1e-14)
    chunked = np.concatenate([c.logliks(model, sparsity, theta) for c in batch.chunks(3)])
    np.testing.assert_array_equal(chunked, values)


def test_interp_prob_rules():
    post = PathPosterior(np.array([1.0, 3.0, 6.0]), np.array([0.2, 0.6, 0.9]), 0.0)
    assert interp_prob(post, 3.0) == 0.6
    assert interp_prob(post, 2.0) == pytest.approx(0.4)
    assert interp_prob(post, 0.0) == 0.2
    assert interp_prob(post, 10.0) == 0.9
    empty = PathPosterior(np.zeros(0), np.zeros(0), 0.0, zero_event_prob=0.35)
    assert interp_prob(empty, 4.0) == 0.35


def test_stronger_edge_evidence_never_lowers_the_marginal():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(1, 15))
        part = partition_events(stream(np.sort(rng.uniform(0.0, 40.0, n)), [(0.0, 40.0)]))
        log_emit = rng.normal(-2.0, 2.0, (n, 2))
        ctmc = CtmcParams(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.01, 3.0)))
        before = forward_backward(EmissionTable(log_emit), part, ctmc).probs
        l = int(rng.integers(n))
        shifted = log_emit.copy()
        shifted[l, 1] += 25.0
        after = forward_backward(EmissionTable(shifted), part, ctmc).probs
        assert after[l] >= before[l] - 1e-12


def test_long_stream_with_extreme_emissions_stays_finite():
    rng = np.random.default_rng(21)
    n = 10000
    part = partition_events(stream(np.sort(rng.uniform(0.0, 5000.0, n)), [(0.0, 5000.0)]))
    log_emit = rng.normal(0.0, 300.0, (n, 2))
    ctmc = CtmcParams(0.01, 0.02)
    loglik = forward_loglik(EmissionTable(log_emit), part, ctmc)
    post = forward_backward(EmissionTable(log_emit), part, ctmc)
    assert math.isfinite(loglik)
    assert post.loglik == pytest.approx(loglik, rel=1e-10)
    assert np.all(np.isfinite(post.probs))
    assert np.all((post.probs >= 0.0) & (post.probs <= 1.0))
    # the edge state wins wherever its emission dominates by hundreds of nats
    strong = log_emit[:, 1] - log_emit[:, 0] > 500.0
    assert strong.any() and np.all(post.probs[strong] > 0.99)


def test_extra_breakpoints_leave_the_likelihood_unchanged():
    model = MitIntensity(term_starts=[30.0, 70.0], frequencies=[2 * math.pi / 24, 2 * math.pi / 168, math.pi / 6])
    theta = {'c0_t1': 1.0, 'c0_t2': 1.2, 'c0_t3': 0.8, 'c1': 0.5, 'c2_1': 1.0, 'c2_2': 2.0, 'c3': 0.3,
             'k0': 0.6, 'k1_1': 0.4, 'k2_1': 0.2, 'k3_1': 0.1, 'k1_3': 1.0, 'k2_3': 2.0, 'k3_3': 3.0}
    x = {'same_floor': True}
    rng = np.random.default_rng(5)
    times = np.sort(np.concatenate([rng.uniform(1.0, 44.0, 6), rng.uniform(48.0, 99.0, 6)]))
    s = stream(times, [(0.0, 45.0), (47.0, 100.0)])
    part = partition_events(s)
    ctmc = CtmcParams(0.2, 0.1)
    emis = emissions(part, s, model, theta, x)

    lo, hi = float(part.boundaries[0]), float(part.boundaries[-1])
    cuts = np.union1d(model.breakpoints(lo, hi), rng.uniform(lo, hi, 40))
    a, b, label = interval_segments(part, s.window, cuts)
    table = np.zeros((part.n_intervals, 2))
    for y in (0, 1):
        table[:, y] = (np.log(eval_lambda(model, theta, s.times, x, y))
                       - np.bincount(label, weights=segment_integrals(model, theta, x, y, a, b),
                                     minlength=part.n_intervals))
    np.testing.assert_allclose(table, emis.log_emit, rtol=1e-11, atol=1e-10)
    assert forward_loglik(EmissionTable(table), part, ctmc) == pytest.approx(
        forward_loglik(emis, part, ctmc), rel=1e-11)
