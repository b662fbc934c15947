#!/usr/bin/env python3
"""
Tests for the thinning simulator and the synthetic benchmark datasets
"""

import copy
import json
import math
import os

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from config import SWALLOW_CLEANING_CONFIG, SWALLOW_MODEL_CONFIG
from ctmc import LatentPath
from dataset import ingest_files
from errors import ConfigError
from events import Actor, Dyad, ObservationWindow
from intensity import PiecewiseIntensity, SwallowIntensity, integrate_lambda
from models import build_model_spec
from netestimate import EdgeEstimator
from posterior import Chain, PosteriorTarget, sample_posterior
from simulate import generate_dataset, simulate_events, swallow_benchmark, windows_from_activity, write_dataset

SESSION = tuple(SWALLOW_MODEL_CONFIG['sessions'][0])
SWALLOW_THETA = {**{f'k{i}': 0.5 for i in range(1, 9)}, 'c_FF': 0.5, 'c_MF': 1.0, 'c_MM': 2.0}


def constant_path(state, window):
    return LatentPath(np.array([window.start]), np.array([state]), window.end)


def test_constant_rate_counts_are_poisson():
    model = PiecewiseIntensity([{'start': -1e6, 'end': 1e6, 'w': 'w'}])
    window = ObservationWindow(((0.0, 50.0),))
    rng = np.random.default_rng(0)
    counts = np.array([simulate_events(model, {'w': 2.0}, {}, constant_path(0, window), window, rng).size
                       for _ in range(2000)])
    # standard errors: 0.22 for the mean, about 3.2 for the variance
    assert counts.mean() == pytest.approx(100.0, abs=1.0)
    assert counts.var(ddof=1) == pytest.approx(100.0, abs=12.0)


def test_constant_rate_gaps_are_exponential():
    model = PiecewiseIntensity([{'start': -1e6, 'end': 1e6, 'w': 'w'}])
    window = ObservationWindow(((0.0, 500.0),))
    pvalues = []
    for seed in range(50):
        times = simulate_events(model, {'w': 2.0}, {}, constant_path(0, window), window, np.random.default_rng(seed))
        pvalues.append(stats.kstest(np.diff(times), 'expon', args=(0.0, 0.5)).pvalue)
    assert stats.combine_pvalues(pvalues, method='fisher').pvalue > 0.01
    assert stats.kstest(pvalues, 'uniform').pvalue > 0.01


def test_swallow_session_counts_follow_session_rate():
    model = SwallowIntensity(SWALLOW_MODEL_CONFIG['sessions'])
    window = ObservationWindow((SESSION,))
    rng = np.random.default_rng(2)
    for state, expected in ((0, 0.5 * 3.0), (1, 3 * 0.5 * 3.0)):
        counts = np.array([simulate_events(model, SWALLOW_THETA, {'sex_pair': 'MM'}, constant_path(state, window),
                                           window, rng).size for _ in range(4000)])
        assert counts.mean() == pytest.approx(expected, abs=4 * math.sqrt(expected / 4000))


def test_thinning_follows_a_varying_rate():
    model = PiecewiseIntensity([{'start': -1e6, 'end': 1e6, 'w': 'w'}],
                               cosines=[{'frequency': 2 * math.pi / 24.0, 'amplitude': 'amp', 'phase': 0.0}])
    theta = {'w': 1.0, 'amp': 0.8}
    window = ObservationWindow(((0.0, 48.0),))
    rng = np.random.default_rng(3)
    reps = 1000
    edges = np.arange(0.0, 49.0, 6.0)
    counts = np.zeros(len(edges) - 1)
    for _ in range(reps):
        times = simulate_events(model, theta, {}, constant_path(0, window), window, rng)
        counts += np.histogram(times, bins=edges)[0]
    for k in range(len(edges) - 1):
        expected = integrate_lambda(model, theta, ObservationWindow(((edges[k], edges[k + 1]),)), {}, 0)
        assert counts[k] / reps == pytest.approx(expected, abs=4 * math.sqrt(expected / reps))


def test_events_never_fall_in_window_holes():
    model = PiecewiseIntensity([{'start': -1e6, 'end': 1e6, 'w': 'w'}])
    window = ObservationWindow(((0.0, 10.0), (20.0, 30.0)))
    times = simulate_events(model, {'w': 3.0}, {}, constant_path(1, window), window, np.random.default_rng(4))
    assert times.size > 0
    assert np.all(np.asarray(window.contains(times)))
    assert np.all(np.diff(times) > 0)


def small_setup():
    spec = build_model_spec(SWALLOW_MODEL_CONFIG)
    theta = dict(SWALLOW_THETA, s=0.3, q=0.05)
    actors = {a: Actor(a, {'sex': 'M' if a < 3 else 'F'}) for a in range(5)}
    activity = {a: [tuple(s) for s in SWALLOW_MODEL_CONFIG['sessions']] for a in actors}
    return spec, theta, actors, windows_from_activity(activity), activity


def test_generation_is_deterministic():
    spec, theta, actors, windows, activity = small_setup()
    first = generate_dataset(spec, theta, actors, windows, 11, activity)
    second = generate_dataset(spec, theta, actors, windows, 11, activity)
    assert first.streams.keys() == second.streams.keys()
    for dyad in first.streams:
        np.testing.assert_array_equal(first.streams[dyad].times, second.streams[dyad].times)
        np.testing.assert_array_equal(first.paths[dyad].change_times, second.paths[dyad].change_times)


def test_generation_ignores_dyad_order():
    spec, theta, actors, windows, activity = small_setup()
    full = generate_dataset(spec, theta, actors, windows, 5)
    reversed_windows = dict(reversed(list(windows.items())))
    subset = {d: w for d, w in reversed_windows.items() if d.i != 0}
    partial = generate_dataset(spec, theta, actors, subset, 5)
    for dyad in subset:
        np.testing.assert_array_equal(full.streams[dyad].times, partial.streams[dyad].times)


def test_swallow_benchmark_shape():
    synthetic = swallow_benchmark(3)
    assert len(synthetic.actors) == 17
    assert len(synthetic.streams) == 17 * 16 // 2
    assert synthetic.theta['c_MM'] == 2.0 and synthetic.theta['s'] == 0.1
    assert all(0.4 <= synthetic.theta[f'k{i}'] <= 0.6 for i in range(1, 9))
    assert synthetic.n_events > 0


def test_written_dataset_ingests_back(tmp_path):
    spec, theta, actors, windows, activity = small_setup()
    synthetic = generate_dataset(spec, theta, actors, windows, 7, activity)
    write_dataset(synthetic, str(tmp_path))
    for name in ('encounters.csv', 'attributes.csv', 'activity.csv', 'truth_paths.csv', 'truth_theta.json'):
        assert os.path.exists(os.path.join(tmp_path, name))
    with open(os.path.join(tmp_path, 'truth_theta.json'), encoding='utf-8') as f:
        assert json.load(f) == {'seed': 7, 'theta': theta}

    dataset = ingest_files(os.path.join(tmp_path, 'encounters.csv'), os.path.join(tmp_path, 'attributes.csv'),
                           os.path.join(tmp_path, 'activity.csv'), {'gap_threshold_hours': 0.0})
    assert set(dataset.streams) == set(synthetic.streams)
    for dyad, stream in synthetic.streams.items():
        np.testing.assert_allclose(dataset.streams[dyad].times, stream.times, rtol=1e-14)
        assert dataset.streams[dyad].window.spans == stream.window.spans
    assert dataset.actors[0].attributes == {'sex': 'M'}

    truth = pd.read_csv(os.path.join(tmp_path, 'truth_paths.csv'))
    assert set(truth['state']) <= {0, 1}


def edge_probability_gap(synthetic, spec):
    """Mean P(edge) over truly connected minus truly unconnected window midpoints, under the true parameters"""
    names = list(spec.param_names)
    chain = Chain(names, np.array([[synthetic.theta[n] for n in names]]), np.zeros(1), seed=synthetic.seed,
                  burn_in=0, iterations=1)
    dataset = synthetic.dataset()
    estimator = EdgeEstimator(chain, dataset, spec)
    probs, truth = [], []
    for dyad in dataset.dyads:
        times = np.array([0.5 * (a + b) for a, b in synthetic.windows[dyad].spans])
        probs.extend(estimator.series(dyad, times).probs.tolist())
        truth.extend(synthetic.paths[dyad].state_at(times).tolist())
    probs, truth = np.array(probs), np.array(truth)
    assert truth.any() and not truth.all()
    return probs[truth == 1].mean() - probs[truth == 0].mean()


def test_true_parameters_discriminate_edges():
    synthetic = swallow_benchmark(1)
    assert synthetic.n_events >= 500
    assert edge_probability_gap(synthetic, build_model_spec(SWALLOW_MODEL_CONFIG)) >= 0.3


@pytest.mark.slow
def test_posterior_intervals_cover_true_parameters():
    # the preset's Exp(1000) prior on q sits far below the benchmark's q = 0.05
    config = copy.deepcopy(SWALLOW_MODEL_CONFIG)
    config['priors']['q'] = {'family': 'exponential', 'rate': 20.0}
    spec = build_model_spec(config)
    covered = dict.fromkeys(spec.param_names, 0)
    for replicate in range(20):
        synthetic = swallow_benchmark(100 + replicate)
        if synthetic.n_events >= 500:
            assert edge_probability_gap(synthetic, spec) >= 0.3
        target = PosteriorTarget(spec, synthetic.dataset())
        chain = sample_posterior(target, {'iterations': 10000, 'burn_in': 1000, 'show_progress': False},
                                 seed=replicate)
        assert len(chain) == 9000
        for name in spec.param_names:
            lower, upper = np.quantile(chain.column(name), [0.05, 0.95])
            covered[name] += int(lower <= synthetic.theta[name] <= upper)
    assert min(covered.values()) >= 14, covered


def test_generation_names_missing_parameters():
    spec, theta, actors, windows, activity = small_setup()
    with pytest.raises(ConfigError, match="'s'"):
        generate_dataset(spec, {k: v for k, v in theta.items() if k != 's'}, actors, windows, 1)
    with pytest.raises(ConfigError, match='numbers'):
        generate_dataset(spec, dict(theta, q='fast'), actors, windows, 1)


def test_written_dataset_merges_close_events_on_reingest(tmp_path):
    spec, theta, actors, windows, activity = small_setup()
    synthetic = generate_dataset(spec, dict(theta, k1=40.0, k2=40.0), actors, windows, 4, activity)
    write_dataset(synthetic, str(tmp_path))
    dataset = ingest_files(os.path.join(tmp_path, 'encounters.csv'), None, os.path.join(tmp_path, 'activity.csv'),
                           SWALLOW_CLEANING_CONFIG)
    gap = SWALLOW_CLEANING_CONFIG['gap_threshold_hours']
    lost = 0
    for dyad, stream in synthetic.streams.items():
        times = stream.times
        firsts = times[np.concatenate(([True], np.diff(times) > gap))] if times.size else times
        np.testing.assert_allclose(dataset.streams[dyad].times, firsts, rtol=1e-14)
        lost += times.size - firsts.size
    assert lost > 0
