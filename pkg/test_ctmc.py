#!/usr/bin/env python3
"""
Tests for the two-state CTMC
"""

import numpy as np
import pytest
from scipy.linalg import expm

from ctmc import (CtmcParams, SparsityModel, log_transition_matrix, sample_path, sparsity_for,
                  stationary, transition_matrix)
from errors import InvalidParameters
from events import ObservationWindow


def test_identity_at_zero_elapsed_time():
    np.testing.assert_allclose(transition_matrix(CtmcParams(0.3, 2.0), 0.0), np.eye(2), atol=0)


def test_stationary_limit():
    p = CtmcParams(0.3, 0.7)
    np.testing.assert_allclose(transition_matrix(p, 1000.0), [[0.7, 0.3], [0.7, 0.3]], atol=1e-15)


def test_known_entry():
    assert transition_matrix(CtmcParams(0.2, 0.1), 5.0)[0, 1] == pytest.approx(0.2 * (1 - np.exp(-0.5)), abs=1e-15)
    assert transition_matrix(CtmcParams(0.2, 0.1), 5.0)[0, 1] == pytest.approx(0.078694, abs=1e-6)


def test_matches_matrix_exponential_and_chapman_kolmogorov():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = CtmcParams(float(rng.uniform(0.01, 0.99)), float(rng.uniform(0.01, 3.0)))
        t1, t2 = rng.uniform(0.0, 5.0, 2)
        np.testing.assert_allclose(transition_matrix(p, t1), expm(p.generator() * t1), atol=1e-12)
        np.testing.assert_allclose(transition_matrix(p, t1) @ transition_matrix(p, t2),
                                   transition_matrix(p, t1 + t2), atol=1e-12)


def test_stationary_distribution():
    assert stationary(CtmcParams(0.5, 1.0)) == (0.5, 0.5)
    assert stationary(CtmcParams(0.02, 1.0)) == pytest.approx((0.98, 0.02))
    p = CtmcParams(0.35, 0.4)
    pi = np.array(stationary(p))
    for dt in (0.1, 3.0, 40.0):
        np.testing.assert_allclose(pi @ transition_matrix(p, dt), pi, atol=1e-15)


def test_log_transition_matrix_is_vectorised():
    s = np.array([0.1, 0.6])
    q = np.array([1.0, 0.2])
    dt = np.array([[0.5, 2.0, 0.0], [1.0, 0.3, 4.0]])
    out = log_transition_matrix(s[:, None], q[:, None], dt)
    assert out.shape == (2, 3, 2, 2)
    for d in range(2):
        for k in range(3):
            np.testing.assert_allclose(np.exp(out[d, k]), transition_matrix(CtmcParams(s[d], q[d]), dt[d, k]),
                                       atol=1e-15)


def test_invalid_parameters():
    with pytest.raises(InvalidParameters):
        CtmcParams(1.0, 1.0)
    with pytest.raises(InvalidParameters):
        CtmcParams(0.5, 0.0)


def test_mit_sparsity():
    model = SparsityModel('mit')
    theta = {'s0': 0.02, 's1': 1.0, 's2': 0.5, 'q': 0.1}
    assert sparsity_for(model, theta, {'same_floor': True, 'same_year': True}).s == pytest.approx(0.06)
    assert sparsity_for(model, theta, {'same_floor': False, 'same_year': False}).s == pytest.approx(0.02)
    with pytest.raises(InvalidParameters):
        sparsity_for(model, dict(theta, s0=0.6), {'same_floor': True, 'same_year': True})


def test_constant_sparsity_ignores_covariates():
    model = SparsityModel('constant')
    theta = {'s': 0.1, 'q': 0.05}
    assert sparsity_for(model, theta, {'sex_pair': 'MM'}) == sparsity_for(model, theta, {'sex_pair': 'FF'})


def test_path_occupancy_converges_to_sparsity():
    rng = np.random.default_rng(1)
    p = CtmcParams(0.5, 5.0)
    window = ObservationWindow(((0.0, 100000.0),))
    path = sample_path(p, window, rng)
    # about 2.5e5 holding periods; the occupancy standard error is near 1e-3
    assert path.occupancy() == pytest.approx(0.5, abs=0.01)


def test_slow_chain_stays_constant():
    rng = np.random.default_rng(2)
    p = CtmcParams(0.3, 1e-10)
    window = ObservationWindow(((0.0, 100.0),))
    for _ in range(50):
        assert len(sample_path(p, window, rng).states) == 1


def test_path_transitions_match_transition_matrix():
    rng = np.random.default_rng(3)
    p = CtmcParams(0.3, 0.8)
    dt = 0.7
    window = ObservationWindow(((0.0, 2.0),))
    n = 20000
    starts = np.empty(n, dtype=int)
    ends = np.empty(n, dtype=int)
    for k in range(n):
        path = sample_path(p, window, rng)
        starts[k] = path.state_at(0.5)
        ends[k] = path.state_at(0.5 + dt)
    expected = transition_matrix(p, dt)
    for y in (0, 1):
        mask = starts == y
        freq = ends[mask].mean()
        se = np.sqrt(expected[y, 1] * (1 - expected[y, 1]) / mask.sum())
        assert abs(freq - expected[y, 1]) < 3.5 * se
