"""
Two-state continuous-time Markov chain for a latent edge.

State 1 means the dyad is connected. With sparsity s and rate q the generator is

    [[-s q,        s q      ],
     [(1 - s) q,  -(1 - s) q]]

whose stationary distribution is (1 - s, s). Chain time is wall-clock time; the
relation keeps evolving while sensors are off.
"""

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from errors import ConfigError, InvalidParameters

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CtmcParams:
    s: float
    q: float

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise InvalidParameters(f"Sparsity must lie in (0, 1), got {self.s}")
        if not self.q > 0.0:
            raise InvalidParameters(f"Transition rate must be positive, got {self.q}")

    def generator(self):
        s, q = self.s, self.q
        return np.array([[-s * q, s * q], [(1.0 - s) * q, -(1.0 - s) * q]])


def stationary(p: CtmcParams):
    return (1.0 - p.s, p.s)


def transition_matrix(p: CtmcParams, dt):
    """
    Transition probabilities over elapsed time dt (scalar or array).

    Returns an array of shape dt.shape + (2, 2); rows sum to one.
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("Elapsed time must be non-negative")
    gone = -np.expm1(-p.q * dt)
    p01 = p.s * gone
    p10 = (1.0 - p.s) * gone
    out = np.empty(dt.shape + (2, 2))
    out[..., 0, 1] = p01
    out[..., 0, 0] = 1.0 - p01
    out[..., 1, 0] = p10
    out[..., 1, 1] = 1.0 - p10
    return out


def log_transition_matrix(s, q, dt):
    """
    Log transition probabilities, vectorised over s, q (per dyad) and dt.

    Args:
        s, q: arrays broadcastable against dt's leading axes
        dt: elapsed times

    Returns:
        array of shape broadcast(s, q, dt).shape + (2, 2)
    """
    s, q, dt = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(q, dtype=float),
                                   np.asarray(dt, dtype=float))
    with np.errstate(divide='ignore'):
        log_gone = np.log(-np.expm1(-q * dt))
        log01 = np.log(s) + log_gone
        log10 = np.log1p(-s) + log_gone
        out = np.empty(dt.shape + (2, 2))
        out[..., 0, 1] = log01
        out[..., 0, 0] = np.log1p(-np.exp(log01))
        out[..., 1, 0] = log10
        out[..., 1, 1] = np.log1p(-np.exp(log10))
    return out


class SparsityModel:
    """
    Covariate-dependent sparsity and a shared transition rate.

    kind 'mit':      s = (1 + s1 same_floor)(1 + s2 same_year) s0
    kind 'constant': s independent of covariates

    The rate q is a single shared constant; q_for() is the place where a
    covariate-dependent rate would be introduced.
    """

    def __init__(self, kind='constant'):
        if kind not in ('mit', 'constant'):
            raise ConfigError(f"Unknown sparsity model '{kind}'")
        self.kind = kind

    @property
    def param_names(self):
        if self.kind == 'mit':
            return ('s0', 's1', 's2', 'q')
        return ('s', 'q')

    def s_for(self, theta: Mapping[str, float], x):
        """Sparsity for covariates x (scalars or arrays); may exceed one"""
        if self.kind == 'mit':
            floor = np.asarray((x or {}).get('same_floor', 0.0), dtype=float)
            year = np.asarray((x or {}).get('same_year', 0.0), dtype=float)
            return (1.0 + theta['s1'] * floor) * (1.0 + theta['s2'] * year) * theta['s0']
        return np.asarray(theta['s'], dtype=float)

    def q_for(self, theta: Mapping[str, float], x):
        return np.asarray(theta['q'], dtype=float)


def sparsity_for(model: SparsityModel, theta, x):
    """
    CTMC parameters of one dyad.

    Raises InvalidParameters when the covariate-adjusted sparsity leaves (0, 1);
    the posterior treats that as log-density -inf.
    """
    s = float(model.s_for(theta, x))
    q = float(model.q_for(theta, x))
    if s >= 1.0:
        raise InvalidParameters(f"Covariate-adjusted sparsity {s:.4g} is not below one")
    return CtmcParams(s, q)


@dataclass(frozen=True, eq=False)
class LatentPath:
    """Piecewise-constant 0/1 path: states[k] holds on [change_times[k], change_times[k+1])"""
    change_times: np.ndarray
    states: np.ndarray
    end: float

    @property
    def start(self):
        return float(self.change_times[0])

    def state_at(self, t):
        idx = np.searchsorted(self.change_times, np.asarray(t, dtype=float), side='right') - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]

    def occupancy(self):
        """Fraction of [start, end) spent in state 1"""
        bounds = np.append(self.change_times, self.end)
        durations = np.diff(bounds)
        total = durations.sum()
        return float(durations[self.states == 1].sum() / total) if total > 0 else float('nan')

    def pieces(self):
        """(start, end, state) triples"""
        bounds = np.append(self.change_times, self.end)
        return list(zip(bounds[:-1].tolist(), bounds[1:].tolist(), self.states.tolist()))


def sample_path(p: CtmcParams, window, rng: np.random.Generator):
    """
    Sample a stationary path over the window's wall-clock extent [start, end).

    Holding times are Exponential with rate s q in state 0 and (1 - s) q in state 1.
    """
    if window.is_empty:
        raise ValueError("Cannot sample a path over an empty window")
    start, end = window.start, window.end
    state = int(rng.random() < p.s)
    times, states = [start], [state]
    t = start
    rates = (p.s * p.q, (1.0 - p.s) * p.q)
    while True:
        t += rng.exponential(1.0 / rates[state])
        if t >= end:
            break
        state = 1 - state
        times.append(t)
        states.append(state)
    return LatentPath(np.asarray(times), np.asarray(states, dtype=int), float(end))
