"""
Structured Poisson intensities.

Every model here is piecewise "constant plus a sum of cosines" in time:

    lambda_y(t) = (1 + m(t, x) y) (w(t, x) + a(t, x) y)

On each structural piece (school term, daytime block, observation session) the
intensity reduces to const + sum_l amp_l cos(freq_l t + phase_l), which integrates in
closed form. A model object only carries fixed constants; parameter values are
passed in as a mapping theta on every call.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Dict, Sequence

import numpy as np

from errors import ConfigError, DataError, InvalidParameters

logger = logging.getLogger(__name__)

WEEK_HOURS = 168.0
DEFAULT_FREQUENCIES = (2.0 * math.pi / 24.0, 2.0 * math.pi / 168.0, 2.0 * math.pi / 12.0)
SEX_PAIRS = ('FF', 'MF', 'MM')


def _covariate(x, key, n, default=0.0):
    """Covariate as a float array of length n (scalars broadcast)"""
    value = x.get(key, default) if x is not None else default
    return np.broadcast_to(np.asarray(value, dtype=float), (n,))


class IntensityModel(ABC):
    """Base class; subclasses define pieces and per-piece coefficients"""

    kind = 'base'

    @property
    @abstractmethod
    def param_names(self) -> Sequence[str]:
        ...

    @abstractmethod
    def breakpoints(self, lo, hi) -> np.ndarray:
        """Structural breakpoints strictly inside (lo, hi), sorted"""

    @abstractmethod
    def terms(self, theta, x, y, t):
        """
        Coefficients of the piece containing each t.

        Returns:
            const (n,), amps (n, L), freqs (L,), phases (L,)
        """


class MitIntensity(IntensityModel):
    """
    Dormitory proximity model: term and floor multipliers on a weekly cosine
    baseline, a floor-dependent friendship multiplier and a daytime adjustment.

    Amplitudes are reparameterised as k_l1 = k0 r_l / (1 + sum r), with r_l the
    sampled non-negative scales, so the baseline stays positive.
    """

    kind = 'mit'

    def __init__(self, term_starts, frequencies, daytime_hours=(8.0, 17.0), day_offset_hours=0.0):
        self.term_starts = np.sort(np.asarray(term_starts, dtype=float))
        if self.term_starts.size != 2:
            raise ConfigError("MIT model needs the start times of terms 2 and 3")
        self.frequencies = np.asarray(frequencies, dtype=float)
        if self.frequencies.shape != (3,) or np.any(self.frequencies < 0):
            raise ConfigError("MIT model needs three non-negative angular frequencies")
        self.daytime_hours = (float(daytime_hours[0]), float(daytime_hours[1]))
        if not 0.0 <= self.daytime_hours[0] < self.daytime_hours[1] <= 24.0:
            raise ConfigError(f"Invalid daytime hours {daytime_hours}")
        self.day_offset_hours = float(day_offset_hours)

    @property
    def param_names(self):
        return ('c0_t1', 'c0_t2', 'c0_t3', 'c1', 'c2_1', 'c2_2', 'c3', 'k0',
                'k1_1', 'k2_1', 'k3_1', 'k1_3', 'k2_3', 'k3_3')

    def daytime(self, t):
        hour = np.mod(np.asarray(t, dtype=float) + self.day_offset_hours, 24.0)
        return (hour >= self.daytime_hours[0]) & (hour < self.daytime_hours[1])

    def amplitudes(self, theta):
        r = np.array([theta['k1_1'], theta['k2_1'], theta['k3_1']], dtype=float)
        if np.any(r < 0) or theta['k0'] < 0:
            raise InvalidParameters("MIT baseline amplitudes must be non-negative")
        return theta['k0'] * r / (1.0 + r.sum())

    def breakpoints(self, lo, hi):
        points = [self.term_starts[(self.term_starts > lo) & (self.term_starts < hi)]]
        for hour in self.daytime_hours:
            first = math.floor((lo + self.day_offset_hours - hour) / 24.0)
            last = math.ceil((hi + self.day_offset_hours - hour) / 24.0)
            days = np.arange(first, last + 1)
            cuts = 24.0 * days + hour - self.day_offset_hours
            points.append(cuts[(cuts > lo) & (cuts < hi)])
        return np.unique(np.concatenate(points))

    def terms(self, theta, x, y, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = t.size
        c0 = np.array([theta.get('c0_t1', 1.0), theta['c0_t2'], theta['c0_t3']], dtype=float)
        term = np.searchsorted(self.term_starts, t, side='right')
        floor = _covariate(x, 'same_floor', n)
        scale = c0[term] * (1.0 + theta['c1'] * floor)
        m = np.where(floor > 0, theta['c2_2'], theta['c2_1'])
        mult = 1.0 + m * y
        day = self.daytime(t).astype(float)
        const = mult * scale * (theta['k0'] + theta['c3'] * day * y)
        amps = (mult * scale)[:, None] * self.amplitudes(theta)[None, :]
        phases = np.array([theta['k1_3'], theta['k2_3'], theta['k3_3']], dtype=float)
        return const, amps, self.frequencies, phases


class SwallowIntensity(IntensityModel):
    """Per-session baseline rates with a sex-pairing multiplier for connected dyads"""

    kind = 'swallow'

    def __init__(self, sessions):
        sessions = sorted((float(a), float(b)) for a, b in sessions)
        if not sessions:
            raise ConfigError("Swallow model needs at least one session")
        for (a0, b0), (a1, _) in zip(sessions, sessions[1:]):
            if a1 < b0:
                raise ConfigError("Swallow sessions overlap")
        self.sessions = np.asarray(sessions, dtype=float)

    @property
    def param_names(self):
        return tuple(f'k{i + 1}' for i in range(len(self.sessions))) + ('c_FF', 'c_MF', 'c_MM')

    def session_index(self, t):
        """Session index of each t, -1 outside every session; sessions are closed like windows"""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.sessions[:, 0], t, side='right') - 1
        safe = np.clip(idx, 0, len(self.sessions) - 1)
        inside = (idx >= 0) & (t <= self.sessions[safe, 1])
        return np.where(inside, idx, -1)

    def breakpoints(self, lo, hi):
        cuts = self.sessions.reshape(-1)
        return np.unique(cuts[(cuts > lo) & (cuts < hi)])

    def pair_multiplier(self, theta, x, n):
        pair = (x or {}).get('sex_pair')
        pairs = np.broadcast_to(np.asarray(pair, dtype=object), (n,))
        c = np.zeros(n)
        for name in SEX_PAIRS:
            c[pairs == name] = theta[f'c_{name}']
        return c

    def terms(self, theta, x, y, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = t.size
        k = np.array([theta[f'k{i + 1}'] for i in range(len(self.sessions))] + [0.0])
        w = k[self.session_index(t)]
        const = (1.0 + self.pair_multiplier(theta, x, n) * y) * w
        return const, np.zeros((n, 0)), np.zeros(0), np.zeros(0)


class PiecewiseIntensity(IntensityModel):
    """
    User-defined constant-plus-sinusoid family.

    Each piece gives w, m and a as a parameter name or a literal number. Cosine terms
    (amplitude and phase as names or numbers, fixed frequency) add to w inside every
    piece. With a period, pieces repeat with that period (t is folded before lookup).
    Outside every piece the intensity is zero.
    """

    kind = 'custom'

    def __init__(self, pieces, cosines=(), parameters=None, period=None):
        if not pieces:
            raise ConfigError("Custom intensity needs at least one piece")
        rows = sorted(pieces, key=lambda p: float(p['start']))
        self.starts = np.array([float(p['start']) for p in rows])
        self.ends = np.array([float(p['end']) for p in rows])
        if np.any(self.ends <= self.starts) or np.any(self.starts[1:] < self.ends[:-1]):
            raise ConfigError("Custom pieces must be non-empty and disjoint")
        self.coeffs = [{key: p.get(key, 0.0) for key in ('w', 'm', 'a')} for p in rows]
        self.cosines = [dict(c) for c in cosines]
        for c in self.cosines:
            if 'frequency' not in c:
                raise ConfigError("Each custom cosine term needs a fixed 'frequency'")
        self.period = float(period) if period else None
        if self.period is not None and self.ends[-1] - self.starts[0] > self.period:
            raise ConfigError("Periodic custom pieces must fit within one period")

        referenced = set()
        for coeff in self.coeffs:
            referenced.update(v for v in coeff.values() if isinstance(v, str))
        for c in self.cosines:
            referenced.update(v for k, v in c.items() if k in ('amplitude', 'phase') and isinstance(v, str))
        self._param_names = tuple(parameters) if parameters else tuple(sorted(referenced))
        unknown = referenced - set(self._param_names)
        if unknown:
            raise ConfigError(f"Custom intensity references undeclared parameter(s) {sorted(unknown)}")

    @property
    def param_names(self):
        return self._param_names

    @staticmethod
    def _value(theta, ref):
        return float(theta[ref]) if isinstance(ref, str) else float(ref)

    def _fold(self, t):
        return np.mod(t, self.period) if self.period else t

    def piece_index(self, t):
        u = self._fold(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.starts, u, side='right') - 1
        safe = np.clip(idx, 0, len(self.starts) - 1)
        return np.where((idx >= 0) & (u < self.ends[safe]), idx, -1)

    def breakpoints(self, lo, hi):
        cuts = np.concatenate([self.starts, self.ends])
        if self.period:
            first = math.floor(lo / self.period)
            last = math.ceil(hi / self.period)
            cuts = (cuts[None, :] + self.period * np.arange(first, last + 1)[:, None]).reshape(-1)
        return np.unique(cuts[(cuts > lo) & (cuts < hi)])

    def terms(self, theta, x, y, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = self.piece_index(t)
        table = np.array([[self._value(theta, c[key]) for key in ('w', 'm', 'a')] for c in self.coeffs]
                         + [[0.0, 0.0, 0.0]])
        w, m, a = table[idx].T
        inside = (idx >= 0).astype(float)
        mult = 1.0 + m * y
        const = mult * (w + a * y)
        amps = np.array([self._value(theta, c.get('amplitude', 0.0)) for c in self.cosines], dtype=float)
        freqs = np.array([float(c['frequency']) for c in self.cosines], dtype=float)
        phases = np.array([self._value(theta, c.get('phase', 0.0)) for c in self.cosines], dtype=float)
        return const, (mult * inside)[:, None] * amps[None, :], freqs, phases


def eval_lambda(model, theta, t, x, y, window=None):
    """
    Intensity at time(s) t for latent state y.

    Raises DataError when a window is given and t falls outside it.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if window is not None and not np.all(window.contains(t_arr)):
        raise DataError("Intensity requested outside the dyad's observation window")
    const, amps, freqs, phases = model.terms(theta, x, y, t_arr)
    value = const + (amps * np.cos(np.outer(t_arr, freqs) + phases)).sum(axis=-1)
    return float(value[0]) if np.ndim(t) == 0 else value


def split_spans(spans, cuts):
    """
    Split spans at cut points.

    Args:
        spans: (k, 2) array of sorted disjoint spans
        cuts: sorted cut points

    Returns:
        a, b, owner: segment endpoints and the index of the span each came from
    """
    spans = np.asarray(spans, dtype=float).reshape(-1, 2)
    if spans.size == 0:
        empty = np.zeros(0)
        return empty, empty, np.zeros(0, dtype=int)
    cuts = np.asarray(cuts, dtype=float)
    points = np.unique(np.concatenate([spans.reshape(-1), cuts[(cuts > spans[0, 0]) & (cuts < spans[-1, 1])]]))
    a, b = points[:-1], points[1:]
    mid = 0.5 * (a + b)
    owner = np.searchsorted(spans[:, 0], mid, side='right') - 1
    keep = (owner >= 0) & (mid < spans[np.clip(owner, 0, None), 1])
    return a[keep], b[keep], owner[keep]


def segment_integrals(model, theta, x, y, a, b, check_positive=True):
    """
    Exact integral of lambda_y over each segment [a_i, b_i].

    Every segment must lie inside one structural piece. Uses the product form
    sin(u) - sin(v) = 2 cos((u + v) / 2) sin((u - v) / 2) to avoid cancellation at
    large t.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return np.zeros(0)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    const, amps, freqs, phases = model.terms(theta, x, y, mid)
    if check_positive and np.any(const < 0):
        raise InvalidParameters(f"{model.kind} intensity has a negative rate")
    if check_positive and np.any(const - np.abs(amps).sum(axis=1) < -1e-12 * np.abs(const)):
        raise InvalidParameters(f"{model.kind} intensity is negative on part of the window")
    total = const * (b - a)
    if amps.size:
        f = freqs[None, :]
        with np.errstate(divide='ignore', invalid='ignore'):
            weight = np.where(f > 0, 2.0 * np.sin(f * half[:, None]) / np.where(f > 0, f, 1.0),
                              2.0 * half[:, None])
        total = total + (amps * np.cos(f * mid[:, None] + phases[None, :]) * weight).sum(axis=1)
    return total


def integrate_lambda(model, theta, window, x, y):
    """Exact integral of lambda_y over an observation window"""
    if window.is_empty:
        return 0.0
    spans = window.as_array()
    a, b, _ = split_spans(spans, model.breakpoints(spans[0, 0], spans[-1, 1]))
    return math.fsum(segment_integrals(model, theta, x, y, a, b))


def upper_bounds(model, theta, x, y, a, b):
    """Upper bound of lambda_y on each segment: const + sum of |amplitudes|"""
    mid = 0.5 * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float))
    const, amps, _, _ = model.terms(theta, x, y, mid)
    return const + np.abs(amps).sum(axis=1)


def weekly_histogram(times, bin_hours=1.0, offset_hours=0.0):
    """Fold event times onto the 168-hour week and count them per bin"""
    n_bins = int(round(WEEK_HOURS / bin_hours))
    if n_bins <= 0 or not math.isclose(n_bins * bin_hours, WEEK_HOURS):
        raise ConfigError(f"bin_hours={bin_hours} must divide the 168-hour week")
    folded = np.mod(np.asarray(times, dtype=float) + offset_hours, WEEK_HOURS)
    counts, _ = np.histogram(folded, bins=n_bins, range=(0.0, WEEK_HOURS))
    return counts


def fix_frequencies(binned_counts, bin_hours=None):
    """
    Three dominant weekly harmonics of a weekly activity histogram.

    Returns the angular frequencies 2 pi n / 168 of the three largest-magnitude
    non-constant Fourier coefficients, padded with the daily, weekly and half-day
    harmonics when fewer than three are nonzero.
    """
    counts = np.asarray(binned_counts, dtype=float)
    if bin_hours is None:
        bin_hours = WEEK_HOURS / max(counts.size, 1)
    if counts.size == 0 or not math.isclose(counts.size * bin_hours, WEEK_HOURS):
        raise ConfigError("Histogram must cover exactly one 168-hour week")
    if bin_hours > 1.0 + 1e-12:
        raise ConfigError(f"Histogram bins must be at most 1 hour, got {bin_hours}")

    mags = np.abs(np.fft.rfft(counts - counts.mean()))
    mags[0] = 0.0
    scale = max(np.abs(counts).sum(), 1.0)
    order = np.argsort(-mags, kind='stable')
    chosen = [2.0 * math.pi * n / WEEK_HOURS for n in order[:3] if mags[n] > 1e-9 * scale]
    for default in DEFAULT_FREQUENCIES:
        if len(chosen) >= 3:
            break
        if not any(math.isclose(default, c) for c in chosen):
            chosen.append(default)
    if len(chosen) < 3:
        logger.warning("Fewer than three distinct harmonics found; padding with defaults")
    return np.array(chosen[:3])


def build_intensity(config: Dict, frequencies=None):
    """
    Construct an intensity model from a resolved model config.

    Args:
        config: model config (kind plus fixed constants; times already in hours)
        frequencies: frequencies to use when config says 'auto'
    """
    kind = config.get('kind')
    if kind == 'mit':
        freqs = config.get('frequencies', 'auto')
        if isinstance(freqs, str):
            if frequencies is None:
                raise ConfigError("MIT frequencies are 'auto' but none were fixed from data")
            freqs = frequencies
        return MitIntensity(config['term_starts'], freqs, config.get('daytime_hours', (8.0, 17.0)),
                            config.get('day_offset_hours', 0.0))
    if kind == 'swallow':
        return SwallowIntensity(config['sessions'])
    if kind == 'custom':
        return PiecewiseIntensity(config.get('pieces', []), config.get('cosines', []),
                                  config.get('parameters'), config.get('period'))
    raise ConfigError(f"Unknown intensity kind '{kind}'")
