"""
Actors, dyads, observation windows and cleaned event streams.

Implements the data-preparation rules: symmetrizing directed encounter logs,
merging encounters closer than a gap threshold, building each dyad's observation
window (joint activity minus event durations) and turning merged encounters into
instantaneous event times. All times are in hours.
"""

import logging
import math
from collections import defaultdict, namedtuple
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DataError

logger = logging.getLogger(__name__)

Span = Tuple[float, float]

MergedEncounter = namedtuple('MergedEncounter', ['dyad', 'start', 'end'])


@dataclass(frozen=True)
class Actor:
    id: int
    attributes: Dict[str, object] = field(default_factory=dict)

    def attribute(self, key):
        """Attribute value, or None when missing"""
        value = self.attributes.get(key)
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return None
        return value


@dataclass(frozen=True, order=True)
class Dyad:
    """Unordered actor pair stored with i < j"""
    i: int
    j: int

    def __post_init__(self):
        if not self.i < self.j:
            raise DataError(f"Dyad requires i < j, got ({self.i}, {self.j})")

    @classmethod
    def of(cls, a, b):
        if a == b:
            raise DataError(f"Actor {a} cannot form a dyad with itself")
        return cls(min(a, b), max(a, b))

    def __str__(self):
        return f"{self.i}-{self.j}"


@dataclass(frozen=True)
class RawEncounter:
    source: int
    target: int
    start: float
    end: float
    same_floor_prob: Optional[float] = None


@dataclass(frozen=True)
class ObservationWindow:
    """Sorted, disjoint half-open spans [a, b) during which events could be recorded"""
    spans: Tuple[Span, ...] = ()

    def __post_init__(self):
        spans = tuple((float(a), float(b)) for a, b in self.spans)
        for a, b in spans:
            if not a < b:
                raise DataError(f"Window span [{a}, {b}) is empty or reversed")
        for (_, b0), (a1, _) in zip(spans, spans[1:]):
            if a1 < b0:
                raise DataError(f"Window spans overlap or are unsorted near {a1}")
        object.__setattr__(self, 'spans', spans)

    @property
    def measure(self):
        return math.fsum(b - a for a, b in self.spans)

    @property
    def is_empty(self):
        return not self.spans

    @property
    def start(self):
        return self.spans[0][0] if self.spans else None

    @property
    def end(self):
        return self.spans[-1][1] if self.spans else None

    def as_array(self):
        return np.asarray(self.spans, dtype=float).reshape(-1, 2)

    def contains(self, t):
        """
        Closed-span membership, vectorised over t.

        An event is allowed to sit on a span boundary: its own duration is removed
        from the window right after its start.
        """
        arr = self.as_array()
        t = np.asarray(t, dtype=float)
        if arr.size == 0:
            return np.zeros(t.shape, dtype=bool)
        idx = np.searchsorted(arr[:, 0], t, side='right') - 1
        ok = idx >= 0
        safe = np.clip(idx, 0, len(arr) - 1)
        return ok & (t <= arr[safe, 1])


@dataclass(frozen=True, eq=False)
class EventStream:
    dyad: Optional[Dyad]
    times: np.ndarray
    window: ObservationWindow

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataError(f"Event times for dyad {self.dyad} are not strictly increasing")
        if times.size and not np.all(self.window.contains(times)):
            raise DataError(f"Event times for dyad {self.dyad} fall outside its window")
        times.setflags(write=False)
        object.__setattr__(self, 'times', times)

    @property
    def n_events(self):
        return int(self.times.size)


def normalize_spans(spans):
    """Sort spans and merge overlapping or abutting ones; drop empty spans"""
    cleaned = sorted((float(a), float(b)) for a, b in spans if b > a)
    out: List[List[float]] = []
    for a, b in cleaned:
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def intersect_spans(first, second):
    """Intersection of two span lists"""
    first, second = normalize_spans(first), normalize_spans(second)
    out = []
    i = j = 0
    while i < len(first) and j < len(second):
        a = max(first[i][0], second[j][0])
        b = min(first[i][1], second[j][1])
        if a < b:
            out.append((a, b))
        if first[i][1] < second[j][1]:
            i += 1
        else:
            j += 1
    return out


def subtract_spans(spans, removed):
    """Remove the (closed) intervals in removed from spans"""
    out = []
    cuts = normalize_spans(removed)
    for a, b in normalize_spans(spans):
        pieces = [(a, b)]
        for s, e in cuts:
            if e <= a or s >= b:
                continue
            next_pieces = []
            for pa, pb in pieces:
                if s > pa:
                    next_pieces.append((pa, min(s, pb)))
                if e < pb:
                    next_pieces.append((max(e, pa), pb))
            pieces = [(pa, pb) for pa, pb in next_pieces if pb > pa]
        out.extend(pieces)
    return normalize_spans(out)


def span_measure(spans):
    return math.fsum(b - a for a, b in spans)


def symmetrize_and_merge(encounters, gap_threshold):
    """
    Pool directed encounters per unordered pair and merge close or overlapping ones.

    Args:
        encounters: RawEncounter records, or MergedEncounter tuples from a previous pass
        gap_threshold: encounters whose gap (later start minus earlier end) is at most
            this many hours are merged into one spanning encounter

    Returns:
        list of MergedEncounter sorted by dyad, then start time
    """
    if gap_threshold is None or gap_threshold < 0:
        raise ConfigError(f"gap_threshold must be >= 0, got {gap_threshold}")

    by_dyad = defaultdict(list)
    rejected = 0
    for rec in encounters:
        if isinstance(rec, MergedEncounter):
            dyad, start, end = rec
        else:
            if rec.source == rec.target:
                logger.warning(f"Skipping self-encounter of actor {rec.source} at {rec.start}")
                rejected += 1
                continue
            dyad, start, end = Dyad.of(rec.source, rec.target), rec.start, rec.end
        if end < start:
            logger.warning(f"Rejecting encounter {dyad} [{start}, {end}]: negative duration")
            rejected += 1
            continue
        by_dyad[dyad].append((float(start), float(end)))

    merged = []
    for dyad in sorted(by_dyad):
        intervals = sorted(by_dyad[dyad])
        cur_start, cur_end = intervals[0]
        for start, end in intervals[1:]:
            if start - cur_end <= gap_threshold:
                cur_end = max(cur_end, end)
            else:
                merged.append(MergedEncounter(dyad, cur_start, cur_end))
                cur_start, cur_end = start, end
        merged.append(MergedEncounter(dyad, cur_start, cur_end))

    if rejected:
        logger.warning(f"Rejected {rejected} encounter record(s) during merging")
    return merged


def build_window(active_i, active_j, merged_events, study_spans=None):
    """
    Observation window of a dyad.

    Joint activity of both actors (optionally restricted to the study spans) minus
    the durations of the dyad's merged encounters. An empty result means the dyad
    is unmodeled; callers exclude it from the likelihood.
    """
    joint = intersect_spans(active_i, active_j)
    if study_spans:
        joint = intersect_spans(joint, study_spans)
    durations = [(e.start, e.end) if isinstance(e, MergedEncounter) else (e[0], e[1])
                 for e in merged_events]
    return ObservationWindow(tuple(subtract_spans(joint, durations)))


def to_event_stream(merged, window, dyad=None):
    """
    Event times from merged encounters.

    Each event is indexed by its encounter start. When the start itself is not
    observable (the encounter began before the window opened) the event moves to the
    first observed instant of the encounter; encounters with no observed instant are
    dropped. Identical times collapse to one event.
    """
    if dyad is None and merged:
        first = merged[0]
        dyad = first.dyad if isinstance(first, MergedEncounter) else None

    spans = window.as_array()
    times = []
    dropped = 0
    for rec in merged:
        start, end = (rec.start, rec.end) if isinstance(rec, MergedEncounter) else (rec[0], rec[1])
        if spans.size == 0:
            dropped += 1
            continue
        k = int(np.searchsorted(spans[:, 1], start, side='left'))
        if k >= len(spans):
            dropped += 1
            continue
        t = max(start, spans[k, 0])
        if t > end:
            dropped += 1
            continue
        times.append(t)

    if dropped:
        logger.debug(f"Dyad {dyad}: {dropped} encounter(s) outside the observation window")
    unique = np.unique(np.asarray(times, dtype=float))
    if unique.size < len(times):
        logger.debug(f"Dyad {dyad}: collapsed {len(times) - unique.size} duplicate event time(s)")
    return EventStream(dyad=dyad, times=unique, window=window)


def filter_low_confidence(encounters, floor_prob_threshold):
    """
    Drop encounters whose same-floor probability is at or below the threshold.

    Records without a probability are kept; a threshold of None disables the filter.
    """
    if floor_prob_threshold is None:
        return list(encounters)
    if not 0.0 <= floor_prob_threshold <= 1.0:
        raise ConfigError(f"floor_prob_threshold must lie in [0, 1], got {floor_prob_threshold}")

    kept = []
    for rec in encounters:
        prob = rec.same_floor_prob
        if prob is not None and not math.isnan(prob) and prob <= floor_prob_threshold:
            continue
        kept.append(rec)
    if len(kept) < len(encounters):
        logger.info(f"Dropped {len(encounters) - len(kept)} low-confidence encounter(s) "
                    f"(same-floor probability <= {floor_prob_threshold})")
    return kept


def _sex_code(value):
    if value is None:
        return None
    text = str(value).strip().upper()
    if text in ('M', 'MALE'):
        return 'M'
    if text in ('F', 'FEMALE'):
        return 'F'
    return None


def dyad_covariates(actor_i: Actor, actor_j: Actor, bindings: Dict[str, str]):
    """
    Dyadic covariates from actor attributes.

    Args:
        bindings: maps covariate roles ('floor', 'year', 'sex') to attribute names

    Returns:
        dict with same_floor, same_year (bool) and sex_pair ('FF', 'MF', 'MM' or None)
    """
    covariates = {'same_floor': False, 'same_year': False, 'sex_pair': None}
    for role, flag in (('floor', 'same_floor'), ('year', 'same_year')):
        key = bindings.get(role)
        if key is None:
            continue
        a, b = actor_i.attribute(key), actor_j.attribute(key)
        covariates[flag] = a is not None and b is not None and str(a) == str(b)

    key = bindings.get('sex')
    if key is not None:
        sexes = sorted(filter(None, (_sex_code(actor_i.attribute(key)), _sex_code(actor_j.attribute(key)))))
        if len(sexes) == 2:
            covariates['sex_pair'] = ''.join(sexes) if sexes != ['F', 'M'] else 'MF'
        else:
            logger.warning(f"Missing sex for dyad ({actor_i.id}, {actor_j.id}); no pairing multiplier applies")
    return covariates


def streams_by_dyad(merged: Sequence[MergedEncounter]):
    """Group merged encounters by dyad"""
    grouped = defaultdict(list)
    for rec in merged:
        grouped[rec.dyad].append(rec)
    return grouped
