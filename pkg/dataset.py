"""
Dataset ingestion and persistence.

Reads encounter, attribute and activity tables (CSV or Excel), applies the cleaning
rules from events.py and stores the result as a bundle directory that later
commands load back.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List

import numpy as np
import pandas as pd

from config import parse_epoch, resolve_spans
from errors import DataError
from events import (Actor, Dyad, EventStream, ObservationWindow, RawEncounter, build_window,
                    dyad_covariates, filter_low_confidence, normalize_spans, streams_by_dyad,
                    symmetrize_and_merge, to_event_stream)

logger = logging.getLogger(__name__)

ALLOWED_EXTENSIONS = {'csv', 'xlsx'}

ENCOUNTER_COLUMNS = ['source_id', 'target_id', 'start_hours', 'end_hours']
ATTRIBUTE_COLUMNS = ['actor_id', 'key', 'value']
ACTIVITY_COLUMNS = ['actor_id', 'start_hours', 'end_hours']


def allowed_file(filename):
    """Check if file extension is allowed"""
    return '.' in filename and filename.rsplit('.', 1)[1].lower() in ALLOWED_EXTENSIONS


def read_table(path, required, numeric=(), integer=(), as_text=()):
    """
    Read a tabular input file and validate its schema.

    Errors name the file and the 1-based line (the header is line 1).
    """
    if not allowed_file(str(path)):
        raise DataError(f"{path}: unsupported file type; expected one of {sorted(ALLOWED_EXTENSIONS)}")
    try:
        if str(path).lower().endswith('.xlsx'):
            df = pd.read_excel(path, dtype=object)
        else:
            df = pd.read_csv(path, dtype=object, encoding='utf-8', skipinitialspace=True)
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read table: {e}") from e

    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: line 1: missing column(s) {missing}")

    for column in list(numeric) + list(integer):
        if column not in df.columns:
            continue
        values = pd.to_numeric(df[column], errors='coerce')
        bad = values.isna() & df[column].notna() if column not in required else values.isna()
        if bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise DataError(f"{path}: line {line}: column '{column}' is not numeric")
        if column in integer:
            if not np.all(np.mod(values.dropna(), 1) == 0):
                line = int(np.flatnonzero((np.mod(values.fillna(0), 1) != 0).to_numpy())[0]) + 2
                raise DataError(f"{path}: line {line}: column '{column}' must be an integer")
        df[column] = values
    for column in as_text:
        if column in df.columns:
            df[column] = df[column].map(lambda v: None if pd.isna(v) else str(v).strip())
    return df


def read_encounters(path):
    """Directed encounter records; an optional same_floor_prob column is kept"""
    df = read_table(path, ENCOUNTER_COLUMNS, numeric=['start_hours', 'end_hours', 'same_floor_prob'],
                    integer=['source_id', 'target_id'])
    has_prob = 'same_floor_prob' in df.columns
    records = []
    for row in df.itertuples(index=False):
        prob = getattr(row, 'same_floor_prob') if has_prob else None
        records.append(RawEncounter(int(row.source_id), int(row.target_id), float(row.start_hours),
                                    float(row.end_hours),
                                    None if prob is None or (isinstance(prob, float) and math.isnan(prob)) else float(prob)))
    return records


def read_attributes(path):
    """Long-format actor attributes -> {actor_id: Actor}"""
    df = read_table(path, ATTRIBUTE_COLUMNS, integer=['actor_id'], as_text=['key', 'value'])
    attributes: Dict[int, Dict[str, object]] = {}
    for line, row in enumerate(df.itertuples(index=False), start=2):
        if row.key is None:
            raise DataError(f"{path}: line {line}: empty attribute key")
        attributes.setdefault(int(row.actor_id), {})[row.key] = row.value
    return {actor_id: Actor(actor_id, attrs) for actor_id, attrs in attributes.items()}


def read_activity(path):
    """Per-actor activity spans -> {actor_id: [(start, end), ...]}"""
    df = read_table(path, ACTIVITY_COLUMNS, numeric=['start_hours', 'end_hours'], integer=['actor_id'])
    spans: Dict[int, List] = {}
    for line, row in enumerate(df.itertuples(index=False), start=2):
        if not row.start_hours < row.end_hours:
            raise DataError(f"{path}: line {line}: activity span must have start < end")
        spans.setdefault(int(row.actor_id), []).append((float(row.start_hours), float(row.end_hours)))
    return {actor_id: normalize_spans(s) for actor_id, s in spans.items()}


@dataclass
class Dataset:
    """Cleaned data: actors and the event streams of all modeled dyads"""
    actors: Dict[int, Actor]
    streams: Dict[Dyad, EventStream]
    unmodeled: List[Dyad] = field(default_factory=list)

    @property
    def dyads(self):
        return sorted(self.streams)

    @property
    def n_events(self):
        return sum(stream.n_events for stream in self.streams.values())

    def covariates(self, bindings):
        """Covariate record per modeled dyad, in self.dyads order"""
        return [dyad_covariates(self.actor(d.i), self.actor(d.j), bindings) for d in self.dyads]

    def actor(self, actor_id):
        return self.actors.get(actor_id) or Actor(actor_id, {})

    def horizon(self):
        """Earliest window start and latest window end over modeled dyads"""
        windows = [s.window for s in self.streams.values() if not s.window.is_empty]
        if not windows:
            return None
        return min(w.start for w in windows), max(w.end for w in windows)

    def all_event_times(self):
        times = [s.times for s in self.streams.values()]
        return np.concatenate(times) if times else np.zeros(0)

    def summary(self):
        return {
            'actors': len(self.actors),
            'dyads': len(self.streams),
            'events': self.n_events,
            'unmodeled_dyads': len(self.unmodeled),
        }


def ingest(encounters, actors=None, activity=None, cleaning=None):
    """
    Apply the cleaning rules to raw records.

    Args:
        encounters: list of RawEncounter
        actors: {actor_id: Actor}; actors seen only in encounters get no attributes
        activity: {actor_id: spans}; actors without spans are active over the study
            horizon
        cleaning: cleaning config (gap threshold, floor-probability filter, study spans)

    Returns:
        Dataset
    """
    cleaning = cleaning or {}
    actors = dict(actors or {})
    activity = dict(activity or {})

    kept = filter_low_confidence(encounters, cleaning.get('floor_prob_threshold'))
    merged = symmetrize_and_merge(kept, cleaning.get('gap_threshold_hours', 0.0))
    by_dyad = streams_by_dyad(merged)

    epoch = parse_epoch(cleaning.get('epoch'))
    study = resolve_spans(cleaning.get('study_spans'), epoch)

    ids = set(actors) | set(activity)
    for rec in merged:
        ids.update((rec.dyad.i, rec.dyad.j))
    for actor_id in ids:
        actors.setdefault(actor_id, Actor(actor_id, {}))

    if study:
        horizon = normalize_spans(study)
    elif merged:
        horizon = [(min(r.start for r in merged), max(r.end for r in merged))]
        if horizon[0][0] == horizon[0][1]:
            horizon = [(horizon[0][0], horizon[0][0] + 1e-9)]
    elif activity:
        horizon = normalize_spans([span for spans in activity.values() for span in spans])
    else:
        horizon = []

    streams = {}
    unmodeled = []
    for i, j in combinations(sorted(ids), 2):
        dyad = Dyad(i, j)
        events = by_dyad.get(dyad, [])
        window = build_window(activity.get(i, horizon), activity.get(j, horizon), events,
                              study_spans=study or None)
        if window.is_empty:
            unmodeled.append(dyad)
            continue
        streams[dyad] = to_event_stream(events, window, dyad)

    if unmodeled:
        logger.warning(f"{len(unmodeled)} dyad(s) have no joint observation time and are not modeled")
    dataset = Dataset(actors, streams, unmodeled)
    logger.info(f"Ingested {dataset.summary()}")
    return dataset


def ingest_files(encounters_path, attributes_path=None, activity_path=None, cleaning=None):
    encounters = read_encounters(encounters_path)
    actors = read_attributes(attributes_path) if attributes_path else {}
    activity = read_activity(activity_path) if activity_path else {}
    return ingest(encounters, actors, activity, cleaning)


class BundleStore:
    """Saves and loads cleaned datasets as a directory of CSV files"""

    def __init__(self, directory):
        self.directory = directory

    def _path(self, name):
        return os.path.join(self.directory, name)

    def save(self, dataset: Dataset):
        os.makedirs(self.directory, exist_ok=True)
        actor_rows = [(a.id, key, value) for a in sorted(dataset.actors.values(), key=lambda a: a.id)
                      for key, value in sorted(a.attributes.items())]
        pd.DataFrame(actor_rows, columns=ATTRIBUTE_COLUMNS).to_csv(self._path('actors.csv'), index=False)
        pd.DataFrame(sorted(dataset.actors), columns=['actor_id']).to_csv(self._path('actor_ids.csv'), index=False)

        window_rows = [(d.i, d.j, a, b) for d in dataset.dyads for a, b in dataset.streams[d].window.spans]
        pd.DataFrame(window_rows, columns=['i', 'j', 'start', 'end']).to_csv(self._path('windows.csv'), index=False)

        event_rows = [(d.i, d.j, t) for d in dataset.dyads for t in dataset.streams[d].times.tolist()]
        pd.DataFrame(event_rows, columns=['i', 'j', 't']).to_csv(self._path('events.csv'), index=False)

        pd.DataFrame([(d.i, d.j) for d in dataset.unmodeled], columns=['i', 'j']).to_csv(
            self._path('unmodeled.csv'), index=False)

        with open(self._path('summary.json'), 'w', encoding='utf-8') as f:
            json.dump(dataset.summary(), f, indent=2, sort_keys=True)
        logger.info(f"Saved dataset bundle to {self.directory}")

    def load(self):
        try:
            ids = pd.read_csv(self._path('actor_ids.csv'))
            attrs = pd.read_csv(self._path('actors.csv'), dtype={'key': str, 'value': str})
            windows = pd.read_csv(self._path('windows.csv'), float_precision='round_trip')
            events = pd.read_csv(self._path('events.csv'), float_precision='round_trip')
            unmodeled = pd.read_csv(self._path('unmodeled.csv'))
        except (OSError, ValueError) as e:
            raise DataError(f"Cannot read dataset bundle {self.directory}: {e}") from e

        attributes: Dict[int, Dict[str, object]] = {int(a): {} for a in ids['actor_id']}
        for row in attrs.itertuples(index=False):
            value = None if pd.isna(row.value) else row.value
            attributes.setdefault(int(row.actor_id), {})[row.key] = value
        actors = {a: Actor(a, attrs_) for a, attrs_ in attributes.items()}

        spans: Dict[Dyad, List] = {}
        for row in windows.itertuples(index=False):
            spans.setdefault(Dyad(int(row.i), int(row.j)), []).append((float(row.start), float(row.end)))
        times: Dict[Dyad, List] = {}
        for row in events.itertuples(index=False):
            times.setdefault(Dyad(int(row.i), int(row.j)), []).append(float(row.t))

        streams = {}
        for dyad, dyad_spans in spans.items():
            window = ObservationWindow(tuple(dyad_spans))
            streams[dyad] = EventStream(dyad, np.asarray(times.get(dyad, []), dtype=float), window)
        orphans = set(times) - set(spans)
        if orphans:
            raise DataError(f"{self._path('events.csv')}: events for dyads without a window: {sorted(orphans)[:5]}")
        return Dataset(actors, streams, [Dyad(int(r.i), int(r.j)) for r in unmodeled.itertuples(index=False)])
