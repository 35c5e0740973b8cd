"""TSV impression logs, padded behavior batches and period slicing.

TSV schema (UTF-8, one impression per line, tab separated)::

    label user_id user_gender item_id item_category request_unix_time
    request_lat request_lon request_aoi behaviors

``behaviors`` is a ``|``-separated list of ``item_id,category,unix_time,lat,lon``
events (empty when the user has no history).
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .features import (
    DEFAULT_PERIOD_STARTS,
    ITEM_FIELDS,
    PAD_INDEX,
    PERIODS,
    SPATIAL_FIELDS,
    USER_FIELDS,
    SpatialFeature,
    TemporalFeature,
    day_of_week,
    geohash6_encode_many,
    hash_column,
    hour_of_day,
    period_table,
)

log = logging.getLogger(__name__)

COLUMNS = (
    "label",
    "user_id",
    "user_gender",
    "item_id",
    "item_category",
    "request_unix_time",
    "request_lat",
    "request_lon",
    "request_aoi",
    "behaviors",
)
MAX_MALFORMED_FRACTION = 0.01
T_CLAMP_HOURS = 168.0


@dataclass(frozen=True)
class BehaviorEvent:
    item_id: str
    category: str
    click_time: int
    lat: float
    lon: float

    @property
    def period(self):
        return TemporalFeature.from_unix(self.click_time).period_of_day


@dataclass(frozen=True)
class Sample:
    label: int
    user_id: str
    user_gender: str
    item_id: str
    item_category: str
    request_time: int
    request_lat: float
    request_lon: float
    request_aoi: str
    behaviors: tuple = ()

    @property
    def request_location(self):
        return SpatialFeature(geohash6_encode_many([self.request_lat], [self.request_lon])[0], self.request_aoi)

    @property
    def request_temporal(self):
        return TemporalFeature.from_unix(self.request_time)


class _Malformed(ValueError):
    pass


def _check_id(s, what):
    if not s or any(c in s for c in "\t|,\n"):
        raise _Malformed(f"bad {what} {s!r}")
    return s


def _parse_coord(lat_s, lon_s):
    lat, lon = float(lat_s), float(lon_s)
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise _Malformed(f"coordinate out of bounds ({lat}, {lon})")
    return lat, lon


def parse_line(line):
    cols = line.rstrip("\n").rstrip("\r").split("\t")
    if len(cols) != len(COLUMNS):
        raise _Malformed(f"expected {len(COLUMNS)} columns, got {len(cols)}")
    try:
        label = int(cols[0])
        t_r = int(cols[5])
        lat, lon = _parse_coord(cols[6], cols[7])
    except ValueError as exc:
        raise _Malformed(str(exc)) from None
    if label not in (0, 1):
        raise _Malformed(f"label must be 0 or 1, got {label}")
    events = []
    if cols[9]:
        for raw in cols[9].split("|"):
            parts = raw.split(",")
            if len(parts) != 5:
                raise _Malformed(f"behavior event needs 5 fields: {raw!r}")
            try:
                t = int(parts[2])
                elat, elon = _parse_coord(parts[3], parts[4])
            except ValueError as exc:
                raise _Malformed(str(exc)) from None
            if t > t_r:
                raise _Malformed("behavior click time after request time")
            events.append(BehaviorEvent(_check_id(parts[0], "item_id"), _check_id(parts[1], "category"), t, elat, elon))
    # total order (time first) so any permutation of the column parses identically
    events.sort(key=lambda e: (e.click_time, e.item_id, e.category, e.lat, e.lon))
    return Sample(
        label,
        _check_id(cols[1], "user_id"),
        _check_id(cols[2], "user_gender"),
        _check_id(cols[3], "item_id"),
        _check_id(cols[4], "item_category"),
        t_r,
        lat,
        lon,
        _check_id(cols[8], "aoi"),
        tuple(events),
    )


@dataclass
class ParseResult:
    samples: list
    n_lines: int = 0
    n_malformed: int = 0

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def parse_tsv(path, strict=False):
    """Read a TSV log.  Malformed lines are skipped and counted.

    More than 1% malformed lines raises SchemaError; with ``strict`` the first
    malformed line raises, naming its line number.
    """
    result = ParseResult([])
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            result.n_lines += 1
            try:
                result.samples.append(parse_line(line))
            except _Malformed as exc:
                if strict:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from None
                result.n_malformed += 1
    if result.n_lines and result.n_malformed / result.n_lines > MAX_MALFORMED_FRACTION:
        raise SchemaError(f"{path}: {result.n_malformed} of {result.n_lines} lines malformed")
    if result.n_malformed:
        log.warning("%s: skipped %d malformed lines", path, result.n_malformed)
    return result


def format_sample(s):
    beh = "|".join(f"{e.item_id},{e.category},{e.click_time},{e.lat:.6f},{e.lon:.6f}" for e in s.behaviors)
    return "\t".join(
        (
            str(s.label),
            s.user_id,
            s.user_gender,
            s.item_id,
            s.item_category,
            str(s.request_time),
            f"{s.request_lat:.6f}",
            f"{s.request_lon:.6f}",
            s.request_aoi,
            beh,
        )
    )


def write_tsv(samples, path):
    """Write the canonical TSV form atomically (temp file then rename)."""
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for s in samples:
                fh.write(format_sample(s))
                fh.write("\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


@dataclass
class PaddedBatch:
    """Hashed ids and padded behavior arrays for a set of samples.

    Behaviors are right-aligned: the most recent valid event sits in the last
    column, pads fill the left.
    """

    user_ids: np.ndarray  # [N, 2]
    item_ids: np.ndarray  # [N, 2]
    spatial_ids: np.ndarray  # [N, 2]
    temporal_ids: np.ndarray  # [N, 3]
    behavior_ids: np.ndarray  # [N, L, 2]
    mask: np.ndarray  # [N, L] bool
    time_intervals: np.ndarray  # [N, L] hours
    periods: np.ndarray  # [N, L], -1 on pads
    labels: np.ndarray  # [N]
    request_periods: np.ndarray = field(default=None)  # [N]

    def __len__(self):
        return self.labels.shape[0]

    @property
    def seq_len(self):
        return self.mask.shape[1]

    def take(self, index):
        index = np.asarray(index)
        kw = {}
        for name in self.__dataclass_fields__:
            arr = getattr(self, name)
            kw[name] = None if arr is None else arr[index]
        return PaddedBatch(**kw)

    def extend_padding(self, k):
        """Prepend ``k`` pad columns (same samples, longer sequence)."""
        n = len(self)

        def left(arr, fill):
            pad = np.full((n, k) + arr.shape[2:], fill, dtype=arr.dtype)
            return np.concatenate([pad, arr], axis=1)

        return PaddedBatch(
            self.user_ids,
            self.item_ids,
            self.spatial_ids,
            self.temporal_ids,
            left(self.behavior_ids, PAD_INDEX),
            left(self.mask, False),
            left(self.time_intervals, T_CLAMP_HOURS),
            left(self.periods, -1),
            self.labels,
            self.request_periods,
        )


def pad_and_truncate(
    samples, n_l, table_size=10007, period_starts=DEFAULT_PERIOD_STARTS, t_clamp=T_CLAMP_HOURS
):
    """Hash every field and pack the ``n_l`` most recent behaviors per sample.

    ``t_i = (t_r - t_j) / 3600`` hours, clamped to ``[0, t_clamp]``.
    """
    if n_l < 1:
        raise ValueError("n_l must be >= 1")
    samples = list(samples)
    n = len(samples)
    ptable = period_table(period_starts)

    def col(attr):
        return np.array([getattr(s, attr) for s in samples], dtype=object)

    user_cols = {"user_id": col("user_id"), "user_gender": col("user_gender")}
    item_cols = {"item_id": col("item_id"), "item_category": col("item_category")}
    user_ids = np.stack([hash_column(f, user_cols[f], table_size) for f in USER_FIELDS], axis=-1) if n else np.zeros((0, 2), np.int64)
    item_ids = np.stack([hash_column(f, item_cols[f], table_size) for f in ITEM_FIELDS], axis=-1) if n else np.zeros((0, 2), np.int64)

    t_r = np.array([s.request_time for s in samples], dtype=np.int64)
    lat = np.array([s.request_lat for s in samples], dtype=np.float64)
    lon = np.array([s.request_lon for s in samples], dtype=np.float64)
    geo = np.array(geohash6_encode_many(lat, lon), dtype=object)
    spatial = {"geohash6": geo, "aoi": col("request_aoi")}
    spatial_ids = np.stack([hash_column(f, spatial[f], table_size) for f in SPATIAL_FIELDS], axis=-1) if n else np.zeros((0, 2), np.int64)
    hours = hour_of_day(t_r)
    req_periods = ptable[hours] if n else np.zeros(0, np.int64)
    temporal_ids = (
        np.stack(
            [
                hash_column("hour", hours.astype(str), table_size),
                hash_column("period", np.array([PERIODS[p] for p in req_periods], dtype=object), table_size),
                hash_column("day_of_week", np.asarray(day_of_week(t_r)).astype(str), table_size),
            ],
            axis=-1,
        )
        if n
        else np.zeros((0, 3), np.int64)
    )

    mask = np.zeros((n, n_l), dtype=bool)
    beh_ids = np.full((n, n_l, 2), PAD_INDEX, dtype=np.int64)
    t_i = np.full((n, n_l), float(t_clamp), dtype=np.float64)
    periods = np.full((n, n_l), -1, dtype=np.int64)

    rows, cols, ev_items, ev_cats, ev_times = [], [], [], [], []
    for r, s in enumerate(samples):
        kept = s.behaviors[-n_l:]
        offset = n_l - len(kept)
        for c, e in enumerate(kept):
            rows.append(r)
            cols.append(offset + c)
            ev_items.append(e.item_id)
            ev_cats.append(e.category)
            ev_times.append(e.click_time)
    if rows:
        rows = np.array(rows)
        cols = np.array(cols)
        ev_times = np.array(ev_times, dtype=np.int64)
        mask[rows, cols] = True
        beh_ids[rows, cols, 0] = hash_column("item_id", np.array(ev_items, dtype=object), table_size)
        beh_ids[rows, cols, 1] = hash_column("item_category", np.array(ev_cats, dtype=object), table_size)
        dt = (t_r[rows] - ev_times) / 3600.0
        t_i[rows, cols] = np.clip(dt, 0.0, t_clamp)
        periods[rows, cols] = ptable[hour_of_day(ev_times)]

    labels = np.array([s.label for s in samples], dtype=np.float64)
    return PaddedBatch(user_ids, item_ids, spatial_ids, temporal_ids, beh_ids, mask, t_i, periods, labels, req_periods)


def slice_by_period(batch):
    """Five ``[N, L]`` masks (breakfast .. night snack) partitioning ``batch.mask``.

    The per-position FFN makes masking equivalent to gathering each period's
    events into its own sub-sequence.
    """
    return tuple(batch.mask & (batch.periods == k) for k in range(len(PERIODS)))
