"""Geohash, period-of-day bucketing, field-salted hashing and embedding lookup."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, RangeError
from .tensor import concat, gather_rows

GEOHASH_ALPHABET = kernels.GEOHASH_ALPHABET
PERIODS = ("breakfast", "lunch", "afternoon_tea", "dinner", "night_snack")
DEFAULT_PERIOD_STARTS = (5, 10, 14, 17, 21)
PAD_INDEX = 0

USER_FIELDS = ("user_id", "user_gender")
ITEM_FIELDS = ("item_id", "item_category")
SPATIAL_FIELDS = ("geohash6", "aoi")
TEMPORAL_FIELDS = ("hour", "period", "day_of_week")
ALL_FIELDS = USER_FIELDS + ITEM_FIELDS + SPATIAL_FIELDS + TEMPORAL_FIELDS


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        check_coordinates(self.latitude, self.longitude)


@dataclass(frozen=True)
class SpatialFeature:
    geohash6: str
    aoi_id: str

    def __post_init__(self):
        if len(self.geohash6) != 6 or any(c not in GEOHASH_ALPHABET for c in self.geohash6):
            raise RangeError(f"invalid geohash6 {self.geohash6!r}")


@dataclass(frozen=True)
class TemporalFeature:
    hour_of_day: int
    period_of_day: str
    day_of_week: int

    @classmethod
    def from_unix(cls, t, period_starts=DEFAULT_PERIOD_STARTS):
        hour = int(t // 3600 % 24)
        return cls(hour, PERIODS[period_of_day(hour, period_starts)], day_of_week(t))


def check_coordinates(lat, lon):
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise RangeError(f"coordinate out of bounds: lat={lat}, lon={lon}")


def geohash6_encode(point, precision=6):
    """Standard base-32 geohash; ``point`` is a GeoPoint or ``(lat, lon)``."""
    lat, lon = (point.latitude, point.longitude) if isinstance(point, GeoPoint) else point
    check_coordinates(lat, lon)
    return kernels.geohash_encode_batch(np.array([lat], dtype=float), np.array([lon], dtype=float), precision)[0]


def geohash6_encode_many(lat, lon, precision=6):
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if lat.size and (np.abs(lat).max() > 90.0 or np.abs(lon).max() > 180.0):
        raise RangeError("coordinate out of bounds in batch")
    return kernels.geohash_encode_batch(lat, lon, precision)


def validate_period_starts(starts):
    starts = tuple(int(s) for s in starts)
    if len(starts) != len(PERIODS) or any(not 0 <= s <= 23 for s in starts):
        raise ConfigError(f"period boundaries need {len(PERIODS)} start hours in 0..23, got {starts}")
    # the last period may wrap past midnight; the others must ascend
    if list(starts) != sorted(starts) or len(set(starts)) != len(starts):
        raise ConfigError(f"period start hours must be strictly increasing, got {starts}")
    return starts


def _period_table(starts):
    table = np.empty(24, dtype=np.int64)
    for h in range(24):
        idx = len(starts) - 1
        for k, s in enumerate(starts):
            if h >= s:
                idx = k
        table[h] = idx
    return table


_PERIOD_TABLES: dict[tuple, np.ndarray] = {}


def period_table(starts=DEFAULT_PERIOD_STARTS):
    key = tuple(starts)
    if key not in _PERIOD_TABLES:
        _PERIOD_TABLES[key] = _period_table(validate_period_starts(key))
    return _PERIOD_TABLES[key]


def period_of_day(hour, period_starts=DEFAULT_PERIOD_STARTS):
    """Index into ``PERIODS`` for an hour in 0..23 (night snack wraps midnight)."""
    if not isinstance(hour, (int, np.integer)) or not 0 <= hour <= 23:
        raise RangeError(f"hour out of range: {hour!r}")
    return int(period_table(period_starts)[hour])


def hour_of_day(t):
    return np.asarray(t, dtype=np.int64) // 3600 % 24


def day_of_week(t):
    """Monday is 0; the unix epoch fell on a Thursday."""
    days = np.asarray(t, dtype=np.int64) // 86400
    out = (days + 3) % 7
    return int(out) if out.ndim == 0 else out


def hash_feature(field_name, raw_value, table_size):
    """Field-salted FNV-1a 64 bucket in ``1..table_size-1``; row 0 is the pad row."""
    key = f"{field_name}\x1f{raw_value}".encode("utf-8")
    return int(kernels.fnv1a64(key) % (table_size - 1)) + 1


def hash_column(field_name, values, table_size):
    """Vectorized ``hash_feature`` that hashes each distinct value once."""
    values = np.asarray(values, dtype=object)
    if values.size == 0:
        return np.zeros(values.shape, dtype=np.int64)
    # not astype(str): fixed-width numpy strings drop trailing NULs
    codes = {}
    inverse = np.fromiter((codes.setdefault(str(v), len(codes)) for v in values.ravel()),
                          dtype=np.int64, count=values.size)
    keys = [f"{field_name}\x1f{v}".encode("utf-8") for v in codes]
    h = kernels.fnv1a64_batch(keys) % np.uint64(table_size - 1)
    return (h.astype(np.int64) + 1)[inverse].reshape(values.shape)


class EmbeddingTable:
    def __init__(self, store, field_name, table_size, dim, rng, scale=0.05):
        if table_size < 2 or dim < 1:
            raise ConfigError(f"embedding table {field_name!r}: bad size {table_size}x{dim}")
        self.field_name = field_name
        self.table_size = table_size
        self.dim = dim
        self.rows = store.add(f"emb/{field_name}", rng.normal(0.0, scale, size=(table_size, dim)))

    def lookup(self, index):
        return gather_rows(self.rows, index)


class FeatureEmbedder:
    """Owns one table per field and lays out the grouped embedding vectors.

    Groups concatenate their fields in declaration order, so each field maps
    to one contiguous slice (see ``layout``).  Behaviors reuse the item tables.
    """

    groups = {"u": USER_FIELDS, "m": ITEM_FIELDS, "g": SPATIAL_FIELDS, "t": TEMPORAL_FIELDS}

    def __init__(self, store, table_size, dim, rng):
        self.table_size = table_size
        self.dim = dim
        self.tables = {f: EmbeddingTable(store, f, table_size, dim, rng) for f in ALL_FIELDS}

    def layout(self, group):
        """``{field: slice}`` for the ``u``, ``m``, ``g``, ``st`` or ``b`` vector."""
        fields = {"st": SPATIAL_FIELDS + TEMPORAL_FIELDS, "b": ITEM_FIELDS}.get(group) or self.groups[group]
        return {f: slice(k * self.dim, (k + 1) * self.dim) for k, f in enumerate(fields)}

    def _group(self, fields, ids):
        ids = np.asarray(ids)
        if ids.shape[-1] != len(fields):
            raise ConfigError(f"expected {len(fields)} id columns for {fields}, got shape {ids.shape}")
        return concat([self.tables[f].lookup(ids[..., k]) for k, f in enumerate(fields)], axis=-1)

    def embed(self, batch):
        u = self._group(USER_FIELDS, batch.user_ids)
        m = self._group(ITEM_FIELDS, batch.item_ids)
        g = self._group(SPATIAL_FIELDS, batch.spatial_ids)
        t = self._group(TEMPORAL_FIELDS, batch.temporal_ids)
        b = self._group(ITEM_FIELDS, batch.behavior_ids)
        return {"u": u, "m": m, "g": g, "st": concat([g, t], axis=-1), "b": b}
