import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stenlab.errors import ConfigError, RangeError
from stenlab.features import (
    DEFAULT_PERIOD_STARTS,
    PERIODS,
    GeoPoint,
    SpatialFeature,
    TemporalFeature,
    day_of_week,
    geohash6_encode,
    geohash6_encode_many,
    hash_column,
    hash_feature,
    period_of_day,
    validate_period_starts,
)

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"


def oracle_geohash(lat, lon, precision=6):
    """Interval halving written as bit strings, longitude first."""
    bits = []
    ranges = {"lon": [-180.0, 180.0], "lat": [-90.0, 90.0]}
    axis = "lon"
    while len(bits) < 5 * precision:
        lo, hi = ranges[axis]
        mid = (lo + hi) / 2
        v = lon if axis == "lon" else lat
        if v >= mid:
            bits.append("1")
            ranges[axis][0] = mid
        else:
            bits.append("0")
            ranges[axis][1] = mid
        axis = "lat" if axis == "lon" else "lon"
    s = "".join(bits)
    return "".join(BASE32[int(s[i : i + 5], 2)] for i in range(0, len(s), 5))


def test_geohash_reference_point():
    assert geohash6_encode(GeoPoint(57.64911, 10.40744)) == "u4pruy"
    assert oracle_geohash(57.64911, 10.40744) == "u4pruy"


def test_geohash_matches_oracle_random():
    rng = np.random.default_rng(5)
    lat = rng.uniform(-90, 90, 1000)
    lon = rng.uniform(-180, 180, 1000)
    got = geohash6_encode_many(lat, lon)
    assert list(got) == [oracle_geohash(a, b) for a, b in zip(lat, lon)]


@pytest.mark.parametrize("lat,lon", [(90, 180), (-90, -180), (0, 0), (45.0, -0.0)])
def test_geohash_boundaries(lat, lon):
    assert geohash6_encode(GeoPoint(lat, lon)) == oracle_geohash(lat, lon)


def test_coordinates_out_of_bounds():
    with pytest.raises(RangeError):
        GeoPoint(91, 0)
    with pytest.raises(RangeError):
        GeoPoint(0, -180.5)


def test_spatial_feature_validates():
    SpatialFeature("u4pruy", "aoi1")
    with pytest.raises(RangeError):
        SpatialFeature("u4pru", "aoi1")
    with pytest.raises(RangeError):
        SpatialFeature("u4prua", "aoi1")  # 'a' is not in the alphabet


@pytest.mark.parametrize(
    "hour,period",
    [(5, "breakfast"), (9, "breakfast"), (10, "lunch"), (13, "lunch"), (14, "afternoon_tea"),
     (16, "afternoon_tea"), (17, "dinner"), (20, "dinner"), (21, "night_snack"), (23, "night_snack"),
     (0, "night_snack"), (4, "night_snack")],
)
def test_period_of_day_defaults(hour, period):
    assert PERIODS[period_of_day(hour)] == period


def test_period_of_day_rejects_bad_hours():
    for bad in (-1, 24, 3.5):
        with pytest.raises(RangeError):
            period_of_day(bad)


def test_period_starts_validation():
    validate_period_starts(DEFAULT_PERIOD_STARTS)
    for bad in ((5, 10, 14, 17), (10, 5, 14, 17, 21), (5, 10, 14, 17, 24)):
        with pytest.raises(ConfigError):
            validate_period_starts(bad)


def test_temporal_feature_from_unix():
    # 2023-11-15 12:30 UTC was a Wednesday
    t = 1700051400
    f = TemporalFeature.from_unix(t)
    assert (f.hour_of_day, f.period_of_day, f.day_of_week) == (12, "lunch", 2)
    assert day_of_week(0) == 3  # 1970-01-01 was a Thursday


@given(st.text(max_size=20), st.integers(2, 5000))
def test_hash_range_and_column_agreement(value, size):
    h = hash_feature("item_id", value, size)
    assert 1 <= h < size
    assert hash_column("item_id", np.array([value, value], dtype=object), size).tolist() == [h, h]



def test_hash_column_keeps_trailing_nul():
    vals = np.array(["a\x00", "a", "\x00", ""], dtype=object)
    got = hash_column("item_id", vals, 10007).tolist()
    assert got == [hash_feature("item_id", v, 10007) for v in vals]
    assert got[0] != got[1]


def test_hash_is_field_salted():
    # same raw value in different fields should not systematically collide
    vals = [str(k) for k in range(200)]
    a = hash_column("hour", np.array(vals, dtype=object), 10007)
    b = hash_column("day_of_week", np.array(vals, dtype=object), 10007)
    assert np.mean(a == b) < 0.05
