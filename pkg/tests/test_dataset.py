import numpy as np
import pytest

from stenlab.dataset import (
    COLUMNS,
    BehaviorEvent,
    Sample,
    format_sample,
    pad_and_truncate,
    parse_line,
    parse_tsv,
    slice_by_period,
    write_tsv,
)
from stenlab.errors import SchemaError

T0 = 1_700_000_000


def make_sample(n_events=3, label=1):
    ev = tuple(BehaviorEvent(f"i{k}", "tea", T0 - 3600 * (n_events - k), 30.1, 120.2) for k in range(n_events))
    return Sample(label, "u1", "f", "i9", "tea", T0, 30.123456, 120.654321, "aoi0101", ev)


def test_round_trip_line():
    s = make_sample()
    line = format_sample(s)
    assert len(line.split("\t")) == len(COLUMNS)
    assert parse_line(line) == s


def test_empty_behaviors_round_trip():
    s = make_sample(0)
    assert parse_line(format_sample(s)).behaviors == ()


def test_events_sorted_on_parse():
    s = make_sample(3)
    cols = format_sample(s).split("\t")
    cols[9] = "|".join(reversed(cols[9].split("|")))
    parsed = parse_line("\t".join(cols))
    assert [e.click_time for e in parsed.behaviors] == sorted(e.click_time for e in s.behaviors)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c[:-1],  # missing column
        lambda c: ["2"] + c[1:],  # bad label
        lambda c: c[:5] + ["noon"] + c[6:],  # bad time
        lambda c: c[:6] + ["95.0"] + c[7:],  # latitude out of range
        lambda c: c[:1] + [""] + c[2:],  # empty user id
        lambda c: c[:9] + [f"i1,tea,{T0 + 10},30.0,120.0"],  # click after request
        lambda c: c[:9] + ["i1,tea,5"],  # short event
    ],
)
def test_malformed_lines_rejected(mutate, tmp_path):
    cols = format_sample(make_sample()).split("\t")
    bad = "\t".join(mutate(cols))
    p = tmp_path / "x.tsv"
    p.write_text(format_sample(make_sample()) + "\n" + bad + "\n")
    with pytest.raises(SchemaError, match=":2:"):
        parse_tsv(p, strict=True)


def test_malformed_fraction_threshold(tmp_path):
    good = format_sample(make_sample())
    p = tmp_path / "x.tsv"
    p.write_text("\n".join([good] * 199 + ["garbage"]) + "\n")
    res = parse_tsv(p)
    assert (len(res), res.n_malformed, res.n_lines) == (199, 1, 200)
    p.write_text("\n".join([good] * 98 + ["garbage"] * 2) + "\n")
    with pytest.raises(SchemaError):
        parse_tsv(p)


def test_write_tsv_atomic_and_parseable(tmp_path, small_synth):
    p = tmp_path / "out.tsv"
    write_tsv(small_synth.train[:50], p)
    assert not (tmp_path / "out.tsv.tmp").exists()
    back = parse_tsv(p).samples
    assert [format_sample(s) for s in back] == [format_sample(s) for s in small_synth.train[:50]]


def test_pad_and_truncate_layout():
    s = make_sample(3)
    b = pad_and_truncate([s], 5)
    assert b.mask.tolist() == [[False, False, True, True, True]]
    np.testing.assert_allclose(b.time_intervals[0, 2:], [3.0, 2.0, 1.0])
    assert b.periods[0, 0] == -1 and b.behavior_ids[0, 0].tolist() == [0, 0]


def test_truncate_keeps_most_recent():
    s = make_sample(8)
    b = pad_and_truncate([s], 3)
    assert b.mask.all()
    np.testing.assert_allclose(b.time_intervals[0], [3.0, 2.0, 1.0])


def test_time_interval_clamped():
    ev = (BehaviorEvent("i1", "tea", T0 - 400 * 3600, 30.0, 120.0),)
    s = Sample(0, "u", "m", "i2", "tea", T0, 30.0, 120.0, "a", ev)
    assert pad_and_truncate([s], 2, t_clamp=168).time_intervals[0, 1] == 168.0


def test_period_slices_partition_mask(small_batch):
    slices = slice_by_period(small_batch)
    total = np.sum(slices, axis=0)
    np.testing.assert_array_equal(total, small_batch.mask.astype(int))


def test_extend_padding_keeps_valid_part(small_batch):
    ext = small_batch.extend_padding(4)
    assert ext.seq_len == small_batch.seq_len + 4
    np.testing.assert_array_equal(ext.mask[:, 4:], small_batch.mask)
    assert not ext.mask[:, :4].any()


def test_take_subsets_every_field(small_batch):
    sub = small_batch.take(np.array([3, 1]))
    assert len(sub) == 2
    np.testing.assert_array_equal(sub.behavior_ids[1], small_batch.behavior_ids[1])
