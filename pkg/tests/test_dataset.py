import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
import synth
from bfloc.dataset import (
    DEFAULT_CEIL_DBM,
    DEFAULT_FLOOR_DBM,
    META_COLUMNS,
    N_APS,
    NOT_DETECTED,
    WAP_COLUMNS,
    DatasetStats,
    HierarchicalLabel,
    NormalizedSample,
    build_reference_index,
    compute_stats,
    normalize_rss,
    parse_csv,
    read_cache,
    ref_index_from_text,
    ref_index_to_text,
    samples_from_records,
    split_train_val,
    write_cache,
)
from bfloc.errors import (
    FormatError,
    ParseError,
    SchemaError,
    TruncationError,
    ValidationError,
)


def minimal_frame(n_rows=1, **overrides):
    """A valid single-building frame with all sentinel RSS."""
    data = {c: [float(NOT_DETECTED)] * n_rows for c in WAP_COLUMNS}
    meta_defaults = {
        "LONGITUDE": -7500.0,
        "LATITUDE": 4864800.0,
        "FLOOR": 1,
        "BUILDINGID": 0,
        "SPACEID": 101,
        "RELATIVEPOSITION": 1,
        "USERID": 3,
        "PHONEID": 14,
        "TIMESTAMP": 1371713733,
    }
    for c in META_COLUMNS:
        data[c] = [meta_defaults[c]] * n_rows
    frame = pd.DataFrame(data)
    for column, values in overrides.items():
        frame[column] = values
    return frame


def write_csv(tmp_path, frame, name="data.csv"):
    path = tmp_path / name
    frame.to_csv(path, index=False)
    return path


class TestParseCsv:
    def test_minimal_row(self, tmp_path):
        frame = minimal_frame()
        frame.loc[0, "WAP007"] = -61.0
        records = parse_csv(write_csv(tmp_path, frame))
        assert len(records) == 1
        r = records[0]
        assert r.rss.shape == (N_APS,)
        assert r.rss[6] == -61.0
        assert r.rss[0] == NOT_DETECTED
        assert (r.longitude, r.latitude) == (-7500.0, 4864800.0)
        assert (r.building_id, r.floor_id) == (0, 1)
        assert (r.space_id, r.relative_position) == (101, 1)
        assert (r.user_id, r.phone_id, r.timestamp) == (3, 14, 1371713733)

    def test_column_order_is_irrelevant(self, tmp_path):
        frame = minimal_frame()
        frame.loc[0, "WAP520"] = -80.0
        shuffled = frame[list(np.random.default_rng(3).permutation(frame.columns))]
        records = parse_csv(write_csv(tmp_path, shuffled))
        assert records[0].rss[519] == -80.0
        assert records[0].space_id == 101

    def test_extra_columns_ignored(self, tmp_path):
        frame = minimal_frame()
        frame["COMMENT"] = [7.5]
        assert len(parse_csv(write_csv(tmp_path, frame))) == 1

    def test_missing_column_is_schema_error(self, tmp_path):
        frame = minimal_frame().drop(columns=["WAP013"])
        with pytest.raises(SchemaError, match="WAP013"):
            parse_csv(write_csv(tmp_path, frame))

    def test_missing_meta_column(self, tmp_path):
        frame = minimal_frame().drop(columns=["SPACEID"])
        with pytest.raises(SchemaError, match="SPACEID"):
            parse_csv(write_csv(tmp_path, frame))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(SchemaError):
            parse_csv(path)

    def test_non_numeric_cell_names_line(self, tmp_path):
        frame = minimal_frame(n_rows=3)
        frame["WAP100"] = frame["WAP100"].astype(object)
        frame.loc[1, "WAP100"] = "abc"
        with pytest.raises(ParseError, match="line 3"):
            parse_csv(write_csv(tmp_path, frame))

    def test_rss_out_of_range(self, tmp_path):
        frame = minimal_frame()
        frame.loc[0, "WAP001"] = 42.0
        with pytest.raises(ValidationError, match="42"):
            parse_csv(write_csv(tmp_path, frame))

    def test_rss_below_floor(self, tmp_path):
        frame = minimal_frame()
        frame.loc[0, "WAP002"] = -105.0
        with pytest.raises(ValidationError, match="WAP002"):
            parse_csv(write_csv(tmp_path, frame))

    def test_building_out_of_range(self, tmp_path):
        frame = minimal_frame(n_rows=2, BUILDINGID=[0, 3])
        with pytest.raises(ValidationError, match="line 3"):
            parse_csv(write_csv(tmp_path, frame))

    def test_floor_out_of_range(self, tmp_path):
        frame = minimal_frame(FLOOR=[5])
        with pytest.raises(ValidationError, match="FLOOR"):
            parse_csv(write_csv(tmp_path, frame))

    def test_fractional_identifier(self, tmp_path):
        frame = minimal_frame(SPACEID=[101.5])
        with pytest.raises(ValidationError, match="SPACEID"):
            parse_csv(write_csv(tmp_path, frame))

    def test_boundary_rss_values_accepted(self, tmp_path):
        frame = minimal_frame(WAP001=[-104.0], WAP002=[0.0])
        r = parse_csv(write_csv(tmp_path, frame))[0]
        assert r.rss[0] == -104.0 and r.rss[1] == 0.0

    def test_campus_file_parses(self, campus_records):
        assert len(campus_records) == synth.N_LOCATIONS * 12


class TestNormalize:
    def test_sentinel_maps_to_zero(self):
        rss = np.full(N_APS, float(NOT_DETECTED))
        assert np.all(normalize_rss(rss) == 0.0)

    def test_reference_values(self):
        rss = np.full(N_APS, float(NOT_DETECTED))
        rss[0] = 0.0
        rss[1] = -55.0
        rss[2] = -110.0 + 110.0  # 0 dBm again via arithmetic
        rss[3] = -104.0
        out = normalize_rss(rss)
        assert out[0] == 1.0
        assert out[1] == pytest.approx(0.5)
        assert out[2] == 1.0
        assert out[3] == pytest.approx(6.0 / 110.0)

    def test_clamping_with_custom_bounds(self):
        rss = np.full(N_APS, float(NOT_DETECTED))
        rss[0] = -20.0
        out = normalize_rss(rss, floor_dbm=-60.0, ceil_dbm=-30.0)
        assert out[0] == 1.0  # above the ceiling clamps

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            normalize_rss(np.zeros(4), floor_dbm=0.0, ceil_dbm=0.0)

    @given(
        v1=st.floats(min_value=-104.0, max_value=0.0),
        v2=st.floats(min_value=-104.0, max_value=0.0),
    )
    def test_monotone(self, v1, v2):
        lo, hi = sorted((v1, v2))
        rss = np.array([lo, hi])
        out = normalize_rss(rss)
        assert out[0] <= out[1]
        assert np.all((out >= 0.0) & (out <= 1.0))


class TestSplit:
    def test_sizes(self):
        train, val = split_train_val(list(range(10)), 0.7, seed=0)
        assert (len(train), len(val)) == (7, 3)

    def test_full_dataset_size_arithmetic(self):
        train, val = split_train_val(list(range(19937)), 0.7, seed=5)
        assert (len(train), len(val)) == (13956, 5981)

    def test_deterministic(self):
        a = split_train_val(list(range(50)), 0.6, seed=9)
        b = split_train_val(list(range(50)), 0.6, seed=9)
        assert a == b

    def test_seed_changes_split(self):
        a = split_train_val(list(range(50)), 0.6, seed=9)
        b = split_train_val(list(range(50)), 0.6, seed=10)
        assert a != b

    @given(
        n=st.integers(min_value=2, max_value=200),
        ratio=st.floats(min_value=0.05, max_value=0.95),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_partition(self, n, ratio, seed):
        records = list(range(n))
        train, val = split_train_val(records, ratio, seed)
        assert len(train) == int(round(ratio * n))
        assert sorted(train + val) == records

    def test_empty_input(self):
        with pytest.raises(ValueError):
            split_train_val([], 0.5, seed=0)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ValueError):
            split_train_val([1, 2, 3], ratio, seed=0)


def sample(b, f, l, x, y):
    return NormalizedSample(
        features=np.zeros(4), label=HierarchicalLabel(b, f, l), position=(x, y)
    )


class TestReferenceIndex:
    def test_mean_of_two(self):
        index = build_reference_index(
            [sample(0, 0, 0, 0.0, 0.0), sample(0, 0, 0, 2.0, 4.0)]
        )
        assert index[(0, 0, 0)] == (1.0, 2.0, 2)

    def test_single_sample_identity(self):
        index = build_reference_index([sample(1, 2, 3, -7.5, 11.0)])
        assert index[(1, 2, 3)] == (-7.5, 11.0, 1)

    def test_matches_group_by_oracle(self, rng):
        samples = [
            sample(
                int(rng.integers(0, 3)),
                int(rng.integers(0, 4)),
                int(rng.integers(0, 5)),
                float(rng.normal()),
                float(rng.normal()),
            )
            for _ in range(50)
        ]
        index = build_reference_index(samples)
        expected = oracles.group_mean(samples)
        assert set(index) == set(expected)
        for key, (x, y, n) in expected.items():
            assert index[key].x == pytest.approx(x)
            assert index[key].y == pytest.approx(y)
            assert index[key].count == n

    def test_within_bounding_box(self, rng):
        samples = [sample(0, 0, 0, float(rng.normal()), float(rng.normal())) for _ in range(20)]
        point = build_reference_index(samples)[(0, 0, 0)]
        xs = [s.position[0] for s in samples]
        ys = [s.position[1] for s in samples]
        assert min(xs) <= point.x <= max(xs)
        assert min(ys) <= point.y <= max(ys)

    def test_empty_error(self):
        with pytest.raises(ValueError):
            build_reference_index([])

    def test_text_round_trip(self):
        index = build_reference_index(
            [sample(0, 0, 0, 0.1, 0.2), sample(1, 2, 3, -7.123456789, 4.5)]
        )
        assert ref_index_from_text(ref_index_to_text(index)) == index

    @pytest.mark.parametrize(
        "text",
        [
            "nonsense\n0 0 0 1.0 2.0 1\n",
            "bfloc-refindex v1\n0 0 0 1.0 2.0\n",
            "bfloc-refindex v1\n0 0 x 1.0 2.0 1\n",
            "bfloc-refindex v1\n0 0 0 1.0 2.0 1\n0 0 0 1.0 2.0 1\n",
            "bfloc-refindex v1\n",
        ],
    )
    def test_text_errors(self, text):
        with pytest.raises(ParseError):
            ref_index_from_text(text)


class TestStats:
    def test_single_record(self, tmp_path):
        records = parse_csv(write_csv(tmp_path, minimal_frame()))
        stats = compute_stats(records)
        assert stats.n_buildings == 1
        assert stats.floors_per_building == (1,)
        assert stats.locations_per_floor == ((1,),)

    def test_relative_position_makes_new_location(self, tmp_path):
        frame = minimal_frame(n_rows=2, RELATIVEPOSITION=[1, 2])
        stats = compute_stats(parse_csv(write_csv(tmp_path, frame)))
        assert stats.locations_per_floor == ((2,),)

    def test_permutation_invariant(self, campus_records):
        reversed_stats = compute_stats(list(reversed(campus_records)))
        assert compute_stats(campus_records) == reversed_stats

    def test_campus_layout(self, campus_records):
        stats = compute_stats(campus_records)
        assert stats.n_buildings == 2
        assert stats.floors_per_building == (2, 3)
        assert stats.locations_per_floor == ((4, 4), (4, 4, 3))
        assert stats.max_floors == 3
        assert stats.max_locations == 4

    def test_invalid_stats_rejected(self):
        with pytest.raises(ValueError):
            DatasetStats(1, (0,), ((1,),))
        with pytest.raises(ValueError):
            DatasetStats(2, (1,), ((1,), (1,)))


class TestCache:
    def test_round_trip(self, tmp_path, campus_samples, campus_codec):
        path = tmp_path / "campus.bfds"
        codec_text = campus_codec.to_text()
        write_cache(path, campus_samples, codec_text)
        samples, text, floor_dbm, ceil_dbm = read_cache(path)
        assert text == codec_text
        assert (floor_dbm, ceil_dbm) == (DEFAULT_FLOOR_DBM, DEFAULT_CEIL_DBM)
        assert len(samples) == len(campus_samples)
        for got, want in zip(samples, campus_samples):
            assert got.label == want.label
            assert got.position == want.position
            # features travel as float32
            np.testing.assert_allclose(got.features, want.features, atol=1e-7)

    def test_deterministic_bytes(self, tmp_path, campus_samples, campus_codec):
        a, b = tmp_path / "a.bfds", tmp_path / "b.bfds"
        write_cache(a, campus_samples, campus_codec.to_text())
        write_cache(b, campus_samples, campus_codec.to_text())
        assert a.read_bytes() == b.read_bytes()

    def _cache(self, tmp_path, campus_samples, campus_codec):
        path = tmp_path / "c.bfds"
        write_cache(path, campus_samples[:5], campus_codec.to_text())
        return path

    def test_bad_magic(self, tmp_path, campus_samples, campus_codec):
        path = self._cache(tmp_path, campus_samples, campus_codec)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_cache(path)

    def test_unsupported_version(self, tmp_path, campus_samples, campus_codec):
        from bfloc.errors import VersionError

        path = self._cache(tmp_path, campus_samples, campus_codec)
        data = bytearray(path.read_bytes())
        data[8] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(VersionError):
            read_cache(path)

    def test_truncated(self, tmp_path, campus_samples, campus_codec):
        path = self._cache(tmp_path, campus_samples, campus_codec)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 10])
        with pytest.raises(TruncationError):
            read_cache(path)

    def test_trailing_garbage(self, tmp_path, campus_samples, campus_codec):
        path = self._cache(tmp_path, campus_samples, campus_codec)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            read_cache(path)


class TestSamplesFromRecords:
    def test_labels_and_positions_attached(self, campus_records, campus_codec):
        samples = samples_from_records(campus_records[:10], campus_codec)
        for record, s in zip(campus_records[:10], samples):
            assert s.position == (record.longitude, record.latitude)
            assert s.label == campus_codec.label_of(
                record.building_id,
                record.floor_id,
                record.space_id,
                record.relative_position,
            )
            assert s.features.min() >= 0.0 and s.features.max() <= 1.0
