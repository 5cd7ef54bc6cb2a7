"""UJIIndoorLoc-format fingerprint data: parsing, normalization, splitting,
and the reference-point statistics everything downstream relies on.

Expected CSV layout (header-driven, column order free): 520 ``WAP001..WAP520``
RSS columns plus LONGITUDE, LATITUDE, FLOOR, BUILDINGID, SPACEID,
RELATIVEPOSITION, USERID, PHONEID, TIMESTAMP. RSS values are dBm in
[-104, 0], with 100 as the "not detected" sentinel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import pandas as pd

from .errors import (
    FormatError,
    ParseError,
    SchemaError,
    TruncationError,
    ValidationError,
    VersionError,
)

if TYPE_CHECKING:  # pragma: no cover
    from .labels import LabelCodec

NOT_DETECTED = 100
RSS_MIN = -104.0
RSS_MAX = 0.0
N_APS = 520

# Min-max normalization bounds; "not detected" maps to exactly 0.0 so the
# sentinel reads as the weakest possible signal.
DEFAULT_FLOOR_DBM = -110.0
DEFAULT_CEIL_DBM = 0.0

WAP_COLUMNS = tuple(f"WAP{i:03d}" for i in range(1, N_APS + 1))
META_COLUMNS = (
    "LONGITUDE",
    "LATITUDE",
    "FLOOR",
    "BUILDINGID",
    "SPACEID",
    "RELATIVEPOSITION",
    "USERID",
    "PHONEID",
    "TIMESTAMP",
)

CACHE_MAGIC = b"BFLOCDS\n"
CACHE_VERSION = 1


class HierarchicalLabel(NamedTuple):
    """Sequential (building, floor, location) indices.

    Floor and location indices are meaningful only in combination with the
    levels above them: floor 2 of building 0 and floor 2 of building 1 are
    unrelated places.
    """

    building_seq: int
    floor_seq: int
    location_seq: int


@dataclass(frozen=True, eq=False)
class FingerprintRecord:
    """One dataset row: a 520-dim RSS vector plus position and identifiers."""

    rss: np.ndarray  # float64, shape (520,); 100 = not detected
    longitude: float  # planar meters
    latitude: float  # planar meters
    floor_id: int
    building_id: int
    space_id: int
    relative_position: int  # 1 = inside the space, 2 = outside the door
    user_id: int
    phone_id: int
    timestamp: int


@dataclass(frozen=True, eq=False)
class NormalizedSample:
    """A training/validation sample: features in [0,1], label, position."""

    features: np.ndarray  # float64, shape (520,), each in [0, 1]
    label: HierarchicalLabel
    position: tuple[float, float]


class RefPoint(NamedTuple):
    x: float
    y: float
    count: int  # number of training rows averaged into (x, y)


# (building_seq, floor_seq, location_seq) -> RefPoint
ReferencePointIndex = dict[tuple[int, int, int], RefPoint]


@dataclass(frozen=True)
class DatasetStats:
    """Counts of buildings, floors per building, and locations per floor.

    A "location" is the combination of SPACEID and RELATIVEPOSITION, so a
    space's inside and outside-the-door measurements count as two locations.
    """

    n_buildings: int
    floors_per_building: tuple[int, ...]
    locations_per_floor: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n_buildings < 1:
            raise ValueError("need at least one building")
        if len(self.floors_per_building) != self.n_buildings:
            raise ValueError("floors_per_building length != n_buildings")
        if len(self.locations_per_floor) != self.n_buildings:
            raise ValueError("locations_per_floor length != n_buildings")
        for b, (n_f, locs) in enumerate(
            zip(self.floors_per_building, self.locations_per_floor)
        ):
            if n_f < 1:
                raise ValueError(f"building {b} has no floors")
            if len(locs) != n_f:
                raise ValueError(f"building {b}: floor count inconsistent")
            if any(n < 1 for n in locs):
                raise ValueError(f"building {b} has a floor with no locations")

    @property
    def max_floors(self) -> int:
        return max(self.floors_per_building)

    @property
    def max_locations(self) -> int:
        return max(max(row) for row in self.locations_per_floor)


def parse_csv(path) -> list[FingerprintRecord]:
    """Parse a UJIIndoorLoc-format CSV into validated records.

    The header decides which column is which; extra columns are ignored.
    Raises SchemaError for missing columns, ParseError for rows that do not
    parse (message names the line), ValidationError for out-of-range values.
    """
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc)) from exc
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: empty file, no header row") from exc

    missing = [c for c in WAP_COLUMNS + META_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(
            f"{path}: missing column(s) {', '.join(missing[:5])}"
            + (f" and {len(missing) - 5} more" if len(missing) > 5 else "")
        )

    def numeric(columns: tuple[str, ...]) -> np.ndarray:
        block = frame[list(columns)]
        if not all(np.issubdtype(d, np.number) for d in block.dtypes):
            block = block.apply(pd.to_numeric, errors="coerce")
        values = block.to_numpy(np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            # +2: header line plus 1-based numbering
            raise ParseError(
                f"line {i + 2}: non-numeric value in column {columns[j]}"
            )
        return values

    rss = numeric(WAP_COLUMNS)
    out_of_range = ~((rss == NOT_DETECTED) | ((rss >= RSS_MIN) & (rss <= RSS_MAX)))
    if out_of_range.any():
        i, j = np.argwhere(out_of_range)[0]
        raise ValidationError(
            f"line {i + 2}: RSS value {rss[i, j]:g} in column {WAP_COLUMNS[j]} "
            f"is neither the sentinel {NOT_DETECTED} nor in [{RSS_MIN:g}, {RSS_MAX:g}]"
        )

    meta = numeric(META_COLUMNS)
    ints = meta[:, 2:]  # FLOOR onward are identifiers
    fractional = ints != np.floor(ints)
    if fractional.any():
        i, j = np.argwhere(fractional)[0]
        raise ValidationError(
            f"line {i + 2}: column {META_COLUMNS[j + 2]} must be an integer, "
            f"got {ints[i, j]!r}"
        )

    buildings = meta[:, 3]
    if ((buildings < 0) | (buildings > 2)).any():
        i = int(np.flatnonzero((buildings < 0) | (buildings > 2))[0])
        raise ValidationError(
            f"line {i + 2}: BUILDINGID {buildings[i]:g} outside {{0, 1, 2}}"
        )
    floors = meta[:, 2]
    if ((floors < 0) | (floors > 4)).any():
        i = int(np.flatnonzero((floors < 0) | (floors > 4))[0])
        raise ValidationError(f"line {i + 2}: FLOOR {floors[i]:g} outside [0, 4]")

    records = []
    for i in range(rss.shape[0]):
        row = meta[i]
        records.append(
            FingerprintRecord(
                rss=rss[i],
                longitude=float(row[0]),
                latitude=float(row[1]),
                floor_id=int(row[2]),
                building_id=int(row[3]),
                space_id=int(row[4]),
                relative_position=int(row[5]),
                user_id=int(row[6]),
                phone_id=int(row[7]),
                timestamp=int(row[8]),
            )
        )
    return records


def normalize_rss(
    rss: np.ndarray,
    floor_dbm: float = DEFAULT_FLOOR_DBM,
    ceil_dbm: float = DEFAULT_CEIL_DBM,
) -> np.ndarray:
    """Min-max normalize one RSS vector to [0, 1]; sentinel maps to 0.0."""
    if not floor_dbm < ceil_dbm:
        raise ValueError(f"floor_dbm {floor_dbm} must be below ceil_dbm {ceil_dbm}")
    rss = np.asarray(rss, dtype=np.float64)
    detected = rss != NOT_DETECTED
    features = np.zeros(rss.shape, dtype=np.float64)
    scaled = (rss[detected] - floor_dbm) / (ceil_dbm - floor_dbm)
    features[detected] = np.clip(scaled, 0.0, 1.0)
    return features


def samples_from_records(
    records: list[FingerprintRecord],
    codec: "LabelCodec",
    floor_dbm: float = DEFAULT_FLOOR_DBM,
    ceil_dbm: float = DEFAULT_CEIL_DBM,
) -> list[NormalizedSample]:
    """Normalize every record and attach its sequential label and position."""
    return [
        NormalizedSample(
            features=normalize_rss(r.rss, floor_dbm, ceil_dbm),
            label=codec.label_of(
                r.building_id, r.floor_id, r.space_id, r.relative_position
            ),
            position=(r.longitude, r.latitude),
        )
        for r in records
    ]


def split_train_val(records: list, ratio: float, seed: int) -> tuple[list, list]:
    """Shuffle uniformly (seeded) and split; |train| = round(ratio * N)."""
    if not records:
        raise ValueError("cannot split an empty record list")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_train = int(round(ratio * len(records)))
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train:]]
    return train, val


def build_reference_index(train: list[NormalizedSample]) -> ReferencePointIndex:
    """Average the coordinates of all training samples sharing a label key.

    The result is the lookup table the coordinate estimator draws candidate
    reference points from: one (x, y) per (building, floor, location).
    """
    if not train:
        raise ValueError("cannot build a reference index from no samples")
    sums: dict[tuple[int, int, int], list[float]] = {}
    for s in train:
        acc = sums.setdefault(tuple(s.label), [0.0, 0.0, 0])
        acc[0] += s.position[0]
        acc[1] += s.position[1]
        acc[2] += 1
    return {
        key: RefPoint(sx / n, sy / n, n) for key, (sx, sy, n) in sums.items()
    }


REFINDEX_HEADER = "bfloc-refindex v1"


def ref_index_to_text(index: ReferencePointIndex) -> str:
    """Serialize a reference-point index as sorted text lines.

    One line per key: building floor location x y count, floats printed
    with repr so they round-trip exactly.
    """
    lines = [REFINDEX_HEADER]
    for b, f, l in sorted(index):
        point = index[(b, f, l)]
        lines.append(f"{b} {f} {l} {point.x!r} {point.y!r} {point.count}")
    return "\n".join(lines) + "\n"


def ref_index_from_text(text: str) -> ReferencePointIndex:
    lines = text.splitlines()
    if not lines or lines[0].strip() != REFINDEX_HEADER:
        raise ParseError(f"expected header {REFINDEX_HEADER!r}")
    index: ReferencePointIndex = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        try:
            b, f, l = int(parts[0]), int(parts[1]), int(parts[2])
            x, y = float(parts[3]), float(parts[4])
            count = int(parts[5])
        except ValueError:
            raise ParseError(f"line {lineno}: malformed field") from None
        if (b, f, l) in index:
            raise ParseError(f"line {lineno}: duplicate key {(b, f, l)}")
        index[(b, f, l)] = RefPoint(x, y, count)
    if not index:
        raise ParseError("reference index text declares no points")
    return index


def compute_stats(records: list[FingerprintRecord]) -> DatasetStats:
    """Count distinct buildings, floors per building, locations per floor."""
    if not records:
        raise ValueError("cannot compute stats of an empty record list")
    floors: dict[int, set[int]] = {}
    locations: dict[tuple[int, int], set[tuple[int, int]]] = {}
    for r in records:
        floors.setdefault(r.building_id, set()).add(r.floor_id)
        locations.setdefault((r.building_id, r.floor_id), set()).add(
            (r.space_id, r.relative_position)
        )
    building_ids = sorted(floors)
    floors_per_building = tuple(len(floors[b]) for b in building_ids)
    locations_per_floor = tuple(
        tuple(len(locations[(b, f)]) for f in sorted(floors[b]))
        for b in building_ids
    )
    return DatasetStats(
        n_buildings=len(building_ids),
        floors_per_building=floors_per_building,
        locations_per_floor=locations_per_floor,
    )


# --- normalized-dataset cache -------------------------------------------------
#
# Columnar binary layout (all integers little-endian, see docs/formats.md):
#   magic $CACHE_MAGIC (8 bytes), u32 version, u32 n_rows, u32 n_features,
#   f64 floor_dbm, f64 ceil_dbm, u64 codec_len + UTF-8 codec text,
#   features as float32 stored column-contiguous (Fortran order),
#   building u16[n], floor u16[n], location u32[n], x f64[n], y f64[n].


def write_cache(
    path,
    samples: list[NormalizedSample],
    codec_text: str,
    floor_dbm: float = DEFAULT_FLOOR_DBM,
    ceil_dbm: float = DEFAULT_CEIL_DBM,
) -> None:
    """Write samples to the columnar cache file."""
    features = np.stack([s.features for s in samples]).astype(np.float32)
    b = np.array([s.label.building_seq for s in samples], dtype="<u2")
    f = np.array([s.label.floor_seq for s in samples], dtype="<u2")
    l = np.array([s.label.location_seq for s in samples], dtype="<u4")
    x = np.array([s.position[0] for s in samples], dtype="<f8")
    y = np.array([s.position[1] for s in samples], dtype="<f8")
    codec_bytes = codec_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(
            struct.pack(
                "<IIIddQ",
                CACHE_VERSION,
                len(samples),
                features.shape[1] if samples else N_APS,
                floor_dbm,
                ceil_dbm,
                len(codec_bytes),
            )
        )
        fh.write(codec_bytes)
        fh.write(np.asfortranarray(features).tobytes(order="F"))
        for arr in (b, f, l, x, y):
            fh.write(arr.tobytes())


def read_cache(path) -> tuple[list[NormalizedSample], str, float, float]:
    """Read a cache file back; returns (samples, codec_text, floor, ceil)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise FormatError(f"{path}: not a bfloc dataset cache (bad magic)")
    offset = len(CACHE_MAGIC)
    header = struct.Struct("<IIIddQ")
    if len(data) < offset + header.size:
        raise TruncationError(f"{path}: truncated cache header")
    version, n_rows, n_features, floor_dbm, ceil_dbm, codec_len = header.unpack_from(
        data, offset
    )
    if version != CACHE_VERSION:
        raise VersionError(
            f"{path}: cache version {version} is not supported (expected {CACHE_VERSION})"
        )
    offset += header.size

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if len(data) < offset + n:
            raise TruncationError(f"{path}: truncated cache ({what})")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    codec_text = take(codec_len, "codec text").decode("utf-8")
    features = np.frombuffer(
        take(4 * n_rows * n_features, "feature block"), dtype="<f4"
    ).reshape((n_rows, n_features), order="F")
    b = np.frombuffer(take(2 * n_rows, "building column"), dtype="<u2")
    f = np.frombuffer(take(2 * n_rows, "floor column"), dtype="<u2")
    l = np.frombuffer(take(4 * n_rows, "location column"), dtype="<u4")
    x = np.frombuffer(take(8 * n_rows, "x column"), dtype="<f8")
    y = np.frombuffer(take(8 * n_rows, "y column"), dtype="<f8")
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} unexpected trailing bytes")
    samples = [
        NormalizedSample(
            features=features[i].astype(np.float64),
            label=HierarchicalLabel(int(b[i]), int(f[i]), int(l[i])),
            position=(float(x[i]), float(y[i])),
        )
        for i in range(n_rows)
    ]
    return samples, codec_text, floor_dbm, ceil_dbm
