"""Hierarchical multi-label encoding of (building, floor, location) targets.

Instead of one-hot encoding every distinct (building, floor, location) triple
jointly, the target vector is three independent one-hot segments laid side by
side: buildings, then floor slots, then location slots. Floor slot i is
shared by the i-th floor of every building, and likewise for locations, so
the vector width is n_buildings + max_floors + max_locations rather than the
product-like count a flat multiclass encoding needs.

A location here is one (SPACEID, RELATIVEPOSITION) pair.
"""

from __future__ import annotations

import numpy as np

from .dataset import DatasetStats, FingerprintRecord, HierarchicalLabel
from .errors import ParseError, UnknownIdentifierError, ValidationError

__all__ = ["HierarchicalLabel", "LabelCodec"]

CODEC_HEADER = "bfloc-codec v1"


class LabelCodec:
    """Bidirectional map between raw dataset identifiers and target vectors.

    The codec is closed-world: it knows exactly the identifiers it was built
    from, and anything else raises UnknownIdentifierError. Sequential indices
    follow ascending identifier order within each level.
    """

    def __init__(
        self,
        buildings: tuple[int, ...],
        floors: tuple[tuple[int, ...], ...],
        locations: tuple[tuple[tuple[tuple[int, int], ...], ...], ...],
    ):
        """buildings[b] is a BUILDINGID, floors[b][f] a FLOOR, and
        locations[b][f][l] a (SPACEID, RELATIVEPOSITION) pair."""
        if len(floors) != len(buildings) or len(locations) != len(buildings):
            raise ValueError("floors/locations must have one entry per building")
        if len(set(buildings)) != len(buildings):
            raise ValueError("duplicate building ids")
        for b in range(len(buildings)):
            if len(locations[b]) != len(floors[b]):
                raise ValueError(f"building index {b}: floor count inconsistent")
            if len(set(floors[b])) != len(floors[b]):
                raise ValueError(f"building index {b}: duplicate floor ids")
            for f, floor in enumerate(locations[b]):
                if len(set(floor)) != len(floor):
                    raise ValueError(
                        f"building index {b} floor index {f}: duplicate locations"
                    )
        self.buildings = tuple(buildings)
        self.floors = tuple(tuple(f) for f in floors)
        self.locations = tuple(
            tuple(tuple(tuple(p) for p in floor) for floor in b) for b in locations
        )
        self.stats = DatasetStats(
            n_buildings=len(buildings),
            floors_per_building=tuple(len(f) for f in floors),
            locations_per_floor=tuple(
                tuple(len(floor) for floor in b) for b in locations
            ),
        )
        self._building_seq = {bid: i for i, bid in enumerate(self.buildings)}
        self._floor_seq = [
            {fid: i for i, fid in enumerate(row)} for row in self.floors
        ]
        self._location_seq = [
            [{pair: i for i, pair in enumerate(floor)} for floor in b]
            for b in self.locations
        ]

    @classmethod
    def from_records(cls, records: list[FingerprintRecord]) -> "LabelCodec":
        """Build the codec from training records, identifiers sorted ascending."""
        if not records:
            raise ValueError("cannot build a codec from no records")
        floors: dict[int, set[int]] = {}
        locs: dict[tuple[int, int], set[tuple[int, int]]] = {}
        for r in records:
            floors.setdefault(r.building_id, set()).add(r.floor_id)
            locs.setdefault((r.building_id, r.floor_id), set()).add(
                (r.space_id, r.relative_position)
            )
        buildings = tuple(sorted(floors))
        return cls(
            buildings=buildings,
            floors=tuple(tuple(sorted(floors[b])) for b in buildings),
            locations=tuple(
                tuple(
                    tuple(sorted(locs[(b, f)])) for f in sorted(floors[b])
                )
                for b in buildings
            ),
        )

    # --- widths and segment geometry ---

    @property
    def output_width(self) -> int:
        s = self.stats
        return s.n_buildings + s.max_floors + s.max_locations

    @property
    def multiclass_width(self) -> int:
        """Width a flat one-hot over all distinct triples would need."""
        return sum(sum(row) for row in self.stats.locations_per_floor)

    def segments(self, vector: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split an output-width vector into its three segment views."""
        if vector.shape[-1] != self.output_width:
            raise ValueError(
                f"expected width {self.output_width}, got {vector.shape[-1]}"
            )
        s = self.stats
        a, b = s.n_buildings, s.n_buildings + s.max_floors
        return vector[..., :a], vector[..., a:b], vector[..., b:]

    # --- identifier <-> sequential index <-> vector ---

    def label_of(
        self, building_id: int, floor_id: int, space_id: int, relative_position: int
    ) -> HierarchicalLabel:
        """Map raw identifiers to sequential indices."""
        try:
            b = self._building_seq[building_id]
        except KeyError:
            raise UnknownIdentifierError(f"unknown building id {building_id}") from None
        try:
            f = self._floor_seq[b][floor_id]
        except KeyError:
            raise UnknownIdentifierError(
                f"unknown floor id {floor_id} in building {building_id}"
            ) from None
        try:
            l = self._location_seq[b][f][(space_id, relative_position)]
        except KeyError:
            raise UnknownIdentifierError(
                f"unknown location (space {space_id}, relative position "
                f"{relative_position}) on floor {floor_id} of building {building_id}"
            ) from None
        return HierarchicalLabel(b, f, l)

    def ids_of(self, label: HierarchicalLabel) -> tuple[int, int, int, int]:
        """Inverse of label_of; returns (building, floor, space, relpos) ids."""
        self._check(label)
        b, f, l = label
        space_id, relpos = self.locations[b][f][l]
        return self.buildings[b], self.floors[b][f], space_id, relpos

    def _check(self, label: HierarchicalLabel) -> None:
        b, f, l = label
        s = self.stats
        if not 0 <= b < s.n_buildings:
            raise ValidationError(f"building index {b} out of range")
        if not 0 <= f < s.floors_per_building[b]:
            raise ValidationError(
                f"floor index {f} out of range for building index {b}"
            )
        if not 0 <= l < s.locations_per_floor[b][f]:
            raise ValidationError(
                f"location index {l} out of range for building index {b} floor {f}"
            )

    def encode(self, label: HierarchicalLabel) -> np.ndarray:
        """One-hot each level into its segment and concatenate."""
        b, f, l = label
        self._check(label)
        s = self.stats
        vector = np.zeros(self.output_width, dtype=np.float64)
        vector[b] = 1.0
        vector[s.n_buildings + f] = 1.0
        vector[s.n_buildings + s.max_floors + l] = 1.0
        return vector

    def encode_batch(self, labels: list[HierarchicalLabel]) -> np.ndarray:
        if not labels:
            return np.zeros((0, self.output_width), dtype=np.float64)
        return np.stack([self.encode(label) for label in labels])

    def decode(self, vector: np.ndarray) -> HierarchicalLabel:
        """Per-segment argmax (ties resolve to the lowest index).

        Works on any score vector, not just one-hot targets. The result is
        not guaranteed to name an existing location: the floor argmax can
        exceed the predicted building's floor count, for example. Callers
        that need an existing reference point must check membership.
        """
        bs, fs, ls = self.segments(np.asarray(vector, dtype=np.float64))
        return HierarchicalLabel(
            int(np.argmax(bs)), int(np.argmax(fs)), int(np.argmax(ls))
        )

    def bit_string(self, vector: np.ndarray) -> str:
        """Render a target as segment bit strings, lowest index rightmost."""
        return "|".join(
            "".join("1" if v > 0.5 else "0" for v in seg[::-1])
            for seg in self.segments(vector)
        )

    # --- text serialization ---

    def to_text(self) -> str:
        """Serialize as a line-oriented text block (see docs/formats.md)."""
        lines = [CODEC_HEADER]
        for b, bid in enumerate(self.buildings):
            lines.append(f"building {bid}")
            for f, fid in enumerate(self.floors[b]):
                lines.append(f"floor {fid}")
                for space_id, relpos in self.locations[b][f]:
                    lines.append(f"location {space_id} {relpos}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LabelCodec":
        lines = text.splitlines()
        if not lines or lines[0].strip() != CODEC_HEADER:
            raise ParseError(f"expected header {CODEC_HEADER!r}")
        buildings: list[int] = []
        floors: list[list[int]] = []
        locations: list[list[list[tuple[int, int]]]] = []

        def ints(parts: list[str], n: int, lineno: int) -> list[int]:
            if len(parts) != n:
                raise ParseError(f"line {lineno}: expected {n} field(s)")
            try:
                return [int(p) for p in parts]
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer field") from None

        for lineno, raw in enumerate(lines[1:], start=2):
            line = raw.strip()
            if not line:
                continue
            word, *parts = line.split()
            if word == "building":
                (bid,) = ints(parts, 1, lineno)
                if bid in buildings:
                    raise ParseError(f"line {lineno}: duplicate building {bid}")
                buildings.append(bid)
                floors.append([])
                locations.append([])
            elif word == "floor":
                if not buildings:
                    raise ParseError(f"line {lineno}: floor before any building")
                (fid,) = ints(parts, 1, lineno)
                if fid in floors[-1]:
                    raise ParseError(
                        f"line {lineno}: duplicate floor {fid} in building "
                        f"{buildings[-1]}"
                    )
                floors[-1].append(fid)
                locations[-1].append([])
            elif word == "location":
                if not buildings or not floors[-1]:
                    raise ParseError(f"line {lineno}: location before any floor")
                space_id, relpos = ints(parts, 2, lineno)
                if (space_id, relpos) in locations[-1][-1]:
                    raise ParseError(
                        f"line {lineno}: duplicate location {space_id} {relpos}"
                    )
                locations[-1][-1].append((space_id, relpos))
            else:
                raise ParseError(f"line {lineno}: unknown directive {word!r}")
        if not buildings:
            raise ParseError("codec text declares no buildings")
        for i, bid in enumerate(buildings):
            if not floors[i]:
                raise ParseError(f"building {bid} has no floors")
            for j, fid in enumerate(floors[i]):
                if not locations[i][j]:
                    raise ParseError(f"building {bid} floor {fid} has no locations")
        return cls(
            buildings=tuple(buildings),
            floors=tuple(tuple(f) for f in floors),
            locations=tuple(
                tuple(tuple(floor) for floor in b) for b in locations
            ),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelCodec):
            return NotImplemented
        return (
            self.buildings == other.buildings
            and self.floors == other.floors
            and self.locations == other.locations
        )

    def __repr__(self) -> str:
        s = self.stats
        return (
            f"LabelCodec({s.n_buildings} buildings, "
            f"{sum(s.floors_per_building)} floors, "
            f"{self.multiclass_width} locations, width {self.output_width})"
        )
