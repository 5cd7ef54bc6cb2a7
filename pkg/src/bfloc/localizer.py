"""Coordinate estimation from classifier scores.

The classifier's location segment is a score per location slot. Position is
estimated by scanning the kappa highest-scoring slots, keeping those whose
score clears sigma times the segment maximum AND that name a reference
point that exists on the predicted building/floor, then averaging the kept
reference coordinates two ways: plain centroid and score-weighted centroid.
If no candidate survives, the estimate falls back to the centroid of every
reference point on the predicted floor; a predicted floor with no reference
points at all is a closed-world violation and raises.

kappa = 1 reduces to the argmax reference point (sigma is irrelevant);
sigma = 0 keeps every candidate with a reference point; sigma = 1 keeps
only slots tied with the maximum score.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dataset import HierarchicalLabel, RefPoint, ReferencePointIndex
from .errors import UnknownIdentifierError
from .labels import LabelCodec


class CoordinateEstimate(NamedTuple):
    centroid: tuple[float, float]
    weighted: tuple[float, float]
    n_candidates: int  # candidates that passed threshold and membership
    fallback: bool


def top_candidates(location_scores: np.ndarray, kappa: int) -> list[int]:
    """Indices of the kappa largest scores, descending, ties by lower index."""
    scores = np.asarray(location_scores, dtype=np.float64)
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[: min(kappa, scores.shape[0])]]


def surviving_candidates(
    location_scores: np.ndarray,
    building_seq: int,
    floor_seq: int,
    ref_index: ReferencePointIndex,
    kappa: int,
    sigma: float,
) -> list[tuple[int, float, RefPoint]]:
    """The kappa largest scores that clear the threshold and name a known
    reference point, in descending-score order (ties toward lower index).

    The threshold is sigma times the maximum over the FULL location vector,
    not over the kappa kept candidates. Candidates removed by either filter
    are not replenished from further down the ranking.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0, 1], got {sigma}")
    scores = np.asarray(location_scores, dtype=np.float64)
    threshold = sigma * float(scores.max())
    survivors = []
    for i in top_candidates(scores, kappa):
        score = float(scores[i])
        if score < threshold:
            continue
        point = ref_index.get((building_seq, floor_seq, i))
        if point is None:
            continue
        survivors.append((i, score, point))
    return survivors


def estimate_coordinates(
    location_scores: np.ndarray,
    building_seq: int,
    floor_seq: int,
    ref_index: ReferencePointIndex,
    kappa: int,
    sigma: float,
) -> CoordinateEstimate:
    """Average the surviving candidates' reference points.

    The accumulation runs in candidate order with plain float arithmetic;
    results are reproducible bit for bit across runs. Raises
    UnknownIdentifierError if the fallback is needed and the predicted
    (building, floor) has no reference points at all.
    """
    if not ref_index:
        raise ValueError("reference point index is empty")
    sum_x = sum_y = 0.0
    wsum_x = wsum_y = sum_w = 0.0
    n_c = 0
    for _, score, point in surviving_candidates(
        location_scores, building_seq, floor_seq, ref_index, kappa, sigma
    ):
        sum_x += point.x
        sum_y += point.y
        wsum_x += score * point.x
        wsum_y += score * point.y
        sum_w += score
        n_c += 1

    if n_c > 0:
        centroid = (sum_x / n_c, sum_y / n_c)
        # all surviving scores can be exactly 0.0 (sigma = 0); the weighted
        # mean is undefined there, so fall back to the plain centroid
        weighted = (wsum_x / sum_w, wsum_y / sum_w) if sum_w > 0.0 else centroid
        return CoordinateEstimate(centroid, weighted, n_c, False)

    fallback_point = _floor_centroid(ref_index, building_seq, floor_seq)
    return CoordinateEstimate(fallback_point, fallback_point, 0, True)


def _floor_centroid(
    ref_index: ReferencePointIndex, building_seq: int, floor_seq: int
) -> tuple[float, float]:
    """Centroid of every reference point on (building, floor).

    Keys are visited in sorted order so the float accumulation is
    reproducible. No reference points on the predicted floor means the
    closed-world assumption broke; that is surfaced, not guessed around.
    """
    keys = [
        key for key in sorted(ref_index)
        if key[0] == building_seq and key[1] == floor_seq
    ]
    if not keys:
        raise UnknownIdentifierError(
            f"no reference points for building index {building_seq}, "
            f"floor index {floor_seq}; cannot fall back"
        )
    sum_x = sum_y = 0.0
    for key in keys:
        sum_x += ref_index[key].x
        sum_y += ref_index[key].y
    return (sum_x / len(keys), sum_y / len(keys))


def localize(
    scores: np.ndarray,
    codec: LabelCodec,
    ref_index: ReferencePointIndex,
    kappa: int,
    sigma: float,
) -> tuple[HierarchicalLabel, CoordinateEstimate]:
    """Decode one score vector and estimate its position."""
    label = codec.decode(scores)
    _, _, location_scores = codec.segments(np.asarray(scores, dtype=np.float64))
    estimate = estimate_coordinates(
        location_scores, label.building_seq, label.floor_seq, ref_index, kappa, sigma
    )
    return label, estimate


def localize_batch(
    scores: np.ndarray,
    codec: LabelCodec,
    ref_index: ReferencePointIndex,
    kappa: int,
    sigma: float,
) -> list[tuple[HierarchicalLabel, CoordinateEstimate]]:
    return [localize(row, codec, ref_index, kappa, sigma) for row in np.atleast_2d(scores)]
