"""Validation metrics, the kappa/sigma grid sweep, report formatting, and a
kNN baseline for context.

Classification is scored per level: building hit rate and floor hit rate
are counted independently, success means both are right at once, so
success_rate <= min(building, floor) always. Positioning error is the mean
planar Euclidean distance over every validation sample (wrong-building
samples included, no penalty terms), reported separately for the plain and
the score-weighted centroid estimates. Rates are percentages.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classifier import FingerprintClassifier
from .dataset import NormalizedSample, ReferencePointIndex
from .labels import LabelCodec
from .localizer import estimate_coordinates

SWEEP_KAPPAS = tuple(range(1, 11))
SWEEP_SIGMAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class MetricsReport:
    kappa: int
    sigma: float | None  # None when kappa = 1 (the threshold cannot matter)
    n_samples: int
    building_hit_rate: float  # percentages in [0, 100]
    floor_hit_rate: float
    success_rate: float
    error_centroid: float  # meters, mean over all samples
    error_weighted: float
    fallback_count: int  # samples positioned by the floor-centroid fallback


def evaluate_scores(
    scores: np.ndarray,
    samples: list[NormalizedSample],
    codec: LabelCodec,
    ref_index: ReferencePointIndex,
    kappa: int,
    sigma: float,
    *,
    record_sigma: float | None = ...,
) -> MetricsReport:
    """Score one (kappa, sigma) cell over pre-computed classifier scores.

    record_sigma only changes what the report row says its sigma was; the
    sweep uses it to mark the kappa = 1 row, where no threshold can remove
    anything.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.shape[0] != len(samples):
        raise ValueError("scores and samples disagree on row count")
    if len(samples) == 0:
        raise ValueError("cannot evaluate on no samples")

    building_hits = floor_hits = success_hits = 0
    centroid_sum = weighted_sum = 0.0
    fallback_count = 0
    s = codec.stats
    a, b = s.n_buildings, s.n_buildings + s.max_floors
    for row, sample in zip(scores, samples):
        b_hat = int(np.argmax(row[:a]))
        f_hat = int(np.argmax(row[a:b]))
        estimate = estimate_coordinates(
            row[b:], b_hat, f_hat, ref_index, kappa, sigma
        )
        truth = sample.label
        b_ok = b_hat == truth.building_seq
        f_ok = f_hat == truth.floor_seq
        building_hits += b_ok
        floor_hits += f_ok
        success_hits += b_ok and f_ok
        x, y = sample.position
        centroid_sum += float(
            np.hypot(estimate.centroid[0] - x, estimate.centroid[1] - y)
        )
        weighted_sum += float(
            np.hypot(estimate.weighted[0] - x, estimate.weighted[1] - y)
        )
        fallback_count += estimate.fallback

    n = len(samples)
    return MetricsReport(
        kappa=kappa,
        sigma=sigma if record_sigma is ... else record_sigma,
        n_samples=n,
        building_hit_rate=100.0 * building_hits / n,
        floor_hit_rate=100.0 * floor_hits / n,
        success_rate=100.0 * success_hits / n,
        error_centroid=centroid_sum / n,
        error_weighted=weighted_sum / n,
        fallback_count=fallback_count,
    )


def evaluate(
    model: FingerprintClassifier,
    samples: list[NormalizedSample],
    ref_index: ReferencePointIndex,
    kappa: int,
    sigma: float,
) -> MetricsReport:
    """Run the model on the samples and score one (kappa, sigma) cell."""
    features = np.stack([s.features for s in samples])
    return evaluate_scores(
        model.predict_scores(features), samples, model.codec, ref_index, kappa, sigma
    )


def run_sweep(
    model: FingerprintClassifier,
    samples: list[NormalizedSample],
    ref_index: ReferencePointIndex,
    kappas: tuple[int, ...] = SWEEP_KAPPAS,
    sigmas: tuple[float, ...] = SWEEP_SIGMAS,
    parallelism: int = 1,
) -> list[MetricsReport]:
    """Evaluate every (kappa, sigma) cell on one set of classifier scores.

    kappa = 1 is evaluated a single time with sigma recorded as None, since
    its single candidate either exists or falls back regardless of the
    threshold. Rows come back in (kappa, sigma) order, identical whether the
    cells run serially or on a thread pool (the model and index are only
    read).
    """
    features = np.stack([s.features for s in samples])
    scores = model.predict_scores(features)
    codec = model.codec
    cells: list[tuple[int, float, float | None]] = []
    for kappa in kappas:
        if kappa == 1:
            cells.append((1, 0.0, None))
        else:
            cells.extend((kappa, sigma, sigma) for sigma in sigmas)

    def run_cell(cell):
        kappa, sigma, recorded_sigma = cell
        return evaluate_scores(
            scores, samples, codec, ref_index, kappa, sigma,
            record_sigma=recorded_sigma,
        )

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(cell) for cell in cells]


def best_report(results: list[MetricsReport]) -> MetricsReport:
    """Highest success rate; ties resolved by lower weighted error, then
    lower centroid error, then lower (kappa, sigma)."""
    if not results:
        raise ValueError("no results to choose from")
    return min(
        results,
        key=lambda r: (
            -r.success_rate,
            r.error_weighted,
            r.error_centroid,
            r.kappa,
            -1.0 if r.sigma is None else r.sigma,
        ),
    )


def format_report(results: list[MetricsReport], fmt: str = "markdown") -> str:
    """Render report rows as a markdown or CSV table.

    Column order is fixed: kappa, sigma, building, floor, success, centroid
    error, weighted error. Rates and errors print with 2 decimal places.
    """
    header = (
        "kappa",
        "sigma",
        "building_pct",
        "floor_pct",
        "success_pct",
        "error_centroid_m",
        "error_weighted_m",
    )
    rows = [
        (
            str(r.kappa),
            "N/A" if r.sigma is None else f"{r.sigma:.1f}",
            f"{r.building_hit_rate:.2f}",
            f"{r.floor_hit_rate:.2f}",
            f"{r.success_rate:.2f}",
            f"{r.error_centroid:.2f}",
            f"{r.error_weighted:.2f}",
        )
        for r in results
    ]
    if fmt == "csv":
        return "\n".join([",".join(header)] + [",".join(row) for row in rows]) + "\n"
    if fmt == "markdown":
        widths = [
            max(len(header[i]), *(len(row[i]) for row in rows)) if rows else len(header[i])
            for i in range(len(header))
        ]

        def line(cells):
            return "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"

        rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([line(header), rule] + [line(row) for row in rows]) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


# --- k-nearest-neighbor baseline -----------------------------------------------


@dataclass(frozen=True)
class KnnReport:
    k: int  # after clamping to the training-set size
    n_samples: int
    building_hit_rate: float  # percentages in [0, 100]
    floor_hit_rate: float
    success_rate: float
    position_error: float  # meters, mean over all samples


def knn_baseline(
    train: list[NormalizedSample],
    val: list[NormalizedSample],
    k: int,
    chunk_size: int = 256,
) -> KnnReport:
    """Plain kNN in normalized RSS space.

    Per level the k nearest training samples vote by majority, a tied vote
    going to the level value of the single nearest neighbor; position is
    the unweighted centroid of the k neighbors. k is clamped to the
    training-set size.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not train or not val:
        raise ValueError("need non-empty train and validation sets")
    k = min(k, len(train))
    x_train = np.stack([s.features for s in train])
    train_b = np.array([s.label.building_seq for s in train])
    train_f = np.array([s.label.floor_seq for s in train])
    train_xy = np.array([s.position for s in train])
    sq_train = np.einsum("ij,ij->i", x_train, x_train)

    building_hits = floor_hits = success_hits = 0
    error_sum = 0.0
    for start in range(0, len(val), chunk_size):
        block = val[start : start + chunk_size]
        x = np.stack([s.features for s in block])
        # squared Euclidean minus the constant ||x||^2 term; the ranking is
        # unchanged, which is all the vote and the centroid need
        d2 = sq_train[None, :] - 2.0 * (x @ x_train.T)
        nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
        # argpartition leaves the kept block unordered; sort so index 0 is
        # the true nearest neighbor (distance ties broken by lower index)
        inner = np.argsort(
            np.take_along_axis(d2, nearest, axis=1), axis=1, kind="stable"
        )
        nearest = np.take_along_axis(nearest, inner, axis=1)
        for i, sample in enumerate(block):
            idx = nearest[i]
            b_hat = _majority(train_b[idx])
            f_hat = _majority(train_f[idx])
            b_ok = b_hat == sample.label.building_seq
            f_ok = f_hat == sample.label.floor_seq
            building_hits += b_ok
            floor_hits += f_ok
            success_hits += b_ok and f_ok
            centroid = train_xy[idx].mean(axis=0)
            error_sum += float(
                np.hypot(
                    centroid[0] - sample.position[0], centroid[1] - sample.position[1]
                )
            )
    n = len(val)
    return KnnReport(
        k=k,
        n_samples=n,
        building_hit_rate=100.0 * building_hits / n,
        floor_hit_rate=100.0 * floor_hits / n,
        success_rate=100.0 * success_hits / n,
        position_error=error_sum / n,
    )


def _majority(values: np.ndarray) -> int:
    """Most frequent value; a tied vote resolves to values[0] (the nearest)."""
    uniq, counts = np.unique(values, return_counts=True)
    winners = uniq[counts == counts.max()]
    if len(winners) == 1:
        return int(winners[0])
    return int(values[0])
