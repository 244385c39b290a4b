"""Time-series k-means over gesture or acoustic segments.

Lloyd-style alternation with soft-DTW as the metric and soft-DTW
barycenters as centroids. Fits are deterministic for a given seed; the
recorded inertia never increases because centroid updates warm-start
from the previous centroid and only accept descent steps.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DimensionMismatch,
    InsufficientRange,
    TooFewSamples,
)
from .seeding import substream
from .softdtw import (
    SoftDtwParams,
    median_length,
    pairwise_distances,
    resample_series,
    soft_dtw_barycenter,
)

DEFAULT_MAX_ITER = 50
DEFAULT_BARY_ITERS = 20

# Mouth-profile columns matching the usual reporting trio: the two mouth
# corners' x coordinates (landmarks 48, 54) and the lower-mid y (57).
DEFAULT_PROFILE_COLUMNS = (
    ("left_corner_x", 0),
    ("right_corner_x", 12),
    ("lower_mid_y", 19),
)


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: tuple[np.ndarray, ...]
    params: SoftDtwParams
    inertia_history: tuple[float, ...]
    seed: int
    modality: str
    centroid_length: int
    model_id: str = ""

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if len(self.centroids) != self.k:
            raise ConfigError("number of centroids must equal k")
        if not self.model_id:
            object.__setattr__(self, "model_id", _model_digest(self))


def _model_digest(model: ClusterModel) -> str:
    h = hashlib.sha256()
    h.update(f"{model.k}|{model.params.gamma}|{model.seed}|{model.modality}".encode())
    for c in model.centroids:
        h.update(np.ascontiguousarray(c, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class Assignment:
    segment_ref: str
    cluster_id: int
    distance: float


@dataclass(frozen=True)
class AssignmentSet:
    model_id: str
    modality: str
    k: int
    items: tuple[Assignment, ...]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def cluster_ids(self) -> np.ndarray:
        return np.array([a.cluster_id for a in self.items], dtype=np.int64)

    def segment_refs(self) -> list[str]:
        return [a.segment_ref for a in self.items]


@dataclass(frozen=True)
class ElbowResult:
    k_star: int
    curve: tuple[tuple[int, float], ...]


def _series_and_ids(segments: Sequence) -> tuple[list[np.ndarray], list[str]]:
    series: list[np.ndarray] = []
    ids: list[str] = []
    for i, seg in enumerate(segments):
        arr = getattr(seg, "series", seg)
        series.append(np.asarray(arr, dtype=np.float64))
        ids.append(getattr(seg, "segment_id", f"s{i}"))
    dims = {s.shape[1] for s in series}
    if len(dims) > 1:
        raise DimensionMismatch(f"segments disagree on dimension: {sorted(dims)}")
    return series, ids


def fit(
    segments: Sequence,
    k: int,
    params: SoftDtwParams = SoftDtwParams(),
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    bary_iters: int = DEFAULT_BARY_ITERS,
    modality: str = "gesture",
) -> ClusterModel:
    """Fit a k-cluster model with k-means++ seeding over soft-DTW distances."""
    series, _ = _series_and_ids(segments)
    n = len(series)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if n < k:
        raise TooFewSamples(f"need at least k={k} segments, got {n}")

    length = median_length(series)
    rng = substream(seed, "kmeans.init")
    centroids = [resample_series(series[i], length) for i in _plus_plus_indices(series, k, params, rng)]

    inertia_history: list[float] = []
    prev_assign: np.ndarray | None = None
    for _ in range(max_iter):
        dists = pairwise_distances(series, centroids, params)
        assign = np.argmin(dists, axis=1)
        assign, dists = _fix_empty_clusters(series, centroids, dists, assign, k, length, params)
        inertia_history.append(float(dists[np.arange(n), assign].sum()))

        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        for c in range(k):
            members = [series[i] for i in np.flatnonzero(assign == c)]
            if not members:
                continue
            result = soft_dtw_barycenter(
                members, length=length, params=params, iters=bary_iters, init=centroids[c]
            )
            centroids[c] = result.center

    return ClusterModel(
        k=k,
        centroids=tuple(centroids),
        params=params,
        inertia_history=tuple(inertia_history),
        seed=seed,
        modality=modality,
        centroid_length=length,
    )


def _plus_plus_indices(
    series: list[np.ndarray], k: int, params: SoftDtwParams, rng: np.random.Generator
) -> list[int]:
    n = len(series)
    chosen = [int(rng.integers(n))]
    min_dist = pairwise_distances(series, [series[chosen[0]]], params)[:, 0]
    while len(chosen) < k:
        # soft-DTW can dip below zero on near-identical pairs; clamp so the
        # sampling weights stay valid
        weights = np.square(np.clip(min_dist, 0.0, None))
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=weights / total))
        else:
            remaining = [i for i in range(n) if i not in chosen]
            nxt = int(remaining[rng.integers(len(remaining))])
        chosen.append(nxt)
        d_new = pairwise_distances(series, [series[nxt]], params)[:, 0]
        min_dist = np.minimum(min_dist, d_new)
    return chosen


def _fix_empty_clusters(series, centroids, dists, assign, k, length, params):
    n = len(series)
    for _ in range(k):
        counts = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        c = int(empty[0])
        # reseed with the sample currently farthest from its own centroid
        farthest = int(np.argmax(dists[np.arange(n), assign]))
        centroids[c] = resample_series(series[farthest], length)
        dists = dists.copy()
        dists[:, c] = pairwise_distances(series, [centroids[c]], params)[:, 0]
        assign = np.argmin(dists, axis=1)
    return assign, dists


def predict(model: ClusterModel, segments: Sequence) -> AssignmentSet:
    """Assign each segment to its nearest centroid (ties to the lowest id)."""
    series, ids = _series_and_ids(segments)
    if series and series[0].shape[1] != model.centroids[0].shape[1]:
        raise DimensionMismatch(
            f"segments have dimension {series[0].shape[1]}, model expects "
            f"{model.centroids[0].shape[1]}"
        )
    dists = pairwise_distances(series, list(model.centroids), model.params)
    assign = np.argmin(dists, axis=1)
    items = tuple(
        Assignment(segment_ref=ids[i], cluster_id=int(assign[i]), distance=float(dists[i, assign[i]]))
        for i in range(len(series))
    )
    return AssignmentSet(model_id=model.model_id, modality=model.modality, k=model.k, items=items)


def select_elbow_from_curve(curve: Sequence[tuple[int, float]]) -> int:
    """Interior k maximizing the discrete second difference of inertia."""
    ks = [int(k) for k, _ in curve]
    ys = [float(y) for _, y in curve]
    if len(ks) < 3:
        raise InsufficientRange("elbow selection needs at least 3 k values")
    if any(b - a != 1 for a, b in zip(ks, ks[1:])):
        raise ConfigError("elbow curve must cover consecutive integer k values")
    curvature = [ys[i - 1] - 2.0 * ys[i] + ys[i + 1] for i in range(1, len(ks) - 1)]
    best = int(np.argmax(curvature))
    return ks[1 + best]


def elbow_select(
    segments: Sequence,
    k_range: Sequence[int] = range(5, 31),
    params: SoftDtwParams = SoftDtwParams(),
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    bary_iters: int = DEFAULT_BARY_ITERS,
    modality: str = "gesture",
) -> ElbowResult:
    """Fit every k in the range and pick the sharpest inertia elbow."""
    ks = sorted(int(k) for k in k_range)
    if len(ks) < 3:
        raise InsufficientRange(f"k range must contain at least 3 values, got {ks}")
    series, _ = _series_and_ids(segments)
    if len(series) < max(ks):
        raise TooFewSamples(f"need at least {max(ks)} segments, got {len(series)}")
    curve = []
    for k in ks:
        child_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        model = fit(
            segments,
            k,
            params=params,
            seed=child_seed,
            max_iter=max_iter,
            bary_iters=bary_iters,
            modality=modality,
        )
        curve.append((k, model.inertia_history[-1]))
    return ElbowResult(k_star=select_elbow_from_curve(curve), curve=tuple(curve))


@dataclass(frozen=True)
class ProfileCurve:
    mean: np.ndarray
    std: np.ndarray


def cluster_profile(
    model: ClusterModel,
    assignments: AssignmentSet,
    segments: Sequence,
    columns: Sequence[tuple[str, int]] = DEFAULT_PROFILE_COLUMNS,
) -> dict[int, dict[str, ProfileCurve] | None]:
    """Per-cluster mean and std curves for selected series columns.

    Members are resampled to the centroid length; empty clusters map to
    None rather than raising.
    """
    series, ids = _series_and_ids(segments)
    by_id = dict(zip(ids, series))
    length = model.centroid_length
    member_rows: dict[int, list[np.ndarray]] = {c: [] for c in range(model.k)}
    for a in assignments:
        if a.segment_ref not in by_id:
            raise DataError(f"assignment references unknown segment {a.segment_ref!r}")
        member_rows[a.cluster_id].append(resample_series(by_id[a.segment_ref], length))

    profiles: dict[int, dict[str, ProfileCurve] | None] = {}
    for c in range(model.k):
        rows = member_rows[c]
        if not rows:
            profiles[c] = None
            continue
        stack = np.stack(rows)  # (m, length, D)
        profiles[c] = {
            name: ProfileCurve(mean=stack[:, :, col].mean(axis=0), std=stack[:, :, col].std(axis=0))
            for name, col in columns
        }
    return profiles


def purity(cluster_ids: Sequence[int], truth_labels: Sequence) -> float:
    """Fraction of samples in their cluster's majority truth class."""
    cluster_ids = list(cluster_ids)
    truth_labels = list(truth_labels)
    if len(cluster_ids) != len(truth_labels):
        raise DataError("cluster ids and truth labels differ in length")
    if not cluster_ids:
        raise DataError("purity of an empty assignment")
    majority = 0
    for c in set(cluster_ids):
        labels = [truth_labels[i] for i, cid in enumerate(cluster_ids) if cid == c]
        majority += max(labels.count(x) for x in set(labels))
    return majority / len(cluster_ids)
