"""Cross-corpus triplet construction and the soft-weighted anchored loss.

Triplets pair a target-corpus anchor with a source positive from the
same gesture cluster and a source negative from a different cluster of
the same emotion. The anchor-negative distance is discounted by
w = exp(-beta * d) where d is the soft-DTW distance between the two
cluster centroids, rescaled to [0, 1] by the model's largest pairwise
centroid distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import common_cluster_ids
from .clustering import ClusterModel
from .errors import (
    ConfigError,
    EmptyBatch,
    MalformedInput,
    NoCommonClusters,
    NonFinite,
    UnknownCluster,
)
from .segmentation import EMOTIONS
from .softdtw import soft_dtw

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class AnchorLossConfig:
    alpha: float = 0.3
    beta: float = 0.2
    gamma_total: float = 0.5
    threshold_percent: float = 25.0
    embedding_distance: str = "squared_euclidean"
    hinge: bool = True
    negative_common_only: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_total", "threshold_percent"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a non-negative real, got {v}")
        if self.embedding_distance != "squared_euclidean":
            raise ConfigError(f"unsupported embedding distance {self.embedding_distance!r}")


@dataclass(frozen=True)
class EmbeddingSample:
    embedding: np.ndarray
    emotion: str
    corpus: str
    ag_cluster: int
    sample_id: str

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise MalformedInput(f"embedding must be a vector, got shape {emb.shape}")
        if not np.isfinite(emb).all():
            raise MalformedInput("embedding must be finite")
        if self.emotion not in EMOTIONS:
            raise MalformedInput(f"emotion {self.emotion!r} not in {EMOTIONS}")
        if self.corpus not in (SOURCE, TARGET):
            raise MalformedInput(f"corpus must be {SOURCE!r} or {TARGET!r}")
        object.__setattr__(self, "embedding", emb)


@dataclass(frozen=True)
class Triplet:
    anchor: EmbeddingSample
    positive: EmbeddingSample
    negative: EmbeddingSample
    weight: float

    def __post_init__(self):
        if self.anchor.corpus != TARGET:
            raise MalformedInput("anchor must come from the target corpus")
        if self.positive.corpus != SOURCE or self.negative.corpus != SOURCE:
            raise MalformedInput("positive and negative must come from the source corpus")
        if self.positive.ag_cluster != self.anchor.ag_cluster:
            raise MalformedInput("positive must share the anchor's cluster")
        if self.negative.ag_cluster == self.anchor.ag_cluster:
            raise MalformedInput("negative must come from a different cluster")
        if not (self.positive.emotion == self.negative.emotion == self.anchor.emotion):
            raise MalformedInput("all three members must share the anchor's emotion")
        if not (0.0 < self.weight <= 1.0):
            raise MalformedInput(f"weight must lie in (0, 1], got {self.weight}")


def centroid_weight_matrix(model: ClusterModel, beta: float) -> np.ndarray:
    """All pairwise anchor-negative weights exp(-beta * normalized distance)."""
    k = model.k
    raw = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            raw[i, j] = raw[j, i] = soft_dtw(model.centroids[i], model.centroids[j], model.params)
    top = raw.max()
    norm = np.clip(raw, 0.0, None) / top if top > 0 else np.zeros_like(raw)
    return np.exp(-beta * norm)


def centroid_weight(cluster_i: int, cluster_n: int, model: ClusterModel, beta: float) -> float:
    """Weight for one cluster pair; 1 at zero distance, decreasing with it."""
    for c in (cluster_i, cluster_n):
        if not 0 <= c < model.k:
            raise UnknownCluster(f"cluster {c} outside [0, {model.k})")
    return float(centroid_weight_matrix(model, beta)[cluster_i, cluster_n])


def triplet_loss_terms(
    z_anchor: np.ndarray,
    z_pos: np.ndarray,
    z_neg: np.ndarray,
    weights: np.ndarray,
    alpha: float,
    hinge: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-triplet losses and exact gradients for batches of embeddings.

    Loss per row: hinge(d(a, p) - w * d(a, n) + alpha) with squared
    Euclidean d; without the hinge the raw value is kept.
    """
    da = z_anchor - z_pos
    dn = z_anchor - z_neg
    d_ap = (da * da).sum(axis=1)
    d_an = (dn * dn).sum(axis=1)
    raw = d_ap - weights * d_an + alpha
    if hinge:
        active = (raw > 0).astype(np.float64)
        losses = np.maximum(raw, 0.0)
    else:
        active = np.ones_like(raw)
        losses = raw
    scale = active[:, None]
    g_anchor = scale * (2.0 * da - weights[:, None] * 2.0 * dn)
    g_pos = scale * (-2.0 * da)
    g_neg = scale * (weights[:, None] * 2.0 * dn)
    return losses, g_anchor, g_pos, g_neg


def ag_loss(
    triplets: Sequence[Triplet], cfg: AnchorLossConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed anchored triplet loss and its gradient per embedding.

    Gradients are keyed by sample id and accumulated over every role the
    sample plays in the batch.
    """
    if not triplets:
        raise EmptyBatch("ag_loss over an empty triplet list")
    za = np.stack([t.anchor.embedding for t in triplets])
    zp = np.stack([t.positive.embedding for t in triplets])
    zn = np.stack([t.negative.embedding for t in triplets])
    w = np.array([t.weight for t in triplets])
    losses, ga, gp, gn = triplet_loss_terms(za, zp, zn, w, cfg.alpha, cfg.hinge)

    grads: dict[str, np.ndarray] = {}
    for i, t in enumerate(triplets):
        for sample, g in ((t.anchor, ga[i]), (t.positive, gp[i]), (t.negative, gn[i])):
            if sample.sample_id in grads:
                grads[sample.sample_id] = grads[sample.sample_id] + g
            else:
                grads[sample.sample_id] = g.copy()
    return float(losses.sum()), grads


def total_loss(ce: float, ag: float, gamma_total: float) -> float:
    """Classifier loss plus the weighted anchoring penalty."""
    if not (np.isfinite(ce) and np.isfinite(ag) and np.isfinite(gamma_total)):
        raise NonFinite("total_loss requires finite inputs")
    return float(ce + gamma_total * ag)


@dataclass(frozen=True)
class TripletIndexBatch:
    anchor_idx: np.ndarray  # indices into the target pool
    positive_idx: np.ndarray  # indices into the source pool
    negative_idx: np.ndarray  # indices into the source pool
    n_skipped: int
    common_clusters: tuple[int, ...]


def sample_triplet_indices(
    source_groups: Sequence[int],
    source_emotions: Sequence[int],
    target_groups: Sequence[int],
    target_emotions: Sequence[int],
    n_groups: int,
    threshold_percent: float,
    rng: np.random.Generator,
    count: int | None = None,
    negative_common_only: bool = True,
) -> TripletIndexBatch:
    """Index-level triplet sampling shared by the API and the trainer.

    With count=None every eligible anchor is used once in pool order;
    otherwise `count` anchors are drawn uniformly with replacement.
    Anchors without a valid positive or negative are skipped and counted.
    """
    sg = np.asarray(list(source_groups), dtype=np.int64)
    se = np.asarray(list(source_emotions), dtype=np.int64)
    tg = np.asarray(list(target_groups), dtype=np.int64)
    te = np.asarray(list(target_emotions), dtype=np.int64)

    common = common_cluster_ids(sg, tg, n_groups, threshold_percent)
    if not common:
        raise NoCommonClusters(
            f"no cluster reaches a {threshold_percent}% share in both corpora"
        )
    common_mask = np.zeros(n_groups, dtype=bool)
    common_mask[common] = True

    by_group_emotion: dict[tuple[int, int], np.ndarray] = {}
    for g in range(n_groups):
        for e in np.unique(se):
            idx = np.flatnonzero((sg == g) & (se == e))
            if idx.size:
                by_group_emotion[(g, int(e))] = idx

    eligible = np.flatnonzero(common_mask[tg])
    if count is None:
        anchor_order = eligible
    else:
        if eligible.size == 0:
            raise NoCommonClusters("no target sample falls in a common cluster")
        anchor_order = eligible[rng.integers(0, eligible.size, size=count)]

    anchors: list[int] = []
    positives: list[int] = []
    negatives: list[int] = []
    skipped = 0
    for a in anchor_order:
        g = int(tg[a])
        e = int(te[a])
        pos_pool = by_group_emotion.get((g, e))
        neg_groups = [
            og
            for og in range(n_groups)
            if og != g and (common_mask[og] or not negative_common_only)
        ]
        neg_pools = [by_group_emotion[(og, e)] for og in neg_groups if (og, e) in by_group_emotion]
        if pos_pool is None or not neg_pools:
            skipped += 1
            continue
        neg_pool = np.concatenate(neg_pools)
        anchors.append(int(a))
        positives.append(int(pos_pool[rng.integers(pos_pool.size)]))
        negatives.append(int(neg_pool[rng.integers(neg_pool.size)]))
    return TripletIndexBatch(
        anchor_idx=np.array(anchors, dtype=np.int64),
        positive_idx=np.array(positives, dtype=np.int64),
        negative_idx=np.array(negatives, dtype=np.int64),
        n_skipped=skipped,
        common_clusters=tuple(common),
    )


@dataclass(frozen=True)
class TripletSample:
    triplets: tuple[Triplet, ...]
    n_skipped: int
    common_clusters: tuple[int, ...]


def sample_triplets(
    source_pool: Sequence[EmbeddingSample],
    target_pool: Sequence[EmbeddingSample],
    model: ClusterModel | None,
    cfg: AnchorLossConfig,
    seed: int,
    count: int | None = None,
    weight_matrix: np.ndarray | None = None,
) -> TripletSample:
    """Draw anchored triplets from two embedding pools.

    Weights come from the model's centroid geometry unless an explicit
    matrix is supplied (the vowel-keyed ablation passes all-ones).
    """
    if weight_matrix is None:
        if model is None:
            raise ConfigError("sample_triplets needs a cluster model or a weight matrix")
        weight_matrix = centroid_weight_matrix(model, cfg.beta)
    n_groups = weight_matrix.shape[0]

    emo_ids = {e: i for i, e in enumerate(EMOTIONS)}
    rng = np.random.default_rng(seed)
    batch = sample_triplet_indices(
        [s.ag_cluster for s in source_pool],
        [emo_ids[s.emotion] for s in source_pool],
        [t.ag_cluster for t in target_pool],
        [emo_ids[t.emotion] for t in target_pool],
        n_groups,
        cfg.threshold_percent,
        rng,
        count=count,
        negative_common_only=cfg.negative_common_only,
    )
    triplets = tuple(
        Triplet(
            anchor=target_pool[a],
            positive=source_pool[p],
            negative=source_pool[n],
            weight=float(weight_matrix[target_pool[a].ag_cluster, source_pool[n].ag_cluster]),
        )
        for a, p, n in zip(batch.anchor_idx, batch.positive_idx, batch.negative_idx)
    )
    return TripletSample(
        triplets=triplets, n_skipped=batch.n_skipped, common_clusters=batch.common_clusters
    )
