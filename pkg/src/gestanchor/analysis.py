"""Cross-corpus cluster overlap and gesture-to-acoustic association.

Overlap scores two corpora that were pushed through the same cluster
model: clusters whose within-corpus share falls below the threshold in
either corpus are excluded, and the remaining common clusters contribute
the smaller of their two shares.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .clustering import AssignmentSet
from .errors import DataError, EmptyCorpus, JoinError, ModelMismatch

DEFAULT_THRESHOLD_PERCENT = 25.0


@dataclass(frozen=True)
class ClusterOverlap:
    n1: int
    n2: int
    share1: float
    share2: float
    common: bool


@dataclass(frozen=True)
class OverlapReport:
    per_cluster: dict[int, ClusterOverlap]
    k_ct: int
    sim_percent: float
    threshold_percent: float
    n1_total: int
    n2_total: int
    warning: bool


def cluster_counts(cluster_ids: Sequence[int], k: int) -> np.ndarray:
    ids = np.asarray(list(cluster_ids), dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise DataError(f"cluster id outside [0, {k})")
    return np.bincount(ids, minlength=k)


def common_cluster_ids(
    ids1: Sequence[int],
    ids2: Sequence[int],
    k: int,
    threshold_percent: float = DEFAULT_THRESHOLD_PERCENT,
) -> list[int]:
    """Clusters whose share is at least the threshold in both corpora."""
    c1 = cluster_counts(ids1, k)
    c2 = cluster_counts(ids2, k)
    if c1.sum() == 0 or c2.sum() == 0:
        raise EmptyCorpus("cannot compute common clusters of an empty corpus")
    s1 = c1 / c1.sum()
    s2 = c2 / c2.sum()
    floor = threshold_percent / 100.0
    return [c for c in range(k) if c1[c] > 0 and c2[c] > 0 and s1[c] >= floor and s2[c] >= floor]


def overlap(
    assign1: AssignmentSet,
    assign2: AssignmentSet,
    threshold_percent: float = DEFAULT_THRESHOLD_PERCENT,
) -> OverlapReport:
    """Cross-corpus cluster overlap of two assignment sets from one model."""
    if assign1.model_id != assign2.model_id:
        raise ModelMismatch(
            f"assignments come from different models: {assign1.model_id} vs {assign2.model_id}"
        )
    if len(assign1) == 0 or len(assign2) == 0:
        raise EmptyCorpus("overlap needs non-empty assignment sets for both corpora")

    k = assign1.k
    c1 = cluster_counts(assign1.cluster_ids(), k)
    c2 = cluster_counts(assign2.cluster_ids(), k)
    n1 = int(c1.sum())
    n2 = int(c2.sum())
    floor = threshold_percent / 100.0

    per_cluster: dict[int, ClusterOverlap] = {}
    commons: list[int] = []
    for c in range(k):
        share1 = c1[c] / n1
        share2 = c2[c] / n2
        common = bool(c1[c] > 0 and c2[c] > 0 and share1 >= floor and share2 >= floor)
        if common:
            commons.append(c)
        per_cluster[c] = ClusterOverlap(
            n1=int(c1[c]), n2=int(c2[c]), share1=float(share1), share2=float(share2), common=common
        )

    if commons:
        sim = sum(min(per_cluster[c].share1, per_cluster[c].share2) for c in commons)
        sim = sim / len(commons) * 100.0
        warning = False
    else:
        sim = 0.0
        warning = True
    return OverlapReport(
        per_cluster=per_cluster,
        k_ct=len(commons),
        sim_percent=float(sim),
        threshold_percent=float(threshold_percent),
        n1_total=n1,
        n2_total=n2,
        warning=warning,
    )


@dataclass(frozen=True)
class AssociationMatrix:
    row_ids: tuple[int, ...]
    col_ids: tuple[int, ...]
    counts: np.ndarray
    row_normalized: np.ndarray
    empty_rows: tuple[int, ...]
    emotion: str


def association(
    ag_assignments: AssignmentSet,
    acoustic_assignments: AssignmentSet,
    emotion_filter: str | None = None,
    emotions: Mapping[str, str] | None = None,
) -> AssociationMatrix:
    """How samples of each gesture cluster spread over acoustic clusters.

    Joins the two assignment sets on sample id; with an emotion filter a
    sample-to-emotion mapping must be supplied.
    """
    ag_by_id = {a.segment_ref: a.cluster_id for a in ag_assignments}
    ac_by_id = {a.segment_ref: a.cluster_id for a in acoustic_assignments}
    if set(ag_by_id) != set(ac_by_id):
        missing = set(ag_by_id) ^ set(ac_by_id)
        raise JoinError(f"sample ids differ between assignment sets ({len(missing)} unmatched)")

    ids = sorted(ag_by_id)
    if emotion_filter is not None:
        if emotions is None:
            raise JoinError("an emotion filter requires a sample-to-emotion mapping")
        unknown = [i for i in ids if i not in emotions]
        if unknown:
            raise JoinError(f"{len(unknown)} samples lack an emotion tag")
        ids = [i for i in ids if emotions[i] == emotion_filter]

    k_ag = ag_assignments.k
    k_ac = acoustic_assignments.k
    counts = np.zeros((k_ag, k_ac), dtype=np.int64)
    for sid in ids:
        counts[ag_by_id[sid], ac_by_id[sid]] += 1

    row_sums = counts.sum(axis=1)
    normalized = np.zeros_like(counts, dtype=np.float64)
    nonzero = row_sums > 0
    normalized[nonzero] = counts[nonzero] / row_sums[nonzero, None]
    return AssociationMatrix(
        row_ids=tuple(range(k_ag)),
        col_ids=tuple(range(k_ac)),
        counts=counts,
        row_normalized=normalized,
        empty_rows=tuple(int(r) for r in np.flatnonzero(~nonzero)),
        emotion=emotion_filter if emotion_filter is not None else "all",
    )


def concentration(matrix: AssociationMatrix) -> np.ndarray:
    """Per-row normalized entropy in [0, 1]; lower means more one-to-one.

    Empty rows yield NaN.
    """
    n_cols = matrix.row_normalized.shape[1]
    out = np.full(matrix.row_normalized.shape[0], np.nan)
    for r, row in enumerate(matrix.row_normalized):
        if r in matrix.empty_rows:
            continue
        p = row[row > 0]
        out[r] = float(-(p * np.log(p)).sum() / np.log(n_cols))
    return out


def vowel_emotion_overlap_grid(
    assign1: AssignmentSet,
    assign2: AssignmentSet,
    meta1: Mapping[str, Mapping[str, str]],
    meta2: Mapping[str, Mapping[str, str]],
    vowels: Sequence[str],
    emotions: Sequence[str],
    threshold_percent: float = DEFAULT_THRESHOLD_PERCENT,
) -> dict:
    """Per-vowel overlap table plus emotion-average block.

    `meta*` maps segment id to its tags (needs "vowel" and "emotion").
    Cells of the cluster block hold each common cluster's contribution
    (the smaller share, as a percentage) for that vowel; missing or
    below-threshold clusters are zero. The average block holds the full
    overlap score per vowel, over all samples and per emotion.
    """
    k = assign1.k

    def subset(aset: AssignmentSet, meta, vowel=None, emotion=None):
        items = []
        for a in aset:
            tags = meta.get(a.segment_ref)
            if tags is None:
                raise JoinError(f"segment {a.segment_ref!r} missing from metadata")
            if vowel is not None and tags["vowel"] != vowel:
                continue
            if emotion is not None and tags["emotion"] != emotion:
                continue
            items.append(a)
        return AssignmentSet(aset.model_id, aset.modality, aset.k, tuple(items))

    def safe_overlap(s1, s2):
        if len(s1) == 0 or len(s2) == 0:
            return None
        return overlap(s1, s2, threshold_percent)

    cluster_block: dict[int, dict[str, float]] = {c: {} for c in range(k)}
    averages: dict[str, dict[str, float]] = {"All": {}}
    for vowel in vowels:
        rep = safe_overlap(subset(assign1, meta1, vowel=vowel), subset(assign2, meta2, vowel=vowel))
        for c in range(k):
            contrib = 0.0
            if rep is not None and rep.per_cluster[c].common:
                contrib = min(rep.per_cluster[c].share1, rep.per_cluster[c].share2) * 100.0
            cluster_block[c][vowel] = contrib
        averages["All"][vowel] = rep.sim_percent if rep is not None else 0.0
        for emotion in emotions:
            rep_e = safe_overlap(
                subset(assign1, meta1, vowel=vowel, emotion=emotion),
                subset(assign2, meta2, vowel=vowel, emotion=emotion),
            )
            averages.setdefault(emotion, {})[vowel] = rep_e.sim_percent if rep_e is not None else 0.0
    return {"clusters": cluster_block, "averages": averages, "vowels": list(vowels)}
