"""Feedforward emotion classifier trained with the anchored triplet penalty.

A four-layer fully connected network over fixed-dimension acoustic
features, optimized with Adam (weight decay added to the gradient).
Cross-entropy is computed on labeled source batches; the anchoring term
acts on the penultimate-layer activations of freshly sampled triplets.
All randomness flows from named substreams of one seed, so runs are
bit-reproducible and a gamma=0 run takes exactly the plain
cross-entropy path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .anchoring import (
    AnchorLossConfig,
    centroid_weight_matrix,
    sample_triplet_indices,
    triplet_loss_terms,
)
from .clustering import ClusterModel
from .errors import ConfigError, DataError, MissingClass, NoCommonClusters
from .seeding import substream
from .segmentation import EMOTIONS

N_CLASSES = len(EMOTIONS)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MODE_AG = "ag"
MODE_HARD_AG = "hard-ag"
MODE_CE = "ce"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 70
    early_stop_patience: int = 10
    seed: int = 0
    network: tuple[int, int, int] = (64, 32, 16)
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    triplets_per_batch: int | None = None

    def __post_init__(self):
        positives = {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
        }
        for name, v in positives.items():
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if len(self.network) != 3 or any(int(h) < 1 for h in self.network):
            raise ConfigError(f"network must give 3 positive hidden sizes, got {self.network}")
        if not (0 < self.val_fraction < 1 and 0 <= self.test_fraction < 1):
            raise ConfigError("val/test fractions must lie in (0, 1)")
        object.__setattr__(self, "network", tuple(int(h) for h in self.network))


@dataclass
class Pool:
    """One corpus: features, emotion ids, anchor group ids, sample ids."""

    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        n = self.X.shape[0]
        if self.X.ndim != 2 or not np.isfinite(self.X).all():
            raise DataError("features must be a finite (n, d) matrix")
        if self.y.shape != (n,) or self.groups.shape != (n,) or len(self.ids) != n:
            raise DataError("features, labels, groups, and ids must agree in length")
        if n and (self.y.min() < 0 or self.y.max() >= N_CLASSES):
            raise DataError(f"emotion ids must lie in [0, {N_CLASSES})")

    def __len__(self) -> int:
        return self.X.shape[0]


class Classifier:
    """Four fully connected layers with ReLU; penultimate feeds the loss."""

    def __init__(self, dim_in: int, hidden: tuple[int, int, int], rng: np.random.Generator):
        sizes = [dim_in, *hidden, N_CLASSES]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.dim_in = dim_in
        self.hidden = hidden

    def forward(self, X: np.ndarray):
        acts = [np.asarray(X, dtype=np.float64)]
        pre = []
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W + b
            pre.append(z)
            acts.append(np.maximum(z, 0.0) if layer < len(self.weights) - 1 else z)
        return acts[-1], (acts, pre)

    def penultimate(self, X: np.ndarray) -> np.ndarray:
        _, (acts, _) = self.forward(X)
        return acts[-2]

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(X)
        return np.argmax(logits, axis=1)

    def zero_grads(self):
        return (
            [np.zeros_like(W) for W in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def backward(self, cache, d_out: np.ndarray, grads, from_layer: int | None = None):
        """Accumulate parameter grads from an upstream gradient.

        `from_layer` is the index of the activation the gradient applies
        to (len(weights) for the logits, len(weights)-1 for the
        penultimate activations).
        """
        acts, pre = cache
        gW, gb = grads
        start = len(self.weights) if from_layer is None else from_layer
        delta = d_out
        for layer in range(start - 1, -1, -1):
            if layer < start - 1 or start <= len(self.weights) - 1:
                # gradient arrives at a ReLU output
                delta = delta * (pre[layer] > 0)
            gW[layer] += acts[layer].T @ delta
            gb[layer] += delta.sum(axis=0)
            if layer:
                delta = delta @ self.weights[layer].T
        return grads

    def get_flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[offset : offset + W.size].reshape(W.shape).copy()
            offset += W.size
            self.biases[i] = vec[offset : offset + b.size].copy()
            offset += b.size
        if offset != vec.size:
            raise ConfigError(f"flat vector has {vec.size} values, expected {offset}")


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and the gradient on the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = logits.shape[0]
    loss = float(-log_probs[np.arange(n), y].mean())
    probs = np.exp(log_probs)
    probs[np.arange(n), y] -= 1.0
    return loss, probs / n


def batch_loss_and_grads(
    net: Classifier,
    X_ce: np.ndarray,
    y_ce: np.ndarray,
    trip_inputs: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None,
    cfg: AnchorLossConfig,
):
    """Cross-entropy plus the mean anchored triplet penalty, with grads.

    `trip_inputs` holds raw feature rows (anchors, positives, negatives,
    weights); the anchoring term is averaged over triplets so its scale
    does not depend on the batch size.
    """
    grads = net.zero_grads()

    logits, cache = net.forward(X_ce)
    l_er, d_logits = cross_entropy(logits, y_ce)
    net.backward(cache, d_logits, grads)

    l_ag = 0.0
    if trip_inputs is not None and cfg.gamma_total > 0:
        xa, xp, xn, w = trip_inputs
        if xa.shape[0] > 0:
            n_trip = xa.shape[0]
            stacked = np.concatenate([xa, xp, xn])
            _, cache_t = net.forward(stacked)
            penult = cache_t[0][-2]
            za, zp, zn = np.split(penult, 3)
            losses, ga, gp, gn = triplet_loss_terms(za, zp, zn, w, cfg.alpha, cfg.hinge)
            l_ag = float(losses.sum() / n_trip)
            d_penult = np.concatenate([ga, gp, gn]) * (cfg.gamma_total / n_trip)
            net.backward(cache_t, d_penult, grads, from_layer=len(net.weights) - 1)

    l_total = l_er + cfg.gamma_total * l_ag
    return l_er, l_ag, l_total, grads


class Adam:
    def __init__(self, shapes: list[np.ndarray], lr: float, weight_decay: float):
        self.lr = lr
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in shapes]
        self.v = [np.zeros_like(p) for p in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            g = g + self.weight_decay * p
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + ADAM_EPS)


def uar(predictions: Sequence, labels: Sequence, n_classes: int = N_CLASSES) -> float:
    """Unweighted average recall: the mean of per-class recalls."""
    pred = _as_class_ids(predictions)
    true = _as_class_ids(labels)
    if pred.shape != true.shape:
        raise DataError("predictions and labels differ in length")
    recalls = []
    for c in range(n_classes):
        support = true == c
        if not support.any():
            raise MissingClass(f"class {c} has no samples in the labels")
        recalls.append((pred[support] == c).sum() / support.sum())
    return float(np.mean(recalls))


def _as_class_ids(values: Sequence) -> np.ndarray:
    values = list(values)
    if values and isinstance(values[0], str):
        lookup = {e: i for i, e in enumerate(EMOTIONS)}
        return np.array([lookup[v] for v in values], dtype=np.int64)
    return np.asarray(values, dtype=np.int64)


def recall_by_class(predictions: np.ndarray, labels: np.ndarray, n_classes: int = N_CLASSES):
    pred = _as_class_ids(predictions)
    true = _as_class_ids(labels)
    out = {}
    for c in range(n_classes):
        support = true == c
        out[EMOTIONS[c]] = float((pred[support] == c).sum() / support.sum()) if support.any() else None
    return out


def confusion_matrix(predictions, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    pred = _as_class_ids(predictions)
    true = _as_class_ids(labels)
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true, pred):
        out[t, p] += 1
    return out


def mean_common_cluster_gap(
    h_source: np.ndarray,
    source_groups: np.ndarray,
    h_target: np.ndarray,
    target_groups: np.ndarray,
    common: Sequence[int],
) -> float:
    """Mean pairwise squared distance between corpora inside common clusters.

    Uses the moment identity E||x-y||^2 = ||mu_x-mu_y||^2 + tr(var_x)
    + tr(var_y), averaged over common clusters populated on both sides.
    """
    gaps = []
    for c in common:
        hs = h_source[source_groups == c]
        ht = h_target[target_groups == c]
        if hs.shape[0] == 0 or ht.shape[0] == 0:
            continue
        mu_diff = hs.mean(axis=0) - ht.mean(axis=0)
        gaps.append(
            float(mu_diff @ mu_diff + hs.var(axis=0).sum() + ht.var(axis=0).sum())
        )
    return float(np.mean(gaps)) if gaps else float("nan")


@dataclass
class TrainResult:
    classifier: Classifier
    history: list[dict]
    best_epoch: int
    best_val_uar: float
    test_uar: float
    test_recalls: dict
    confusion: np.ndarray
    common_clusters: tuple[int, ...]
    test_ids: tuple[str, ...] = field(default_factory=tuple)


def train(
    source: Pool,
    target: Pool,
    cfg: AnchorLossConfig,
    tcfg: TrainConfig,
    mode: str = MODE_AG,
    model: ClusterModel | None = None,
    weight_matrix: np.ndarray | None = None,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> TrainResult:
    """Train the classifier on the source corpus with optional anchoring.

    The target corpus is split (by seed) into a validation part driving
    early stopping, a held-out test part, and an anchor pool providing
    unlabeled anchors. mode "ce" and any run with gamma_total == 0 take
    the identical plain cross-entropy path.
    """
    if mode not in (MODE_AG, MODE_HARD_AG, MODE_CE):
        raise ConfigError(f"unknown mode {mode!r}")
    if len(source) == 0 or len(target) == 0:
        raise DataError("both corpora must be non-empty")
    if source.X.shape[1] != target.X.shape[1]:
        raise DataError("source and target feature dimensions differ")

    anchoring_on = mode != MODE_CE and cfg.gamma_total > 0
    if anchoring_on:
        if weight_matrix is None:
            if mode == MODE_HARD_AG:
                n_groups = int(max(source.groups.max(), target.groups.max())) + 1
                weight_matrix = np.ones((n_groups, n_groups))
            else:
                if model is None:
                    raise ConfigError("mode 'ag' needs a cluster model or weight matrix")
                weight_matrix = centroid_weight_matrix(model, cfg.beta)
        n_groups = weight_matrix.shape[0]
        for pool, name in ((source, "source"), (target, "target")):
            if len(pool) and (pool.groups.min() < 0 or pool.groups.max() >= n_groups):
                raise DataError(f"{name} group ids fall outside [0, {n_groups})")

    split_rng = substream(tcfg.seed, "split")
    perm = split_rng.permutation(len(target))
    n_val = max(1, int(round(len(target) * tcfg.val_fraction)))
    n_test = int(round(len(target) * tcfg.test_fraction))
    val_idx = perm[:n_val]
    test_idx = perm[n_val : n_val + n_test]
    anchor_idx = perm[n_val + n_test :]
    if anchoring_on and anchor_idx.size == 0:
        raise DataError("no target samples left for the anchor pool after splitting")

    init_rng = substream(tcfg.seed, "init")
    net = Classifier(source.X.shape[1], tcfg.network, init_rng)
    optimizer = Adam(net.weights + net.biases, tcfg.lr, tcfg.weight_decay)
    batch_rng = substream(tcfg.seed, "batches")
    triplet_rng = substream(tcfg.seed, "triplets")

    common: tuple[int, ...] = ()
    if anchoring_on:
        probe = sample_triplet_indices(
            source.groups,
            source.y,
            target.groups[anchor_idx],
            target.y[anchor_idx],
            n_groups,
            cfg.threshold_percent,
            np.random.default_rng(0),
            count=None,
            negative_common_only=cfg.negative_common_only,
        )
        common = probe.common_clusters
        if probe.anchor_idx.size == 0:
            raise NoCommonClusters("no anchor has a valid positive/negative pair")

    history: list[dict] = []
    best_flat = net.get_flat()
    best_uar = -1.0
    best_epoch = 0
    bad_epochs = 0
    start_epoch = 1

    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if resume and ckpt is not None and (ckpt / "state.json").exists():
        state = _load_checkpoint(ckpt, net, optimizer)
        batch_rng.bit_generator.state = state["rng_batches"]
        triplet_rng.bit_generator.state = state["rng_triplets"]
        history = state["history"]
        best_flat = state["best_flat"]
        best_uar = state["best_uar"]
        best_epoch = state["best_epoch"]
        bad_epochs = state["bad_epochs"]
        start_epoch = state["epoch"] + 1
    else:
        history.append(
            _epoch_record(
                0, None, None, None, net, source, target, val_idx, anchor_idx, common, anchoring_on
            )
        )

    n_triplets = tcfg.triplets_per_batch or tcfg.batch_size
    n_source = len(source)
    for epoch in range(start_epoch, tcfg.max_epochs + 1):
        order = batch_rng.permutation(n_source)
        ce_losses = []
        ag_losses = []
        for lo in range(0, n_source, tcfg.batch_size):
            idx = order[lo : lo + tcfg.batch_size]
            trip_inputs = None
            if anchoring_on:
                batch = sample_triplet_indices(
                    source.groups,
                    source.y,
                    target.groups[anchor_idx],
                    target.y[anchor_idx],
                    n_groups,
                    cfg.threshold_percent,
                    triplet_rng,
                    count=n_triplets,
                    negative_common_only=cfg.negative_common_only,
                )
                xa = target.X[anchor_idx][batch.anchor_idx]
                xp = source.X[batch.positive_idx]
                xn = source.X[batch.negative_idx]
                w = weight_matrix[
                    target.groups[anchor_idx][batch.anchor_idx],
                    source.groups[batch.negative_idx],
                ]
                trip_inputs = (xa, xp, xn, w)
            l_er, l_ag, _, (gW, gb) = batch_loss_and_grads(
                net, source.X[idx], source.y[idx], trip_inputs, cfg
            )
            optimizer.step(net.weights + net.biases, gW + gb)
            ce_losses.append(l_er)
            ag_losses.append(l_ag)

        record = _epoch_record(
            epoch,
            float(np.mean(ce_losses)),
            float(np.mean(ag_losses)) if anchoring_on else 0.0,
            None,
            net,
            source,
            target,
            val_idx,
            anchor_idx,
            common,
            anchoring_on,
        )
        record["l_total"] = record["l_er"] + cfg.gamma_total * record["l_ag"]
        history.append(record)

        if record["val_uar"] > best_uar:
            best_uar = record["val_uar"]
            best_flat = net.get_flat()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1

        if ckpt is not None:
            _save_checkpoint(
                ckpt,
                net,
                optimizer,
                epoch,
                batch_rng,
                triplet_rng,
                history,
                best_flat,
                best_uar,
                best_epoch,
                bad_epochs,
            )

        if bad_epochs >= tcfg.early_stop_patience:
            break

    net.set_flat(best_flat)
    test_pred = net.predict(target.X[test_idx]) if test_idx.size else np.array([], dtype=np.int64)
    test_true = target.y[test_idx]
    test_uar = uar(test_pred, test_true) if test_idx.size else float("nan")
    return TrainResult(
        classifier=net,
        history=history,
        best_epoch=best_epoch,
        best_val_uar=best_uar,
        test_uar=test_uar,
        test_recalls=recall_by_class(test_pred, test_true) if test_idx.size else {},
        confusion=confusion_matrix(test_pred, test_true) if test_idx.size else np.zeros((4, 4), int),
        common_clusters=common,
        test_ids=tuple(target.ids[i] for i in test_idx),
    )


def _epoch_record(
    epoch, l_er, l_ag, l_total, net, source, target, val_idx, anchor_idx, common, anchoring_on
):
    val_pred = net.predict(target.X[val_idx])
    record = {
        "epoch": int(epoch),
        "l_er": l_er,
        "l_ag": l_ag,
        "l_total": l_total,
        "val_uar": uar(val_pred, target.y[val_idx]),
        "cluster_gap": None,
    }
    if anchoring_on and common:
        record["cluster_gap"] = mean_common_cluster_gap(
            net.penultimate(source.X),
            source.groups,
            net.penultimate(target.X[anchor_idx]),
            target.groups[anchor_idx],
            common,
        )
    return record


def _save_checkpoint(
    ckpt: Path,
    net: Classifier,
    optimizer: Adam,
    epoch: int,
    batch_rng,
    triplet_rng,
    history,
    best_flat,
    best_uar,
    best_epoch,
    bad_epochs,
):
    ckpt.mkdir(parents=True, exist_ok=True)
    arch = {
        "format": "gestanchor-checkpoint/1",
        "dim_in": net.dim_in,
        "hidden": list(net.hidden),
        "n_classes": N_CLASSES,
        "dtype": "<f8",
    }
    (ckpt / "arch.json").write_text(json.dumps(arch, indent=2, sort_keys=True))
    net.get_flat().astype("<f8").tofile(ckpt / "weights.bin")
    np.asarray(best_flat, dtype="<f8").tofile(ckpt / "best_weights.bin")
    flat_m = np.concatenate([m.ravel() for m in optimizer.m])
    flat_v = np.concatenate([v.ravel() for v in optimizer.v])
    np.concatenate([flat_m, flat_v]).astype("<f8").tofile(ckpt / "optimizer.bin")
    state = {
        "epoch": int(epoch),
        "adam_t": int(optimizer.t),
        "best_uar": float(best_uar),
        "best_epoch": int(best_epoch),
        "bad_epochs": int(bad_epochs),
        "rng_batches": batch_rng.bit_generator.state,
        "rng_triplets": triplet_rng.bit_generator.state,
        "history": history,
    }
    (ckpt / "state.json").write_text(json.dumps(state, sort_keys=True))


def _load_checkpoint(ckpt: Path, net: Classifier, optimizer: Adam) -> dict:
    arch = json.loads((ckpt / "arch.json").read_text())
    if arch["dim_in"] != net.dim_in or tuple(arch["hidden"]) != tuple(net.hidden):
        raise ConfigError("checkpoint architecture does not match the configured network")
    net.set_flat(np.fromfile(ckpt / "weights.bin", dtype="<f8"))
    flat = np.fromfile(ckpt / "optimizer.bin", dtype="<f8")
    half = flat.size // 2
    _assign_flat(optimizer.m, flat[:half])
    _assign_flat(optimizer.v, flat[half:])
    state = json.loads((ckpt / "state.json").read_text())
    optimizer.t = int(state["adam_t"])
    state["best_flat"] = np.fromfile(ckpt / "best_weights.bin", dtype="<f8")
    return state


def _assign_flat(arrays: list[np.ndarray], vec: np.ndarray):
    offset = 0
    for i, a in enumerate(arrays):
        arrays[i] = vec[offset : offset + a.size].reshape(a.shape).copy()
        offset += a.size


def load_classifier(ckpt: str | Path, best: bool = True) -> Classifier:
    """Rebuild a classifier from a checkpoint directory."""
    ckpt = Path(ckpt)
    arch = json.loads((ckpt / "arch.json").read_text())
    net = Classifier(arch["dim_in"], tuple(arch["hidden"]), np.random.default_rng(0))
    name = "best_weights.bin" if best else "weights.bin"
    net.set_flat(np.fromfile(ckpt / name, dtype=arch.get("dtype", "<f8")))
    return net
