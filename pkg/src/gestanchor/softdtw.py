"""Differentiable soft dynamic time warping: distance, gradient, barycenter.

The forward pass runs the standard soft-minimum recursion

    R(i, j) = c(a_i, b_j) + softmin_g(R(i-1, j), R(i, j-1), R(i-1, j-1))

with softmin_g(v) = -g * log(sum(exp(-v / g))) evaluated in shifted
log-sum-exp form. The gradient follows from the backward recursion over
alignment expectations; both are exact, not autodiff approximations.
The per-frame cost is squared Euclidean distance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

# The bundled TBB is too old for numba here; OMP runs the parallel kernels
# without the fallback warning. Overridable from the environment.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from numba import njit, prange

from .errors import ConfigError, DimensionMismatch, EmptySet, NonFinite


@dataclass(frozen=True)
class SoftDtwParams:
    gamma: float = 1.0
    cost: str = "sqeuclidean"

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be a positive real, got {self.gamma}")
        if self.cost != "sqeuclidean":
            raise ConfigError(f"unsupported cost {self.cost!r}")


@njit(cache=True)
def _forward(D, gamma):
    n, m = D.shape
    R = np.full((n + 1, m + 1), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            r0 = R[i - 1, j]
            r1 = R[i, j - 1]
            r2 = R[i - 1, j - 1]
            lo = min(r0, min(r1, r2))
            z = (
                np.exp(-(r0 - lo) / gamma)
                + np.exp(-(r1 - lo) / gamma)
                + np.exp(-(r2 - lo) / gamma)
            )
            R[i, j] = D[i - 1, j - 1] + lo - gamma * np.log(z)
    return R


@njit(cache=True)
def _backward(D, R, gamma):
    # Alignment-expectation recursion; all exp arguments are <= 0 because
    # softmin never exceeds any of its inputs, so this cannot overflow.
    n, m = D.shape
    Dp = np.zeros((n + 2, m + 2))
    Dp[1 : n + 1, 1 : m + 1] = D
    Rp = np.full((n + 2, m + 2), -np.inf)
    Rp[: n + 1, : m + 1] = R
    Rp[n + 1, m + 1] = R[n, m]
    E = np.zeros((n + 2, m + 2))
    E[n + 1, m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            a = np.exp((Rp[i + 1, j] - Rp[i, j] - Dp[i + 1, j]) / gamma)
            b = np.exp((Rp[i, j + 1] - Rp[i, j] - Dp[i, j + 1]) / gamma)
            c = np.exp((Rp[i + 1, j + 1] - Rp[i, j] - Dp[i + 1, j + 1]) / gamma)
            E[i, j] = a * E[i + 1, j] + b * E[i, j + 1] + c * E[i + 1, j + 1]
    return E[1 : n + 1, 1 : m + 1]


@njit(cache=True)
def _cost_matrix(a, b):
    n = a.shape[0]
    m = b.shape[0]
    d = a.shape[1]
    D = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = a[i, t] - b[j, t]
                acc += diff * diff
            D[i, j] = acc
    return D


@njit(cache=True)
def _value(a, b, gamma):
    D = _cost_matrix(a, b)
    R = _forward(D, gamma)
    return R[a.shape[0], b.shape[0]]


@njit(cache=True, parallel=True)
def _distance_matrix(X, xlens, C, clens, gamma):
    # X: (n, Tmax, d) padded series, C: (k, Lmax, d) padded centroids.
    n = X.shape[0]
    k = C.shape[0]
    out = np.empty((n, k))
    for t in prange(n * k):
        i = t // k
        j = t % k
        out[i, j] = _value(X[i, : xlens[i]], C[j, : clens[j]], gamma)
    return out


def _as_series(x, name: str = "series") -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a (T, D) matrix with T >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains non-finite values")
    return arr


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    A = _as_series(a, "first series")
    B = _as_series(b, "second series")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def soft_dtw(a, b, params: SoftDtwParams = SoftDtwParams()) -> float:
    """Soft-DTW distance between two (T, D) series (may be negative)."""
    A, B = _check_pair(a, b)
    return float(_value(A, B, params.gamma))


def soft_dtw_grad(a, b, params: SoftDtwParams = SoftDtwParams()) -> np.ndarray:
    """Gradient of soft_dtw(a, b) with respect to a; shape equals a."""
    return soft_dtw_value_and_grad(a, b, params)[1]


def soft_dtw_value_and_grad(
    a, b, params: SoftDtwParams = SoftDtwParams()
) -> tuple[float, np.ndarray]:
    A, B = _check_pair(a, b)
    D = _cost_matrix(A, B)
    R = _forward(D, params.gamma)
    E = _backward(D, R, params.gamma)
    grad = 2.0 * (E.sum(axis=1)[:, None] * A - E @ B)
    return float(R[A.shape[0], B.shape[0]]), grad


def pairwise_distances(
    series: list[np.ndarray], centers: list[np.ndarray], params: SoftDtwParams
) -> np.ndarray:
    """Soft-DTW distances of every series against every center."""
    X, xlens = pad_series(series)
    C, clens = pad_series(centers)
    if X.shape[2] != C.shape[2]:
        raise DimensionMismatch(
            f"feature dimensions differ: {X.shape[2]} vs {C.shape[2]}"
        )
    return _distance_matrix(X, xlens, C, clens, params.gamma)


def pad_series(series: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length (T, D) series into a padded (n, Tmax, D) block."""
    if not series:
        raise EmptySet("no series to pad")
    arrs = [_as_series(s) for s in series]
    dims = {a.shape[1] for a in arrs}
    if len(dims) != 1:
        raise DimensionMismatch(f"series disagree on dimension: {sorted(dims)}")
    tmax = max(a.shape[0] for a in arrs)
    out = np.zeros((len(arrs), tmax, dims.pop()))
    lens = np.empty(len(arrs), dtype=np.int64)
    for i, a in enumerate(arrs):
        out[i, : a.shape[0]] = a
        lens[i] = a.shape[0]
    return out, lens


def resample_series(series: np.ndarray, length: int) -> np.ndarray:
    """Linear-interpolation resampling of a (T, D) series to `length` rows."""
    s = np.asarray(series, dtype=np.float64)
    t = s.shape[0]
    if length < 1:
        raise ConfigError(f"target length must be >= 1, got {length}")
    if t == length:
        return s.copy()
    if t == 1:
        return np.repeat(s, length, axis=0)
    xs = np.linspace(0.0, t - 1.0, length)
    base = np.arange(t, dtype=np.float64)
    return np.stack([np.interp(xs, base, s[:, d]) for d in range(s.shape[1])], axis=1)


def median_length(series: list[np.ndarray], minimum: int = 2) -> int:
    """Median series length, rounded half-up, floored at `minimum`."""
    med = float(np.median([np.asarray(s).shape[0] for s in series]))
    return max(minimum, int(np.floor(med + 0.5)))


@dataclass(frozen=True)
class Barycenter:
    center: np.ndarray
    objective_history: tuple[float, ...]


def soft_dtw_barycenter(
    series_set: list[np.ndarray],
    length: int | None = None,
    params: SoftDtwParams = SoftDtwParams(),
    iters: int = 50,
    step: float | None = None,
    init: np.ndarray | None = None,
) -> Barycenter:
    """Gradient-descent minimizer of the summed soft-DTW to a set of series.

    Starts from the medoid resampled to the target length (or from `init`)
    and backtracks by halving the step whenever a step would increase the
    objective, so the recorded objective never increases.
    """
    if not series_set:
        raise EmptySet("barycenter of an empty set")
    members = [_as_series(s) for s in series_set]
    dims = {m.shape[1] for m in members}
    if len(dims) != 1:
        raise DimensionMismatch(f"series disagree on dimension: {sorted(dims)}")
    L = median_length(members) if length is None else int(length)
    if L < 2:
        raise ConfigError(f"barycenter length must be >= 2, got {L}")

    if init is None:
        dmat = pairwise_distances(members, members, params)
        init = members[int(np.argmin(dmat.sum(axis=1)))]
    center = resample_series(np.asarray(init, dtype=np.float64), L)

    def objective_and_grad(c):
        total = 0.0
        grad = np.zeros_like(c)
        for m in members:
            v, g = soft_dtw_value_and_grad(c, m, params)
            total += v
            grad += g
        return total, grad

    def objective(c):
        return sum(soft_dtw(c, m, params) for m in members)

    obj, grad = objective_and_grad(center)
    history = [obj]
    cur_step = (1.0 / len(members)) if step is None else float(step)
    for _ in range(iters):
        accepted = False
        while cur_step >= 1e-12:
            cand = center - cur_step * grad
            cand_obj = objective(cand)
            if cand_obj <= obj:
                center = cand
                obj = cand_obj
                accepted = True
                break
            cur_step *= 0.5
        if not accepted:
            break
        history.append(obj)
        _, grad = objective_and_grad(center)
    return Barycenter(center=center, objective_history=tuple(history))
