"""K-means local regions and RBF soft-assignment weights for sample pairs."""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import FeatureMatrix

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class ClusterModel:
    """Cluster centers (d x K) plus the RBF bandwidth sigma."""

    centers: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2:
            raise ValueError("centers must be a d x K matrix")
        if not np.all(np.isfinite(c)):
            raise ValueError("cluster centers must be finite")
        if c.shape[1] >= 1 and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        c.flags.writeable = False
        object.__setattr__(self, "centers", c)

    @property
    def k_regions(self) -> int:
        return self.centers.shape[1]

    @property
    def dim(self) -> int:
        return self.centers.shape[0]


def empty_clusters(dim: int) -> ClusterModel:
    """K = 0 model: only the global metric participates."""
    return ClusterModel(np.empty((dim, 0)), sigma=1.0)


def _sq_dists_to_centers(Xa: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(N, K) squared distances, computed by explicit differences for accuracy."""
    diff = Xa.T[:, None, :] - centers.T[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans(X: FeatureMatrix, K: int, seed: int, max_iters: int = 300,
           return_sse: bool = False):
    """Lloyd's algorithm with k-means++ seeding; deterministic under seed.

    Empty clusters are re-seeded to the point farthest from its own center so
    K stays fixed.  Stops at an assignment fixpoint or after max_iters.
    """
    n = X.count
    if not 1 <= K <= n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    Xa = X.data
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(Xa, K, rng)

    sse_history = []
    assign = None
    for _ in range(max_iters):
        d2 = _sq_dists_to_centers(Xa, centers)
        new_assign = np.argmin(d2, axis=1)
        sse_history.append(float(d2[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for k in range(K):
            members = assign == k
            if np.any(members):
                centers[:, k] = Xa[:, members].mean(axis=1)
            else:
                # re-seed to the globally farthest point from its center
                own = d2[np.arange(n), assign]
                far = int(np.argmax(own))
                centers[:, k] = Xa[:, far]
                assign[far] = k
    model = ClusterModel(centers.copy(), sigma=1.0)
    return (model, sse_history) if return_sse else model


def _kmeanspp_init(Xa: np.ndarray, K: int, rng) -> np.ndarray:
    n = Xa.shape[1]
    centers = np.empty((Xa.shape[0], K))
    centers[:, 0] = Xa[:, rng.integers(n)]
    closest = np.sum((Xa - centers[:, [0]]) ** 2, axis=0)
    for k in range(1, K):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[:, k] = Xa[:, idx]
        closest = np.minimum(closest, np.sum((Xa - centers[:, [k]]) ** 2, axis=0))
    return centers


def fit_sigma(X: FeatureMatrix, model: ClusterModel, rule: str = "mean_dist",
              value: float | None = None) -> ClusterModel:
    """Set the RBF bandwidth from nearest-center distances (or a fixed value)."""
    if model.k_regions < 1:
        raise ValueError("sigma fitting needs at least one cluster center")
    if rule == "fixed":
        if value is None or value <= 0:
            raise ValueError("fixed sigma rule needs a positive value")
        return replace(model, sigma=float(value))
    d2 = _sq_dists_to_centers(X.data, model.centers)
    nearest = np.sqrt(d2.min(axis=1))
    if rule == "mean_dist":
        sigma = float(nearest.mean())
    elif rule == "median_dist":
        sigma = float(np.median(nearest))
    else:
        raise ValueError(f"unknown sigma rule: {rule!r}")
    if sigma < SIGMA_FLOOR:
        warnings.warn("all samples coincide with centers; sigma floored")
        sigma = SIGMA_FLOOR
    return replace(model, sigma=sigma)


def similarity(model: ClusterModel, x: np.ndarray) -> np.ndarray:
    """RBF soft membership of x in each region: exp(-||x - v_k||^2 / 2 sigma^2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"expected a {model.dim}-vector, got shape {x.shape}")
    d2 = np.sum((model.centers - x[:, None]) ** 2, axis=0)
    return np.exp(-d2 / (2.0 * model.sigma ** 2))


def similarities(model: ClusterModel, X: FeatureMatrix) -> np.ndarray:
    """(K, N) soft memberships for every column of X."""
    if X.dim != model.dim:
        raise ValueError("feature dimension does not match cluster centers")
    d2 = _sq_dists_to_centers(X.data, model.centers)  # (N, K)
    return np.exp(-d2.T / (2.0 * model.sigma ** 2))


def normalize_local_weights(raw: np.ndarray, axis: int = 0) -> np.ndarray:
    """L1-normalize the local weight vector(s); all-zero falls back to uniform."""
    total = raw.sum(axis=axis, keepdims=True)
    k = raw.shape[axis]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, raw / np.where(total > 0, total, 1.0), 1.0 / k)
    return out


def pair_weights(model: ClusterModel, beta: float, x_i: np.ndarray,
                 x_j: np.ndarray) -> np.ndarray:
    """Length-(K+1) weight vector for a pair: index 0 is the global weight beta,
    local weights are s_k(x_i) * s_k(x_j) scaled to unit L1 norm."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if model.k_regions == 0:
        return np.array([beta])
    raw = similarity(model, x_i) * similarity(model, x_j)
    return np.concatenate([[beta], normalize_local_weights(raw)])
