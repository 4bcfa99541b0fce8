"""PCA dimensionality reduction fitted before clustering and metric training."""

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray            # (d,)
    basis: np.ndarray           # (d, d'), orthonormal columns
    explained_variance: np.ndarray  # (d',), descending
    scale: np.ndarray | None = None  # per-dim std when standardization is on

    @property
    def in_dim(self) -> int:
        return self.mean.size

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]

    def transform(self, X: FeatureMatrix) -> FeatureMatrix:
        if X.dim != self.in_dim:
            raise ValueError(f"expected {self.in_dim}-dim features, got {X.dim}")
        centered = X.data - self.mean[:, None]
        if self.scale is not None:
            centered = centered / self.scale[:, None]
        return FeatureMatrix(self.basis.T @ centered)

    def transform_vec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        centered = x - self.mean
        if self.scale is not None:
            centered = centered / self.scale
        return self.basis.T @ centered


def fit_pca(X: FeatureMatrix, out_dim: int, standardize: bool = False) -> PcaModel:
    """Top-out_dim principal directions of X, ordered by descending variance.

    Uses the covariance eigendecomposition when d <= N and the Gram-matrix
    route otherwise.  Column signs are fixed so the largest-magnitude entry of
    each basis column is positive.
    """
    d, n = X.dim, X.count
    if not 1 <= out_dim <= min(d, n):
        raise ValueError(f"out_dim must be in [1, {min(d, n)}], got {out_dim}")
    mean = X.data.mean(axis=1)
    centered = X.data - mean[:, None]
    scale = None
    if standardize:
        scale = centered.std(axis=1, ddof=0)
        scale = np.where(scale > 0, scale, 1.0)
        centered = centered / scale[:, None]
    denom = max(n - 1, 1)

    if d <= n:
        cov = (centered @ centered.T) / denom
        evals, evecs = np.linalg.eigh(cov)
    else:
        # Gram route: eigenvectors of X'X lift to covariance eigenvectors.
        gram = (centered.T @ centered) / denom
        gvals, gvecs = np.linalg.eigh(gram)
        evals = gvals
        with np.errstate(divide="ignore", invalid="ignore"):
            evecs = centered @ gvecs / np.sqrt(np.maximum(gvals, 0) * denom)

    order = np.argsort(evals)[::-1][:out_dim]
    variances = evals[order]
    if variances[0] <= 1e-12 * max(1.0, float(np.abs(X.data).max()) ** 2):
        raise ValueError("data has zero variance: PCA basis is undefined")
    basis = evecs[:, order].copy()
    # deterministic sign: largest-magnitude entry of each column made positive
    for c in range(basis.shape[1]):
        col = basis[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, c] = -col
        nrm = np.linalg.norm(basis[:, c])
        if nrm > 0:
            basis[:, c] /= nrm
    gram_check = basis.T @ basis
    if not np.allclose(gram_check, np.eye(out_dim), atol=1e-8):
        raise ValueError("degenerate spectrum: could not build an orthonormal basis")
    return PcaModel(mean=mean, basis=basis, explained_variance=np.maximum(variances, 0.0),
                    scale=scale)
