"""The composite distance: beta-weighted global network distance plus
RBF-weighted local network distances, and the batch form used by evaluation."""

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel, normalize_local_weights, pair_weights, similarities
from .data import FeatureMatrix
from .network import NetworkBank, forward_batch, net_distance
from .pca import PcaModel

_PROBE_CHUNK = 256


@dataclass
class NlmlModel:
    bank: NetworkBank
    clusters: ClusterModel
    beta: float
    pca: PcaModel | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if len(self.bank.networks) != self.clusters.k_regions + 1:
            raise ValueError(
                f"bank has {len(self.bank.networks)} networks but clusters define "
                f"{self.clusters.k_regions} regions")
        if self.clusters.k_regions > 0 and self.clusters.dim != self.bank.in_dim:
            raise ValueError("cluster centers and networks disagree on input dim")
        if self.pca is not None and self.pca.out_dim != self.bank.in_dim:
            raise ValueError("PCA output dim does not match network input dim")

    @property
    def k_regions(self) -> int:
        return self.clusters.k_regions

    def reduce(self, X: FeatureMatrix) -> FeatureMatrix:
        """Apply the attached PCA, if any; distance() expects reduced inputs."""
        return X if self.pca is None else self.pca.transform(X)


def distance(model: NlmlModel, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Composite dissimilarity: sum over networks of w_k * delta_k^2."""
    w = pair_weights(model.clusters, model.beta, x_i, x_j) if model.k_regions \
        else np.array([model.beta])
    total = 0.0
    for k, net in enumerate(model.bank.networks):
        total += w[k] * net_distance(net, x_i, x_j)
    return total


def distance_matrix(model: NlmlModel, probes: FeatureMatrix,
                    gallery: FeatureMatrix) -> np.ndarray:
    """(n_probe, n_gallery) composite distances.

    Embeddings and cluster similarities are computed once per sample, so the
    cost is K * (P + G) forward passes instead of K * P * G.
    """
    if probes.dim != model.bank.in_dim or gallery.dim != model.bank.in_dim:
        raise ValueError("probe/gallery dimension does not match the model")
    P, G = probes.count, gallery.count
    emb_p = [forward_batch(net, probes.data)[1][-1] for net in model.bank.networks]
    emb_g = [forward_batch(net, gallery.data)[1][-1] for net in model.bank.networks]

    if model.k_regions:
        sp = similarities(model.clusters, probes)   # (K, P)
        sg = similarities(model.clusters, gallery)  # (K, G)

    out = np.zeros((P, G))
    for lo in range(0, P, _PROBE_CHUNK):
        hi = min(lo + _PROBE_CHUNK, P)
        d2 = [_pairwise_sq(e_p[:, lo:hi], e_g) for e_p, e_g in zip(emb_p, emb_g)]
        block = model.beta * d2[0]
        if model.k_regions:
            raw = sp[:, lo:hi, None] * sg[:, None, :]       # (K, chunk, G)
            w = normalize_local_weights(raw, axis=0)
            for k in range(model.k_regions):
                block = block + w[k] * d2[k + 1]
        out[lo:hi] = block
    return out


def _pairwise_sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared distances between columns of A and columns of B, via explicit
    differences (matches the scalar path to full precision)."""
    diff = A.T[:, None, :] - B.T[None, :, :]
    return np.einsum("pgd,pgd->pg", diff, diff)
