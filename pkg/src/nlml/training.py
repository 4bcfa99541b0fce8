"""Large-margin objective, analytic backpropagation, the full training loop
with layer-wise pretraining and optional re-clustering, and a finite-difference
gradient checker."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import (ClusterModel, empty_clusters, fit_sigma, kmeans,
                         normalize_local_weights, similarities)
from .data import FeatureMatrix, PairSet
from .metric import NlmlModel
from .network import ACTIVATIONS, NetworkBank, forward_batch, init_bank
from .utils import derive_seed, log

DEFAULT_HIDDEN_DIMS = (500, 400, 300)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"objective became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class Hyperparams:
    """Every scalar knob of the model and its optimizer.

    tau/margin define the separation targets tau - c (positives) and tau + c
    (negatives); gamma sharpens the smooth hinge; mu is the full-batch
    learning rate; epsilon is the |J_t - J_{t-1}| convergence gap.
    """

    K: int = 4
    beta: float = 1.0
    lam: float = 0.01
    gamma: float = 1.0
    tau: float = 2.0
    c: float = 1.0
    mu: float = 0.004
    pretrain_mu: float = 0.004
    iters: int = 500
    pretrain_iters: int = 50
    epsilon: float = 0.1
    seed: int = 0
    recluster_every: int = 0
    hidden_dims: tuple = DEFAULT_HIDDEN_DIMS
    activation: str = "tanh"
    sigma_rule: str = "mean_dist"
    sigma_value: float | None = None

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not self.tau > self.c > 0:
            raise ValueError("need tau > c > 0")
        if self.mu <= 0 or self.pretrain_mu <= 0:
            raise ValueError("learning rates must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.pretrain_iters < 0 or self.recluster_every < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation: {self.activation!r}")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must name at least one layer size")

    def dims_chain(self, input_dim: int) -> list:
        return [input_dim] + list(self.hidden_dims)


def nlml1_config(hp: Hyperparams) -> Hyperparams:
    """Global-network-only ablation: K = 0, everything else unchanged."""
    return replace(hp, K=0)


def nlml2_config(hp: Hyperparams, out_dim: int | None = None) -> Hyperparams:
    """Linear single-layer ablation: each network becomes one linear layer, so
    every per-network distance is a Mahalanobis quadratic form."""
    width = out_dim if out_dim is not None else hp.hidden_dims[-1]
    return replace(hp, hidden_dims=(width,), activation="linear")


def benchmark_config() -> Hyperparams:
    """Reference configuration for the synthetic cross-view benchmark: small
    enough to train in seconds, strong enough that the full model beats both
    its global-only ablation and the Euclidean baseline."""
    return Hyperparams(K=2, hidden_dims=(16,), activation="tanh", iters=150,
                       pretrain_iters=0, mu=1e-4, epsilon=1e-9)


@dataclass
class TrainReport:
    J: list = field(default_factory=list)
    J1: list = field(default_factory=list)
    J2: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    stop_reason: str = "max_iters"

    @property
    def iterations(self) -> int:
        return len(self.J)

    def to_csv(self, path):
        from .utils import atomic_write_text
        lines = ["iteration,J,J1,J2,wall_ms"]
        for t in range(self.iterations):
            lines.append(f"{t + 1},{self.J[t]!r},{self.J1[t]!r},{self.J2[t]!r},"
                         f"{self.wall_ms[t]:.3f}")
        atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# smooth hinge

def logistic(z, gamma: float):
    """Smooth hinge (1/gamma) log(1 + exp(gamma z)), overflow-safe."""
    z = np.asarray(z, dtype=np.float64)
    gz = gamma * z
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(gz))) / gamma
    return out if out.ndim else float(out)


def logistic_prime(z, gamma: float):
    z = np.asarray(z, dtype=np.float64)
    gz = np.clip(gamma * z, -700, 700)
    out = 1.0 / (1.0 + np.exp(-gz))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# objective and gradients (full batch, vectorized over pairs)

def _pair_weight_matrix(S: np.ndarray | None, beta: float, pairs: PairSet,
                        n_pairs: int) -> np.ndarray:
    """(K+1, P) weights per pair: row 0 = beta, locals L1-normalized."""
    if S is None or S.shape[0] == 0:
        return np.full((1, n_pairs), beta)
    raw = S[:, pairs.i] * S[:, pairs.j]
    local = normalize_local_weights(raw, axis=0)
    return np.vstack([np.full((1, n_pairs), beta), local])


def _forward_all(bank: NetworkBank, Xa: np.ndarray):
    return [forward_batch(net, Xa) for net in bank.networks]


def _pair_distances(traces, pairs: PairSet) -> np.ndarray:
    """(K+1, P) squared embedding distances per pair per network."""
    out = np.empty((len(traces), len(pairs)))
    for k, (_, Hs) in enumerate(traces):
        diff = Hs[-1][:, pairs.i] - Hs[-1][:, pairs.j]
        out[k] = np.einsum("dp,dp->p", diff, diff)
    return out


def _regularizer(bank: NetworkBank, lam: float) -> float:
    total = 0.0
    for net in bank.networks:
        for layer in net.layers:
            total += float(np.sum(layer.W * layer.W)) + float(layer.b @ layer.b)
    return 0.5 * lam * total


def objective(X: FeatureMatrix, bank: NetworkBank, clusters: ClusterModel,
              pairs: PairSet, hp: Hyperparams, S: np.ndarray | None = None):
    """Returns (J, J1, J2): smooth-hinge data term plus L2 regularizer."""
    if S is None and clusters.k_regions:
        S = similarities(clusters, X)
    traces = _forward_all(bank, X.data)
    d2 = _pair_distances(traces, pairs)
    w = _pair_weight_matrix(S, hp.beta, pairs, len(pairs))
    D = np.einsum("kp,kp->p", w, d2)
    e = hp.c - pairs.y * (hp.tau - D)
    J1 = 0.5 * float(np.sum(logistic(e, hp.gamma)))
    J2 = _regularizer(bank, hp.lam)
    return J1 + J2, J1, J2


@dataclass
class GradientSet:
    """dW/db per network per layer, shapes mirroring the bank."""

    dW: list  # [network][layer] -> ndarray
    db: list


def gradients(X: FeatureMatrix, bank: NetworkBank, clusters: ClusterModel,
              pairs: PairSet, hp: Hyperparams,
              S: np.ndarray | None = None) -> GradientSet:
    """Analytic full-batch gradients by backpropagation.

    The output-layer error signal carries the pair label y (the chain rule of
    the margin residual e = c - y (tau - D) contributes de/dD = y); cluster
    weights are treated as constants.
    """
    if S is None and clusters.k_regions:
        S = similarities(clusters, X)
    Xa = X.data
    traces = _forward_all(bank, Xa)
    d2 = _pair_distances(traces, pairs)
    w = _pair_weight_matrix(S, hp.beta, pairs, len(pairs))
    D = np.einsum("kp,kp->p", w, d2)
    e = hp.c - pairs.y * (hp.tau - D)
    gp = logistic_prime(e, hp.gamma)

    I, Jc = pairs.i, pairs.j
    dW_all, db_all = [], []
    for k, net in enumerate(bank.networks):
        Zs, Hs = traces[k]
        coef = pairs.y * w[k] * gp  # (P,)
        top_diff = Hs[-1][:, I] - Hs[-1][:, Jc]
        prime_k = ACTIVATIONS[net.activation][1]
        psi_i = coef * top_diff * prime_k(Zs[-1][:, I])
        psi_j = -coef * top_diff * prime_k(Zs[-1][:, Jc])
        dWs = [None] * net.depth
        dbs = [None] * net.depth
        for m in range(net.depth - 1, -1, -1):
            layer = net.layers[m]
            Hprev_i = Xa[:, I] if m == 0 else Hs[m - 1][:, I]
            Hprev_j = Xa[:, Jc] if m == 0 else Hs[m - 1][:, Jc]
            dWs[m] = psi_i @ Hprev_i.T + psi_j @ Hprev_j.T + hp.lam * layer.W
            dbs[m] = psi_i.sum(axis=1) + psi_j.sum(axis=1) + hp.lam * layer.b
            if m > 0:
                back_i = layer.W.T @ psi_i
                back_j = layer.W.T @ psi_j
                psi_i = back_i * prime_k(Zs[m - 1][:, I])
                psi_j = back_j * prime_k(Zs[m - 1][:, Jc])
        dW_all.append(dWs)
        db_all.append(dbs)
    return GradientSet(dW_all, db_all)


def sgd_step(bank: NetworkBank, grads: GradientSet, mu: float) -> NetworkBank:
    """In-place full-batch gradient step W -= mu dW, b -= mu db."""
    for k, net in enumerate(bank.networks):
        for m, layer in enumerate(net.layers):
            layer.W -= mu * grads.dW[k][m]
            layer.b -= mu * grads.db[k][m]
    return bank


# ---------------------------------------------------------------------------
# training loop

def _check_pairs(pairs: PairSet):
    if len(pairs) == 0:
        raise ValueError("training needs a nonempty pair set")
    if pairs.n_positive == 0 or pairs.n_negative == 0:
        raise ValueError("training needs at least one positive and one negative pair")


def pretrain(X: FeatureMatrix, bank: NetworkBank, clusters: ClusterModel,
             pairs: PairSet, hp: Hyperparams,
             S: np.ndarray | None = None) -> NetworkBank:
    """Greedy layer-wise pretraining: for each depth m, train the truncated
    networks (layers 1..m, layer m's output acting as the embedding) for
    pretrain_iters steps at pretrain_mu.  Deeper layers stay at their init
    until their own stage."""
    if hp.pretrain_iters == 0:
        return bank
    if S is None and clusters.k_regions:
        S = similarities(clusters, X)
    max_depth = max(net.depth for net in bank.networks)
    for stage in range(1, max_depth + 1):
        stage_bank = NetworkBank([net.truncated(min(stage, net.depth))
                                  for net in bank.networks])
        for _ in range(hp.pretrain_iters):
            g = gradients(X, stage_bank, clusters, pairs, hp, S=S)
            sgd_step(stage_bank, g, hp.pretrain_mu)
    return bank


def _fit_clusters(X: FeatureMatrix, hp: Hyperparams, seed: int) -> ClusterModel:
    if hp.K == 0:
        return empty_clusters(X.dim)
    model = kmeans(X, hp.K, seed=seed)
    return fit_sigma(X, model, rule=hp.sigma_rule, value=hp.sigma_value)


def train(X: FeatureMatrix, pairs: PairSet, hp: Hyperparams):
    """Full training procedure: identity init, K-means regions, RBF bandwidth,
    optional layer-wise pretraining, then full-batch gradient descent until
    the objective gap drops below epsilon or iters is reached.

    recluster_every > 0 re-runs K-means (reseeded with the iteration index)
    and refreshes the soft assignments every that-many iterations.
    Returns (NlmlModel, TrainReport).
    """
    _check_pairs(pairs)
    bank = init_bank(hp.dims_chain(X.dim), hp.K, hp.activation)
    clusters = _fit_clusters(X, hp, derive_seed(hp.seed, "kmeans"))
    S = similarities(clusters, X) if hp.K else None

    if hp.pretrain_iters > 0:
        pretrain(X, bank, clusters, pairs, hp, S=S)

    report = TrainReport()
    prev_J = None
    for t in range(1, hp.iters + 1):
        t0 = time.perf_counter()
        g = gradients(X, bank, clusters, pairs, hp, S=S)
        sgd_step(bank, g, hp.mu)
        J, J1, J2 = objective(X, bank, clusters, pairs, hp, S=S)
        report.J.append(J)
        report.J1.append(J1)
        report.J2.append(J2)
        report.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if not np.isfinite(J):
            raise TrainingDiverged(t)
        log.info("iter %d: J=%.6g (J1=%.6g J2=%.6g)", t, J, J1, J2)
        if prev_J is not None and abs(J - prev_J) < hp.epsilon:
            report.stop_reason = "converged"
            break
        prev_J = J
        if hp.recluster_every > 0 and hp.K > 0 and t % hp.recluster_every == 0:
            clusters = _fit_clusters(X, hp, derive_seed(hp.seed, "recluster", t))
            S = similarities(clusters, X)
    model = NlmlModel(bank=bank, clusters=clusters, beta=hp.beta, pca=None)
    return model, report


# ---------------------------------------------------------------------------
# finite-difference gradient oracle

@dataclass
class GradcheckReport:
    max_rel_error: float
    mean_rel_error: float
    n_params: int


def _flatten_params(bank: NetworkBank):
    views = []
    for net in bank.networks:
        for layer in net.layers:
            views.append(layer.W)
            views.append(layer.b)
    return views


def gradcheck(hp: Hyperparams, seed: int, n_samples: int = 12, input_dim: int = 5,
              n_pairs: int = 10, step: float = 1e-5,
              corrupt: bool = False) -> GradcheckReport:
    """Compare analytic gradients against central finite differences of the
    objective on a random small instance.  corrupt=True perturbs one analytic
    component (negative-control hook for the CLI exit-code contract)."""
    rng = np.random.default_rng(seed)
    X, pairs, bank, clusters, S = _random_instance(hp, rng, n_samples, input_dim, n_pairs)

    g = gradients(X, bank, clusters, pairs, hp, S=S)
    analytic = []
    for k in range(len(bank.networks)):
        for m in range(bank.networks[k].depth):
            analytic.append(g.dW[k][m].ravel())
            analytic.append(g.db[k][m].ravel())
    analytic = np.concatenate(analytic)
    if corrupt:
        analytic = analytic.copy()
        analytic[0] += 1.0

    views = _flatten_params(bank)
    numeric = np.empty_like(analytic)
    pos = 0
    for arr in views:
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            Jp, _, _ = objective(X, bank, clusters, pairs, hp, S=S)
            flat[idx] = orig - step
            Jm, _, _ = objective(X, bank, clusters, pairs, hp, S=S)
            flat[idx] = orig
            numeric[pos] = (Jp - Jm) / (2 * step)
            pos += 1

    # near-zero components are compared absolutely: the floor of 1 keeps
    # finite-difference cancellation noise from inflating their ratio
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = np.abs(analytic - numeric) / denom
    return GradcheckReport(float(rel.max()), float(rel.mean()), int(rel.size))


def _random_instance(hp: Hyperparams, rng, n_samples: int, input_dim: int,
                     n_pairs: int):
    """Small random model + data for gradient checking.  For relu the inputs
    are resampled until no pre-activation sits near the kink."""
    chain = hp.dims_chain(input_dim)
    for _ in range(50):
        Xa = rng.normal(size=(input_dim, n_samples))
        bank = init_bank(chain, hp.K, hp.activation)
        for net in bank.networks:
            for layer in net.layers:
                layer.W += 0.4 * rng.normal(size=layer.W.shape)
                layer.b += 0.2 * rng.normal(size=layer.b.shape)
        if hp.activation != "relu" or _min_abs_preact(bank, Xa) > 1e-3:
            break
    X = FeatureMatrix(Xa)
    labels = rng.integers(0, max(2, n_samples // 3), size=n_samples)
    ii = rng.integers(0, n_samples, size=4 * n_pairs)
    jj = rng.integers(0, n_samples, size=4 * n_pairs)
    keep = np.flatnonzero(ii != jj)[:n_pairs]
    y = np.where(labels[ii[keep]] == labels[jj[keep]], 1, -1)
    pairs = PairSet(ii[keep], jj[keep], y)
    if hp.K:
        clusters = fit_sigma(X, kmeans(X, hp.K, seed=int(rng.integers(2 ** 31))),
                             rule="mean_dist")
        S = similarities(clusters, X)
    else:
        clusters = empty_clusters(input_dim)
        S = None
    return X, pairs, bank, clusters, S


def _min_abs_preact(bank: NetworkBank, Xa: np.ndarray) -> float:
    worst = np.inf
    for net in bank.networks:
        Zs, _ = forward_batch(net, Xa)
        worst = min(worst, min(float(np.abs(Z).min()) for Z in Zs))
    return worst
