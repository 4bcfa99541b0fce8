import numpy as np
import pytest

from nlml.clustering import ClusterModel, empty_clusters, fit_sigma, kmeans
from nlml.data import FeatureMatrix, IdentityLabels, PairSet, make_pairs
from nlml.evaluation import SynthSpec, synth_generate
from nlml.metric import distance
from nlml.network import LayerParams, Network, NetworkBank, init_bank
from nlml.training import (Hyperparams, TrainingDiverged, gradcheck, gradients,
                           logistic, logistic_prime, objective, pretrain,
                           sgd_step, train)

HP_SMALL = Hyperparams(K=1, hidden_dims=(5, 4), iters=10, pretrain_iters=0,
                       mu=1e-3, epsilon=1e-12)


def _instance(rng, n=12, d=5, K=1, activation="tanh", dims=(5, 4)):
    X = FeatureMatrix(rng.normal(size=(d, n)))
    labels = IdentityLabels(np.repeat(np.arange(n // 2), 2))
    pairs = make_pairs(labels)
    hp = Hyperparams(K=K, hidden_dims=dims, activation=activation,
                     iters=10, pretrain_iters=0, mu=1e-3, epsilon=1e-12)
    bank = init_bank(hp.dims_chain(d), K, activation)
    for net in bank.networks:
        for layer in net.layers:
            layer.W += 0.3 * rng.normal(size=layer.W.shape)
            layer.b += 0.1 * rng.normal(size=layer.b.shape)
    if K:
        clusters = fit_sigma(X, kmeans(X, K, seed=0))
    else:
        clusters = empty_clusters(d)
    return X, pairs, bank, clusters, hp


# ---------------------------------------------------------------------------
# smooth hinge

def test_logistic_at_zero():
    assert logistic(0.0, 1.0) == pytest.approx(np.log(2), abs=1e-15)


def test_logistic_large_argument_no_overflow():
    assert logistic(50.0, 10.0) == pytest.approx(50.0, abs=1e-12)
    assert np.isfinite(logistic(1e4, 1.0))
    assert logistic(-1e4, 1.0) == 0.0


def test_logistic_bounds_vs_high_precision_oracle():
    import mpmath
    rng = np.random.default_rng(0)
    with mpmath.workdps(60):
        for _ in range(50):
            z = float(rng.normal() * 5)
            gamma = float(rng.uniform(0.1, 10))
            got = logistic(z, gamma)
            oracle = mpmath.log(1 + mpmath.exp(mpmath.mpf(gamma) * z)) / gamma
            assert got == pytest.approx(float(oracle), rel=1e-12, abs=1e-12)
            # strict positivity of the hinge gap holds in exact arithmetic; it
            # can be absorbed in float64 for large positive z, so check it at
            # high precision
            gap = oracle - max(z, 0.0)
            assert 0 < gap <= np.log(2) / gamma + 1e-15


def test_logistic_prime_is_sigmoid():
    assert logistic_prime(0.0, 2.0) == 0.5
    z = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(logistic_prime(z, 3.0), 1 / (1 + np.exp(-3 * z)))


# ---------------------------------------------------------------------------
# objective

def test_objective_regularizer_only():
    bank = NetworkBank([Network([LayerParams(np.eye(2), np.zeros(2))], "linear")])
    hp = Hyperparams(K=0, lam=0.01, hidden_dims=(2,), activation="linear")
    X = FeatureMatrix(np.zeros((2, 2)))
    no_pairs = PairSet(np.empty(0, int), np.empty(0, int), np.empty(0, int))
    J, J1, J2 = objective(X, bank, empty_clusters(2), no_pairs, hp)
    assert J1 == 0.0
    assert J == J2 == pytest.approx((0.01 / 2) * 2, abs=1e-15)


def test_objective_single_pair_analytic():
    bank = init_bank([3, 3], 0, "linear")
    hp = Hyperparams(K=0, lam=0.0, beta=1.0, tau=2.0, c=1.0, gamma=1.0,
                     hidden_dims=(3,), activation="linear")
    X = FeatureMatrix(np.ones((3, 2)))
    pairs = PairSet([0], [1], [1])  # x_i = x_j, positive pair -> D = 0, e = -1
    J, J1, J2 = objective(X, bank, empty_clusters(3), pairs, hp)
    assert J2 == 0.0
    assert J1 == pytest.approx(0.5 * np.log1p(np.exp(-1)), abs=1e-12)
    assert J1 == pytest.approx(0.1566, abs=1e-3)


def test_objective_matches_scalar_recomputation():
    rng = np.random.default_rng(1)
    X, pairs, bank, clusters, hp = _instance(rng, K=2)
    from nlml.clustering import pair_weights
    from nlml.network import net_distance
    J, J1, J2 = objective(X, bank, clusters, pairs, hp)
    j1 = 0.0
    for i, j, y in pairs:
        w = pair_weights(clusters, hp.beta, X.column(i), X.column(j))
        D = sum(w[k] * net_distance(net, X.column(i), X.column(j))
                for k, net in enumerate(bank.networks))
        e = hp.c - y * (hp.tau - D)
        j1 += 0.5 * logistic(e, hp.gamma)
    j2 = 0.0
    for net in bank.networks:
        for layer in net.layers:
            j2 += 0.5 * hp.lam * (np.sum(layer.W ** 2) + np.sum(layer.b ** 2))
    assert J1 == pytest.approx(j1, abs=1e-10)
    assert J2 == pytest.approx(j2, abs=1e-12)
    assert J == J1 + J2


def test_objective_decomposition_exact():
    rng = np.random.default_rng(2)
    X, pairs, bank, clusters, hp = _instance(rng)
    J, J1, J2 = objective(X, bank, clusters, pairs, hp)
    assert J == J1 + J2


def test_margin_residual_sign_semantics():
    # e < 0 iff D < tau - c for positives, D > tau + c for negatives
    tau, c = 2.0, 1.0
    for D in [0.0, 0.5, 1.5, 2.5, 3.5]:
        e_pos = c - 1 * (tau - D)
        assert (e_pos < 0) == (D < tau - c)
        e_neg = c - (-1) * (tau - D)
        assert (e_neg < 0) == (D > tau + c)


# ---------------------------------------------------------------------------
# gradients

def test_gradients_zero_pairs_regularizer_only():
    rng = np.random.default_rng(3)
    X, _, bank, clusters, hp = _instance(rng)
    empty = PairSet(np.empty(0, int), np.empty(0, int), np.empty(0, int))
    g = gradients(X, bank, clusters, empty, hp)
    for k, net in enumerate(bank.networks):
        for m, layer in enumerate(net.layers):
            np.testing.assert_array_equal(g.dW[k][m], hp.lam * layer.W)
            np.testing.assert_array_equal(g.db[k][m], hp.lam * layer.b)


def test_gradients_identical_pair_no_data_term():
    rng = np.random.default_rng(4)
    X0 = rng.normal(size=5)
    X = FeatureMatrix(np.column_stack([X0, X0]))
    hp = Hyperparams(K=0, hidden_dims=(4,), lam=0.05)
    bank = init_bank([5, 4], 0, "tanh")
    bank.global_net.layers[0].W += 0.3 * rng.normal(size=(4, 5))
    pairs = PairSet([0], [1], [1])
    g = gradients(X, bank, empty_clusters(5), pairs, hp)
    layer = bank.global_net.layers[0]
    np.testing.assert_allclose(g.dW[0][0], hp.lam * layer.W, atol=1e-15)
    np.testing.assert_allclose(g.db[0][0], hp.lam * layer.b, atol=1e-15)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    X, pairs, bank, clusters, hp = _instance(rng, d=6, K=2, dims=(5, 4, 3))
    from nlml.clustering import similarities
    S = similarities(clusters, X)
    g = gradients(X, bank, clusters, pairs, hp, S=S)
    step = 1e-5
    for k, net in enumerate(bank.networks):
        for m, layer in enumerate(net.layers):
            flat = layer.W.reshape(-1)
            for idx in range(0, flat.size, 3):
                orig = flat[idx]
                flat[idx] = orig + step
                Jp = objective(X, bank, clusters, pairs, hp, S=S)[0]
                flat[idx] = orig - step
                Jm = objective(X, bank, clusters, pairs, hp, S=S)[0]
                flat[idx] = orig
                fd = (Jp - Jm) / (2 * step)
                analytic = g.dW[k][m].reshape(-1)[idx]
                assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("activation,tol", [("linear", 1e-7), ("tanh", 1e-5),
                                            ("relu", 1e-5)])
def test_gradcheck_thresholds(activation, tol):
    hp = Hyperparams(K=1, hidden_dims=(6, 4), activation=activation)
    rep = gradcheck(hp, seed=11)
    assert rep.max_rel_error < tol


@pytest.mark.parametrize("K", [0, 1, 3])
def test_gradcheck_across_k(K):
    hp = Hyperparams(K=K, hidden_dims=(5, 3), activation="tanh")
    assert gradcheck(hp, seed=K + 1).max_rel_error < 1e-5


def test_gradcheck_corrupt_hook_detected():
    hp = Hyperparams(K=0, hidden_dims=(4,), activation="linear")
    assert gradcheck(hp, seed=0, corrupt=True).max_rel_error > 1e-2


# ---------------------------------------------------------------------------
# updates and loop

def test_sgd_step_arithmetic():
    layer = LayerParams(np.array([[2.0]]), np.array([0.5]))
    bank = NetworkBank([Network([layer], "linear")])
    from nlml.training import GradientSet
    g = GradientSet([[np.array([[1.0]])]], [[np.array([0.25])]])
    sgd_step(bank, g, 0.5)
    assert layer.W[0, 0] == 1.5
    assert layer.b[0] == 0.375


def test_sgd_zero_gradient_unchanged():
    bank = init_bank([3, 2], 1, "tanh")
    before = [l.W.copy() for net in bank.networks for l in net.layers]
    from nlml.training import GradientSet
    g = GradientSet([[np.zeros((2, 3))] for _ in range(2)],
                    [[np.zeros(2)] for _ in range(2)])
    sgd_step(bank, g, 0.1)
    after = [l.W for net in bank.networks for l in net.layers]
    for b, a in zip(before, after):
        assert b.tobytes() == a.tobytes()


def test_pretrain_zero_iters_unchanged():
    rng = np.random.default_rng(6)
    X, pairs, bank, clusters, hp = _instance(rng)
    hp0 = Hyperparams(**{**hp.__dict__, "pretrain_iters": 0})
    before = [l.W.copy() for net in bank.networks for l in net.layers]
    pretrain(X, bank, clusters, pairs, hp0)
    for b, l in zip(before, [l for net in bank.networks for l in net.layers]):
        assert b.tobytes() == l.W.tobytes()


def test_pretrain_decreases_objective():
    rng = np.random.default_rng(7)
    X, pairs, _, clusters, _ = _instance(rng, K=1)
    hp = Hyperparams(K=1, hidden_dims=(5, 4), pretrain_iters=20,
                     pretrain_mu=1e-4, lam=0.01)
    bank = init_bank(hp.dims_chain(5), 1, hp.activation)
    J0 = objective(X, bank, clusters, pairs, hp)[0]
    pretrain(X, bank, clusters, pairs, hp)
    J1 = objective(X, bank, clusters, pairs, hp)[0]
    assert J1 <= J0


def test_train_converges_with_huge_epsilon():
    rng = np.random.default_rng(8)
    X, pairs, _, _, _ = _instance(rng)
    hp = Hyperparams(K=1, hidden_dims=(5, 4), iters=50, pretrain_iters=0,
                     mu=1e-4, epsilon=1e9)
    _, report = train(X, pairs, hp)
    assert report.iterations == 2
    assert report.stop_reason == "converged"


def test_train_single_iteration_max_iters():
    rng = np.random.default_rng(9)
    X, pairs, _, _, _ = _instance(rng)
    hp = Hyperparams(K=0, hidden_dims=(4,), iters=1, pretrain_iters=0, mu=1e-4,
                     epsilon=1e-12)
    _, report = train(X, pairs, hp)
    assert report.iterations == 1
    assert report.stop_reason == "max_iters"


def test_train_rejects_one_sided_pairs():
    X = FeatureMatrix(np.random.default_rng(10).normal(size=(3, 4)))
    pos_only = PairSet([0, 2], [1, 3], [1, 1])
    with pytest.raises(ValueError, match="positive and one negative"):
        train(X, pos_only, HP_SMALL)


def test_train_divergence_raises():
    rng = np.random.default_rng(11)
    X, pairs, _, _, _ = _instance(rng)
    hp = Hyperparams(K=0, hidden_dims=(5,), iters=200, pretrain_iters=0,
                     mu=50.0, epsilon=1e-300, activation="linear")
    with pytest.raises((TrainingDiverged, FloatingPointError, OverflowError)):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train(X, pairs, hp)


def test_train_monotone_descent_on_synthetic():
    X, labels = synth_generate(SynthSpec())
    pairs = make_pairs(labels)
    hp = Hyperparams(K=2, hidden_dims=(12, 8), iters=60, pretrain_iters=0,
                     mu=1e-4, epsilon=1e-300)
    _, report = train(X, pairs, hp)
    J = report.J
    assert all(b <= a + 1e-9 for a, b in zip(J, J[1:]))


def test_identity_init_k0_starts_at_scaled_euclidean():
    rng = np.random.default_rng(12)
    d = 4
    bank = init_bank([d, d], 0, "linear")
    from nlml.metric import NlmlModel
    model = NlmlModel(bank=bank, clusters=empty_clusters(d), beta=1.0)
    xi, xj = rng.normal(size=d), rng.normal(size=d)
    assert distance(model, xi, xj) == pytest.approx(np.sum((xi - xj) ** 2), abs=1e-12)


def test_recluster_mode_runs():
    rng = np.random.default_rng(13)
    X, pairs, _, _, _ = _instance(rng, n=14)
    hp = Hyperparams(K=2, hidden_dims=(4,), iters=9, pretrain_iters=0, mu=1e-4,
                     epsilon=1e-300, recluster_every=3)
    model, report = train(X, pairs, hp)
    assert report.iterations == 9
    assert model.clusters.k_regions == 2


def test_train_report_csv(tmp_path):
    rng = np.random.default_rng(14)
    X, pairs, _, _, _ = _instance(rng)
    hp = Hyperparams(K=0, hidden_dims=(4,), iters=3, pretrain_iters=0, mu=1e-4,
                     epsilon=1e-300)
    _, report = train(X, pairs, hp)
    p = tmp_path / "report.csv"
    report.to_csv(p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "iteration,J,J1,J2,wall_ms"
    assert len(lines) == 4
    j, j1, j2 = (float(v) for v in lines[1].split(",")[1:4])
    assert j == pytest.approx(j1 + j2, abs=1e-10)


def test_hyperparams_validation():
    with pytest.raises(ValueError, match="tau > c"):
        Hyperparams(tau=1.0, c=2.0)
    with pytest.raises(ValueError, match="lambda"):
        Hyperparams(lam=-0.1)
    with pytest.raises(ValueError, match="gamma"):
        Hyperparams(gamma=0.0)
    with pytest.raises(ValueError, match="epsilon"):
        Hyperparams(epsilon=0.0)
