"""Scikit-learn compatible wrapper around the training pipeline.

The functional core works on column-major d x N matrices; this estimator
accepts the usual (n_samples, n_features) layout so it composes with the
wider ecosystem (get_params/set_params, clone, pipelines of pair scorers).
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import FeatureMatrix, IdentityLabels, make_pairs
from .metric import distance, distance_matrix
from .pca import fit_pca
from .training import Hyperparams, train


class NonlinearLocalMetricLearner(BaseEstimator):
    """Learn one global and n_local local network metrics from identity labels.

    Parameters mirror the training hyperparameters; fit(X, y) expects X with
    one sample per row and y as integer identities.
    """

    def __init__(self, n_local=4, beta=1.0, reg=0.01, gamma=1.0, tau=2.0,
                 margin=1.0, learning_rate=0.004, pretrain_rate=0.004,
                 max_iter=500, pretrain_iter=50, epsilon=0.1,
                 hidden_dims=(500, 400, 300), activation="tanh",
                 pca_dim=None, pair_mode="all", neg_ratio=1.0,
                 recluster_every=0, random_state=0):
        self.n_local = n_local
        self.beta = beta
        self.reg = reg
        self.gamma = gamma
        self.tau = tau
        self.margin = margin
        self.learning_rate = learning_rate
        self.pretrain_rate = pretrain_rate
        self.max_iter = max_iter
        self.pretrain_iter = pretrain_iter
        self.epsilon = epsilon
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.pca_dim = pca_dim
        self.pair_mode = pair_mode
        self.neg_ratio = neg_ratio
        self.recluster_every = recluster_every
        self.random_state = random_state

    def _hyperparams(self) -> Hyperparams:
        return Hyperparams(
            K=self.n_local, beta=self.beta, lam=self.reg, gamma=self.gamma,
            tau=self.tau, c=self.margin, mu=self.learning_rate,
            pretrain_mu=self.pretrain_rate, iters=self.max_iter,
            pretrain_iters=self.pretrain_iter, epsilon=self.epsilon,
            seed=self.random_state, recluster_every=self.recluster_every,
            hidden_dims=tuple(self.hidden_dims), activation=self.activation,
        )

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must hold one integer identity per sample")
        features = FeatureMatrix(X.T)
        labels = IdentityLabels(y.astype(np.int64))
        pca = fit_pca(features, self.pca_dim) if self.pca_dim else None
        reduced = pca.transform(features) if pca else features
        pairs = make_pairs(labels, mode=self.pair_mode, ratio=self.neg_ratio,
                           seed=self.random_state)
        model, report = train(reduced, pairs, self._hyperparams())
        model.pca = pca
        self.model_ = model
        self.report_ = report
        self.n_features_in_ = X.shape[1]
        return self

    def _reduce_rows(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        fm = FeatureMatrix(X.T)
        return self.model_.reduce(fm)

    def pair_distance(self, Xa, Xb):
        """Learned dissimilarity between row i of Xa and row i of Xb."""
        check_is_fitted(self, "model_")
        A = self._reduce_rows(Xa)
        B = self._reduce_rows(Xb)
        if A.count != B.count:
            raise ValueError("Xa and Xb must pair up row by row")
        return np.array([distance(self.model_, A.column(i), B.column(i))
                         for i in range(A.count)])

    def distance_matrix(self, X_probe, X_gallery):
        """All probe-vs-gallery learned dissimilarities."""
        check_is_fitted(self, "model_")
        return distance_matrix(self.model_, self._reduce_rows(X_probe),
                               self._reduce_rows(X_gallery))

    def get_metric(self):
        """Callable (a, b) -> dissimilarity on raw (unreduced) feature vectors."""
        check_is_fitted(self, "model_")
        model = self.model_

        def metric(a, b):
            a = np.asarray(a, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if model.pca is not None:
                a = model.pca.transform_vec(a)
                b = model.pca.transform_vec(b)
            return distance(model, a, b)

        return metric
