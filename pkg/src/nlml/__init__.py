"""Nonlinear local metric learning: a global plus K local feedforward-network
metrics blended by RBF cluster weights, trained with a large-margin objective."""

from .clustering import ClusterModel, fit_sigma, kmeans, pair_weights, similarity
from .data import (FeatureMatrix, IdentityLabels, PairSet, SplitSpec,
                   load_features, make_pairs, save_features, split_by_identity)
from .estimator import NonlinearLocalMetricLearner
from .evaluation import (CmcCurve, SynthSpec, baseline_euclidean, cmc,
                         run_protocol, synth_generate)
from .metric import NlmlModel, distance, distance_matrix
from .modelio import load_model, save_model
from .network import Network, NetworkBank, forward, init_bank, net_distance
from .pca import PcaModel, fit_pca
from .training import (GradcheckReport, Hyperparams, TrainReport, gradcheck,
                       benchmark_config, gradients, logistic, nlml1_config,
                       nlml2_config,
                       objective, pretrain, sgd_step, train)

__version__ = "0.1.0"

__all__ = [
    "ClusterModel", "CmcCurve", "FeatureMatrix", "GradcheckReport",
    "Hyperparams", "IdentityLabels", "NlmlModel", "Network", "NetworkBank",
    "NonlinearLocalMetricLearner", "PairSet", "PcaModel", "SplitSpec",
    "SynthSpec", "TrainReport", "baseline_euclidean", "cmc", "distance",
    "distance_matrix", "fit_pca", "fit_sigma", "forward", "gradcheck",
    "gradients", "init_bank", "kmeans", "load_features", "load_model",
    "benchmark_config", "logistic", "make_pairs", "net_distance",
    "nlml1_config", "nlml2_config",
    "objective", "pair_weights", "pretrain", "run_protocol", "save_features",
    "save_model", "sgd_step", "similarity", "split_by_identity",
    "synth_generate", "train",
]
