"""Robust counterfactual explanations for small neural classifiers.

Generators (min-cost, nearest neighbour, T-Rex:I, T-Rex:NN), a Gaussian
neighbourhood stability measure with probabilistic validity checks, LOF
realism scoring, and retraining-based robustness evaluation.
"""
from .cfgen import CounterfactualRecord, MinCostParams, TrexConfig, min_cost_cf, nn_cf, robustness_test, trex_i, trex_nn
from .data import Dataset, make_moons
from .nn import MlpModel, TrainConfig, fit_mlp, forward, init_mlp, input_gradient, train
from .stability import StabilityConfig, stability_exact, stability_gradient, stability_relaxed

__version__ = "0.1.0"
