"""Gradient-boosted deep and convolutional neural networks in NumPy."""
from .boosting import (BoostConfig, BoostedEnsemble, boost_fit, fold_rho, line_search,
                       pseudo_residuals)
from .data import Dataset, kfold, load_csv, load_idx, preprocess
from .network import (Sequential, TrainConfig, build_network, clone_and_grow,
                      fit_classification_joint, fit_regression, net_forward)

__version__ = "0.1.0"
