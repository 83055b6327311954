"""Classifiers: the two-branch network, its ablations and the forest baseline."""

from gsnorm.model.forest import Forest, ForestConfig, forest_predict, forest_train, load_forest, save_forest
from gsnorm.model.network import (
    MODEL_KINDS,
    Architecture,
    ModelParams,
    forward,
    init_params,
    load_weights,
    loss_and_gradients,
    predict_proba,
    save_weights,
)
from gsnorm.model.train import History, TrainConfig, train
