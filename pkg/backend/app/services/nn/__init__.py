"""
Minimal feed-forward network engine (numpy): d -> 64 -> k, ReLU hidden layer,
linear outputs, inverted dropout, Adam.

  network.py  NetParams, init_net, forward/predict, backward, (de)serialization
  losses.py   mse, Gaussian NLL, pinball, QD, LUBE (+ gradients)
  trainer.py  train / train_with_history, fgsm_perturb, early stopping
"""
from app.services.nn.losses import (
    batch_objective,
    loss_gauss_nll,
    loss_lube,
    loss_mse,
    loss_pinball,
    loss_qd,
)
from app.services.nn.network import (
    HIDDEN_UNITS,
    NetParams,
    flatten_params,
    forward,
    forward_batch,
    init_net,
    load_params,
    predict,
    save_params,
    unflatten_params,
)
from app.services.nn.trainer import (
    TrainHistory,
    fgsm_perturb,
    loss_and_gradients,
    train,
    train_with_history,
)

__all__ = [
    "HIDDEN_UNITS",
    "NetParams",
    "TrainHistory",
    "batch_objective",
    "fgsm_perturb",
    "flatten_params",
    "forward",
    "forward_batch",
    "init_net",
    "load_params",
    "loss_and_gradients",
    "loss_gauss_nll",
    "loss_lube",
    "loss_mse",
    "loss_pinball",
    "loss_qd",
    "predict",
    "save_params",
    "train",
    "train_with_history",
    "unflatten_params",
]
