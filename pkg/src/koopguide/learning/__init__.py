"""Learned models of the follower's closed-loop reaction.

Three learners share the prediction contract "next follower state from
(xF, xL, uL)": a lifted linear model with a trained embedding, a plain
linear least-squares fit, and a one-step neural network.
"""

from koopguide.learning.baselines import DmdModel, OneStepNnModel, fit_dmd, train_one_step_nn
from koopguide.learning.checkpoint import load_any_model, load_model, save_model
from koopguide.learning.koopman import KoopmanModel, TrainConfig, embed, koopman_loss, predict_rollout, train_koopman
from koopguide.learning.mlp import Mlp

__all__ = [
    "DmdModel",
    "KoopmanModel",
    "Mlp",
    "OneStepNnModel",
    "TrainConfig",
    "embed",
    "fit_dmd",
    "koopman_loss",
    "load_any_model",
    "load_model",
    "predict_rollout",
    "save_model",
    "train_koopman",
    "train_one_step_nn",
]
