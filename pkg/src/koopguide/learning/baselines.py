"""Comparison learners: linear least-squares fit and one-step network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from koopguide.errors import KoopguideError, RankDeficiencyError, ValidationError
from koopguide.learning.mlp import Mlp
from koopguide.trajectory import Trajectory

_IN_DIM = 8   # [xF(3), xL(3), uL(2)]


@dataclass
class DmdModel:
    """Linear one-step model ``xF+ = A xF + B [xL; uL]`` fit by least squares."""

    A: np.ndarray            # (3, 3)
    B: np.ndarray            # (3, 5)
    residual: float          # RMS one-step residual on the fit data

    def predict(self, xF, xL, uL) -> np.ndarray:
        w = np.concatenate([np.asarray(xL, dtype=float), np.asarray(uL, dtype=float)])
        return self.A @ np.asarray(xF, dtype=float) + self.B @ w


@dataclass
class OneStepNnModel:
    """Network fit of the one-step map (xF, xL, uL) -> xF+."""

    net: Mlp
    train_meta: dict | None = None

    def predict(self, xF, xL, uL) -> np.ndarray:
        z = np.concatenate([np.asarray(xF, dtype=float), np.asarray(xL, dtype=float), np.asarray(uL, dtype=float)])
        return self.net(z.reshape(1, -1))[0]

    def jacobians(self, xF, xL, uL):
        """Input Jacobians (d xF+ / d xF, d xF+ / d xL, d xF+ / d uL)."""
        z = np.concatenate([np.asarray(xF, dtype=float), np.asarray(xL, dtype=float), np.asarray(uL, dtype=float)])
        J = self.net.jacobian(z)
        return J[:, 0:3], J[:, 3:6], J[:, 6:8]


def _tuples(data) -> tuple[np.ndarray, np.ndarray]:
    trajs = list(data.trajectories) if hasattr(data, "trajectories") else list(data)
    if not trajs:
        raise ValidationError("fit requires a non-empty dataset")
    ins, outs = [], []
    for t in trajs:
        ins.append(np.concatenate([t.xF[:-1], t.xL[:-1], t.uL], axis=1))
        outs.append(t.xF[1:])
    return np.concatenate(ins), np.concatenate(outs)


def fit_dmd(data) -> DmdModel:
    """Least-squares linear fit of the one-step interaction map.

    Requires the (K, 8) regressor matrix to have full column rank; on
    deficiency the error names the weakest input dimension.
    """
    Z, Xn = _tuples(data)
    _, sv, Vt = np.linalg.svd(Z, full_matrices=False)
    rank = int((sv > sv[0] * max(Z.shape) * np.finfo(float).eps).sum()) if sv.size else 0
    if rank < _IN_DIM:
        weakest = int(np.argmax(np.abs(Vt[-1])))
        raise RankDeficiencyError(rank, _IN_DIM, weakest)
    theta, *_ = np.linalg.lstsq(Z, Xn, rcond=None)
    pred = Z @ theta
    resid = float(np.sqrt(np.mean((pred - Xn) ** 2)))
    theta = theta.T   # (3, 8)
    return DmdModel(A=theta[:, 0:3].copy(), B=theta[:, 3:8].copy(), residual=resid)


def train_one_step_nn(
    data,
    epochs: int = 300,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    seed: int = 0,
    hidden: int = 64,
) -> tuple[OneStepNnModel, dict]:
    """SGD fit of the one-step map with a single ReLU hidden layer."""
    Z, Xn = _tuples(data)
    rng = np.random.default_rng(seed)
    net = Mlp([_IN_DIM, hidden, 3], rng)
    n = Z.shape[0]
    epoch_losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            zb, xb = Z[idx], Xn[idx]
            pred, cache = net.forward(zb)
            res = pred - xb
            loss = float((res * res).sum() / len(idx))
            if not np.isfinite(loss):
                raise KoopguideError(f"one-step net diverged at epoch {epoch}; lower the learning rate")
            losses.append(loss)
            dWs, dbs, _ = net.backward(cache, (2.0 / len(idx)) * res)
            for W, dW in zip(net.weights, dWs):
                W -= learning_rate * dW
            for b, db in zip(net.biases, dbs):
                b -= learning_rate * db
        epoch_losses.append(float(np.mean(losses)))
    meta = {"epochs": epochs, "batch_size": batch_size, "learning_rate": learning_rate, "seed": seed}
    history = {"epoch_losses": epoch_losses}
    return OneStepNnModel(net, train_meta=meta), history
