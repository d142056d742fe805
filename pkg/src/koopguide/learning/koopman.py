"""Lifted linear model of the follower's closed-loop reaction.

The follower state x is lifted to ``y = [x; h(x)]`` with a trained network
h, and the interaction advances linearly in the lifted space:
``y+ = A y + B1 xL + B2 uL``, decoded by the fixed selector ``x = C y``.
Embedding, A and B are learned jointly from interaction trajectories by
stochastic gradient descent on a decay-weighted multi-step residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from koopguide.errors import KoopguideError, ValidationError
from koopguide.learning.mlp import Mlp
from koopguide.trajectory import Trajectory

N_STATE = 3
N_LEADER = 3
N_CONTROL = 2


@dataclass
class TrainConfig:
    gamma: float = 0.9            # per-step decay of the multi-step residual
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 3e-4   # 1e-3 diverges at this state scale
    seed: int = 0
    embed_dim: int = 20           # width of the learned part of the lifting
    hidden: tuple[int, ...] = (90, 90, 90)
    rollout_loss: bool = False    # lifted-rollout residuals instead of per-tuple ones
    momentum: float = 0.0         # classical momentum; 0 is plain SGD
    standardize: bool = True      # whiten network inputs from training-data statistics

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.epochs < 1 or self.batch_size < 1 or self.embed_dim < 1:
            raise ValidationError("epochs, batch_size and embed_dim must be positive")
        if not self.learning_rate > 0:
            raise ValidationError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class KoopmanModel:
    embedding: Mlp                # whitened state (3,) -> features (embed_dim,)
    A: np.ndarray                 # (3+q, 3+q)
    B1: np.ndarray                # (3+q, 3)  leader-state input
    B2: np.ndarray                # (3+q, 2)  leader-control input
    in_shift: np.ndarray = field(default_factory=lambda: np.zeros(N_STATE))
    in_scale: np.ndarray = field(default_factory=lambda: np.ones(N_STATE))
    train_config: TrainConfig | None = None

    @property
    def lifted_dim(self) -> int:
        return self.A.shape[0]

    @property
    def C(self) -> np.ndarray:
        """Fixed decoder [I 0]: the first three lifted coordinates are the state."""
        C = np.zeros((N_STATE, self.lifted_dim))
        C[:, :N_STATE] = np.eye(N_STATE)
        return C

    def whiten(self, X: np.ndarray) -> np.ndarray:
        return (X - self.in_shift) / self.in_scale

    def embed_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, N_STATE)
        return np.concatenate([X, self.embedding(self.whiten(X))], axis=1)


def embed(m: KoopmanModel, xF: np.ndarray) -> np.ndarray:
    """Lift one state; the first three components are the state itself."""
    return m.embed_batch(np.asarray(xF).reshape(1, N_STATE))[0]


def new_model(cfg: TrainConfig, rng: np.random.Generator,
              in_shift: np.ndarray | None = None, in_scale: np.ndarray | None = None) -> KoopmanModel:
    """Fresh model: identity on the state block of A, small random elsewhere.

    The state-row coupling to the feature block starts an order larger than
    the rest so the embedding receives gradient from step one (with ~0
    coupling nothing flows into the network and the features never train).
    """
    net = Mlp([N_STATE, *cfg.hidden, cfg.embed_dim], rng)
    n = N_STATE + cfg.embed_dim
    A = 0.01 * rng.standard_normal((n, n))
    A[:N_STATE, :N_STATE] += np.eye(N_STATE)
    A[:N_STATE, N_STATE:] = 0.1 * rng.standard_normal((N_STATE, cfg.embed_dim))
    B1 = 0.01 * rng.standard_normal((n, N_LEADER))
    B2 = 0.01 * rng.standard_normal((n, N_CONTROL))
    return KoopmanModel(
        net, A, B1, B2,
        in_shift=np.zeros(N_STATE) if in_shift is None else np.asarray(in_shift, dtype=float),
        in_scale=np.ones(N_STATE) if in_scale is None else np.asarray(in_scale, dtype=float),
        train_config=cfg,
    )


def _stack(trajs: list[Trajectory]):
    XF = np.stack([t.xF for t in trajs])   # (b, S+1, 3)
    XL = np.stack([t.xL[:-1] for t in trajs])
    UL = np.stack([t.uL for t in trajs])
    return XF, XL, UL


def koopman_loss(m: KoopmanModel, trajs: list[Trajectory], gamma: float) -> float:
    """Decay-weighted residual ``(1/N) sum_i sum_t g^t |g(x+)-A g(x)-B w|^2``."""
    loss, _ = _loss_and_grads(m, trajs, gamma, want_grads=False)
    return loss


def _loss_and_grads(m: KoopmanModel, trajs: list[Trajectory], gamma: float,
                    want_grads: bool = True, rollout: bool = False):
    b = len(trajs)
    XF, XL, UL = _stack(trajs)
    S = XF.shape[1] - 1
    flat = XF.reshape(-1, N_STATE)
    H, cache = m.embedding.forward(m.whiten(flat))
    E = np.concatenate([flat, H], axis=1).reshape(b, S + 1, -1)
    gam = gamma ** np.arange(S)

    if rollout:
        # propagate the lifted state open-loop and penalize rollout residuals
        Y = np.empty_like(E)
        Y[:, 0] = E[:, 0]
        for t in range(S):
            Y[:, t + 1] = Y[:, t] @ m.A.T + XL[:, t] @ m.B1.T + UL[:, t] @ m.B2.T
        res = E[:, 1:] - Y[:, 1:]
    else:
        pred = E[:, :-1] @ m.A.T + XL @ m.B1.T + UL @ m.B2.T
        res = E[:, 1:] - pred
    loss = float((gam * (res * res).sum(axis=2)).sum() / b)
    if not want_grads:
        return loss, None

    wres = (2.0 / b) * gam[None, :, None] * res    # dL/d(res)
    if rollout:
        # adjoint through the linear rollout: lam_t = dL/dY_t
        dA = np.zeros_like(m.A)
        dB1 = np.zeros_like(m.B1)
        dB2 = np.zeros_like(m.B2)
        lam = np.zeros_like(E)
        for t in range(S, 0, -1):
            lam[:, t] += -wres[:, t - 1]
            dA += np.einsum("bi,bj->ij", lam[:, t], Y[:, t - 1])
            dB1 += np.einsum("bi,bj->ij", lam[:, t], XL[:, t - 1])
            dB2 += np.einsum("bi,bj->ij", lam[:, t], UL[:, t - 1])
            lam[:, t - 1] += lam[:, t] @ m.A
        dE = np.zeros_like(E)
        dE[:, 1:] += wres
        dE[:, 0] += lam[:, 0]
    else:
        dA = -np.einsum("bti,btj->ij", wres, E[:, :-1])
        dB1 = -np.einsum("bti,btj->ij", wres, XL)
        dB2 = -np.einsum("bti,btj->ij", wres, UL)
        dE = np.zeros_like(E)
        dE[:, 1:] += wres
        dE[:, :-1] -= wres @ m.A
    dH = dE[:, :, N_STATE:].reshape(-1, dE.shape[2] - N_STATE)
    dWs, dbs, _ = m.embedding.backward(cache, dH)
    return loss, {"A": dA, "B1": dB1, "B2": dB2, "Ws": dWs, "bs": dbs}


def train_koopman(data, cfg: TrainConfig) -> tuple[KoopmanModel, dict]:
    """SGD over trajectory minibatches; deterministic given the seed.

    Returns the trained model and a history dict with the pre-training loss
    and the running mean batch loss per epoch.  Aborts on divergence.
    """
    trajs = list(data.trajectories) if hasattr(data, "trajectories") else list(data)
    if not trajs:
        raise ValidationError("training requires a non-empty dataset")
    rng = np.random.default_rng(cfg.seed)
    if cfg.standardize:
        allF = np.concatenate([t.xF for t in trajs])
        shift = allF.mean(axis=0)
        scale = np.maximum(allF.std(axis=0), 1e-6)
    else:
        shift, scale = np.zeros(N_STATE), np.ones(N_STATE)
    m = new_model(cfg, rng, in_shift=shift, in_scale=scale)
    initial = koopman_loss(m, trajs, cfg.gamma)
    epoch_losses = []
    n = len(trajs)
    vel = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            batch = [trajs[i] for i in order[start : start + cfg.batch_size]]
            loss, g = _loss_and_grads(m, batch, cfg.gamma, rollout=cfg.rollout_loss)
            if not np.isfinite(loss):
                raise KoopguideError(
                    f"training diverged at epoch {epoch} (loss={loss}); lower the learning rate"
                )
            batch_losses.append(loss)
            flat_grad = [g["A"], g["B1"], g["B2"], *g["Ws"], *g["bs"]]
            params = [m.A, m.B1, m.B2, *m.embedding.weights, *m.embedding.biases]
            if cfg.momentum > 0.0:
                if vel is None:
                    vel = [np.zeros_like(p) for p in params]
                for v, dp in zip(vel, flat_grad):
                    v *= cfg.momentum
                    v += dp
                flat_grad = vel
            for p, dp in zip(params, flat_grad):
                p -= cfg.learning_rate * dp
        epoch_losses.append(float(np.mean(batch_losses)))
    final = koopman_loss(m, trajs, cfg.gamma)
    history = {"initial_loss": initial, "epoch_losses": epoch_losses, "final_loss": final}
    return m, history


def predict_rollout(m: KoopmanModel, xF0: np.ndarray, leader_states: np.ndarray, leader_controls: np.ndarray) -> np.ndarray:
    """Open-loop lifted rollout decoded back to states.

    The embedding is applied once at t=0; afterwards the lifted state
    evolves purely linearly.  Returns (K, 3) predictions for steps 1..K.
    """
    XL = np.asarray(leader_states, dtype=float).reshape(-1, N_LEADER)
    UL = np.asarray(leader_controls, dtype=float).reshape(-1, N_CONTROL)
    if XL.shape[0] != UL.shape[0]:
        raise ValidationError("leader state and control sequences differ in length")
    y = embed(m, xF0)
    out = np.empty((XL.shape[0], N_STATE))
    for k in range(XL.shape[0]):
        y = m.A @ y + m.B1 @ XL[k] + m.B2 @ UL[k]
        out[k] = y[:N_STATE]
    return out
