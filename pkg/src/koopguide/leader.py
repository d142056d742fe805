"""Leader objective: stage costs, horizon weights, guidance-mode switching."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from koopguide.errors import ValidationError


class ObjectiveMode(Enum):
    """Which objective the leader pursues this planning step."""

    APPROACH_FOLLOWER = "approach_follower"
    HEAD_TO_DESTINATION = "head_to_destination"


@dataclass(frozen=True)
class LeaderWeights:
    """Diagonal weights of the leader's stage cost plus guidance parameters.

    q2 (the destination pull) is scenario dependent: `q2_near` applies when
    the follower is within distance `lam` (leader heads to the destination),
    `q2_far` when he is farther away (leader turns back to collect him).
    """

    q1: np.ndarray
    q2_near: np.ndarray
    q2_far: np.ndarray
    r: np.ndarray
    lam: float = 1.0
    horizon: int = 5

    def __post_init__(self):
        object.__setattr__(self, "q1", np.ascontiguousarray(self.q1, dtype=float).reshape(3))
        object.__setattr__(self, "q2_near", np.ascontiguousarray(self.q2_near, dtype=float).reshape(3))
        object.__setattr__(self, "q2_far", np.ascontiguousarray(self.q2_far, dtype=float).reshape(3))
        object.__setattr__(self, "r", np.ascontiguousarray(self.r, dtype=float).reshape(2))
        if (self.q1 < 0).any() or (self.q2_near < 0).any() or (self.q2_far < 0).any() or (self.r < 0).any():
            raise ValidationError("leader weight diagonals must be non-negative")
        if not self.lam > 0:
            raise ValidationError(f"guidance threshold must be positive, got {self.lam}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be at least 1, got {self.horizon}")

    def q2_for(self, mode: ObjectiveMode) -> np.ndarray:
        return self.q2_far if mode is ObjectiveMode.APPROACH_FOLLOWER else self.q2_near


def select_objective(xL: np.ndarray, xF: np.ndarray, lam: float) -> ObjectiveMode:
    """Distance-triggered switch: strictly beyond `lam`, go collect the follower."""
    d = float(np.hypot(xL[0] - xF[0], xL[1] - xF[1]))
    return ObjectiveMode.APPROACH_FOLLOWER if d > lam else ObjectiveMode.HEAD_TO_DESTINATION


def leader_stage_cost(
    xL: np.ndarray,
    xF: np.ndarray,
    uL: np.ndarray | None,
    q2: np.ndarray,
    w: LeaderWeights,
    xd: np.ndarray,
) -> float:
    """Quadratic stage cost; pass ``uL=None`` for the terminal stage."""
    d = xL - xF
    e = xL - xd
    cost = float(w.q1 @ (d * d) + q2 @ (e * e))
    if uL is not None:
        cost += float(w.r @ (uL * uL))
    return cost
