"""Interaction trajectory container shared by data generation, learning, eval."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from koopguide.errors import ValidationError


@dataclass
class Trajectory:
    """One S-step leader-follower interaction.

    States have one more row than controls; tuple t is
    (xL[t], xF[t], uL[t], uF[t], xL[t+1], xF[t+1]).
    """

    xL: np.ndarray   # (S+1, 3)
    xF: np.ndarray   # (S+1, 3)
    uL: np.ndarray   # (S, 2)
    uF: np.ndarray   # (S, 2)

    def __post_init__(self):
        self.xL = np.asarray(self.xL, dtype=float)
        self.xF = np.asarray(self.xF, dtype=float)
        self.uL = np.asarray(self.uL, dtype=float)
        self.uF = np.asarray(self.uF, dtype=float)
        s = self.steps
        if self.xL.shape != (s + 1, 3) or self.xF.shape != (s + 1, 3) or self.uF.shape != (s, 2):
            raise ValidationError("inconsistent trajectory array shapes")

    @property
    def steps(self) -> int:
        return self.uL.shape[0]
