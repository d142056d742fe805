"""Discrete unicycle model shared by both robots.

State convention: ``x = [px, py, theta]`` (meters, meters, radians).
Heading is kept unwrapped; every cost that touches it goes through
cos/sin or carries zero weight, and an unwrapped angle keeps the step map
smooth for gradient-based planners.

Control convention: ``u = [v, omega]`` with the admissible box
``[V_MIN, V_MAX] x [W_MIN, W_MAX]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

V_MIN, V_MAX = 0.0, 2.0
W_MIN, W_MAX = -2.0, 2.0

#: Default sampling period of the simulation (seconds).
DEFAULT_DT = 0.2


@dataclass
class JointState:
    """Leader and follower poses at one instant."""

    leader: np.ndarray
    follower: np.ndarray

    def copy(self) -> "JointState":
        return JointState(self.leader.copy(), self.follower.copy())


def step(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One exact Euler step of the unicycle: ``x + [v cos, v sin, w] dt``."""
    px, py, th = x
    v, w = u
    return np.array([px + v * np.cos(th) * dt, py + v * np.sin(th) * dt, th + w * dt])


def rollout(x0: np.ndarray, us: np.ndarray, dt: float) -> np.ndarray:
    """Iterate `step` over a control sequence; returns the visited states.

    ``us`` has shape (K, 2); the result has shape (K, 3) and excludes x0.
    """
    us = np.asarray(us, dtype=float).reshape(-1, 2)
    out = np.empty((us.shape[0], 3))
    x = np.asarray(x0, dtype=float)
    for k in range(us.shape[0]):
        x = step(x, us[k], dt)
        out[k] = x
    return out


def clamp_control(u: np.ndarray) -> np.ndarray:
    """Componentwise projection onto the admissible control box."""
    return np.array([min(max(u[0], V_MIN), V_MAX), min(max(u[1], W_MIN), W_MAX)])


def step_jacobians(x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (A, B) of `step` with respect to state and control."""
    th = x[2]
    v = u[0]
    c, s = np.cos(th), np.sin(th)
    A = np.array([[1.0, 0.0, -v * s * dt], [0.0, 1.0, v * c * dt], [0.0, 0.0, 1.0]])
    B = np.array([[c * dt, 0.0], [s * dt, 0.0], [0.0, dt]])
    return A, B


def step_batch(X: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray:
    """`step` applied rowwise to (K, 3) states and (K, 2) controls."""
    c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
    return np.stack([X[:, 0] + U[:, 0] * c * dt, X[:, 1] + U[:, 0] * s * dt, X[:, 2] + U[:, 1] * dt], axis=1)


def step_jacobians_batch(X: np.ndarray, U: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Rowwise step Jacobians, shapes (K, 3, 3) and (K, 3, 2)."""
    k = X.shape[0]
    c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
    A = np.tile(np.eye(3), (k, 1, 1))
    A[:, 0, 2] = -U[:, 0] * s * dt
    A[:, 1, 2] = U[:, 0] * c * dt
    B = np.zeros((k, 3, 2))
    B[:, 0, 0] = c * dt
    B[:, 1, 0] = s * dt
    B[:, 2, 1] = dt
    return A, B
