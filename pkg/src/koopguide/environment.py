"""Workspace geometry: norm-shaped obstacles, clearances, log barriers.

An obstacle is the sublevel set ``{p : ||L (p - c)||_l <= r}`` of a norm,
so circles (l2), rectangles (linf) and diamonds (l1) share one clearance
formula.  Clearance is measured on position only; robot heading never
enters the geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from koopguide.errors import BarrierDomainError, SchemaError, ValidationError

#: Norm tags accepted in config files, mapped to the codes the kernels use.
NORM_CODES = {"l1": 1, "l2": 2, "linf": 3}

#: Columns of the packed per-obstacle array consumed by the kernels:
#: [cx, cy, L00, L01, L10, L11, radius, norm_code]
PACKED_WIDTH = 8


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray          # (2,) position of the obstacle center
    shape_matrix: np.ndarray    # (2, 2) scaling/rotation applied before the norm
    radius: float
    norm: str                   # "l1" | "l2" | "linf"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        object.__setattr__(self, "shape_matrix", np.asarray(self.shape_matrix, dtype=float).reshape(2, 2))
        if self.norm not in NORM_CODES:
            raise ValidationError(f"unknown norm {self.norm!r}; expected one of {sorted(NORM_CODES)}")
        if not self.radius > 0:
            raise ValidationError(f"obstacle radius must be positive, got {self.radius}")
        if abs(np.linalg.det(self.shape_matrix)) < 1e-12:
            raise ValidationError("obstacle shape matrix is singular")


@dataclass(frozen=True)
class Environment:
    bounds: np.ndarray          # (4,) [xmin, xmax, ymin, ymax]
    destination: np.ndarray     # (3,) target pose
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float).reshape(4))
        object.__setattr__(self, "destination", np.asarray(self.destination, dtype=float).reshape(3))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValidationError(f"degenerate workspace bounds {self.bounds.tolist()}")
        if not in_bounds(self, self.destination[:2]):
            raise ValidationError("destination lies outside the workspace bounds")
        for j, ob in enumerate(self.obstacles):
            if obstacle_clearance(ob, self.destination[:2]) <= 0:
                raise ValidationError(f"destination lies inside obstacle {j}")
        object.__setattr__(self, "_packed", pack_obstacles(self.obstacles))

    @property
    def packed(self) -> np.ndarray:
        """Obstacles as a (M, 8) float array for the compiled kernels."""
        return self._packed


def pack_obstacles(obstacles) -> np.ndarray:
    out = np.zeros((len(obstacles), PACKED_WIDTH))
    for j, ob in enumerate(obstacles):
        out[j, 0:2] = ob.center
        out[j, 2:6] = ob.shape_matrix.ravel()
        out[j, 6] = ob.radius
        out[j, 7] = NORM_CODES[ob.norm]
    return out


def in_bounds(env: Environment, p: np.ndarray) -> bool:
    xmin, xmax, ymin, ymax = env.bounds
    return bool(xmin <= p[0] <= xmax and ymin <= p[1] <= ymax)


def obstacle_clearance(ob: Obstacle, p: np.ndarray) -> float:
    """Signed distance proxy ``||L (p - c)||_l - r``; positive means safe."""
    z = ob.shape_matrix @ (np.asarray(p, dtype=float) - ob.center)
    if ob.norm == "l1":
        n = abs(z[0]) + abs(z[1])
    elif ob.norm == "l2":
        n = math.sqrt(z[0] * z[0] + z[1] * z[1])
    else:
        n = max(abs(z[0]), abs(z[1]))
    return n - ob.radius


def clearance_grad(ob: Obstacle, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Clearance and its position gradient (a.e. defined for l1/linf)."""
    L = ob.shape_matrix
    z = L @ (np.asarray(p, dtype=float) - ob.center)
    if ob.norm == "l1":
        n = abs(z[0]) + abs(z[1])
        g = L.T @ np.sign(z)
    elif ob.norm == "l2":
        n = math.sqrt(z[0] * z[0] + z[1] * z[1])
        g = L.T @ (z / n) if n > 1e-12 else np.zeros(2)
    else:
        n = max(abs(z[0]), abs(z[1]))
        k = 0 if abs(z[0]) >= abs(z[1]) else 1
        e = np.zeros(2)
        e[k] = np.sign(z[k]) if z[k] != 0 else 1.0
        g = L.T @ e
    return n - ob.radius, g


def clearance_hess(ob: Obstacle, p: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Clearance, gradient, and position Hessian (zero a.e. for l1/linf)."""
    c, g = clearance_grad(ob, p)
    if ob.norm == "l2":
        L = ob.shape_matrix
        z = L @ (np.asarray(p, dtype=float) - ob.center)
        n = c + ob.radius
        if n > 1e-12:
            zh = z / n
            H = L.T @ ((np.eye(2) - np.outer(zh, zh)) / n) @ L
        else:
            H = np.zeros((2, 2))
    else:
        H = np.zeros((2, 2))
    return c, g, H


def all_clearances(env: Environment, p: np.ndarray) -> np.ndarray:
    return np.array([obstacle_clearance(ob, p) for ob in env.obstacles])


def is_strictly_safe(env: Environment, p: np.ndarray) -> bool:
    """Inside the workspace and strictly outside every obstacle."""
    if not in_bounds(env, p):
        return False
    return all(obstacle_clearance(ob, p) > 0 for ob in env.obstacles)


def barrier_penalty(env: Environment, p: np.ndarray, mu: float) -> float:
    """Log-barrier safety penalty ``-(1/mu) sum_j log c_j(p)``.

    Raises `BarrierDomainError` when the point touches or penetrates any
    obstacle, where the barrier is undefined.
    """
    if not mu > 0:
        raise ValidationError(f"barrier weight mu must be positive, got {mu}")
    total = 0.0
    for j, ob in enumerate(env.obstacles):
        c = obstacle_clearance(ob, p)
        if c <= 0:
            raise BarrierDomainError(f"clearance to obstacle {j} is {c:.6g} <= 0 at p={np.asarray(p).tolist()}")
        total -= math.log(c)
    return total / mu


# --- smooth extension used inside planner callbacks -------------------------
#
# Planner line searches may probe iterates whose predicted positions violate
# clearance; extending log below SOFT_DELTA with its second-order Taylor
# polynomial keeps every callback total and C^2 while agreeing exactly with
# the true barrier on the safe set the solutions live in.

SOFT_DELTA = 1e-3


def softlog(c: float, delta: float = SOFT_DELTA) -> float:
    if c >= delta:
        return math.log(c)
    d = c - delta
    return math.log(delta) + d / delta - d * d / (2 * delta * delta)


def softlog_d1(c: float, delta: float = SOFT_DELTA) -> float:
    if c >= delta:
        return 1.0 / c
    return 1.0 / delta - (c - delta) / (delta * delta)


def softlog_d2(c: float, delta: float = SOFT_DELTA) -> float:
    if c >= delta:
        return -1.0 / (c * c)
    return -1.0 / (delta * delta)


def soft_barrier_grad_hess(env: Environment, p: np.ndarray, mu: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient, Hessian of the softened barrier at position p."""
    val = 0.0
    grad = np.zeros(2)
    hess = np.zeros((2, 2))
    for ob in env.obstacles:
        c, g, H = clearance_hess(ob, p)
        val -= softlog(c)
        d1, d2 = softlog_d1(c), softlog_d2(c)
        grad -= d1 * g
        hess -= d2 * np.outer(g, g) + d1 * H
    return val / mu, grad / mu, hess / mu


# --- batched geometry for the planner hot path -------------------------------

def clearance_grad_hess_batch(packed: np.ndarray, P: np.ndarray):
    """Clearance, gradient, Hessian for K points x M obstacles at once.

    Returns ``(c, g, H)`` with shapes (K, M), (K, M, 2), (K, M, 2, 2);
    gradients of the l1/linf norms are their a.e. values, Hessians zero.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    K, M = P.shape[0], packed.shape[0]
    c = np.empty((K, M))
    g = np.empty((K, M, 2))
    H = np.zeros((K, M, 2, 2))
    L = packed[:, 2:6].reshape(M, 2, 2)
    d = P[:, None, :] - packed[None, :, 0:2]                     # (K, M, 2)
    z = np.einsum("mij,kmj->kmi", L, d)
    code = packed[:, 7]
    for m in range(M):
        zm = z[:, m]
        Lm = L[m]
        if code[m] == 1.0:
            n = np.abs(zm[:, 0]) + np.abs(zm[:, 1])
            g[:, m] = np.sign(zm) @ Lm
        elif code[m] == 2.0:
            n = np.sqrt(zm[:, 0] ** 2 + zm[:, 1] ** 2)
            safe_n = np.maximum(n, 1e-12)
            zh = zm / safe_n[:, None]
            g[:, m] = zh @ Lm
            outer = zh[:, :, None] * zh[:, None, :]
            H[:, m] = np.einsum("ji,kjl,lo->kio", Lm, (np.eye(2) - outer) / safe_n[:, None, None], Lm)
        else:
            n = np.maximum(np.abs(zm[:, 0]), np.abs(zm[:, 1]))
            kmax = (np.abs(zm[:, 1]) > np.abs(zm[:, 0])).astype(int)
            e = np.zeros((K, 2))
            sgn = np.sign(zm[np.arange(K), kmax])
            sgn = np.where(sgn == 0, 1.0, sgn)
            e[np.arange(K), kmax] = sgn
            g[:, m] = e @ Lm
        c[:, m] = n - packed[m, 6]
    return c, g, H


def soft_barrier_batch(packed: np.ndarray, P: np.ndarray, mu: float, delta: float = SOFT_DELTA):
    """Softened barrier value/gradient/Hessian for K points, batched.

    Returns ``(val, grad, hess)`` with shapes (K,), (K, 2), (K, 2, 2).
    """
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    if packed.shape[0] == 0:
        K = P.shape[0]
        return np.zeros(K), np.zeros((K, 2)), np.zeros((K, 2, 2))
    c, g, H = clearance_grad_hess_batch(packed, P)
    low = c < delta
    dlt = c - delta
    val_log = np.where(low, math.log(delta) + dlt / delta - dlt * dlt / (2 * delta * delta), np.log(np.maximum(c, delta)))
    d1 = np.where(low, 1.0 / delta - dlt / (delta * delta), 1.0 / np.maximum(c, delta))
    d2 = np.where(low, -1.0 / (delta * delta), -1.0 / np.maximum(c, delta) ** 2)
    val = -val_log.sum(axis=1) / mu
    grad = -(d1[:, :, None] * g).sum(axis=1) / mu
    hess = -(
        d2[:, :, None, None] * (g[:, :, :, None] * g[:, :, None, :]) + d1[:, :, None, None] * H
    ).sum(axis=1) / mu
    return val, grad, hess


# --- config file I/O ---------------------------------------------------------

def environment_from_dict(doc: dict) -> Environment:
    try:
        bounds = doc["bounds"]
        destination = doc["destination"]
        raw_obs = doc.get("obstacles", [])
    except (KeyError, TypeError) as e:
        raise SchemaError(f"environment config missing required key: {e}") from e
    obstacles = []
    for j, entry in enumerate(raw_obs):
        try:
            obstacles.append(
                Obstacle(
                    center=entry["center"],
                    shape_matrix=np.asarray(entry["shape_matrix"], dtype=float).reshape(2, 2),
                    radius=float(entry["radius"]),
                    norm=str(entry["norm"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"obstacle {j} is malformed: {e}") from e
    return Environment(bounds=bounds, destination=destination, obstacles=obstacles)


def load_environment(path) -> Environment:
    """Load and validate an environment YAML file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise SchemaError(f"cannot parse environment file {path}: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError(f"environment file {path} does not hold a mapping")
    return environment_from_dict(doc)


def environment_to_dict(env: Environment) -> dict:
    return {
        "bounds": [float(v) for v in env.bounds],
        "destination": [float(v) for v in env.destination],
        "obstacles": [
            {
                "center": [float(v) for v in ob.center],
                "shape_matrix": [float(v) for v in ob.shape_matrix.ravel()],
                "radius": float(ob.radius),
                "norm": ob.norm,
            }
            for ob in env.obstacles
        ],
    }


def save_environment(env: Environment, path) -> None:
    Path(path).write_text(yaml.safe_dump(environment_to_dict(env), sort_keys=True))


def default_environment_path() -> Path:
    return Path(__file__).parent / "data" / "default_env.yaml"


def default_environment() -> Environment:
    """The checked-in four-obstacle workspace used by the stock experiments."""
    return load_environment(default_environment_path())
