"""Leader-follower trajectory guidance with learned follower models.

A leader robot plans a collision-free trajectory that guides a myopic
follower robot to a destination.  The follower's reaction can either be
known to the leader (model-based planning through the follower's
first-order optimality conditions) or learned from interaction data as a
lifted linear system, a plain linear fit, or a one-step neural network.
Guidance runs as receding-horizon planning with a distance-triggered
objective switch.

States are unicycle poses ``[px, py, theta]`` and controls are
``[v, omega]``; both are plain float64 numpy arrays throughout.
"""

from koopguide.dynamics import clamp_control, rollout, step
from koopguide.environment import Environment, Obstacle, barrier_penalty, load_environment, obstacle_clearance
from koopguide.follower import FollowerWeights, GridSpec, best_response, feedback_step, follower_cost

__all__ = [
    "Environment",
    "FollowerWeights",
    "GridSpec",
    "Obstacle",
    "barrier_penalty",
    "best_response",
    "clamp_control",
    "feedback_step",
    "follower_cost",
    "load_environment",
    "obstacle_clearance",
    "rollout",
    "step",
]
