"""Input-sensitivity metrics for small bias-free MLPs.

Jacobian norms of the class probabilities, linear-region transition counts
along closed input-space trajectories, loss-based Jacobian envelopes, and a
config-driven harness for desk-scale studies.
"""

from .kernels import BACKEND
from .nn import Activation, Mlp, init_network, load_network, save_network
from .sensitivity import count_transitions, jacobian_norm, mean_jacobian_norm
from .train import OptimizerConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Activation",
    "Mlp",
    "OptimizerConfig",
    "count_transitions",
    "init_network",
    "jacobian_norm",
    "load_network",
    "mean_jacobian_norm",
    "save_network",
    "train",
]
