"""Overflow probabilities of stable tandem queueing networks.

Three routes to ``P_x(tau_n < tau_0)``: the closed-form limit probability
``P_y(tau < inf)`` assembled from harmonic systems, an exact iterative solve
on ``A_n``, and Monte Carlo / importance sampling.
"""

from .model import Increment, NetworkParams, affine_map_Tn
from .tandem_formula import approx_prob_x, prob_tau_finite

__all__ = [
    "Increment",
    "NetworkParams",
    "affine_map_Tn",
    "approx_prob_x",
    "prob_tau_finite",
]

__version__ = "0.1.0"
