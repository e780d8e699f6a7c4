"""Batch reinforcement learning on the cart-pole balancing task.

A neural world model is learned from a fixed transition batch and used to
synthesize and compare classical, neural and interpretable controllers.
"""
from .dynamics import DomainError, State, TrueDynamics, gen_batch, load_states
from .surrogate import WorldModel, avg_return, penalty, value_estimate

__version__ = "0.1.0"

__all__ = ["DomainError", "State", "TrueDynamics", "WorldModel", "avg_return", "gen_batch",
           "load_states", "penalty", "value_estimate", "__version__"]
