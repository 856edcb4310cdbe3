"""Safe-set iterative learning MPC and task decomposition for piecewise-linear tasks."""

__version__ = "0.1.0"
