"""Learning-guided MILP solving for STL planning problems."""

__version__ = "0.1.0"
