"""FastICA under four preprocessing scenarios, with closed-form asymptotic
variances of the gain matrix and a Monte Carlo harness that checks them."""

__version__ = "0.1.0"
