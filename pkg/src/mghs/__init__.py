"""Multiple graphical horseshoe: joint Bayesian estimation of correlated Gaussian graphical models."""

__version__ = "0.1.0"
