"""Piecewise-linear models with an interest-rate lower bound solved by an endogenous peg."""

__version__ = "0.1.0"
