"""Bayesian Lee-Carter mortality models with vanishing AR(1)/MA(1) jump effects."""
__version__ = "0.1.0"
