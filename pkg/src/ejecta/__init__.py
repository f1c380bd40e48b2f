"""Numerical analysis of T-periodic perturbations dx/dt = g(x) + lambda f(t,x)
on R and R^2: zero classification, local branch expansions, starting-point
sampling and continuation, and multiplicity lower bounds."""

__version__ = "0.1.0"
