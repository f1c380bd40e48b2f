"""Shared fixtures: the bundled fields and a few independent oracles."""

import math

import numpy as np
import pytest

from ejecta.exprdsl import field_from_sources

TWO_PI = 2.0 * math.pi
E2PI = math.exp(TWO_PI)


@pytest.fixture(scope="session")
def fields():
    """The example fields, built once."""
    return {
        "exNTse": field_from_sources(1, ["(x + x^2)/(1 + x^2)"], ["sin(t)"],
                                     separated=True),
        "exsimp": field_from_sources(1, ["x/(1 + x^2)"], ["1 + cos(x + t)"]),
        "extang": field_from_sources(1, ["x^3/(1 + x^2)"], ["1 + sin(t)"],
                                     separated=True),
        "exnasty": field_from_sources(1, ["(x^3 + x^2)/(1 + x^2)"],
                                      ["sin(t + x)"]),
        "ex2tang": field_from_sources(
            1, ["x^3*(1 + x)^2*(x - 1)^2/(1 + x^6)"], ["sin(t) + 1"],
            separated=True),
        "remnoso_agree": field_from_sources(1, ["(x^3 + x^2)/(1 + x^2)"],
                                            ["sin(t) + 1"], separated=True),
        "remnoso_disagree": field_from_sources(1, ["(x^3 + x^2)/(1 + x^2)"],
                                               ["sin(t) - 1"], separated=True),
        "ex3d": field_from_sources(2, ["x^3", "y + x^2"],
                                   ["sin(t) + 1", "sin(t) + 1"],
                                   separated=True),
    }


def expm_series(A: np.ndarray, t: float, terms: int = 30) -> np.ndarray:
    """Taylor-series matrix exponential, the oracle for the closed form."""
    A = np.asarray(A, dtype=float) * t
    acc = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        acc = acc + term
    return acc


def rk4_batch(rhs, Y0: np.ndarray, t_final: float, n_steps: int) -> np.ndarray:
    """Fixed-step classical RK4 on a batch of states, independent of the
    production integrator.  rhs(t, Y) -> array like Y."""
    Y = np.array(Y0, dtype=float)
    h = t_final / n_steps
    t = 0.0
    for _ in range(n_steps):
        k1 = rhs(t, Y)
        k2 = rhs(t + 0.5 * h, Y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, Y + 0.5 * h * k2)
        k4 = rhs(t + h, Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return Y
