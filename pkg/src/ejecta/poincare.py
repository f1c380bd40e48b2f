"""The starting-point map F(lambda, p) = P_T^lambda(p) - p and its
partial derivatives, where P_T^lambda is the time-T flow of the
perturbed equation.  Zeros of F are exactly the starting points of
T-periodic solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flow
from .exprdsl import FieldSpec, compile_scalar
from .flow import FlowStatus

#: relative tolerance deciding "is a starting point": |F| <= ROOT_RTOL*(1+|p|).
#: Deliberately separate from the integrator tolerance, so root acceptance
#: is decoupled from step control.
ROOT_RTOL = 1e-9


@dataclass(frozen=True)
class StartingMapEval:
    value: np.ndarray     # F(lambda, p)
    d_lambda: np.ndarray  # dF/dlambda
    d_p: np.ndarray       # dF/dp (dim x dim)
    status: FlowStatus


def eval_F(field: FieldSpec, lam: float, p, T: float,
           tol: float = 1e-10, blow_up: float = flow.DEFAULT_BLOWUP) -> StartingMapEval:
    """Evaluate F and both partials in one augmented integration.

    dF/dp comes from the first variation; dF/dlambda from the
    co-integrated sensitivity w' = (g' + lambda f_x) w + f, w(0) = 0.
    A non-completed status means the point is unreachable (the maximal
    solution does not extend to T), not a root.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    r = flow.integrate_with_sensitivity(field, lam, p, T, tol, blow_up)
    if not r.status.completed:
        d = field.dim
        return StartingMapEval(np.full(d, np.nan), np.full(d, np.nan),
                               np.full((d, d), np.nan), r.status)
    return StartingMapEval(r.terminal_state - p, r.d_lambda,
                           r.first_variation - np.eye(field.dim), r.status)


def is_root(value: np.ndarray, p) -> bool:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return bool(np.linalg.norm(value) <= ROOT_RTOL * (1.0 + np.linalg.norm(p)))


def forcing_integrals(A: np.ndarray, field: FieldSpec, p0, T: float,
                      tol: float = 1e-12):
    """Solve y' = A y + f(t, p0), y(0) = 0 and z' = f(t, p0), z(0) = 0
    on [0, T] in one pass.

    Returns (y(T), z(T)/T): the e^{(T-s)A}-weighted forcing integral and
    the plain forcing mean.  This single routine backs both the JetData
    fields and the closed-form dF/dlambda, so the two agree exactly.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    d = field.dim
    fns = [compile_scalar(c) for c in field.f]
    x0 = float(p0[0])
    y0 = float(p0[1]) if d == 2 else 0.0

    if d == 1:
        a = float(A[0, 0])
        f0 = fns[0]

        def rhs(t, w):
            fv = f0(t, x0, y0)
            return (a * w[0] + fv, fv)
    else:
        a00, a01 = float(A[0, 0]), float(A[0, 1])
        a10, a11 = float(A[1, 0]), float(A[1, 1])
        f0, f1 = fns

        def rhs(t, w):
            v0 = f0(t, x0, y0)
            v1 = f1(t, x0, y0)
            return (a00 * w[0] + a01 * w[1] + v0,
                    a10 * w[0] + a11 * w[1] + v1,
                    v0, v1)

    y, status, _, _ = flow.integrate_rhs(rhs, (0.0,) * (2 * d), T, tol)
    if not status.completed:
        raise ArithmeticError("forcing integral integration failed")
    return y[:d], y[d:] / T


def eval_dlambda_closed_form(jet, field: FieldSpec, T: float,
                             tol: float = 1e-12) -> np.ndarray:
    """dF/dlambda at (0, p0) for a zero p0 of g, computed through the
    equivalent inhomogeneous linear ODE rather than the flow sensitivity.

    ``jet`` only needs ``A`` and ``p0`` attributes (the local jet at the
    zero).  Must agree with eval_F's d_lambda at (0, p0) to relative 1e-6.
    """
    weighted, _ = forcing_integrals(jet.A, field, jet.p0, T, tol)
    return weighted


def residual_norm(field: FieldSpec, lam: float, p, T: float,
                  tol: float = 1e-10) -> float:
    """|F(lambda, p)| by plain integration (no variations); inf when the
    point is unreachable."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    r = flow.integrate(field, lam, p, T, tol)
    if not r.status.completed:
        return math.inf
    return float(np.linalg.norm(r.terminal_state - p))


def residual_signed(field: FieldSpec, lam: float, p: float, T: float,
                    tol: float = 1e-10):
    """Scalar F(lambda, p) for dim 1 (sign matters for bisection); None
    when the point is unreachable."""
    r = flow.integrate(field, lam, [p], T, tol)
    if not r.status.completed:
        return None
    return float(r.terminal_state[0] - p)
