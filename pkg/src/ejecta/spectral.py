"""Dense linear algebra specialized to dimensions 1 and 2, plus
topological degree: sign-change degree on intervals and winding-number
degree on planar rectangles.

Matrices are numpy arrays of shape (1,1) or (2,2); vectors have shape
(dim,).  Everything here is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryZeroError, NonConvergentError

#: discriminant threshold below which the defective (double-eigenvalue)
#: branch of expm is used; tests target this value exactly
DEFECTIVE_EPS = 1e-12


def as_matrix(a) -> np.ndarray:
    A = np.atleast_2d(np.asarray(a, dtype=float))
    if A.shape not in ((1, 1), (2, 2)):
        raise ValueError(f"expected a 1x1 or 2x2 matrix, got shape {A.shape}")
    return A


def eigenvalues(A) -> "list[complex]":
    """Eigenvalues; dim 2 uses the numerically stable quadratic formula."""
    A = as_matrix(A)
    if A.shape == (1, 1):
        return [complex(A[0, 0])]
    mu = 0.5 * (A[0, 0] + A[1, 1])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = mu * mu - det
    if disc >= 0.0:
        s = math.sqrt(disc)
        big = mu + s if mu >= 0.0 else mu - s
        if big == 0.0:
            return [0j, 0j]
        return [complex(big), complex(det / big)]
    s = math.sqrt(-disc)
    return [complex(mu, s), complex(mu, -s)]


def expm(A, t: float) -> np.ndarray:
    """Closed-form e^{tA}.

    For dim 2 split A = mu*I + B with B traceless, so B^2 = disc*I with
    disc = tr^2/4 - det, and use the cosh/cos/defective branch depending
    on the sign of disc.
    """
    A = as_matrix(A)
    if A.shape == (1, 1):
        return np.array([[math.exp(A[0, 0] * t)]])
    mu = 0.5 * (A[0, 0] + A[1, 1])
    B = A - mu * np.eye(2)
    disc = mu * mu - (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    if abs(disc) < DEFECTIVE_EPS:
        core = np.eye(2) + t * B
    elif disc > 0.0:
        w = math.sqrt(disc)
        core = math.cosh(w * t) * np.eye(2) + (math.sinh(w * t) / w) * B
    else:
        w = math.sqrt(-disc)
        core = math.cos(w * t) * np.eye(2) + (math.sin(w * t) / w) * B
    return math.exp(mu * t) * core


def K_integral(A, T: float) -> np.ndarray:
    """The integral operator K(A) = int_0^T e^{uA} du.

    Equals A^{-1}(e^{TA} - I) when A is safely invertible; otherwise it
    is computed by composite Simpson quadrature with panel doubling
    until successive values agree to 1e-12 relative.
    """
    A = as_matrix(A)
    dim = A.shape[0]
    det = A[0, 0] if dim == 1 else A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    scale = max(1.0, float(np.max(np.abs(A))) ** dim)
    if abs(det) > 1e-10 * scale:
        return np.linalg.solve(A, expm(A, T) - np.eye(dim))

    def simpson(n):
        h = T / n
        acc = expm(A, 0.0) + expm(A, T)
        for i in range(1, n):
            acc = acc + (4.0 if i % 2 else 2.0) * expm(A, i * h)
        return acc * (h / 3.0)

    n = 8
    prev = simpson(n)
    while n <= 2 ** 20:
        n *= 2
        cur = simpson(n)
        if np.max(np.abs(cur - prev)) <= 1e-12 * (1.0 + np.max(np.abs(cur))):
            return cur
        prev = cur
    raise NonConvergentError("K_integral quadrature did not converge")


@dataclass(frozen=True)
class KernelInfo:
    vector: np.ndarray
    full_kernel: bool


def _orient(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def kernel_vector(A, eps: float = 1e-10):
    """Unit kernel vector of A, or None if the smallest singular value
    exceeds eps * ||A||.  The zero matrix reports a full kernel with the
    conventional witness (1, 0)."""
    A = as_matrix(A)
    dim = A.shape[0]
    norm = float(np.linalg.norm(A, 2))
    if norm == 0.0:
        v = np.zeros(dim)
        v[0] = 1.0
        return KernelInfo(v, True)
    if dim == 1:
        if abs(A[0, 0]) <= eps * norm:
            return KernelInfo(np.array([1.0]), True)
        return None
    _, s, vt = np.linalg.svd(A)
    if s[1] <= eps * norm:
        full = s[0] <= eps * norm
        return KernelInfo(_orient(vt[1]), full)
    return None


@dataclass(frozen=True)
class DegreeReport:
    value: int
    boundary_min_norm: float
    refinement_depth: int


def degree_1d(g, a: float, b: float) -> DegreeReport:
    """Degree of a scalar field on [a, b]: (sign g(b) - sign g(a)) / 2."""
    ga, gb = float(g(a)), float(g(b))
    mn = min(abs(ga), abs(gb))
    if mn < 1e-12:
        raise BoundaryZeroError(
            f"field vanishes at an interval endpoint (|g| = {mn:.3e})")
    value = (int(math.copysign(1, gb)) - int(math.copysign(1, ga))) // 2
    return DegreeReport(value, mn, 0)


def _boundary_point(rect, s: float):
    """Point at perimeter parameter s in [0,1) on the positively
    oriented rectangle boundary, corner-anchored per side."""
    (x0, x1), (y0, y1) = rect
    u = 4.0 * (s % 1.0)
    side = min(int(u), 3)
    frac = u - side
    if side == 0:
        return (x0 + frac * (x1 - x0), y0)
    if side == 1:
        return (x1, y0 + frac * (y1 - y0))
    if side == 2:
        return (x1 - frac * (x1 - x0), y1)
    return (x0, y1 - frac * (y1 - y0))


def degree_2d_winding(g, rect, n0: int = 256) -> DegreeReport:
    """Winding number of the planar field g along the rectangle boundary.

    Consecutive angular increments are forced below pi/2 by bisecting
    boundary segments (depth limit 20); the accumulated angle divided by
    2*pi must land within 0.25 of an integer.
    """
    stats = {"min_norm": math.inf, "depth": 0}

    def sample(s: float):
        vx, vy = g(_boundary_point(rect, s))
        nrm = math.hypot(vx, vy)
        if nrm < 1e-10:
            raise BoundaryZeroError(
                f"|g| = {nrm:.3e} on the window boundary at parameter {s:.6f}")
        stats["min_norm"] = min(stats["min_norm"], nrm)
        return (vx, vy)

    def arc(s0, v0, s1, v1, depth):
        d = math.atan2(v0[0] * v1[1] - v0[1] * v1[0],
                       v0[0] * v1[0] + v0[1] * v1[1])
        if abs(d) < 0.5 * math.pi:
            return d
        if depth >= 20:
            raise NonConvergentError(
                "winding refinement exceeded depth 20; boundary too coarse "
                "or a zero sits on it")
        stats["depth"] = max(stats["depth"], depth + 1)
        sm = 0.5 * (s0 + s1)
        vm = sample(sm)
        return arc(s0, v0, sm, vm, depth + 1) + arc(sm, vm, s1, v1, depth + 1)

    params = [i / n0 for i in range(n0)]
    values = [sample(s) for s in params]
    total = 0.0
    for i in range(n0):
        j = (i + 1) % n0
        s1 = params[j] if j else 1.0
        total += arc(params[i], values[i], s1, values[j], 0)
    raw = total / (2.0 * math.pi)
    value = round(raw)
    if abs(raw - value) >= 0.25:
        raise NonConvergentError(
            f"winding total {raw:.6f} is not close to an integer")
    return DegreeReport(int(value), stats["min_norm"], stats["depth"])


def index_of_zero(g, p0, radius: float, jacobian=None, n0: int = 256) -> int:
    """Local index of an isolated zero.

    dim 1: interval degree on [p0-radius, p0+radius].  dim 2: the sign
    of det g'(p0) when nondegenerate, otherwise the winding number on
    the square of half-side ``radius`` around p0.
    """
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    if p0.shape == (1,):
        return degree_1d(lambda x: g(x), p0[0] - radius, p0[0] + radius).value
    if jacobian is not None:
        J = as_matrix(jacobian(p0) if callable(jacobian) else jacobian)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) > 1e-9:
            return 1 if det > 0 else -1
    rect = ((p0[0] - radius, p0[0] + radius), (p0[1] - radius, p0[1] + radius))
    return degree_2d_winding(g, rect, n0).value
