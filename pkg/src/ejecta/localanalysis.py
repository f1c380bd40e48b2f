"""Zero classification: resonance verdict, index, local branch expansion
(tangent or curvature), ejecting verdict, and the multiplicity lower
bound assembled from them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import exprdsl, poincare, spectral
from .errors import (
    BoundaryZeroError,
    DegenerateForcingError,
    NonConvergentError,
    SingularSystemError,
)
from .exprdsl import FieldSpec, compile_numpy, compile_scalar

ZERO_TOL = 1e-12
DEDUPE_RADIUS = 1e-6
FORCING_MEAN_TOL = 1e-10


# --- structural derivatives of the autonomous field -------------------------------

def _state_vars(dim: int):
    return ("x",) if dim == 1 else ("x", "y")


def g_callable(field: FieldSpec):
    """The autonomous field as a plain callable (scalar for dim 1,
    point -> tuple for dim 2), as the degree routines expect."""
    fns = [compile_scalar(c) for c in field.g]
    if field.dim == 1:
        return lambda x: fns[0](0.0, x, 0.0)
    return lambda p: (fns[0](0.0, p[0], p[1]), fns[1](0.0, p[0], p[1]))


def g_at(field: FieldSpec, p) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    y = p[1] if field.dim == 2 else 0.0
    return np.array([compile_scalar(c)(0.0, p[0], y) for c in field.g])


def jacobian_at(field: FieldSpec, p) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    sv = _state_vars(field.dim)
    y = p[1] if field.dim == 2 else 0.0
    J = np.empty((field.dim, field.dim))
    for i, comp in enumerate(field.g):
        for j, v in enumerate(sv):
            J[i, j] = compile_scalar(exprdsl.differentiate(comp, v))(0.0, p[0], y)
    return J


def hessian_at(field: FieldSpec, p) -> np.ndarray:
    """Symmetric tensor H[i, j, k] = d^2 g_i / dx_j dx_k at p."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    sv = _state_vars(field.dim)
    y = p[1] if field.dim == 2 else 0.0
    d = field.dim
    H = np.empty((d, d, d))
    for i, comp in enumerate(field.g):
        for j in range(d):
            dj = exprdsl.differentiate(comp, sv[j])
            for k in range(j, d):
                v = compile_scalar(exprdsl.differentiate(dj, sv[k]))(0.0, p[0], y)
                H[i, j, k] = H[i, k, j] = v
    return H


# --- jet at a zero -----------------------------------------------------------------

@dataclass(frozen=True)
class JetData:
    """Local data at a zero p0: A = g'(p0), the Hessian tensor of g, and
    the two forcing integrals every branch formula needs."""

    p0: np.ndarray
    A: np.ndarray
    H: np.ndarray
    f_mean: np.ndarray
    f_weighted: np.ndarray

    def H_vv(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return np.einsum("ijk,j,k->i", self.H, v, v)

    @property
    def H_norm(self) -> float:
        return float(np.sqrt(np.sum(self.H ** 2)))


def compute_jet(field: FieldSpec, p0, T: float, tol: float = 1e-12) -> JetData:
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    resid = float(np.linalg.norm(g_at(field, p0)))
    if resid > 1e-8:
        raise ValueError(f"p0 is not a zero of g (|g(p0)| = {resid:.3e})")
    A = jacobian_at(field, p0)
    H = hessian_at(field, p0)
    weighted, mean = poincare.forcing_integrals(A, field, p0, T, tol)
    return JetData(p0, A, H, mean, weighted)


# --- resonance ---------------------------------------------------------------------

@dataclass(frozen=True)
class Resonance:
    resonant: bool
    witness: Optional[complex] = None

    def __str__(self):
        if not self.resonant:
            return "NonResonant"
        if self.witness is None:
            return "Resonant"
        re, im = self.witness.real + 0.0, self.witness.imag + 0.0
        if im == 0.0:
            return f"Resonant({re:g})"
        return f"Resonant({re:g}{im:+g}i)"


def classify_resonance(A, T: float, eps: float = 1e-8) -> Resonance:
    """T-resonant iff some eigenvalue of A lies within eps of the
    lattice {2*pi*n*i/T : n integer} (n = 0 included: eigenvalue ~ 0)."""
    for mu in spectral.eigenvalues(A):
        if abs(mu.real) < eps:
            n = round(mu.imag * T / (2.0 * math.pi))
            if abs(mu.imag - 2.0 * math.pi * n / T) < eps:
                return Resonance(True, mu)
    return Resonance(False)


# --- local branch data -------------------------------------------------------------

@dataclass(frozen=True)
class SolutionCount:
    kind: str  # "two_solutions" | "no_solutions" | "indeterminate"
    geometrically_distinct: bool = False


@dataclass(frozen=True)
class TransversalBranch:
    """Non-resonant zero: the starting-point branch crosses lambda = 0
    transversally with tangent p'(0)."""
    tangent: np.ndarray


@dataclass(frozen=True)
class TangentBranch:
    """Scalar resonant zero with nonzero forcing mean: the branch is the
    graph of lambda(p), tangent to lambda = 0, with curvature lambda''."""
    lambda_dd: float
    verdict: SolutionCount


@dataclass(frozen=True)
class Ejecting2D:
    """Planar resonant zero certified ejecting by a nonvanishing
    second-order integral along the witness direction."""
    witness: np.ndarray
    integral: np.ndarray


@dataclass(frozen=True)
class Indeterminate:
    reason: str


LocalBranch = Union[TransversalBranch, TangentBranch, Ejecting2D, Indeterminate]


# --- local operations --------------------------------------------------------------

def branch_tangent(jet: JetData, T: float) -> np.ndarray:
    """p'(0) = -(e^{TA} - I)^{-1} * int_0^T e^{(T-s)A} f(s,p0) ds."""
    d = jet.A.shape[0]
    M = spectral.expm(jet.A, T) - np.eye(d)
    det = M[0, 0] if d == 1 else M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if abs(det) < 1e-12:
        raise SingularSystemError(
            "e^{TA} - I is singular; the zero looks resonant after all")
    return -np.linalg.solve(M, jet.f_weighted)


def branch_curvature(jet: JetData, T: float, eps: float = 1e-8) -> float:
    """lambda''(p0) = -g''(p0) / mean(f(., p0)) for a scalar resonant zero."""
    if jet.A.shape[0] != 1:
        raise ValueError("branch curvature is a scalar (dim 1) notion")
    # tangency sanity check: lambda'(p0) = 0 requires e^{TA} ~ 1
    if abs(math.exp(jet.A[0, 0] * T) - 1.0) >= max(eps, eps * T):
        raise ValueError("zero is not resonant; use branch_tangent instead")
    fm = float(jet.f_mean[0])
    if abs(fm) <= FORCING_MEAN_TOL:
        raise DegenerateForcingError(
            f"forcing mean {fm:.3e} too small for the curvature formula")
    return -float(jet.H_vv([1.0])[0]) / fm + 0.0  # +0.0 avoids -0.0


def local_solution_count(jet: JetData, T: float, separated: bool) -> SolutionCount:
    """Sign dichotomy at a scalar resonant zero: matching signs of
    g''(p0) and the forcing mean exclude nearby T-periodic solutions for
    small lambda > 0; opposite signs give two (geometrically distinct
    when f is separated with minimal period T)."""
    gpp = float(jet.H_vv([1.0])[0])
    fm = float(jet.f_mean[0])
    if abs(gpp) < ZERO_TOL or abs(fm) <= FORCING_MEAN_TOL:
        return SolutionCount("indeterminate")
    if gpp * fm > 0:
        return SolutionCount("no_solutions")
    return SolutionCount("two_solutions", geometrically_distinct=separated)


def _socoeq_integrand(jet: JetData, T: float, v: np.ndarray):
    def I(s: float) -> np.ndarray:
        ev = spectral.expm(jet.A, s) @ v
        return spectral.expm(jet.A, T - s) @ jet.H_vv(ev)
    return I


def general_second_order_integral(jet: JetData, T: float, v,
                                  rtol: float = 1e-10) -> np.ndarray:
    """int_0^T e^{(T-s)A} g''(p0)[e^{sA}v, e^{sA}v] ds by composite
    Simpson with panel doubling."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    I = _socoeq_integrand(jet, T, v)

    def simpson(n):
        h = T / n
        acc = I(0.0) + I(T)
        for i in range(1, n):
            acc = acc + (4.0 if i % 2 else 2.0) * I(i * h)
        return acc * (h / 3.0)

    n = 16
    prev = simpson(n)
    while n <= 2 ** 16:
        n *= 2
        cur = simpson(n)
        if np.max(np.abs(cur - prev)) <= rtol * (1.0 + np.max(np.abs(cur))):
            return cur
        prev = cur
    raise NonConvergentError("second-order integral quadrature did not converge")


_PROBES_2D = (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]))


def ejecting_test_2d(jet: JetData, T: float):
    """Second-order ejecting test for a planar resonant zero with
    nonzero index.

    Kernel of A nontrivial: evaluate K(A) g''[v,v] for the kernel
    direction (the working form of the general integral, since e^{sA}v =
    v there) and cross-check against the general quadrature to relative
    1e-8.  A ~ 0: the integral degenerates to T g''[v,v], probed over
    three fixed directions.  Nonsingular A: fall back to the general
    quadrature over the probe directions (its vanishing is expected but
    not assumed).  Returns Ejecting2D or Indeterminate.
    """
    threshold = 1e-8 * (1.0 + jet.H_norm)
    norm_A = float(np.linalg.norm(jet.A, 2))

    def check(v, integral):
        general = general_second_order_integral(jet, T, v)
        if np.max(np.abs(general - integral)) > 1e-8 * (1.0 + np.max(np.abs(integral))):
            raise NonConvergentError(
                "closed-form and quadrature second-order integrals disagree: "
                f"{integral} vs {general}")
        return integral

    if norm_A < 1e-10:
        for v in _PROBES_2D:
            integral = check(v, T * jet.H_vv(v))
            if np.linalg.norm(integral) > threshold:
                return Ejecting2D(v, integral)
        return Indeterminate("g''(p0)[v,v] vanishes for all probe directions")

    info = spectral.kernel_vector(jet.A)
    if info is not None:
        vs = _PROBES_2D if info.full_kernel else (info.vector,)
        for v in vs:
            integral = check(v, spectral.K_integral(jet.A, T) @ jet.H_vv(v))
            if np.linalg.norm(integral) > threshold:
                return Ejecting2D(v, integral)
        return Indeterminate(
            "second-order integral vanishes along the kernel of g'(p0)")

    for v in _PROBES_2D:
        integral = general_second_order_integral(jet, T, v)
        if np.linalg.norm(integral) > threshold:
            return Ejecting2D(v, integral)
    return Indeterminate(
        "g'(p0) nonsingular and the general second-order integral vanishes")


# --- zero finding ------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroSet:
    points: tuple
    crowded: bool  # some pair closer than 10x the dedupe radius


def _newton_1d(f, df, x0: float, lo: float, hi: float, max_iter: int = 60):
    """Damped Newton keeping the best iterate by |f|; tolerant of the
    linear convergence at multiple zeros."""
    span = hi - lo
    x = x0
    fx = f(x)
    best_x, best_f = x, abs(fx)
    for _ in range(max_iter):
        d = df(x)
        if d == 0.0 or not math.isfinite(d):
            break
        step = fx / d
        x_new = x - step
        if not (lo - 0.05 * span <= x_new <= hi + 0.05 * span):
            break
        f_new = f(x_new)
        if not math.isfinite(f_new):
            break
        x, fx = x_new, f_new
        if abs(fx) < best_f:
            best_x, best_f = x, abs(fx)
        if abs(step) <= 1e-17 * (1.0 + abs(x)):
            break
    return best_x, best_f


def _find_zeros_1d(field: FieldSpec, window, grid_n: int):
    lo, hi = float(window[0]), float(window[1])
    gf = compile_numpy(field.g[0])
    g = lambda x: compile_scalar(field.g[0])(0.0, x, 0.0)
    dg_node = exprdsl.differentiate(field.g[0], "x")
    d2g_node = exprdsl.differentiate(dg_node, "x")
    dg = lambda x: compile_scalar(dg_node)(0.0, x, 0.0)
    d2g = lambda x: compile_scalar(d2g_node)(0.0, x, 0.0)

    xs = np.linspace(lo, hi, grid_n + 1)
    vals = gf(x=xs)
    finite = np.isfinite(vals)

    candidates = []  # (x, |g(x)|)

    def consider(x, fx):
        if abs(fx) < ZERO_TOL and lo - 1e-12 <= x <= hi + 1e-12:
            candidates.append((min(max(x, lo), hi), abs(fx)))

    # exact grid hits
    for i in np.where(finite & (vals == 0.0))[0]:
        consider(float(xs[i]), 0.0)

    # sign changes: bisection, then Newton polish
    for i in range(grid_n):
        if not (finite[i] and finite[i + 1]):
            continue
        a, b, fa, fb = float(xs[i]), float(xs[i + 1]), float(vals[i]), float(vals[i + 1])
        if fa == 0.0 or fb == 0.0 or fa * fb > 0.0:
            continue
        for _ in range(80):
            m = 0.5 * (a + b)
            fm = g(m)
            if fm == 0.0 or abs(fm) < ZERO_TOL or (b - a) <= 1e-17 * (1.0 + abs(m)):
                a = b = m
                break
            if (fa < 0.0) == (fm < 0.0):
                a, fa = m, fm
            else:
                b, fb = m, fm
        x, fx = _newton_1d(g, dg, 0.5 * (a + b), lo, hi)
        consider(x, fx)

    # |g| local minima: critical-point Newton catches even-multiplicity
    # zeros where the sign never changes
    av = np.abs(np.where(finite, vals, np.inf))
    for i in range(1, grid_n):
        if av[i] <= av[i - 1] and av[i] <= av[i + 1] and np.isfinite(av[i]):
            c, _ = _newton_1d(dg, d2g, float(xs[i]), lo, hi)
            fc = abs(g(c))
            consider(c, fc)

    return _dedupe([np.array([x]) for x, _ in sorted(candidates)],
                   [f for _, f in sorted(candidates)])


def _find_zeros_2d(field: FieldSpec, window, grid_n: int):
    (xlo, xhi), (ylo, yhi) = window
    g0, g1 = compile_numpy(field.g[0]), compile_numpy(field.g[1])
    sv = _state_vars(2)
    jac = [[compile_numpy(exprdsl.differentiate(c, v)) for v in sv] for c in field.g]

    xs = np.linspace(xlo, xhi, grid_n)
    ys = np.linspace(ylo, yhi, grid_n)
    X, Y = [a.ravel() for a in np.meshgrid(xs, ys, indexing="ij")]
    span = math.hypot(xhi - xlo, yhi - ylo)

    def G(X, Y):
        return g0(x=X, y=Y), g1(x=X, y=Y)

    G0, G1 = G(X, Y)
    res = np.hypot(G0, G1)
    with np.errstate(all="ignore"):
        for _ in range(60):
            J00 = jac[0][0](x=X, y=Y)
            J01 = jac[0][1](x=X, y=Y)
            J10 = jac[1][0](x=X, y=Y)
            J11 = jac[1][1](x=X, y=Y)
            det = J00 * J11 - J01 * J10
            ok = np.isfinite(det) & (np.abs(det) > 1e-300)
            dx = np.where(ok, (J11 * G0 - J01 * G1) / det, 0.0)
            dy = np.where(ok, (J00 * G1 - J10 * G0) / det, 0.0)
            damp = np.ones_like(X)
            for _ in range(6):
                Xn, Yn = X - damp * dx, Y - damp * dy
                G0n, G1n = G(Xn, Yn)
                rn = np.hypot(G0n, G1n)
                worse = ~(rn <= res) & ok
                if not worse.any():
                    break
                damp = np.where(worse, 0.5 * damp, damp)
            X, Y, G0, G1, res = Xn, Yn, G0n, G1n, rn
            far = ~np.isfinite(res) | (np.hypot(X - 0.5 * (xlo + xhi),
                                                Y - 0.5 * (ylo + yhi)) > 10 * span)
            keep = ~far
            if not keep.all():
                X, Y, G0, G1, res = X[keep], Y[keep], G0[keep], G1[keep], res[keep]
            if res.size == 0:
                break

    pts, rs = [], []
    for x, y, r in zip(X, Y, res):
        if r < ZERO_TOL and xlo - 1e-9 <= x <= xhi + 1e-9 and ylo - 1e-9 <= y <= yhi + 1e-9:
            pts.append(np.array([min(max(x, xlo), xhi), min(max(y, ylo), yhi)]))
            rs.append(float(r))
    order = sorted(range(len(pts)), key=lambda i: tuple(pts[i]))
    return _dedupe([pts[i] for i in order], [rs[i] for i in order])


def _dedupe(points, residuals):
    """Cluster canonically-sorted points at DEDUPE_RADIUS, keeping the
    best residual per cluster."""
    kept, kept_res = [], []
    for p, r in zip(points, residuals):
        if kept and np.linalg.norm(p - kept[-1]) <= DEDUPE_RADIUS:
            if r < kept_res[-1]:
                kept[-1], kept_res[-1] = p, r
        else:
            kept.append(p)
            kept_res.append(r)
    crowded = any(np.linalg.norm(kept[i + 1] - kept[i]) < 10 * DEDUPE_RADIUS
                  for i in range(len(kept) - 1))
    return ZeroSet(tuple(kept), crowded)


def find_zeros(field: FieldSpec, window, grid_n: int = 400) -> ZeroSet:
    """All zeros of g in the window, canonically sorted.

    dim 1: sign-change bisection plus critical-point polish (the latter
    catches even-multiplicity zeros, where g never changes sign).
    dim 2: damped Newton from a grid of seeds, deduplicated.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be at least 8")
    if field.dim == 1:
        return _find_zeros_1d(field, window, grid_n)
    return _find_zeros_2d(field, window, grid_n)


# --- classification ----------------------------------------------------------------

@dataclass(frozen=True)
class ZeroClassification:
    p0: np.ndarray
    index: Optional[int]
    resonance: Resonance
    local: LocalBranch
    ejecting: bool
    justification: str  # non_resonant | nonzero_index_1d | second_order_2d | unknown
    error: Optional[str] = None


def _index_radius(field: FieldSpec, zeros, k: int, window) -> float:
    p = zeros[k]
    dmin = min((float(np.linalg.norm(p - q)) for i, q in enumerate(zeros) if i != k),
               default=math.inf)
    if field.dim == 1:
        edge = min(p[0] - window[0], window[1] - p[0])
    else:
        edge = min(p[0] - window[0][0], window[0][1] - p[0],
                   p[1] - window[1][0], window[1][1] - p[1])
    r = min(0.45 * dmin, 0.5, max(edge, 1e-3))
    return max(r, 1e-6)


def _index_with_fallback(field: FieldSpec, p0, radius: float) -> int:
    gc = g_callable(field)
    jac = None if field.dim == 1 else jacobian_at(field, p0)
    last = None
    for r in (radius, radius / 2, radius / 4, radius / 8):
        try:
            return spectral.index_of_zero(gc, p0, r, jacobian=jac)
        except (BoundaryZeroError, NonConvergentError) as exc:
            last = exc
    raise last


def classify_zero(field: FieldSpec, p0, T: float, radius: float,
                  resonance_eps: float = 1e-8, tol: float = 1e-12) -> ZeroClassification:
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    jet = compute_jet(field, p0, T, tol)
    res = classify_resonance(jet.A, T, resonance_eps)
    index = _index_with_fallback(field, p0, radius)

    if not res.resonant:
        local: LocalBranch = TransversalBranch(branch_tangent(jet, T))
    elif field.dim == 1:
        if abs(float(jet.f_mean[0])) > FORCING_MEAN_TOL:
            local = TangentBranch(branch_curvature(jet, T, resonance_eps),
                                  local_solution_count(jet, T, field.separated))
        else:
            local = Indeterminate(
                "resonant zero with vanishing forcing mean: the implicit-"
                "function expansion does not apply")
    else:
        if index != 0:
            local = ejecting_test_2d(jet, T)
        else:
            local = Indeterminate("zero index; no ejecting criterion applies")

    if not res.resonant:
        ejecting, why = True, "non_resonant"
    elif field.dim == 1 and index != 0:
        ejecting, why = True, "nonzero_index_1d"
    elif field.dim == 2 and isinstance(local, Ejecting2D):
        ejecting, why = True, "second_order_2d"
    else:
        ejecting, why = False, "unknown"
    return ZeroClassification(p0, index, res, local, ejecting, why)


def classify(field: FieldSpec, T: float, window, grid_n: int = 400,
             resonance_eps: float = 1e-8, tol: float = 1e-12) -> "list[ZeroClassification]":
    """Find and classify every zero of g in the window.  Per-zero
    failures are recorded on the classification instead of aborting the
    batch."""
    zs = find_zeros(field, window, grid_n)
    out = []
    for k, p0 in enumerate(zs.points):
        radius = _index_radius(field, zs.points, k, window)
        try:
            out.append(classify_zero(field, p0, T, radius, resonance_eps, tol))
        except Exception as exc:  # noqa: BLE001 - aggregate per-zero errors
            out.append(ZeroClassification(
                p0, None, Resonance(True, None),
                Indeterminate("classification failed"), False, "unknown",
                error=f"{type(exc).__name__}: {exc}"))
    return out


def window_degree(field: FieldSpec, window) -> spectral.DegreeReport:
    gc = g_callable(field)
    if field.dim == 1:
        return spectral.degree_1d(gc, float(window[0]), float(window[1]))
    return spectral.degree_2d_winding(gc, window)


# --- multiplicity ------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplicityBound:
    n: int
    witnesses: tuple  # the chosen zeros (their p0 values)
    no_extra_branch: bool = False


def multiplicity_bound(classifications, deg_W: int) -> MultiplicityBound:
    """Largest subset S of branch-carrying zeros whose index sum differs
    from the window degree gives the lower bound |S| + 1.

    The pool holds every zero known to emit a nontrivial local branch
    for some sign of lambda: ejecting zeros plus tangential zeros with
    nonzero curvature.  If every subset sums to deg_W (all indices zero
    and deg_W = 0), the bound degenerates to the number of ejecting
    zeros, flagged no_extra_branch.
    """
    pool = [c for c in classifications
            if c.index is not None
            and (c.ejecting or (isinstance(c.local, TangentBranch)
                                and c.local.lambda_dd != 0.0))]
    for size in range(len(pool), -1, -1):
        for combo in itertools.combinations(range(len(pool)), size):
            if sum(pool[i].index for i in combo) != deg_W:
                return MultiplicityBound(
                    size + 1, tuple(pool[i].p0 for i in combo))
    ejecting = [c for c in classifications if c.ejecting]
    return MultiplicityBound(len(ejecting), tuple(c.p0 for c in ejecting),
                             no_extra_branch=True)
