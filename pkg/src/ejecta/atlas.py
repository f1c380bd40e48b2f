"""Numerical materialization of the starting-point set
S = {(lambda, p) : F(lambda, p) = 0} over a window: per-lambda slice
scans, pseudo-arclength branch following in the scalar case, and CSV
export of the resulting point clouds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import flow, poincare
from ._util import parallel_map
from .errors import StallError
from .exprdsl import FieldSpec
from .poincare import ROOT_RTOL

STEP_MIN = 1e-6
STEP_MAX = 0.1


@dataclass(frozen=True)
class CloudPoint:
    lam: float
    p: tuple
    residual: float
    provenance: str  # "slice_scan" | "continuation"


@dataclass(frozen=True)
class SliceDiagnostics:
    lam: float
    seeds: int
    escaped: int
    found: int


@dataclass(frozen=True)
class BranchCloud:
    dim: int
    points: tuple
    window: tuple  # (lambda window, p windows)
    problem_key: str
    diagnostics: tuple = ()
    stalled: bool = False

    def __len__(self):
        return len(self.points)

    def arrays(self):
        lam = np.array([q.lam for q in self.points])
        P = np.array([q.p for q in self.points]).reshape(len(self.points), self.dim)
        return lam, P


def _sort_points(points):
    return tuple(sorted(points, key=lambda q: (q.lam,) + q.p))


def _in_p_window(p, p_windows) -> bool:
    return all(lo - 1e-12 <= c <= hi + 1e-12 for c, (lo, hi) in zip(p, p_windows))


def _accept(value: np.ndarray, p: np.ndarray) -> bool:
    return bool(np.linalg.norm(value) <= ROOT_RTOL * (1.0 + np.linalg.norm(p)))


def _newton_root(field: FieldSpec, lam: float, p0, T: float, tol: float,
                 max_iter: int = 60) -> Optional[tuple]:
    """Damped Newton on p -> F(lambda, p) with the variational Jacobian.
    Returns (p, |F|) for an accepted root, else None."""
    d = field.dim
    p = np.atleast_1d(np.asarray(p0, dtype=float)).copy()
    ev = poincare.eval_F(field, lam, p, T, tol)
    if not ev.status.completed:
        return None
    res = float(np.linalg.norm(ev.value))
    best_p, best_res = p.copy(), res
    for _ in range(max_iter):
        if res <= 1e-13 * (1.0 + np.linalg.norm(p)):
            break
        J = ev.d_p
        det = J[0, 0] if d == 1 else J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if not np.isfinite(det) or abs(det) < 1e-300:
            break
        step = np.linalg.solve(J, ev.value)
        moved = False
        for _ in range(8):
            cand = p - step
            ev_new = poincare.eval_F(field, lam, cand, T, tol)
            if ev_new.status.completed:
                res_new = float(np.linalg.norm(ev_new.value))
                if res_new < res:
                    p, ev, res = cand, ev_new, res_new
                    moved = True
                    break
            step = 0.5 * step
        if not moved:
            break
        if res < best_res:
            best_p, best_res = p.copy(), res
    if _accept(np.array([best_res]), best_p):
        return tuple(float(c) for c in best_p), best_res
    return None


def _dedupe_points(found):
    """found: list of (p tuple, residual).  Cluster at 1e-6 keeping the
    smallest residual."""
    found = sorted(found)
    kept = []
    for p, r in found:
        if kept and math.dist(p, kept[-1][0]) <= 1e-6:
            if r < kept[-1][1]:
                kept[-1] = (p, r)
        else:
            kept.append((p, r))
    return kept


def _scan_slice_1d(field, lam, T, p_window, grid_n, tol):
    lo, hi = p_window
    ps = np.linspace(lo, hi, grid_n + 1)
    batch = flow.integrate_batch(field, lam, ps.reshape(1, -1), T, tol)
    Fv = batch.states[0] - ps
    ok = batch.completed
    escaped = int((~ok).sum())

    candidates = []

    def polish(seed):
        root = _newton_root(field, lam, [seed], T, tol)
        if root is not None and lo - 1e-9 <= root[0][0] <= hi + 1e-9:
            p = (min(max(root[0][0], lo), hi),)
            candidates.append((p, root[1]))

    for i in range(grid_n):
        if not (ok[i] and ok[i + 1]):
            continue
        fa, fb = Fv[i], Fv[i + 1]
        if fa == 0.0:
            polish(ps[i])
            continue
        if fa * fb < 0.0:
            a, b = float(ps[i]), float(ps[i + 1])
            va = fa
            for _ in range(80):
                m = 0.5 * (a + b)
                vm = poincare.residual_signed(field, lam, m, T, tol)
                if vm is None:
                    break
                if vm == 0.0 or (b - a) <= 1e-10:
                    a = b = m
                    break
                if (va < 0.0) == (vm < 0.0):
                    a, va = m, vm
                else:
                    b = m
            polish(0.5 * (a + b))
    if ok[grid_n] and Fv[grid_n] == 0.0:
        polish(ps[grid_n])

    absF = np.where(ok, np.abs(Fv), np.inf)
    for i in range(1, grid_n):
        if absF[i] <= absF[i - 1] and absF[i] <= absF[i + 1] and np.isfinite(absF[i]):
            polish(ps[i])

    found = _dedupe_points(candidates)
    return found, SliceDiagnostics(lam, grid_n + 1, escaped, len(found))


def _scan_slice_2d(field, lam, T, p_windows, grid_n, tol):
    (xlo, xhi), (ylo, yhi) = p_windows
    xs = np.linspace(xlo, xhi, grid_n)
    ys = np.linspace(ylo, yhi, grid_n)
    X, Y = [a.ravel() for a in np.meshgrid(xs, ys, indexing="ij")]
    P = np.vstack([X, Y])
    n_seeds = P.shape[1]
    span = math.hypot(xhi - xlo, yhi - ylo)

    # cheap plain-mode pass: seeds whose trajectory escapes cannot be roots
    pre = flow.integrate_batch(field, lam, P, T, tol)
    escaped = int((~pre.completed).sum())
    P = P[:, pre.completed]

    rough = []
    for _ in range(30):
        if P.shape[1] == 0:
            break
        batch = flow.integrate_batch(field, lam, P, T, tol, mode="jac")
        ok = batch.completed
        escaped += int((~ok).sum())
        Fx = batch.states[0] - P[0]
        Fy = batch.states[1] - P[1]
        res = np.hypot(Fx, Fy)
        done = ok & (res <= 0.1 * ROOT_RTOL * (1.0 + np.hypot(P[0], P[1])))
        for j in np.where(done)[0]:
            rough.append(((float(P[0, j]), float(P[1, j])), float(res[j])))
        ok &= ~done
        J = batch.first_variations
        J00, J01 = J[0, 0] - 1.0, J[0, 1]
        J10, J11 = J[1, 0], J[1, 1] - 1.0
        det = J00 * J11 - J01 * J10
        ok &= np.isfinite(det) & (np.abs(det) > 1e-300)
        with np.errstate(all="ignore"):
            dx = (J11 * Fx - J01 * Fy) / det
            dy = (J00 * Fy - J10 * Fx) / det
            # clip overlong steps; keeps seeds from tunnelling out
            nrm = np.hypot(dx, dy)
            lim = 0.25 * span
            scale = np.where(nrm > lim, lim / np.where(nrm == 0, 1, nrm), 1.0)
            Pn = P - scale * np.array([dx, dy])
        inside = (np.abs(Pn[0] - 0.5 * (xlo + xhi)) < 2 * (xhi - xlo)) & \
                 (np.abs(Pn[1] - 0.5 * (ylo + yhi)) < 2 * (yhi - ylo))
        ok &= inside & np.isfinite(Pn[0]) & np.isfinite(Pn[1])
        P = Pn[:, ok]

    for a, b in zip(*P):
        rough.append(((float(a), float(b)), math.inf))
    candidates = []
    for p, _ in _dedupe_points(rough):
        root = _newton_root(field, lam, p, T, tol)
        if root is not None and _in_p_window(root[0], p_windows):
            candidates.append(root)
    found = _dedupe_points(candidates)
    return found, SliceDiagnostics(lam, n_seeds, escaped, len(found))


def sample_slices(problem, lambda_grid) -> BranchCloud:
    """Scan each lambda slice of the window for starting points.

    dim 1: bracket sign changes of F on the p-grid (plus |F| minima, so
    tangential roots are found too), bisect, Newton-polish.  dim 2:
    damped Newton with the variational Jacobian from every grid seed.
    Escaped seeds are skipped silently; per-slice diagnostics record the
    counts.
    """
    field, T, tol, grid_n = problem.field, problem.period, problem.rk_tol, problem.grid

    def scan(lam):
        if field.dim == 1:
            return _scan_slice_1d(field, float(lam), T, problem.p_windows[0],
                                  grid_n, tol)
        return _scan_slice_2d(field, float(lam), T, problem.p_windows,
                              min(grid_n, 64), tol)

    results = parallel_map(scan, list(lambda_grid))
    points = []
    diags = []
    for lam, (found, diag) in zip(lambda_grid, results):
        diags.append(diag)
        for p, r in found:
            points.append(CloudPoint(float(lam), p, r, "slice_scan"))
    return BranchCloud(field.dim, _sort_points(points),
                       (problem.lambda_window, problem.p_windows),
                       problem.digest(), tuple(diags))


# --- pseudo-arclength continuation --------------------------------------------------

def _tangent(ev: poincare.StartingMapEval, prev: Optional[np.ndarray]) -> np.ndarray:
    t = np.array([-float(ev.d_p[0, 0]), float(ev.d_lambda[0])])
    n = np.linalg.norm(t)
    if n == 0.0:
        t = np.array([1.0, 0.0]) if prev is None else prev
        n = np.linalg.norm(t)
    t = t / n
    if prev is not None and float(t @ prev) < 0.0:
        t = -t
    return t


def follow_branch(problem, p0, step0: float = 1e-3,
                  max_steps: int = 400, step_max: float = STEP_MAX) -> BranchCloud:
    """Trace the scalar starting-point branch through (0, p0) by
    pseudo-arclength predictor-corrector steps, in both directions,
    within the problem window.  Signed lambda is allowed; the window
    bounds decide.  Raises StallError (with the partial cloud attached)
    if the step size underflows."""
    field, T, tol = problem.field, problem.period, problem.rk_tol
    if field.dim != 1:
        raise ValueError("branch following is implemented for dim 1 only")
    step_max = min(step_max, STEP_MAX)
    (llo, lhi) = problem.lambda_window
    (plo, phi) = problem.p_windows[0]

    def in_window(z):
        return llo - 1e-12 <= z[0] <= lhi + 1e-12 and plo - 1e-12 <= z[1] <= phi + 1e-12

    def F_and_jac(z):
        ev = poincare.eval_F(field, z[0], [z[1]], T, tol)
        if not ev.status.completed:
            return None
        return ev

    start = np.array([0.0, float(np.atleast_1d(p0)[0])])
    ev0 = F_and_jac(start)
    if ev0 is None or not _accept(ev0.value, start[1:]):
        raise ValueError("continuation must start at a starting point (0, p0)")

    points = [CloudPoint(0.0, (start[1],), float(abs(ev0.value[0])), "continuation")]
    stalled = False

    # orient the first tangent into lambda > 0 (or upward at a tangency),
    # then trace both ways
    tau0 = _tangent(ev0, None)
    if abs(tau0[0]) > 1e-8:
        fwd = tau0 if tau0[0] > 0 else -tau0
    else:
        fwd = tau0 if tau0[1] > 0 else -tau0
    directions = (fwd, -fwd)

    for direction in directions:
        z = start.copy()
        tau = direction.copy()
        h = min(max(step0, STEP_MIN), step_max)
        clean = 0
        for _ in range(max_steps // 2):
            ev = F_and_jac(z)
            if ev is None:
                break
            tau = _tangent(ev, tau)
            pred = z + h * tau
            zc = pred.copy()
            converged = False
            for _ in range(8):
                evc = F_and_jac(zc)
                if evc is None:
                    break
                r1 = float(evc.value[0])
                r2 = float(tau @ (zc - pred))
                if abs(r1) <= 1e-11 * (1.0 + abs(zc[1])) and abs(r2) <= 1e-12:
                    converged = True
                    break
                J = np.array([[float(evc.d_lambda[0]), float(evc.d_p[0, 0])],
                              [tau[0], tau[1]]])
                det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
                if not np.isfinite(det) or abs(det) < 1e-300:
                    break
                zc = zc - np.linalg.solve(J, np.array([r1, r2]))
            if converged:
                z = zc
                if not in_window(z):
                    break
                points.append(CloudPoint(float(z[0]), (float(z[1]),),
                                         float(abs(evc.value[0])),
                                         "continuation"))
                clean += 1
                if clean >= 4 and h < step_max:
                    h = min(2 * h, step_max)
                    clean = 0
            else:
                clean = 0
                h *= 0.5
                if h < STEP_MIN:
                    stalled = True
                    break

    cloud = BranchCloud(field.dim, _sort_points(points),
                        (problem.lambda_window, problem.p_windows),
                        problem.digest(), stalled=stalled)
    if stalled:
        raise StallError("continuation step size underflowed", cloud)
    return cloud


def merge_clouds(a: BranchCloud, b: BranchCloud) -> BranchCloud:
    """Union of two clouds of the same problem, slice points preferred
    over continuation duplicates at identical coordinates."""
    seen = {}
    for q in a.points + b.points:
        key = (round(q.lam, 12),) + tuple(round(c, 12) for c in q.p)
        if key not in seen or (seen[key].provenance == "continuation"
                               and q.provenance == "slice_scan"):
            seen[key] = q
    return BranchCloud(a.dim, _sort_points(seen.values()), a.window,
                       a.problem_key, a.diagnostics + b.diagnostics,
                       a.stalled or b.stalled)


# --- branch post-processing -----------------------------------------------------------

def fit_branch_slope(cloud: BranchCloud, radius: float = 0.05,
                     degree: int = 3) -> float:
    """dp/dlambda at lambda = 0 from a least-squares polynomial fit of
    the branch points with |lambda| <= radius."""
    lam, P = cloud.arrays()
    sel = np.abs(lam) <= radius
    if sel.sum() < degree + 2:
        raise ValueError("not enough branch points near lambda = 0 for the fit")
    V = np.vstack([lam[sel] ** k for k in range(degree + 1)]).T
    coef, *_ = np.linalg.lstsq(V, P[sel, 0], rcond=None)
    return float(coef[1])


def fit_lambda_quadratic(cloud: BranchCloud, radius: float = 0.05):
    """Quadratic fit lambda(p) = c0 + c1 p + c2 p^2 over branch points
    with |p - p_center| <= radius, p_center the point at lambda ~ 0.
    Returns (c0, c1, c2) in centered coordinates."""
    lam, P = cloud.arrays()
    center = float(P[np.argmin(np.abs(lam)), 0])
    q = P[:, 0] - center
    sel = np.abs(q) <= radius
    if sel.sum() < 4:
        raise ValueError("not enough branch points near p0 for the fit")
    V = np.vstack([np.ones(sel.sum()), q[sel], q[sel] ** 2]).T
    coef, *_ = np.linalg.lstsq(V, lam[sel], rcond=None)
    return tuple(float(c) for c in coef)


# --- export -------------------------------------------------------------------------

def format_number(v: float) -> str:
    return format(float(v) + 0.0, ".12g")  # +0.0 normalizes -0.0


def export_cloud(cloud: BranchCloud, path) -> None:
    """CSV with header lambda,p (dim 1) or lambda,x,y (dim 2); 12
    significant digits; LF line endings.  Rewrites are byte-identical."""
    header = "lambda,p" if cloud.dim == 1 else "lambda,x,y"
    lines = [header]
    for q in cloud.points:
        lines.append(",".join([format_number(q.lam)]
                              + [format_number(c) for c in q.p]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
