"""Adaptive integration of dx/dt = g(x) + lambda f(t,x) together with its
first and second variational equations.

The stepper is an embedded Dormand-Prince 5(4) pair with PI step-size
control and a blow-up guard: trajectories whose norm exceeds the bound
terminate with an ``escaped`` status (a first-class outcome, since
maximal solutions need not exist on all of [0, T]).

Two cores share the Butcher tableau: a scalar one operating on float
tuples (fast for single trajectories) and a numpy one advancing a whole
batch of initial conditions with a shared step sequence (used by grid
scans, where per-member escapes are expected and skipped).

Variational state layout, dim d with k probe directions::

    y[0:d]                     state x
    y[d + j*d + i]             first-variation matrix entry M[i][j]
    y[d+d*d : d+d*d+d]         lambda-sensitivity (mode "sens") or
    y[d+d*d + m*d + i]         second-variation vector per probe (mode "second")

M solves M' = (g' + lambda f_x)(x(t)) M from the identity; the probe
vectors solve b' = (g' + lambda f_x) b + (g'' + lambda f_xx)[Mv, Mv]
from zero; the sensitivity solves w' = (g' + lambda f_x) w + f from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import exprdsl
from .exprdsl import DOMAIN_ERRORS, FieldSpec

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

DEFAULT_BLOWUP = 1e6
_MIN_STEP_FRACTION = 1e-14


@dataclass(frozen=True)
class FlowStatus:
    kind: str  # "completed" | "escaped" | "step_failure"
    time: float = 0.0
    norm: float = 0.0

    @property
    def completed(self) -> bool:
        return self.kind == "completed"


_COMPLETED = FlowStatus("completed")


@dataclass(frozen=True)
class FlowResult:
    terminal_state: np.ndarray
    status: FlowStatus
    steps: int
    rejects: int


@dataclass(frozen=True)
class VariationalResult:
    terminal_state: np.ndarray
    first_variation: np.ndarray
    second_variation_vv: tuple
    status: FlowStatus
    steps: int
    rejects: int


@dataclass(frozen=True)
class SensitivityResult:
    terminal_state: np.ndarray
    first_variation: np.ndarray
    d_lambda: np.ndarray
    status: FlowStatus
    steps: int
    rejects: int


@dataclass(frozen=True)
class BatchFlowResult:
    states: np.ndarray        # (dim, N) terminal or escape-time states
    first_variations: np.ndarray  # (dim, dim, N) or None for mode "plain"
    completed: np.ndarray     # (N,) bool
    escape_time: np.ndarray   # (N,) float, NaN where completed


# --- right-hand-side code generation ------------------------------------------

def _hessian_entries(comp, names):
    """Second-derivative trees d2 comp / d names[j] d names[k], j <= k."""
    out = {}
    for j, vj in enumerate(names):
        dj = exprdsl.differentiate(comp, vj)
        for k in range(j, len(names)):
            out[(j, k)] = exprdsl.differentiate(dj, names[k])
    return out


def _build_rhs_source(field: FieldSpec, mode: str, nprobes: int, lib: str) -> str:
    d = field.dim
    state_vars = ("x",) if d == 1 else ("x", "y")
    names = {"t": "t", "x": "x0", "y": "x1"}

    def src(node):
        return exprdsl.python_source(node, names, lib)

    lines = []
    for i in range(d):
        lines.append(f"x{i} = y[{i}]")
    for i in range(d):
        lines.append(f"g{i} = {src(field.g[i])}")
        lines.append(f"f{i} = {src(field.f[i])}")
    outputs = [f"g{i} + lam*f{i}" for i in range(d)]

    if mode != "plain":
        for i in range(d):
            for k, vk in enumerate(state_vars):
                dg = exprdsl.differentiate(field.g[i], vk)
                df = exprdsl.differentiate(field.f[i], vk)
                lines.append(f"j{i}{k} = {src(dg)} + lam*({src(df)})")
        base = d
        for j in range(d):
            for i in range(d):
                lines.append(f"m{i}{j} = y[{base + j * d + i}]")
        for j in range(d):
            for i in range(d):
                outputs.append(" + ".join(f"j{i}{k}*m{k}{j}" for k in range(d)))
        aux = d + d * d
        if mode == "sens":
            for i in range(d):
                lines.append(f"w{i} = y[{aux + i}]")
            for i in range(d):
                terms = " + ".join(f"j{i}{k}*w{k}" for k in range(d))
                outputs.append(f"{terms} + f{i}")
        elif mode == "second":
            for i in range(d):
                hg = _hessian_entries(field.g[i], state_vars)
                hf = _hessian_entries(field.f[i], state_vars)
                for (j, k), node in hg.items():
                    lines.append(
                        f"h{i}{j}{k} = {src(node)} + lam*({src(hf[(j, k)])})")
            for m in range(nprobes):
                for i in range(d):
                    lines.append(f"b{m}{i} = y[{aux + m * d + i}]")
                for i in range(d):
                    comb = " + ".join(f"m{i}{j}*pv[{m * d + j}]" for j in range(d))
                    lines.append(f"a{m}{i} = {comb}")
                for i in range(d):
                    quad = []
                    for j in range(d):
                        for k in range(j, d):
                            coef = "" if j == k else "2*"
                            quad.append(f"{coef}h{i}{j}{k}*a{m}{j}*a{m}{k}")
                    lines.append(f"q{m}{i} = " + " + ".join(quad))
                for i in range(d):
                    terms = " + ".join(f"j{i}{k}*b{m}{k}" for k in range(d))
                    outputs.append(f"{terms} + q{m}{i}")

    body = "\n    ".join(lines)
    if lib == "m":
        ret = "return (" + ", ".join(outputs) + ("," if len(outputs) == 1 else "") + ")"
        return f"def _rhs(t, y, lam, pv):\n    {body}\n    {ret}\n"
    assigns = "\n    ".join(f"out[{i}] = {expr}" for i, expr in enumerate(outputs))
    return (f"def _rhs(t, y, lam, pv):\n    {body}\n"
            f"    out = np.empty_like(y)\n    {assigns}\n    return out\n")


def _np_pow(base, expo):
    return np.power(base, expo)


@lru_cache(maxsize=256)
def _compiled_rhs(field: FieldSpec, mode: str, nprobes: int, lib: str):
    ns = {"m": math, "np": np,
          "_pow": exprdsl._pow if lib == "m" else _np_pow}
    exec(_build_rhs_source(field, mode, nprobes, lib), ns)
    return ns["_rhs"]


def state_size(dim: int, mode: str, nprobes: int = 0) -> int:
    if mode == "plain":
        return dim
    if mode == "jac":
        return dim + dim * dim
    if mode == "sens":
        return dim + dim * dim + dim
    if mode == "second":
        return dim + dim * dim + nprobes * dim
    raise ValueError(mode)


def _initial_state(p, dim: int, mode: str, nprobes: int = 0) -> tuple:
    y = list(map(float, np.atleast_1d(p)))
    if mode != "plain":
        for j in range(dim):
            for i in range(dim):
                y.append(1.0 if i == j else 0.0)
        y.extend([0.0] * (state_size(dim, mode, nprobes) - len(y)))
    return tuple(y)


# --- scalar core ----------------------------------------------------------------

def _solve_scalar(rhs, y0: tuple, t_final: float, tol: float,
                  blow_dim: int, blow_up: float, t0: float = 0.0):
    """Advance y' = rhs(t, y) from t0 to t_final.  Returns
    (y, status, steps, rejects)."""
    n = len(y0)
    idx = range(n)
    y = y0
    t = t0
    span = t_final - t0
    steps = rejects = 0

    if blow_dim:
        nrm = math.sqrt(sum(y[i] * y[i] for i in range(blow_dim)))
        if nrm > blow_up:
            return y, FlowStatus("escaped", t0, nrm), 0, 0
    try:
        k1 = rhs(t, y)
    except DOMAIN_ERRORS:
        return y, FlowStatus("step_failure", t0), 0, 0

    scale = max(abs(k1[i]) / (1.0 + abs(y[i])) for i in idx)
    h = min(span, 0.01 / max(scale, 1e-4))
    h_min = _MIN_STEP_FRACTION * span
    err_old = tol
    just_rejected = False

    while t < t_final:
        clamped = h >= t_final - t
        if clamped:
            h = t_final - t
        try:
            y2 = tuple(y[i] + h * (_A[1][0] * k1[i]) for i in idx)
            k2 = rhs(t + _C[1] * h, y2)
            a = _A[2]
            y3 = tuple(y[i] + h * (a[0] * k1[i] + a[1] * k2[i]) for i in idx)
            k3 = rhs(t + _C[2] * h, y3)
            a = _A[3]
            y4 = tuple(y[i] + h * (a[0] * k1[i] + a[1] * k2[i] + a[2] * k3[i])
                       for i in idx)
            k4 = rhs(t + _C[3] * h, y4)
            a = _A[4]
            y5 = tuple(y[i] + h * (a[0] * k1[i] + a[1] * k2[i] + a[2] * k3[i]
                                   + a[3] * k4[i]) for i in idx)
            k5 = rhs(t + _C[4] * h, y5)
            a = _A[5]
            y6 = tuple(y[i] + h * (a[0] * k1[i] + a[1] * k2[i] + a[2] * k3[i]
                                   + a[3] * k4[i] + a[4] * k5[i]) for i in idx)
            k6 = rhs(t + _C[5] * h, y6)
            a = _A[6]
            ynew = tuple(y[i] + h * (a[0] * k1[i] + a[2] * k3[i] + a[3] * k4[i]
                                     + a[4] * k5[i] + a[5] * k6[i]) for i in idx)
            k7 = rhs(t + h, ynew)
            err = 0.0
            for i in idx:
                e = h * (_E[0] * k1[i] + _E[2] * k3[i] + _E[3] * k4[i]
                         + _E[4] * k5[i] + _E[5] * k6[i] + _E[6] * k7[i])
                err = max(err, abs(e) / (1.0 + abs(ynew[i])))
            if not math.isfinite(err):
                err = math.inf
        except DOMAIN_ERRORS:
            err = math.inf

        if err <= tol:
            t = t_final if clamped else t + h
            y = ynew
            k1 = k7  # FSAL
            steps += 1
            if blow_dim:
                nrm = math.sqrt(sum(y[i] * y[i] for i in range(blow_dim)))
                if nrm > blow_up:
                    return y, FlowStatus("escaped", t, nrm), steps, rejects
            err = max(err, 1e-30)
            fac = 0.9 * (tol / err) ** 0.14 * (err_old / tol) ** 0.08
            if just_rejected:
                fac = min(fac, 1.0)
                just_rejected = False
            h *= min(5.0, max(0.2, fac))
            err_old = max(err, 1e-4 * tol)
        else:
            rejects += 1
            just_rejected = True
            if math.isfinite(err):
                h *= min(0.5, max(0.1, 0.9 * (tol / err) ** 0.2))
            else:
                h *= 0.1
            if h < h_min:
                return y, FlowStatus("step_failure", t), steps, rejects
    return y, _COMPLETED, steps, rejects


# --- batch core -------------------------------------------------------------------

def _solve_batch(rhs, Y0: np.ndarray, t_final: float, tol: float,
                 blow_dim: int, blow_up: float):
    """Shared-step batch integration.  Members that blow up, leave the
    RHS domain, or stall the shared step are deactivated and reported at
    their escape time."""
    Y = np.array(Y0, dtype=float)
    n, N = Y.shape
    out = Y.copy()
    active = np.ones(N, dtype=bool)
    esc_t = np.full(N, np.nan)
    t = 0.0
    h_min = _MIN_STEP_FRACTION * t_final

    def deactivate(mask, time):
        cols = np.where(active)[0][mask]
        out[:, cols] = Y[:, cols]
        esc_t[cols] = time
        active[cols] = False

    with np.errstate(all="ignore"):
        nrm = np.sqrt(np.sum(Y[:blow_dim] ** 2, axis=0))
        bad = ~np.isfinite(nrm) | (nrm > blow_up)
        if bad.any():
            deactivate(bad[active], 0.0)

        K1 = rhs(t, Y)
        scl = np.abs(K1) / (1.0 + np.abs(Y))
        scl = np.nanmax(np.where(np.isfinite(scl), scl, np.nan)) if np.isfinite(scl).any() else 1.0
        h = min(t_final, 0.01 / max(float(scl), 1e-4))
        err_old = tol
        just_rejected = False

        while t < t_final and active.any():
            clamped = h >= t_final - t
            if clamped:
                h = t_final - t
            Y2 = Y + (h * _A[1][0]) * K1
            K2 = rhs(t + _C[1] * h, Y2)
            a = _A[2]
            K3 = rhs(t + _C[2] * h, Y + h * (a[0] * K1 + a[1] * K2))
            a = _A[3]
            K4 = rhs(t + _C[3] * h, Y + h * (a[0] * K1 + a[1] * K2 + a[2] * K3))
            a = _A[4]
            K5 = rhs(t + _C[4] * h,
                     Y + h * (a[0] * K1 + a[1] * K2 + a[2] * K3 + a[3] * K4))
            a = _A[5]
            K6 = rhs(t + _C[5] * h,
                     Y + h * (a[0] * K1 + a[1] * K2 + a[2] * K3 + a[3] * K4
                              + a[4] * K5))
            a = _A[6]
            Ynew = Y + h * (a[0] * K1 + a[2] * K3 + a[3] * K4 + a[4] * K5
                            + a[5] * K6)
            K7 = rhs(t + h, Ynew)
            E = h * (_E[0] * K1 + _E[2] * K3 + _E[3] * K4 + _E[4] * K5
                     + _E[5] * K6 + _E[6] * K7)
            member_err = np.max(np.abs(E) / (1.0 + np.abs(Ynew)), axis=0)
            act_err = member_err[active]
            worst = np.nanmax(np.where(np.isfinite(act_err), act_err, np.nan)) \
                if np.isfinite(act_err).any() else math.inf

            if np.all(np.isfinite(act_err)) and worst <= tol:
                t = t_final if clamped else t + h
                Y = Ynew
                K1 = K7
                nrm = np.sqrt(np.sum(Y[:blow_dim] ** 2, axis=0))
                bad = (~np.isfinite(nrm) | (nrm > blow_up))[active]
                if bad.any():
                    deactivate(bad, t)
                worst = max(worst, 1e-30)
                fac = 0.9 * (tol / worst) ** 0.14 * (err_old / tol) ** 0.08
                if just_rejected:
                    fac = min(fac, 1.0)
                    just_rejected = False
                h *= min(5.0, max(0.2, fac))
                err_old = max(worst, 1e-4 * tol)
            else:
                just_rejected = True
                if math.isfinite(worst) and worst > 0:
                    h *= min(0.5, max(0.1, 0.9 * (tol / worst) ** 0.2))
                else:
                    h *= 0.1
                if h < h_min:
                    stuck = (~np.isfinite(act_err)) | (act_err > tol)
                    deactivate(stuck, t)
                    h = min(h * 64.0, max(t_final - t, h))
                    just_rejected = False

    completed = active.copy()
    out[:, active] = Y[:, active]
    return out, completed, esc_t


# --- public API --------------------------------------------------------------------

def integrate(field: FieldSpec, lam: float, p, t_final: float,
              tol: float = 1e-10, blow_up: float = DEFAULT_BLOWUP,
              t0: float = 0.0) -> FlowResult:
    """Terminal state of the perturbed field at t_final from x(t0) = p."""
    rhs = _compiled_rhs(field, "plain", 0, "m")
    y0 = _initial_state(p, field.dim, "plain")
    y, status, steps, rejects = _solve_scalar(
        lambda t, y: rhs(t, y, lam, ()), y0, t_final, tol, field.dim, blow_up, t0)
    return FlowResult(np.array(y), status, steps, rejects)


def integrate_with_variations(field: FieldSpec, lam: float, p, probe_dirs,
                              t_final: float, tol: float = 1e-10,
                              blow_up: float = DEFAULT_BLOWUP) -> VariationalResult:
    """Co-integrate state, first-variation matrix, and one
    second-variation vector per probe direction."""
    d = field.dim
    probes = [np.atleast_1d(np.asarray(v, dtype=float)) for v in probe_dirs]
    k = len(probes)
    pv = tuple(float(c) for v in probes for c in v)
    rhs = _compiled_rhs(field, "second" if k else "jac", k, "m")
    y0 = _initial_state(p, d, "second" if k else "jac", k)
    y, status, steps, rejects = _solve_scalar(
        lambda t, yy: rhs(t, yy, lam, pv), y0, t_final, tol, d, blow_up)
    x = np.array(y[:d])
    M = np.array([[y[d + j * d + i] for j in range(d)] for i in range(d)])
    aux = d + d * d
    betas = tuple(np.array(y[aux + m * d: aux + (m + 1) * d]) for m in range(k))
    return VariationalResult(x, M, betas, status, steps, rejects)


def integrate_with_sensitivity(field: FieldSpec, lam: float, p, t_final: float,
                               tol: float = 1e-10,
                               blow_up: float = DEFAULT_BLOWUP) -> SensitivityResult:
    """Co-integrate state, first variation, and the lambda-sensitivity
    w' = (g' + lambda f_x) w + f, w(0) = 0."""
    d = field.dim
    rhs = _compiled_rhs(field, "sens", 0, "m")
    y0 = _initial_state(p, d, "sens")
    y, status, steps, rejects = _solve_scalar(
        lambda t, yy: rhs(t, yy, lam, ()), y0, t_final, tol, d, blow_up)
    x = np.array(y[:d])
    M = np.array([[y[d + j * d + i] for j in range(d)] for i in range(d)])
    w = np.array(y[d + d * d: d + d * d + d])
    return SensitivityResult(x, M, w, status, steps, rejects)


def integrate_rhs(rhs, y0, t_final: float, tol: float = 1e-10,
                  blow_dim: int = 0, blow_up: float = DEFAULT_BLOWUP):
    """Generic scalar-core entry point: rhs(t, y_tuple) -> tuple.

    Used for auxiliary linear ODEs (weighted forcing integrals, oracle
    checks).  Returns (y_final ndarray, FlowStatus, steps, rejects).
    """
    y, status, steps, rejects = _solve_scalar(
        rhs, tuple(map(float, y0)), t_final, tol, blow_dim, blow_up)
    return np.array(y), status, steps, rejects


def integrate_batch(field: FieldSpec, lam: float, P: np.ndarray, t_final: float,
                    tol: float = 1e-10, mode: str = "plain",
                    blow_up: float = DEFAULT_BLOWUP) -> BatchFlowResult:
    """Integrate a batch of initial points P (dim, N) with a shared
    adaptive step.  mode "jac" co-integrates first variations."""
    d = field.dim
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] != d:
        P = P.reshape(d, -1)
    N = P.shape[1]
    n = state_size(d, mode)
    Y0 = np.zeros((n, N))
    Y0[:d] = P
    if mode == "jac":
        for j in range(d):
            Y0[d + j * d + j] = 1.0
    rhs = _compiled_rhs(field, mode, 0, "np")
    out, completed, esc_t = _solve_batch(
        lambda t, Y: rhs(t, Y, lam, ()), Y0, t_final, tol, d, blow_up)
    states = out[:d]
    first = None
    if mode == "jac":
        first = np.empty((d, d, N))
        for j in range(d):
            for i in range(d):
                first[i, j] = out[d + j * d + i]
    return BatchFlowResult(states, first, completed, esc_t)
