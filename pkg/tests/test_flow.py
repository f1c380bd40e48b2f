import math
import random

import numpy as np

from conftest import TWO_PI, E2PI, expm_series
from ejecta import flow
from ejecta.exprdsl import field_from_sources


def test_equilibrium_is_preserved(fields):
    r = flow.integrate(fields["exsimp"], 0.0, [0.0], TWO_PI, tol=1e-10)
    assert r.status.completed
    assert abs(r.terminal_state[0]) < 1e-10


def test_linear_exponential_growth():
    f = field_from_sources(1, ["x"], ["0"])
    tol = 1e-10
    r = flow.integrate(f, 0.0, [1.0], 1.0, tol=tol)
    assert abs(r.terminal_state[0] - math.e) <= 10 * tol * math.e


def test_exNTse_second_zero_is_fixed(fields):
    r = flow.integrate(fields["exNTse"], 0.0, [-1.0], TWO_PI)
    assert abs(r.terminal_state[0] + 1.0) < 1e-9


def test_first_variation_matches_matrix_exponential(fields):
    tol = 1e-10
    r = flow.integrate_with_variations(fields["exsimp"], 0.0, [0.0], [], TWO_PI,
                                       tol=tol)
    # g'(0) = 1, so the variation is e^{T}
    assert abs(r.first_variation[0, 0] - E2PI) <= 100 * tol * E2PI


def test_resonant_first_variation_is_one(fields):
    r = flow.integrate_with_variations(fields["extang"], 0.0, [0.0], [], TWO_PI,
                                       tol=1e-12)
    assert abs(r.first_variation[0, 0] - 1.0) < 1e-10


def test_second_variation_kernel_direction(fields):
    # beta' = A beta + H[e^{sA}v, e^{sA}v]; for the true kernel v = (1,0)
    # of A = diag(0,1) the second component solves b' = b + 2, so
    # b(T) = 2(e^T - 1).  The non-kernel direction (0,1) gives zero.
    r = flow.integrate_with_variations(fields["ex3d"], 0.0, [0.0, 0.0],
                                       [[1.0, 0.0], [0.0, 1.0]], TWO_PI,
                                       tol=1e-11)
    want = 2.0 * (E2PI - 1.0)
    assert abs(r.second_variation_vv[0][0]) < 1e-8
    assert abs(r.second_variation_vv[0][1] - want) <= 1e-6 * want
    assert np.max(np.abs(r.second_variation_vv[1])) < 1e-8


def test_escape_reports_first_crossing_time():
    f = field_from_sources(1, ["1 + x^2"], ["0"])
    r = flow.integrate(f, 0.0, [0.0], TWO_PI)
    assert r.status.kind == "escaped"
    # x(t) = tan(t) blows up at pi/2
    assert abs(r.status.time - math.pi / 2) < 1e-3
    assert r.status.norm > 1e6


def test_group_property(fields):
    tol = 1e-10
    full = flow.integrate(fields["exsimp"], 0.1, [0.3], TWO_PI, tol=tol)
    half = flow.integrate(fields["exsimp"], 0.1, [0.3], TWO_PI / 2, tol=tol)
    again = flow.integrate(fields["exsimp"], 0.1, half.terminal_state, TWO_PI,
                           tol=tol, t0=TWO_PI / 2)
    assert abs(full.terminal_state[0] - again.terminal_state[0]) <= 10 * tol


def test_determinism_bit_identical(fields):
    a = flow.integrate(fields["exnasty"], 0.17, [0.4], TWO_PI, tol=1e-9)
    b = flow.integrate(fields["exnasty"], 0.17, [0.4], TWO_PI, tol=1e-9)
    assert a.terminal_state[0] == b.terminal_state[0]
    assert (a.steps, a.rejects) == (b.steps, b.rejects)


def _random_field(rng, dim):
    def poly1(vars_):
        terms = []
        for v, deg in vars_:
            c = round(rng.uniform(-0.6, 0.6), 3)
            if abs(c) > 0.05:
                terms.append(f"{c}*{v}^{deg}" if deg > 1 else f"{c}*{v}")
        return " + ".join(terms) if terms else "0.1*x"

    if dim == 1:
        g = [poly1([("x", 1), ("x", 2), ("x", 3)])]
        f = [f"{round(rng.uniform(-0.5, 0.5), 3)}*sin(t) + "
             f"{round(rng.uniform(-0.5, 0.5), 3)}*x"]
    else:
        g = [poly1([("x", 1), ("y", 1), ("x", 2), ("y", 2)]),
             poly1([("x", 1), ("y", 1), ("x", 3), ("y", 2)])]
        f = [f"{round(rng.uniform(-0.5, 0.5), 3)}*cos(t)",
             f"{round(rng.uniform(-0.5, 0.5), 3)}*sin(t) + "
             f"{round(rng.uniform(-0.3, 0.3), 3)}*y"]
    return field_from_sources(dim, g, f)


def test_variations_match_finite_differences_on_random_fields():
    rng = random.Random(20240812)
    tol = 1e-11
    T = 1.0
    n_checked = 0
    for trial in range(50):
        dim = 1 if trial % 2 == 0 else 2
        field = _random_field(rng, dim)
        lam = rng.uniform(0.0, 0.3)
        p = np.array([rng.uniform(-0.3, 0.3) for _ in range(dim)])
        v = np.array([rng.uniform(-1.0, 1.0) for _ in range(dim)])
        v /= np.linalg.norm(v)
        r = flow.integrate_with_variations(field, lam, p, [v], T, tol=tol)
        if not r.status.completed:
            continue

        h = 1e-5
        fd = np.zeros((dim, dim))
        complete = True
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = h
            up = flow.integrate(field, lam, p + e, T, tol=tol)
            dn = flow.integrate(field, lam, p - e, T, tol=tol)
            complete &= up.status.completed and dn.status.completed
            if complete:
                fd[:, j] = (up.terminal_state - dn.terminal_state) / (2 * h)
        if not complete:
            continue
        scale = max(1.0, float(np.max(np.abs(r.first_variation))))
        assert np.max(np.abs(fd - r.first_variation)) <= 1e-5 * scale

        h2 = 1e-3
        up = flow.integrate(field, lam, p + h2 * v, T, tol=tol)
        dn = flow.integrate(field, lam, p - h2 * v, T, tol=tol)
        mid = flow.integrate(field, lam, p, T, tol=tol)
        if not (up.status.completed and dn.status.completed and mid.status.completed):
            continue
        fd2 = (up.terminal_state - 2 * mid.terminal_state + dn.terminal_state) / h2 ** 2
        beta = r.second_variation_vv[0]
        mask = np.abs(beta) > 1e-6
        if mask.any():
            assert np.max(np.abs((fd2 - beta)[mask]) / np.abs(beta[mask])) <= 1e-3
        n_checked += 1
    assert n_checked >= 35


def test_first_variation_against_series_oracle():
    # a genuinely 2-D linear field: variation must equal e^{TA}
    A = np.array([[0.3, -0.8], [0.5, -0.2]])
    field = field_from_sources(
        2, [f"{A[0,0]}*x + {A[0,1]}*y", f"{A[1,0]}*x + {A[1,1]}*y"], ["0", "0"])
    r = flow.integrate_with_variations(field, 0.0, [0.1, -0.2], [], 2.0,
                                       tol=1e-12)
    oracle = expm_series(A, 2.0)
    assert np.max(np.abs(r.first_variation - oracle)) < 1e-9


def test_batch_matches_scalar(fields):
    P = np.linspace(-0.5, 0.5, 101).reshape(1, -1)
    batch = flow.integrate_batch(fields["exsimp"], 0.05, P, TWO_PI, tol=1e-10)
    assert batch.completed.all()
    for j in (0, 33, 50, 100):
        single = flow.integrate(fields["exsimp"], 0.05, [P[0, j]], TWO_PI,
                                tol=1e-10)
        assert abs(single.terminal_state[0] - batch.states[0, j]) < 1e-8


def test_batch_escapes_are_flagged():
    f = field_from_sources(1, ["1 + x^2"], ["0"])
    P = np.linspace(-3.0, 3.0, 50).reshape(1, -1)
    batch = flow.integrate_batch(f, 0.0, P, TWO_PI, tol=1e-9)
    assert not batch.completed.any()
    assert np.isfinite(batch.escape_time[~batch.completed]).all()
