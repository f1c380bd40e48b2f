"""Command-line front end: parse problem files, dispatch analyses, emit
plain-text reports, CSV point clouds, and PNG figures, and reproduce the
bundled examples by name.

Exit codes: 0 success, 1 numerical or check failure, 2 usage/spec error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import atlas, localanalysis as la, problem as problem_mod
from .atlas import format_number
from .errors import EjectaError, ProblemFormatError, StallError
from .localanalysis import Ejecting2D, TangentBranch, TransversalBranch

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

TWO_PI = 2.0 * math.pi

_JUSTIFICATION = {
    "non_resonant": "non-resonant rule",
    "nonzero_index_1d": "nonzero index (dim 1)",
    "second_order_2d": "second-order integral (dim 2)",
    "unknown": "not established",
}


def _fmt_point(p) -> str:
    vals = [format_number(c) for c in np.atleast_1d(p)]
    return vals[0] if len(vals) == 1 else "(" + ", ".join(vals) + ")"


def _fmt_vec(v) -> str:
    return "(" + ", ".join(format_number(c) for c in np.atleast_1d(v)) + ")"


def _local_text(local) -> str:
    if isinstance(local, TransversalBranch):
        return f"transversal branch, tangent p'(0) = {_fmt_point(local.tangent)}"
    if isinstance(local, TangentBranch):
        verdict = {"two_solutions": "TwoSolutions",
                   "no_solutions": "NoSolutions",
                   "indeterminate": "Indeterminate"}[local.verdict.kind]
        extra = " (geometrically distinct)" if local.verdict.geometrically_distinct else ""
        return (f"tangent branch, lambda''(p0) = {format_number(local.lambda_dd)}, "
                f"{verdict}{extra}")
    if isinstance(local, Ejecting2D):
        return (f"Ejecting2D, witness v = {_fmt_vec(local.witness)}, "
                f"integral = {_fmt_vec(local.integral)}, "
                f"|integral| = {format_number(np.linalg.norm(local.integral))}")
    return f"indeterminate: {local.reason}"


def _classification_lines(classifications) -> "list[str]":
    lines = []
    for c in classifications:
        if c.error is not None:
            lines.append(f"p = {_fmt_point(c.p0)}  ERROR: {c.error}")
            continue
        eject = ("ejecting: yes (" + _JUSTIFICATION[c.justification] + ")"
                 if c.ejecting else "ejecting: not established")
        lines.append(f"p = {_fmt_point(c.p0)}  index = {c.index:+d}  "
                     f"{c.resonance}  {_local_text(c.local)}  {eject}")
    if not lines:
        lines.append("no zeros of g found in the window")
    return lines


def _load_problem(path: str) -> problem_mod.ProblemSpec:
    try:
        return problem_mod.load_problem(path)
    except FileNotFoundError:
        raise ProblemFormatError(f"{path}: no such file")


def _lambda_grid(pr: problem_mod.ProblemSpec, n: int) -> np.ndarray:
    return np.linspace(pr.lambda_window[0], pr.lambda_window[1], n)


# --- commands -------------------------------------------------------------------------

def cmd_zeros(pr: problem_mod.ProblemSpec, out) -> int:
    zs = la.find_zeros(pr.field, _p_window_arg(pr), pr.grid)
    out(f"zeros of g in window {_window_text(pr)}")
    for k, p in enumerate(zs.points):
        radius = la._index_radius(pr.field, zs.points, k, _p_window_arg(pr))
        resid = float(np.linalg.norm(la.g_at(pr.field, p)))
        try:
            idx = la._index_with_fallback(pr.field, p, radius)
            idx_text = f"{idx:+d}"
        except EjectaError as exc:
            idx_text = f"? ({exc})"
        out(f"p = {_fmt_point(p)}  |g(p)| = {resid:.3e}  index = {idx_text}")
    if not zs.points:
        out("none found")
    if zs.crowded:
        out("warning: zeros closer than 10x the dedupe radius; grid may be too coarse")
    return EXIT_OK


def _p_window_arg(pr):
    return pr.p_windows[0] if pr.field.dim == 1 else pr.p_windows


def _window_text(pr) -> str:
    if pr.field.dim == 1:
        lo, hi = pr.p_windows[0]
        return f"[{format_number(lo)}, {format_number(hi)}]"
    (a, b), (c, d) = pr.p_windows
    return (f"[{format_number(a)}, {format_number(b)}] x "
            f"[{format_number(c)}, {format_number(d)}]")


def cmd_classify(pr: problem_mod.ProblemSpec, out) -> int:
    cls = la.classify(pr.field, pr.period, _p_window_arg(pr), pr.grid,
                      pr.resonance_eps)
    out(f"classification of zeros in window {_window_text(pr)} (T = "
        f"{format_number(pr.period)})")
    for line in _classification_lines(cls):
        out(line)
    return EXIT_NUMERIC if any(c.error for c in cls) else EXIT_OK


def cmd_multiplicity(pr: problem_mod.ProblemSpec, out) -> int:
    deg = la.window_degree(pr.field, _p_window_arg(pr))
    cls = la.classify(pr.field, pr.period, _p_window_arg(pr), pr.grid,
                      pr.resonance_eps)
    bound = la.multiplicity_bound(cls, deg.value)
    out(f"degree of g over the window: {deg.value} "
        f"(boundary min |g| = {deg.boundary_min_norm:.3e})")
    for line in _classification_lines(cls):
        out(line)
    out(f"multiplicity lower bound: n = {bound.n}")
    if bound.witnesses:
        out("witness zeros: " + ", ".join(_fmt_point(w) for w in bound.witnesses))
    if bound.no_extra_branch:
        out("note: every witness subset matches the window degree; the bound "
            "counts only the ejecting zeros themselves")
    out("assumed without verification: the unperturbed equation admits no "
        "unbounded connected set of T-periodic solutions in the window "
        "(user-asserted); separated-forcing minimal period is taken from the "
        "problem file")
    return EXIT_NUMERIC if any(c.error for c in cls) else EXIT_OK


def cmd_sample(pr: problem_mod.ProblemSpec, out_path: Path, n_lambda: int,
               out) -> int:
    grid = _lambda_grid(pr, n_lambda)
    cloud = atlas.sample_slices(pr, grid)
    atlas.export_cloud(cloud, out_path)
    _render(cloud, out_path, out)
    escapes = sum(d.escaped for d in cloud.diagnostics)
    out(f"slices: {len(grid)}  points: {len(cloud.points)}  escaped seeds: {escapes}")
    out(f"wrote {out_path}")
    return EXIT_OK


def cmd_branch(pr: problem_mod.ProblemSpec, p0: float, out_path: Path, out) -> int:
    if pr.field.dim != 1:
        print("error: branch following applies to scalar problems only",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        cloud = atlas.follow_branch(pr, [p0], step0=1e-3, max_steps=600,
                                    step_max=0.005)
        code = EXIT_OK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StallError as exc:
        cloud = exc.cloud
        out(f"warning: {exc}; exporting the partial branch")
        code = EXIT_NUMERIC
    atlas.export_cloud(cloud, out_path)
    _render(cloud, out_path, out)
    lam, _ = cloud.arrays()
    out(f"branch points: {len(cloud.points)}  lambda range: "
        f"[{format_number(lam.min())}, {format_number(lam.max())}]")
    out(f"wrote {out_path}")
    return code


def _render(cloud, csv_path: Path, out, title: str = "") -> None:
    from . import figures  # deferred: matplotlib import is slow

    png = csv_path.with_suffix(".png")
    figures.render_cloud(cloud, png, title)
    out(f"wrote {png}")


# --- reproduce ------------------------------------------------------------------------

class Check:
    def __init__(self, key: str, value: str, expected: str, ok: bool):
        self.key, self.value, self.expected, self.ok = key, value, expected, ok

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{self.key} = {self.value} (expected {self.expected}): {status}"


def _tol_text(tol: float) -> str:
    return f"{tol:g}".replace("e-0", "e-")


def _close(key, value, expected, tol, fmt="{:.6f}") -> Check:
    return Check(key, fmt.format(value + 0.0),
                 f"{format_number(expected)} ± {_tol_text(tol)}",
                 abs(value - expected) <= tol)


def _equal(key, value, expected) -> Check:
    return Check(key, str(value), str(expected), value == expected)


def _slice_points(cloud, lam, radius=None):
    pts = [q for q in cloud.points if abs(q.lam - lam) <= 1e-12]
    if radius is not None:
        pts = [q for q in pts if all(abs(c) <= radius for c in q.p)]
    return pts


def _checks_exsimp(pr, ctx):
    cls, bound = ctx["cls"], ctx["bound"]
    checks = [_equal("zeros_found", len(cls), 1)]
    c = cls[0]
    checks.append(_equal("resonance", str(c.resonance), "NonResonant"))
    tangent = float(c.local.tangent[0]) if isinstance(c.local, TransversalBranch) else math.nan
    checks.append(_close("p'(0)", tangent, -1.5, 1e-6))
    slope = atlas.fit_branch_slope(ctx["branch"], radius=0.05, degree=3)
    checks.append(_close("branch_fit_dp_dlambda", slope, -1.5, 1e-4))
    checks.append(_equal("multiplicity_n", bound.n, 1))
    return checks


def _checks_exNTse(pr, ctx):
    cls, bound, deg = ctx["cls"], ctx["bound"], ctx["deg"]
    checks = [_equal("zeros_found", len(cls), 2)]
    by_p = {round(float(c.p0[0])): c for c in cls}
    checks.append(_equal("resonance_at_-1", str(by_p[-1].resonance), "NonResonant"))
    checks.append(_equal("resonance_at_0", str(by_p[0].resonance), "NonResonant"))
    checks.append(_equal("index_at_-1", by_p[-1].index, -1))
    checks.append(_equal("index_at_0", by_p[0].index, 1))
    t0 = float(by_p[0].local.tangent[0])
    checks.append(_close("p'(0)_at_0", t0, -0.5, 1e-6))
    checks.append(_equal("window_degree", deg.value, 0))
    checks.append(_equal("multiplicity_n", bound.n, 2))
    return checks


def _checks_extang(pr, ctx):
    cls, bound = ctx["cls"], ctx["bound"]
    checks = [_equal("zeros_found", len(cls), 1)]
    c = cls[0]
    checks.append(Check("resonance", str(c.resonance), "Resonant(0)",
                        c.resonance.resonant))
    checks.append(_equal("index_at_0", c.index, 1))
    jet = la.compute_jet(pr.field, c.p0, pr.period)
    checks.append(_close("weighted_forcing_integral", float(jet.f_weighted[0]),
                         TWO_PI, 1e-8, fmt="{:.9f}"))
    c0, c1, c2 = atlas.fit_lambda_quadratic(ctx["branch"], radius=0.05)
    checks.append(Check("tangency_|linear_coef|", f"{abs(c1):.6e}", "< 1e-3",
                        abs(c1) < 1e-3))
    checks.append(Check("tangency_quadratic_coef", f"{c2:.6e}", "> 0", c2 > 0))
    checks.append(_equal("multiplicity_n", bound.n, 1))
    return checks


def _checks_exnasty(pr, ctx):
    cls, bound = ctx["cls"], ctx["bound"]
    checks = [_equal("zeros_found", len(cls), 2)]
    by_p = {round(float(c.p0[0])): c for c in cls}
    checks.append(Check("resonance_at_0", str(by_p[0].resonance), "Resonant(0)",
                        by_p[0].resonance.resonant))
    checks.append(_equal("index_at_0", by_p[0].index, 0))
    checks.append(_equal("local_at_0",
                         type(by_p[0].local).__name__, "Indeterminate"))
    jet = la.compute_jet(pr.field, by_p[0].p0, pr.period)
    checks.append(Check("forcing_mean_at_0", f"{float(jet.f_mean[0]):.3e}",
                        "|mean| <= 1e-10", abs(float(jet.f_mean[0])) <= 1e-10))
    checks.append(_equal("resonance_at_-1", str(by_p[-1].resonance), "NonResonant"))
    checks.append(_equal("ejecting_at_-1", by_p[-1].ejecting, True))
    checks.append(_equal("multiplicity_n", bound.n, 1))
    return checks


def _checks_ex2tang(pr, ctx):
    cls, bound, deg = ctx["cls"], ctx["bound"], ctx["deg"]
    checks = [_equal("zeros_found", len(cls), 3)]
    by_p = {round(float(c.p0[0])): c for c in cls}
    for p, expect in ((0, 0.0), (1, -4.0), (-1, 4.0)):
        c = by_p[p]
        ldd = c.local.lambda_dd if isinstance(c.local, TangentBranch) else math.nan
        checks.append(_close(f"lambda''({p})", ldd, expect, 1e-9, fmt="{:.12f}"))
    checks.append(_equal("index_at_0", by_p[0].index, 1))
    checks.append(_equal("ejecting_at_0", by_p[0].ejecting, True))
    checks.append(_equal("window_degree", deg.value, 1))
    checks.append(_equal("multiplicity_n", bound.n, 3))
    return checks


def _checks_remnoso(kind):
    def run(pr, ctx):
        cls, cloud = ctx["cls"], ctx["cloud"]
        checks = [_equal("zeros_found", len(cls), 1)]
        c = cls[0]
        verdict = (c.local.verdict.kind if isinstance(c.local, TangentBranch)
                   else "missing")
        if kind == "agree":
            checks.append(_equal("sign_verdict", verdict, "no_solutions"))
            for lam in (0.01, 0.02, 0.05):
                n = len(_slice_points(cloud, lam, radius=0.2))
                checks.append(_equal(f"points_near_0_at_lambda_{lam}", n, 0))
        else:
            checks.append(_equal("sign_verdict", verdict, "two_solutions"))
            checks.append(_equal(
                "geometrically_distinct",
                c.local.verdict.geometrically_distinct
                if isinstance(c.local, TangentBranch) else False, True))
            for lam in (0.01, 0.02, 0.05):
                n = len(_slice_points(cloud, lam))
                checks.append(_equal(f"points_at_lambda_{lam}", n, 2))
            n_in = len(_slice_points(cloud, 0.02, radius=0.2))
            checks.append(_equal("points_near_0_at_lambda_0.02", n_in, 2))
        return checks

    return run


def _checks_ex3d(pr, ctx):
    cls, bound = ctx["cls"], ctx["bound"]
    checks = [_equal("zeros_found", len(cls), 1)]
    c = cls[0]
    checks.append(Check("zero_location", _fmt_point(c.p0), "~(0, 0)",
                        float(np.linalg.norm(c.p0)) < 1e-6))
    checks.append(_equal("winding_index", c.index, 1))
    checks.append(Check("resonance", str(c.resonance), "Resonant",
                        c.resonance.resonant))
    checks.append(_equal("local_kind", type(c.local).__name__, "Ejecting2D"))
    if isinstance(c.local, Ejecting2D):
        nrm = float(np.linalg.norm(c.local.integral))
        expect = 2.0 * (math.exp(TWO_PI) - 1.0)
        checks.append(Check("ejecting_integral_norm", f"{nrm:.6f}",
                            f"{expect:.6f} rel 1e-6",
                            abs(nrm - expect) <= 1e-6 * expect))
        checks.append(Check("ejecting_integral_norm_>=_1", f"{nrm:.3e}", ">= 1",
                            nrm >= 1.0))
    checks.append(_equal("multiplicity_n", bound.n, 1))
    return checks


_CHECKS = {
    "exsimp": _checks_exsimp,
    "exNTse": _checks_exNTse,
    "extang": _checks_extang,
    "exnasty": _checks_exnasty,
    "ex2tang": _checks_ex2tang,
    "remnoso_agree": _checks_remnoso("agree"),
    "remnoso_disagree": _checks_remnoso("disagree"),
    "ex3d": _checks_ex3d,
}

_BRANCH_STEPS = {"exsimp": 120, "extang": 200}


def run_reproduce(example_id: str, outdir: Path, out) -> int:
    key = example_id.replace("-", "_")
    try:
        pr = problem_mod.bundled_problem(key)
    except KeyError:
        out(f"unknown example id {example_id!r}; known ids: "
            + ", ".join(problem_mod.bundled_ids()))
        return EXIT_USAGE

    deg = la.window_degree(pr.field, _p_window_arg(pr))
    cls = la.classify(pr.field, pr.period, _p_window_arg(pr), pr.grid,
                      pr.resonance_eps)
    bound = la.multiplicity_bound(cls, deg.value)
    n_lambda = 21 if pr.field.dim == 1 else 5
    cloud = atlas.sample_slices(pr, _lambda_grid(pr, n_lambda))
    branch = None
    if key in _BRANCH_STEPS:
        branch = atlas.follow_branch(pr, [0.0], step0=1e-3,
                                     max_steps=_BRANCH_STEPS[key])
        full = atlas.merge_clouds(cloud, branch)
    else:
        full = cloud

    ctx = {"cls": cls, "deg": deg, "bound": bound, "cloud": cloud,
           "branch": branch}
    checks = _CHECKS[key](pr, ctx)

    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{key}_cloud.csv"
    atlas.export_cloud(full, csv_path)
    _render(full, csv_path, out, title=key)

    lines = [f"reproduce {key}", "=" * (10 + len(key)), ""]
    lines += _classification_lines(cls)
    lines.append(f"window degree = {deg.value}")
    lines.append(f"multiplicity lower bound n = {bound.n}")
    escapes = sum(d.escaped for d in cloud.diagnostics)
    lines.append(f"cloud: {len(full.points)} points "
                 f"({len(cloud.points)} slice-scan), escaped seeds: {escapes}")
    lines.append("")
    lines += [c.line() for c in checks]
    n_pass = sum(c.ok for c in checks)
    lines.append("")
    lines.append(f"result: {'PASS' if n_pass == len(checks) else 'FAIL'} "
                 f"({n_pass}/{len(checks)} checks)")

    report_path = outdir / f"{key}_report.txt"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        out(line)
    out(f"wrote {csv_path}")
    out(f"wrote {report_path}")
    return EXIT_OK if n_pass == len(checks) else EXIT_NUMERIC


# --- entry point ------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ejecta",
        description="Starting-point analysis of T-periodic perturbations "
                    "dx/dt = g(x) + lambda f(t,x) on R and R^2")
    sub = ap.add_subparsers(dest="command", required=True)

    def spec_cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("spec", help="problem file (TOML)")
        return p

    spec_cmd("zeros", "list zeros of g with their indices")
    spec_cmd("classify", "full zero classification table")
    spec_cmd("multiplicity", "multiplicity lower bound for T-periodic solutions")

    p = spec_cmd("sample", "scan lambda slices for starting points; write CSV + PNG")
    p.add_argument("-o", "--output", help="output CSV path")
    p.add_argument("--lambda-grid", type=int, default=21, metavar="N",
                   help="number of lambda slices (default 21)")

    p = spec_cmd("branch", "follow the starting-point branch through (0, p0)")
    p.add_argument("--from", dest="p0", type=float, required=True, metavar="P0",
                   help="initial point p0 (a zero of g)")
    p.add_argument("-o", "--output", help="output CSV path")

    p = sub.add_parser("reproduce", help="run a bundled example end to end")
    p.add_argument("example", help="example id (see 'reproduce list')")
    p.add_argument("-o", "--output", default=".", help="output directory")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = print

    try:
        if args.command == "reproduce":
            if args.example == "list":
                out("bundled examples: " + ", ".join(problem_mod.bundled_ids()))
                return EXIT_OK
            return run_reproduce(args.example, Path(args.output), out)

        pr = _load_problem(args.spec)
        if args.command == "zeros":
            return cmd_zeros(pr, out)
        if args.command == "classify":
            return cmd_classify(pr, out)
        if args.command == "multiplicity":
            return cmd_multiplicity(pr, out)
        stem = Path(args.spec).stem
        if args.command == "sample":
            path = Path(args.output) if args.output else Path(f"{stem}_cloud.csv")
            return cmd_sample(pr, path, args.lambda_grid, out)
        if args.command == "branch":
            path = Path(args.output) if args.output else Path(f"{stem}_branch.csv")
            return cmd_branch(pr, args.p0, path, out)
        raise AssertionError(args.command)
    except ProblemFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EjectaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
