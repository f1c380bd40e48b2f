"""Problem files: a sectioned key = value format (TOML subset) holding
the equation, the analysis window, and numeric tolerances, plus the
bundled example problems."""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ProblemFormatError, UnsupportedError
from .exprdsl import ExprSyntaxError, FieldSpec, field_from_sources


@dataclass(frozen=True)
class ProblemSpec:
    field: FieldSpec
    period: float
    lambda_window: tuple
    p_windows: tuple  # one (lo, hi) pair per state coordinate
    rk_tol: float = 1e-10
    grid: int = 400
    resonance_eps: float = 1e-8
    source: str = ""

    def digest(self) -> str:
        key = repr((self.field, self.period, self.lambda_window, self.p_windows,
                    self.rk_tol, self.grid, self.resonance_eps))
        return hashlib.sha256(key.encode()).hexdigest()[:16]


_PI_RE = re.compile(r"\s*([-+]?[0-9.]*(?:[eE][-+]?\d+)?)\s*\*?\s*pi\s*$")


def parse_period(value) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_RE.fullmatch(value)
        if m:
            coef = m.group(1)
            return (float(coef) if coef not in ("", "+", "-")
                    else (-1.0 if coef == "-" else 1.0)) * math.pi
        try:
            return float(value)
        except ValueError:
            pass
    raise ProblemFormatError(
        f"cannot parse period {value!r}; use a number or '<coef>pi'")


def _interval(raw, what: str) -> tuple:
    if (not isinstance(raw, list) or len(raw) != 2
            or not all(isinstance(v, (int, float)) for v in raw)):
        raise ProblemFormatError(f"{what} must be a two-number array [lo, hi]")
    lo, hi = float(raw[0]), float(raw[1])
    if not lo < hi:
        raise ProblemFormatError(f"{what} bounds must satisfy lo < hi, got {raw}")
    return lo, hi


def parse_problem(text: str, name: str = "<problem>") -> ProblemSpec:
    """Parse problem text; raises ProblemFormatError with a position or
    key reference on malformed input."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ProblemFormatError(f"{name}: {exc}") from exc

    try:
        prob = data["problem"]
        window = data["window"]
    except KeyError as exc:
        raise ProblemFormatError(f"{name}: missing section [{exc.args[0]}]") from exc
    numerics = data.get("numerics", {})

    def need(section, table, key, types):
        if key not in table:
            raise ProblemFormatError(f"{name}: missing key {key!r} in [{section}]")
        v = table[key]
        if not isinstance(v, types):
            raise ProblemFormatError(f"{name}: bad type for {key!r} in [{section}]")
        return v

    dim = need("problem", prob, "dim", int)
    if dim not in (1, 2):
        raise ProblemFormatError(f"{name}: dim must be 1 or 2, got {dim}")
    period = parse_period(need("problem", prob, "period", (int, float, str)))
    if period <= 0:
        raise ProblemFormatError(f"{name}: period must be positive")

    def components(key):
        v = need("problem", prob, key, (str, list))
        comps = [v] if isinstance(v, str) else list(v)
        if len(comps) != dim or not all(isinstance(c, str) for c in comps):
            raise ProblemFormatError(
                f"{name}: {key} must give {dim} expression string(s)")
        return comps

    g_sources = components("g")
    f_sources = components("f")
    separated = prob.get("separated", False)
    if not isinstance(separated, bool):
        raise ProblemFormatError(f"{name}: separated must be a boolean")

    try:
        field = field_from_sources(dim, g_sources, f_sources, separated)
    except (ExprSyntaxError, UnsupportedError) as exc:
        raise ProblemFormatError(f"{name}: {exc}") from exc

    lam = _interval(need("window", window, "lambda", list), "window.lambda")
    if dim == 1:
        p_windows = (_interval(need("window", window, "p", list), "window.p"),)
    else:
        p_windows = (_interval(need("window", window, "x", list), "window.x"),
                     _interval(need("window", window, "y", list), "window.y"))

    rk_tol = float(numerics.get("rk_tol", 1e-10))
    grid = numerics.get("grid", 400)
    resonance_eps = float(numerics.get("resonance_eps", 1e-8))
    if not isinstance(grid, int) or grid < 8:
        raise ProblemFormatError(f"{name}: numerics.grid must be an integer >= 8")
    if rk_tol <= 0 or resonance_eps <= 0:
        raise ProblemFormatError(f"{name}: tolerances must be positive")

    return ProblemSpec(field, period, lam, p_windows, rk_tol, grid,
                       resonance_eps, text)


def load_problem(path) -> ProblemSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_problem(fh.read(), str(path))


# --- bundled examples ----------------------------------------------------------------

BUNDLED = {
    "exNTse": """\
[problem]
dim = 1
period = "2pi"
g = "(x + x^2) / (1 + x^2)"
f = "sin(t)"
separated = true

[window]
lambda = [-0.3, 0.3]
p = [-2.0, 1.0]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "exsimp": """\
[problem]
dim = 1
period = "2pi"
g = "x / (1 + x^2)"
f = "1 + cos(x + t)"
separated = false

[window]
lambda = [-0.3, 0.3]
p = [-2.0, 2.0]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "extang": """\
[problem]
dim = 1
period = "2pi"
g = "x^3 / (1 + x^2)"
f = "1 + sin(t)"
separated = true

[window]
lambda = [0.0, 0.5]
p = [-1.0, 1.0]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "exnasty": """\
[problem]
dim = 1
period = "2pi"
g = "(x^3 + x^2) / (1 + x^2)"
f = "sin(t + x)"
separated = false

[window]
lambda = [-0.5, 0.5]
p = [-2.0, 1.0]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "ex2tang": """\
[problem]
dim = 1
period = "2pi"
g = "x^3 * (1 + x)^2 * (x - 1)^2 / (1 + x^6)"
f = "sin(t) + 1"
separated = true

[window]
lambda = [-0.2, 0.2]
p = [-2.0, 2.0]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "remnoso_agree": """\
[problem]
dim = 1
period = "2pi"
g = "(x^3 + x^2) / (1 + x^2)"
f = "sin(t) + 1"
separated = true

[window]
lambda = [-0.1, 0.1]
p = [-0.6, 0.6]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "remnoso_disagree": """\
[problem]
dim = 1
period = "2pi"
g = "(x^3 + x^2) / (1 + x^2)"
f = "sin(t) - 1"
separated = true

[window]
lambda = [-0.1, 0.1]
p = [-0.6, 0.6]

[numerics]
rk_tol = 1e-9
grid = 200
""",
    "ex3d": """\
[problem]
dim = 2
period = "2pi"
g = ["x^3", "y + x^2"]
f = ["sin(t) + 1", "sin(t) + 1"]
separated = true

[window]
lambda = [0.0, 0.12]
x = [-1.0, 1.0]
y = [-1.0, 1.0]

[numerics]
rk_tol = 1e-9
grid = 12
""",
}


def bundled_ids():
    return sorted(BUNDLED)


def bundled_problem(example_id: str) -> ProblemSpec:
    key = example_id.replace("-", "_")
    if key not in BUNDLED:
        raise KeyError(example_id)
    return parse_problem(BUNDLED[key], key)
