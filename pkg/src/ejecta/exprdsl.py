"""Expression trees for scalar functions of (t, x, y).

User-supplied right-hand sides are parsed into immutable trees that
support exact structural differentiation, so Jacobians and Hessians of
the fields are exact up to rounding rather than finite-differenced.

Grammar (whitespace insignificant)::

    expr    := term (("+"|"-") term)*
    term    := factor (("*"|"/") factor)*
    factor  := ("-")? power
    power   := atom ("^" factor)?
    atom    := number | "pi" | "e" | ident | ident "(" expr ")" | "(" expr ")"
    ident   := "t"|"x"|"y"|"sin"|"cos"|"tan"|"exp"|"log"|"sqrt"

``^`` is right-associative and binds tighter than unary minus.  The
exponent of ``^`` must fold to a constant; everything else would break
closed-form differentiation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

from .errors import (
    EvalError,
    ExprSyntaxError,
    UnboundVariableError,
    UnsupportedError,
)

VAR_NAMES = ("t", "x", "y")
UNARY_OPS = ("neg", "sin", "cos", "tan", "exp", "log", "sqrt")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

_FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "ExprNode"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "ExprNode"
    right: "ExprNode"


ExprNode = Union[Constant, Var, Unary, Binary]


# --- construction with constant folding -------------------------------------

def _fold_unary(op: str, child: ExprNode) -> ExprNode:
    if isinstance(child, Constant):
        try:
            return Constant(_apply_unary(op, child.value))
        except EvalError:
            pass  # keep the node; evaluation will raise with context
    return Unary(op, child)


def _fold_binary(op: str, left: ExprNode, right: ExprNode) -> ExprNode:
    if isinstance(left, Constant) and isinstance(right, Constant):
        try:
            return Constant(_apply_binary(op, left.value, right.value))
        except EvalError:
            pass
    return Binary(op, left, right)


def _apply_unary(op: str, v: float) -> float:
    if op == "neg":
        return -v
    try:
        if op == "log" and v <= 0.0:
            raise EvalError(f"log of non-positive argument {v}")
        if op == "sqrt" and v < 0.0:
            raise EvalError(f"sqrt of negative argument {v}")
        return getattr(math, op)(v)
    except (ValueError, OverflowError) as exc:
        raise EvalError(f"{op}({v}): {exc}") from exc


def _apply_binary(op: str, a: float, b: float) -> float:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0.0:
            raise EvalError("division by zero")
        return a / b
    if op == "pow":
        return _pow(a, b)
    raise AssertionError(op)


def _pow(base: float, expo: float) -> float:
    if base == 0.0 and expo < 0.0:
        raise EvalError("zero raised to a negative power")
    if base < 0.0 and expo != round(expo):
        raise EvalError(f"negative base {base} with non-integer exponent {expo}")
    try:
        r = base ** expo
    except (OverflowError, ZeroDivisionError) as exc:
        raise EvalError(f"pow({base}, {expo}): {exc}") from exc
    return r


# --- tokenizer / parser ------------------------------------------------------

_NUMBER_RE = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


class _Parser:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def _expect(self, ch: str):
        if self._peek() != ch:
            raise ExprSyntaxError(self.pos, repr(ch))
        self.pos += 1

    def parse(self) -> ExprNode:
        node = self.expr()
        self._skip_ws()
        if self.pos != len(self.src):
            raise ExprSyntaxError(self.pos, "end of input")
        return node

    def expr(self) -> ExprNode:
        node = self.term()
        while self._peek() in ("+", "-"):
            op = "add" if self._peek() == "+" else "sub"
            self.pos += 1
            node = _fold_binary(op, node, self.term())
        return node

    def term(self) -> ExprNode:
        node = self.factor()
        while self._peek() in ("*", "/"):
            op = "mul" if self._peek() == "*" else "div"
            self.pos += 1
            node = _fold_binary(op, node, self.factor())
        return node

    def factor(self) -> ExprNode:
        if self._peek() == "-":
            self.pos += 1
            return _fold_unary("neg", self.power())
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        if self._peek() == "^":
            self.pos += 1
            expo = self.factor()
            if not isinstance(expo, Constant):
                raise UnsupportedError(
                    "power exponent must fold to a constant")
            return _fold_binary("pow", base, expo)
        return base

    def atom(self) -> ExprNode:
        ch = self._peek()
        if ch == "":
            raise ExprSyntaxError(self.pos, "number, identifier or '('")
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self._expect(")")
            return node
        m = _NUMBER_RE.match(self.src, self.pos)
        if m:
            self.pos = m.end()
            return Constant(float(m.group(0)))
        m = _IDENT_RE.match(self.src, self.pos)
        if m:
            name = m.group(0)
            self.pos = m.end()
            if name == "pi":
                return Constant(math.pi)
            if name == "e":
                return Constant(math.e)
            if name in _FUNCTIONS:
                self._expect("(")
                node = self.expr()
                self._expect(")")
                return _fold_unary(name, node)
            if name in VAR_NAMES:
                return Var(name)
            raise UnsupportedError(f"unknown identifier {name!r}")
        raise ExprSyntaxError(self.pos, "number, identifier or '('")


def parse(source: str) -> ExprNode:
    """Parse expression text into a tree, folding constant subtrees."""
    return _Parser(source).parse()


# --- evaluation ---------------------------------------------------------------

def evaluate(node: ExprNode, bindings: Mapping[str, float]) -> float:
    """Evaluate a tree under the given variable bindings.

    Domain violations raise EvalError rather than propagating NaN.
    """
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, Var):
        try:
            return float(bindings[node.name])
        except KeyError:
            raise UnboundVariableError(f"variable {node.name!r} is unbound") from None
    if isinstance(node, Unary):
        return _apply_unary(node.op, evaluate(node.child, bindings))
    return _apply_binary(node.op, evaluate(node.left, bindings),
                         evaluate(node.right, bindings))


def variables(node: ExprNode) -> frozenset:
    """Set of variable names occurring in the tree."""
    if isinstance(node, Constant):
        return frozenset()
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Unary):
        return variables(node.child)
    return variables(node.left) | variables(node.right)


# --- structural differentiation -----------------------------------------------

_ZERO = Constant(0.0)
_ONE = Constant(1.0)


def _is_const(node: ExprNode, v: float) -> bool:
    return isinstance(node, Constant) and node.value == v


def _s_add(a: ExprNode, b: ExprNode) -> ExprNode:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return _fold_binary("add", a, b)


def _s_sub(a: ExprNode, b: ExprNode) -> ExprNode:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _fold_unary("neg", b)
    return _fold_binary("sub", a, b)


def _s_mul(a: ExprNode, b: ExprNode) -> ExprNode:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return _fold_binary("mul", a, b)


def _s_div(a: ExprNode, b: ExprNode) -> ExprNode:
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(b, 1.0):
        return a
    return _fold_binary("div", a, b)


def _s_pow(a: ExprNode, c: float) -> ExprNode:
    if c == 0.0:
        return _ONE
    if c == 1.0:
        return a
    return _fold_binary("pow", a, Constant(c))


def differentiate(node: ExprNode, var: str) -> ExprNode:
    """Exact structural derivative with respect to ``var``.

    Simplification is limited to constant folding plus the exact 0/1
    identities needed so that derivatives of expressions free of ``var``
    collapse to ``Constant(0)``.  Second derivatives are obtained by
    composing this function with itself.
    """
    if var not in VAR_NAMES:
        raise UnsupportedError(f"cannot differentiate with respect to {var!r}")
    if isinstance(node, Constant):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.name == var else _ZERO
    if isinstance(node, Unary):
        u, du = node.child, differentiate(node.child, var)
        if node.op == "neg":
            return _s_sub(_ZERO, du)
        if node.op == "sin":
            return _s_mul(_fold_unary("cos", u), du)
        if node.op == "cos":
            return _s_mul(_fold_unary("neg", _fold_unary("sin", u)), du)
        if node.op == "tan":
            return _s_div(du, _s_pow(_fold_unary("cos", u), 2.0))
        if node.op == "exp":
            return _s_mul(_fold_unary("exp", u), du)
        if node.op == "log":
            return _s_div(du, u)
        if node.op == "sqrt":
            return _s_div(du, _s_mul(Constant(2.0), _fold_unary("sqrt", u)))
        raise AssertionError(node.op)
    a, b = node.left, node.right
    da, db = differentiate(a, var), differentiate(b, var)
    if node.op == "add":
        return _s_add(da, db)
    if node.op == "sub":
        return _s_sub(da, db)
    if node.op == "mul":
        return _s_add(_s_mul(da, b), _s_mul(a, db))
    if node.op == "div":
        num = _s_sub(_s_mul(da, b), _s_mul(a, db))
        return _s_div(num, _s_pow(b, 2.0))
    if node.op == "pow":
        c = b.value  # exponent is Constant by construction
        return _s_mul(_s_mul(Constant(c), _s_pow(a, c - 1.0)), da)
    raise AssertionError(node.op)


# --- printing -----------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _precedence(node: ExprNode) -> int:
    if isinstance(node, (Constant, Var)):
        if isinstance(node, Constant) and node.value < 0:
            return _PREC_NEG  # prints with a leading minus
        return _PREC_ATOM
    if isinstance(node, Unary):
        return _PREC_NEG if node.op == "neg" else _PREC_ATOM
    return {"add": _PREC_ADD, "sub": _PREC_ADD,
            "mul": _PREC_MUL, "div": _PREC_MUL,
            "pow": _PREC_POW}[node.op]


def to_source(node: ExprNode) -> str:
    """Render a tree as grammar-valid text that reparses to an
    evaluation-identical tree."""
    if isinstance(node, Constant):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            child = to_source(node.child)
            if _precedence(node.child) < _PREC_POW:
                child = f"({child})"
            return f"-{child}"
        return f"{node.op}({to_source(node.child)})"
    op_sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/", "pow": "^"}[node.op]
    prec = _precedence(node)
    left = to_source(node.left)
    right = to_source(node.right)
    if node.op == "pow":
        # the grammar requires an atom on the left of ^
        if _precedence(node.left) < _PREC_ATOM:
            left = f"({left})"
        # right side is a factor; wrap anything looser than unary minus
        if _precedence(node.right) < _PREC_NEG:
            right = f"({right})"
    else:
        if _precedence(node.left) < prec:
            left = f"({left})"
        if _precedence(node.right) <= prec:
            right = f"({right})"
    return f"{left}{op_sym}{right}"


# --- code generation ----------------------------------------------------------

def python_source(node: ExprNode, names: Mapping[str, str], lib: str = "m") -> str:
    """Emit a Python expression string for the tree.

    ``names`` maps variable names to the symbols used in the generated
    code; ``lib`` is the prefix of the math namespace (``m`` for the
    math module, ``np`` for numpy).  Non-integer powers go through the
    guarded ``_pow`` helper so negative bases fail loudly instead of
    going complex.
    """
    if isinstance(node, Constant):
        return repr(node.value)
    if isinstance(node, Var):
        return names[node.name]
    if isinstance(node, Unary):
        child = python_source(node.child, names, lib)
        if node.op == "neg":
            return f"(-({child}))"
        return f"{lib}.{node.op}({child})"
    left = python_source(node.left, names, lib)
    right = python_source(node.right, names, lib)
    if node.op == "pow":
        c = node.right.value
        if c == round(c) and abs(c) < 64:
            return f"(({left})**{int(c)})"
        return f"_pow(({left}), {right})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[node.op]
    return f"(({left}){sym}({right}))"


_COMPILE_CACHE: dict = {}

#: exceptions a compiled expression may raise on domain violations
DOMAIN_ERRORS = (EvalError, ZeroDivisionError, ValueError, OverflowError)


def compile_scalar(node: ExprNode):
    """Compile a tree to a plain Python function of (t, x, y).

    Matches :func:`evaluate` on valid inputs; domain violations surface
    as one of ``DOMAIN_ERRORS`` rather than NaN.  Used where per-call
    tree walking would be too slow.
    """
    key = ("m", node)
    fn = _COMPILE_CACHE.get(key)
    if fn is None:
        src = python_source(node, {"t": "t", "x": "x", "y": "y"}, "m")
        ns = {"m": math, "_pow": _pow}
        exec(f"def _f(t=0.0, x=0.0, y=0.0):\n    return {src}\n", ns)
        fn = ns["_f"]
        _COMPILE_CACHE[key] = fn
    return fn


def compile_numpy(node: ExprNode):
    """Vectorized twin of :func:`compile_scalar` over numpy arrays.

    Domain violations produce NaN/inf entries (callers mask non-finite
    values); the result always broadcasts to the input shape.
    """
    import numpy as np

    key = ("np", node)
    fn = _COMPILE_CACHE.get(key)
    if fn is None:
        src = python_source(node, {"t": "t", "x": "x", "y": "y"}, "np")
        ns = {"np": np, "_pow": np.power}
        exec(
            "def _f(t=0.0, x=0.0, y=0.0):\n"
            "    with np.errstate(all='ignore'):\n"
            f"        return np.broadcast_to(np.asarray({src}, dtype=float), "
            "np.broadcast(t, x, y).shape).copy()\n",
            ns)
        fn = ns["_f"]
        _COMPILE_CACHE[key] = fn
    return fn


# --- field specification --------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    """The pair of vector fields of the perturbed equation
    dx/dt = g(x) + lambda * f(t, x).

    ``g`` is autonomous (components over x[, y]); ``f`` may depend on t.
    ``separated`` is a user assertion that f(t,x) = phi(t) h(x) with phi
    of minimal period T; it is never inferred.
    """

    dim: int
    g: tuple
    f: tuple
    separated: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise UnsupportedError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.g) != self.dim or len(self.f) != self.dim:
            raise UnsupportedError(
                f"expected {self.dim} components for g and f, got "
                f"{len(self.g)} and {len(self.f)}")
        allowed = {"x"} if self.dim == 1 else {"x", "y"}
        for comp in self.g:
            extra = variables(comp) - allowed
            if extra:
                raise UnsupportedError(
                    f"g must be autonomous in the state variables; found {sorted(extra)}")
        for comp in self.f:
            extra = variables(comp) - allowed - {"t"}
            if extra:
                raise UnsupportedError(
                    f"f may only use t and the state variables; found {sorted(extra)}")


def field_from_sources(dim: int, g: "list[str]", f: "list[str]",
                       separated: bool = False) -> FieldSpec:
    return FieldSpec(dim, tuple(parse(s) for s in g), tuple(parse(s) for s in f),
                     separated)
