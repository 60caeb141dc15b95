"""Metric expression language and the built-in Finsler functions.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := atom ['^' integer] | '-' factor
    atom   := number | var | call | '(' expr ')'
    var    := 'x1' | 'x2' | 'y1' | 'y2'
    call   := 'sqrt' '(' expr ')' | 'dot' '(' vec ',' vec ')' | 'normsq' '(' vec ')'
    vec    := 'x' | 'y'

``#`` starts a comment that runs to the end of the line.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import jets
from .jets import Jet

VARS = ("x1", "x2", "y1", "y2")
VECTORS = {"x": ("x1", "x2"), "y": ("y1", "y2")}


class MetricSyntaxError(ValueError):
    """Parse failure with a 1-based line/column position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, column {col}")
        self.message = message
        self.line = line
        self.col = col


class MetricDomainError(ValueError):
    """Evaluation outside the region where the Finsler function is defined."""


class MetricParamError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: Any
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Pow:
    base: Any
    exponent: int
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: tuple = field(default=(0, 0), compare=False, repr=False)


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise MetricSyntaxError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, col))
        pos = m.end()
    # end-of-input errors point just past the last token, not at trailing blank lines
    if toks:
        last = toks[-1]
        toks.append(_Tok("eof", "", last.line, last.col + len(last.text)))
    else:
        toks.append(_Tok("eof", "", 1, 1))
    return toks


def _has_vars(node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Call):
        return node.func != "sqrt" or _has_vars(node.args[0])
    if isinstance(node, Neg):
        return _has_vars(node.operand)
    if isinstance(node, Pow):
        return _has_vars(node.base)
    return _has_vars(node.left) or _has_vars(node.right)


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        return MetricSyntaxError(message, tok.line, tok.col)

    def advance(self) -> _Tok:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind not in ("op",):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse(self):
        if self.tok.kind == "eof":
            raise self.error("empty expression")
        node = self.expr()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance()
            node = BinOp(op.text, node, self.term(), (op.line, op.col))
        return node

    def term(self):
        node = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance()
            rhs_tok = self.tok
            rhs = self.factor()
            if op.text == "/" and not _has_vars(rhs) and _const_value(rhs) == 0.0:
                raise self.error("division by constant zero", rhs_tok)
            node = BinOp(op.text, node, rhs, (op.line, op.col))
        return node

    def factor(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            op = self.advance()
            return Neg(self.factor(), (op.line, op.col))
        node = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            op = self.advance()
            sign = 1
            if self.tok.kind == "op" and self.tok.text == "-":
                self.advance()
                sign = -1
            if self.tok.kind != "number" or not self.tok.text.isdigit():
                raise self.error("exponent must be an integer")
            n = sign * int(self.advance().text)
            if n < 0 and not _has_vars(node) and _const_value(node) == 0.0:
                raise self.error("negative power of constant zero", op)
            node = Pow(node, n, (op.line, op.col))
        return node

    def atom(self):
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text), (tok.line, tok.col))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.advance()
            if tok.text in VARS:
                return Var(tok.text, (tok.line, tok.col))
            if tok.text in ("sqrt", "dot", "normsq"):
                return self.call(tok)
            raise self.error(f"unknown identifier {tok.text!r}", tok)
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}")

    def vec(self) -> str:
        tok = self.tok
        if tok.kind != "ident" or tok.text not in VECTORS:
            raise self.error("expected vector name 'x' or 'y'")
        self.advance()
        return tok.text

    def call(self, name: _Tok):
        pos = (name.line, name.col)
        self.expect("(")
        if name.text == "sqrt":
            arg_tok = self.tok
            arg = self.expr()
            self.expect(")")
            if not _has_vars(arg) and _const_value(arg) <= 0.0:
                raise self.error("square root of non-positive constant", arg_tok)
            return Call("sqrt", (arg,), pos)
        if name.text == "dot":
            a = self.vec()
            self.expect(",")
            b = self.vec()
            self.expect(")")
            return Call("dot", (a, b), pos)
        a = self.vec()
        self.expect(")")
        return Call("normsq", (a,), pos)


def _const_value(node) -> float:
    """Value of a variable-free subtree."""
    tape = _Tape(node)
    try:
        with np.errstate(all="ignore"):
            return float(tape.run((0.0, 0.0, 0.0, 0.0), float_sqrt=np.sqrt))
    except ZeroDivisionError:
        return math.nan


# ---------------------------------------------------------------------------
# Printing

def _wrap(node) -> str:
    s = to_source(node)
    return s if isinstance(node, (Num, Var, Call)) else f"({s})"


def to_source(node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand)
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Pow):
        return f"{_wrap(node.base)}^{node.exponent}"
    if isinstance(node, Call):
        if node.func == "sqrt":
            return f"sqrt({to_source(node.args[0])})"
        return f"{node.func}({', '.join(node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation tape (common subexpressions shared)

class _Tape:
    def __init__(self, root):
        self.ops: list[tuple] = []
        self._slots: dict[tuple, int] = {}
        self.out = self._emit(root)

    def _slot(self, key: tuple) -> int:
        hit = self._slots.get(key)
        if hit is None:
            hit = self._slots[key] = len(self.ops)
            self.ops.append(key)
        return hit

    def _emit(self, node) -> int:
        if isinstance(node, Num):
            return self._slot(("num", float(node.value)))
        if isinstance(node, Var):
            return self._slot(("var", VARS.index(node.name)))
        if isinstance(node, Neg):
            return self._slot(("neg", self._emit(node.operand)))
        if isinstance(node, BinOp):
            return self._slot((node.op, self._emit(node.left), self._emit(node.right)))
        if isinstance(node, Pow):
            return self._slot(("pow", self._emit(node.base), node.exponent))
        if node.func == "sqrt":
            return self._slot(("sqrt", self._emit(node.args[0])))
        if node.func == "dot":
            a, b = (VECTORS[v] for v in node.args)
        else:
            a = b = VECTORS[node.args[0]]
        p = [self._slot(("*", self._emit(Var(u)), self._emit(Var(v)))) for u, v in zip(a, b)]
        return self._slot(("+", p[0], p[1]))

    def run(self, args, float_sqrt=None):
        vals: list = []
        for op in self.ops:
            kind = op[0]
            if kind == "num":
                v = op[1]
            elif kind == "var":
                v = args[op[1]]
            elif kind == "neg":
                v = -vals[op[1]]
            elif kind == "+":
                v = vals[op[1]] + vals[op[2]]
            elif kind == "-":
                v = vals[op[1]] - vals[op[2]]
            elif kind == "*":
                v = vals[op[1]] * vals[op[2]]
            elif kind == "/":
                v = vals[op[1]] / vals[op[2]]
            elif kind == "pow":
                b, n = vals[op[1]], op[2]
                v = b**n if isinstance(b, Jet) else np.power(np.asarray(b, dtype=float), n)
            else:
                a = vals[op[1]]
                if isinstance(a, Jet):
                    v = a.sqrt()
                elif float_sqrt is not None:
                    v = float_sqrt(a)
                else:
                    if np.any(~(np.asarray(a) > 0.0)):
                        raise MetricDomainError("square root of a non-positive value")
                    v = np.sqrt(a)
            vals.append(v)
        return vals[self.out]


class MetricExpr:
    """Parsed metric expression with a compiled evaluation tape."""

    def __init__(self, ast, source: str | None = None):
        self.ast = ast
        self.source = source if source is not None else to_source(ast)
        self._tape = _Tape(ast)

    def __call__(self, x1, x2, y1, y2):
        return self._tape.run((x1, x2, y1, y2))

    def to_source(self) -> str:
        return to_source(self.ast)

    def __eq__(self, other):
        return isinstance(other, MetricExpr) and self.ast == other.ast

    def __hash__(self):
        return hash(self.ast)

    def __repr__(self):
        return f"MetricExpr({self.source!r})"


def parse_metric(source: str) -> MetricExpr:
    return MetricExpr(_Parser(source).parse(), source)


def load_metric_file(path) -> MetricExpr:
    return parse_metric(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Models

@dataclass(frozen=True)
class Domain:
    """Open disk of the given radius about the origin (``inf`` for the plane)."""

    radius: float = math.inf
    description: str = "plane"

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.hypot(x[0], x[1]) < self.radius

    def sample(self, rng: np.random.Generator, n: int, margin: float = 0.9) -> np.ndarray:
        """``n`` points, uniform in the disk of radius ``margin * radius`` (radius 1 for the plane)."""
        r = margin * (self.radius if math.isfinite(self.radius) else 1.0)
        rho = r * np.sqrt(rng.uniform(size=n))
        phi = rng.uniform(0, 2 * np.pi, size=n)
        return np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=1)


PLANE = Domain()


@dataclass(frozen=True, eq=False)
class MetricModel:
    expr: MetricExpr
    name: str = "custom"
    domain: Domain = PLANE
    params: dict = field(default_factory=dict)
    flag_curvature: float | None = None
    projectively_flat: bool = False
    riemannian: bool = False

    def check_domain(self, x) -> None:
        x = np.asarray(x, dtype=float)
        inside = self.domain.contains(x)
        if not np.all(inside):
            bad = x.reshape(2, -1)[:, ~np.ravel(inside)][:, 0]
            raise MetricDomainError(
                f"point x=({bad[0]:.6g}, {bad[1]:.6g}) outside the {self.domain.description} "
                f"domain of metric {self.name!r}"
            )

    def F(self, x, y):
        """Finsler function at ``x`` (shape ``(2, ...)``) and ``y`` (same)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.check_domain(x)
        return self.expr(x[0], x[1], y[0], y[1])

    def F_jet(self, x, y, order: int) -> Jet:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.check_domain(x)
        x, y = np.broadcast_arrays(x, y)
        return jets.lift(self.expr, np.concatenate([x, y]), order)

    def F2_jet(self, x, y, order: int) -> Jet:
        f = self.F_jet(x, y, order)
        return f * f

    def describe(self) -> dict:
        return {
            "name": self.name,
            "expression": self.expr.source,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()},
            "domain": self.domain.description,
        }


def _num(v: float) -> str:
    v = float(v)
    return repr(v) if v >= 0 else f"(-{repr(-v)})"


FUNK = "(sqrt(normsq(y) - (normsq(x)*normsq(y) - dot(x,y)^2)) + dot(x,y)) / (1 - normsq(x))"
KLEIN = "sqrt(normsq(y) - (normsq(x)*normsq(y) - dot(x,y)^2)) / (1 - normsq(x))"
SPHERE = "2*sqrt(normsq(y)) / (1 + normsq(x))"
# Chart radius for the stereographic sphere models; keeps away from the pole.
SPHERE_CHART_RADIUS = 4.0

BUILTINS = (
    "euclidean", "klein", "sphere", "funk", "projective_randers", "shen_disk", "shen_sphere",
)


def _shen(eps: float, hvy: str, hvv: str, hyy: str) -> str:
    e, e2 = _num(eps), _num(eps * eps)
    lam = f"(1 - {e2}*{hvv})"
    return f"(sqrt({e2}*({hvy})^2 + {hyy}*{lam}) + {e}*{hvy}) / {lam}"


def builtin_metric(name: str, params: dict | None = None) -> MetricModel:
    """Construct one of the built-in Finsler functions.

    ``projective_randers`` takes ``a`` (2-vector, ``|a| < 1``); the Shen
    navigation metrics take ``eps`` (``|eps| < 1``).
    """
    params = dict(params or {})
    key = name.replace("-", "_").lower()
    unit = Domain(1.0, "unit disk")
    if key == "euclidean":
        return MetricModel(parse_metric("sqrt(normsq(y))"), key, PLANE, {}, 0.0, True, True)
    if key == "klein":
        return MetricModel(parse_metric(KLEIN), key, unit, {}, -1.0, True, True)
    if key == "sphere":
        dom = Domain(SPHERE_CHART_RADIUS, f"stereographic chart |x| < {SPHERE_CHART_RADIUS:g}")
        return MetricModel(parse_metric(SPHERE), key, dom, {}, 1.0, False, True)
    if key == "funk":
        return MetricModel(parse_metric(FUNK), key, unit, {}, -0.25, True, False)
    if key == "projective_randers":
        a = tuple(float(v) for v in params.get("a", (0.0, 0.0)))
        if len(a) != 2 or not math.hypot(*a) < 1.0:
            raise MetricParamError(f"projective_randers needs a 2-vector a with |a| < 1, got {a}")
        # beta_sign=+1 is the constant-curvature (-1/4) family; -1 flips the sign of
        # <a, x> in the denominator, which keeps projective flatness but makes the
        # flag curvature vary with x.
        sign = int(params.get("beta_sign", 1))
        if sign not in (1, -1):
            raise MetricParamError(f"beta_sign must be +1 or -1, got {sign}")
        op = "+" if sign > 0 else "-"
        extra = f"({_num(a[0])}*y1 + {_num(a[1])}*y2) / (1 {op} ({_num(a[0])}*x1 + {_num(a[1])}*x2))"
        return MetricModel(
            parse_metric(f"{FUNK} + {extra}"), key, unit, {"a": a, "beta_sign": sign},
            -0.25 if sign > 0 else None, True, False,
        )
    if key in ("shen_disk", "shen_sphere"):
        eps = float(params.get("eps", 0.1))
        if not abs(eps) < 1.0:
            raise MetricParamError(f"{key} needs |eps| < 1, got {eps}")
        if key == "shen_disk":
            q = "(1 - normsq(x))"
            src = _shen(
                eps,
                hvy=f"(x1*y2 - x2*y1)/{q}",
                hvv=f"normsq(x)/{q}",
                hyy=f"(normsq(y)*{q} + dot(x,y)^2)/{q}^2",
            )
            # 1 - eps^2 h(v, v) > 0  <=>  |x|^2 < 1 / (1 + eps^2)
            r = 1.0 / math.sqrt(1.0 + eps * eps)
            dom = Domain(r, f"disk |x| < {r:.6g}")
            return MetricModel(parse_metric(src), key, dom, {"eps": eps}, -1.0, False, False)
        c = "(1 + normsq(x))"
        src = _shen(
            eps,
            hvy=f"4*(x1*y2 - x2*y1)/{c}^2",
            hvv=f"4*normsq(x)/{c}^2",
            hyy=f"4*normsq(y)/{c}^2",
        )
        dom = Domain(SPHERE_CHART_RADIUS, f"stereographic chart |x| < {SPHERE_CHART_RADIUS:g}")
        return MetricModel(parse_metric(src), key, dom, {"eps": eps}, 1.0, False, False)
    raise MetricParamError(f"unknown built-in metric {name!r}; choose from {', '.join(BUILTINS)}")


def custom_metric(expr: MetricExpr | str, name: str = "custom", domain: Domain = PLANE) -> MetricModel:
    if isinstance(expr, str):
        expr = parse_metric(expr)
    return MetricModel(expr, name, domain)


# ---------------------------------------------------------------------------
# Validation

@dataclass
class SampleCheck:
    x: list
    y: list
    F: float
    homogeneity_residual: float
    min_eigenvalue: float
    ok: bool
    error: str | None = None


@dataclass
class ValidationReport:
    metric: str
    samples: list
    passed: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "failures": sum(not s.ok for s in self.samples),
            "max_homogeneity_residual": max(
                (s.homogeneity_residual for s in self.samples if math.isfinite(s.homogeneity_residual)),
                default=math.nan,
            ),
            "min_eigenvalue": min(
                (s.min_eigenvalue for s in self.samples if math.isfinite(s.min_eigenvalue)), default=math.nan
            ),
            "samples": [vars(s) for s in self.samples],
        }


def fundamental_tensor(model: MetricModel, x, y) -> np.ndarray:
    """``g_ij = 1/2 d^2 F^2 / dy^i dy^j`` as a ``(2, 2) + batch`` array."""
    f2 = model.F2_jet(x, y, 2)
    g = np.empty((2, 2) + f2.batch_shape)
    for i in range(2):
        for j in range(2):
            alpha = [0, 0, 0, 0]
            alpha[2 + i] += 1
            alpha[2 + j] += 1
            g[i, j] = 0.5 * f2.partial(alpha)
    return g


def validate_finsler(model: MetricModel, samples: int = 200, seed: int = 0, tol: float = 1e-10) -> ValidationReport:
    """Sample-based check of positivity, 1-homogeneity and convexity."""
    if samples <= 0:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    xs = model.domain.sample(rng, samples)
    phis = rng.uniform(0, 2 * np.pi, size=samples)
    scales = rng.uniform(0.2, 3.0, size=samples)
    out = []
    for x, phi, s in zip(xs, phis, scales):
        y = s * np.array([np.cos(phi), np.sin(phi)])
        try:
            with np.errstate(all="raise"):
                f = float(model.F(x, y))
                res = 0.0
                for lam in (0.5, 2.0, 7.0):
                    fl = float(model.F(x, lam * y))
                    res = max(res, abs(fl - lam * f) / max(abs(lam * f), 1e-300))
                eig = float(np.linalg.eigvalsh(fundamental_tensor(model, x, y)).min()) if f > 0 else math.nan
            ok = f > 0 and res < tol and eig > 0
            out.append(SampleCheck(x.tolist(), y.tolist(), f, res, eig, bool(ok)))
        except (ArithmeticError, ValueError) as exc:
            out.append(SampleCheck(x.tolist(), y.tolist(), math.nan, math.nan, math.nan, False, str(exc)))
    return ValidationReport(model.name, out, all(s.ok for s in out), tol)
