"""
Expressions for the nonlinearity ``f(t, x)`` and the coefficient ``a(x)``.

Grammar (EBNF), lowest precedence first::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("-" | "+") , unary | power ;
    power   = primary , [ "^" , unary ] ;            (* right associative *)
    primary = number | "t" | coord | "pi"
            | func , "(" , expr , ")"
            | "(" , expr , ")" ;
    func    = "abs" | "sign" | "sin" | "cos" | "exp" ;
    coord   = "x" , digit , { digit } ;              (* x1 .. xn, 1-based *)
    number  = digits , [ "." , digits ] , [ ("e" | "E") , [ "+" | "-" ] , digits ] ;

A power whose exponent is not an integer literal needs a base that is
nonnegative by construction (``abs(...)``, ``exp(...)``, a nonnegative
literal, an even integer power, or products/quotients/sums of those).
``abs(t)^0.5`` parses, ``t^0.5`` does not.

Evaluation is vectorized over numpy arrays. Division by zero, negative bases
under non-integer powers, ``0`` to a negative power, and overflow raise
`DomainError` instead of leaking ``nan``/``inf``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Num", "Var", "Coord", "Unary", "Binary", "Node",
    "ExprError", "ExprSyntaxError", "DomainError",
    "parse", "to_source", "evaluate", "eval_scalar", "max_coord_index",
    "depends_on_x", "Nonlinearity", "ConditionReport",
    "check_p1", "check_growth", "check_p4",
    "default_t_samples", "default_x_samples", "default_t_grid",
]

FUNCTIONS = ("abs", "sign", "sin", "cos", "exp")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed source. ``offset`` is a 0-based UTF-8 byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DomainError(ExprError, ArithmeticError):
    def __init__(self, message: str, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    """The unknown ``t``."""


@dataclass(frozen=True)
class Coord:
    index: int  # 1-based


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # add, sub, mul, div, pow
    left: "Node"
    right: "Node"


Node = Union[Num, Var, Coord, Unary, Binary]

_BINOPS = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}
_SYMBOL = {v: k for k, v in _BINOPS.items()}


# --------------------------------------------------------------------------
# tokenizer / parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int  # byte offset


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, text, byte_pos))
        pos = m.end()
        byte_pos += len(text.encode("utf-8"))
    toks.append(_Tok("eof", "", byte_pos))
    return toks


def _is_integer_literal(node: Node) -> bool:
    if isinstance(node, Unary) and node.op == "neg":
        node = node.arg
    return isinstance(node, Num) and float(node.value).is_integer()


def _is_nonnegative(node: Node) -> bool:
    if isinstance(node, Num):
        return node.value >= 0
    if isinstance(node, Unary):
        return node.op in ("abs", "exp")
    if isinstance(node, Binary):
        if node.op == "pow":
            if _is_nonnegative(node.left):
                return True
            e = node.right
            return isinstance(e, Num) and e.value.is_integer() and int(e.value) % 2 == 0
        if node.op in ("add", "mul", "div"):
            return _is_nonnegative(node.left) and _is_nonnegative(node.right)
    return False


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self.tok.offset)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = _BINOPS[self.advance().text]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = _BINOPS[self.advance().text]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        if self.tok.text == "-":
            self.advance()
            nxt = self.toks[self.i + 1]
            # fold "-<literal>" unless the literal is itself a power base
            if self.tok.kind == "num" and nxt.text != "^":
                return Num(-float(self.advance().text))
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.text == "^":
            caret = self.advance()
            exponent = self.unary()
            if not _is_integer_literal(exponent) and not _is_nonnegative(base):
                raise ExprSyntaxError(
                    "non-integer exponent needs a nonnegative base such as abs(...)",
                    caret.offset,
                )
            return Binary("pow", base, exponent)
        return base

    def primary(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            name = tok.text
            if name == "t":
                return Var()
            if name == "pi":
                return Num(math.pi)
            if re.fullmatch(r"x[1-9]\d*", name):
                return Coord(int(name[1:]))
            if name in FUNCTIONS:
                if self.tok.text != "(":
                    raise ExprSyntaxError(f"function {name!r} needs an argument list", self.tok.offset)
                self.advance()
                if self.tok.text == ")":
                    raise ExprSyntaxError(f"{name} takes exactly 1 argument, got 0", self.tok.offset)
                arg = self.expr()
                if self.tok.text == ",":
                    raise ExprSyntaxError(f"{name} takes exactly 1 argument", self.tok.offset)
                self.expect(")")
                return Unary(name, arg)
            raise ExprSyntaxError(f"unknown identifier {name!r}", tok.offset)
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ExprSyntaxError(f"expected an operand, found {found}", tok.offset)


def parse(source: str) -> Node:
    """Parse ``source`` into an expression tree."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source).parse()


def to_source(node: Node) -> str:
    """Print a tree in a fully parenthesized form that `parse` maps back to it."""
    if isinstance(node, Num):
        if not math.isfinite(node.value):
            raise ExprError("cannot print a non-finite literal")
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 or text.startswith("-") else text
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Coord):
        return f"x{node.index}"
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-({to_source(node.arg)}))"
        return f"{node.op}({to_source(node.arg)})"
    if isinstance(node, Binary):
        return f"({to_source(node.left)} {_SYMBOL[node.op]} {to_source(node.right)})"
    raise TypeError(f"not an expression node: {node!r}")


def max_coord_index(node: Node) -> int:
    if isinstance(node, Coord):
        return node.index
    if isinstance(node, Unary):
        return max_coord_index(node.arg)
    if isinstance(node, Binary):
        return max(max_coord_index(node.left), max_coord_index(node.right))
    return 0


def depends_on_x(node: Node) -> bool:
    return max_coord_index(node) > 0


def depends_on_t(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Unary):
        return depends_on_t(node.arg)
    if isinstance(node, Binary):
        return depends_on_t(node.left) or depends_on_t(node.right)
    return False


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

_UFUNCS = {"abs": np.abs, "sign": np.sign, "sin": np.sin, "cos": np.cos, "exp": np.exp}


def _raise_domain(message, mask, t, x):
    arrays = [np.asarray(mask), np.asarray(t, dtype=float)] + [np.asarray(c, dtype=float) for c in (x or [])]
    shape = np.broadcast_shapes(*[a.shape for a in arrays])
    mask, tb, *xb = (np.broadcast_to(a, shape).ravel() for a in arrays)
    idx = np.flatnonzero(mask)
    i = int(idx[0]) if idx.size else 0
    ti = float(tb[i])
    xi = [float(c[i]) for c in xb] if xb else None
    raise DomainError(f"{message} at t={ti!r}, x={xi}", t=ti, x=xi)


def _eval(node, t, x):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return t
    if isinstance(node, Coord):
        if x is None or node.index > len(x):
            raise ExprError(f"coordinate x{node.index} is not bound (have {0 if x is None else len(x)})")
        return x[node.index - 1]
    if isinstance(node, Unary):
        v = _eval(node.arg, t, x)
        if node.op == "neg":
            return -v
        out = _UFUNCS[node.op](v)
        if node.op == "exp" and not np.all(np.isfinite(out)):
            _raise_domain("exp overflow", ~np.isfinite(out), t, x)
        return out
    l = _eval(node.left, t, x)
    r = _eval(node.right, t, x)
    op = node.op
    if op == "add":
        return l + r
    if op == "sub":
        return l - r
    if op == "mul":
        return l * r
    if op == "div":
        zero = np.equal(r, 0)
        if np.any(zero):
            _raise_domain("division by zero", np.broadcast_to(zero, np.broadcast(l, r).shape), t, x)
        return np.divide(l, r)
    # pow
    la, ra = np.asarray(l, dtype=float), np.asarray(r, dtype=float)
    bad = ((la < 0) & (ra != np.floor(ra))) | ((la == 0) & (ra < 0))
    if np.any(bad):
        _raise_domain("power domain violation", np.broadcast_to(bad, np.broadcast(la, ra).shape), t, x)
    with np.errstate(over="ignore"):
        out = np.power(la, ra)
    if not np.all(np.isfinite(out)):
        _raise_domain("power overflow", ~np.isfinite(out), t, x)
    return out


def evaluate(node: Node, t, x=None) -> np.ndarray:
    """Evaluate ``node`` elementwise.

    Parameters
    ----------
    node : Node
        Parsed expression.
    t : array_like
        Values of the unknown.
    x : sequence of array_like, optional
        Coordinate arrays ``(x1, ..., xn)``, each broadcastable against ``t``.
    """
    t = np.asarray(t, dtype=float)
    if x is not None:
        x = [np.asarray(c, dtype=float) for c in x]
    with np.errstate(all="ignore"):
        out = _eval(node, t, x)
    shape = np.broadcast_shapes(t.shape, *[c.shape for c in (x or [])])
    out = np.broadcast_to(np.asarray(out, dtype=float), shape)
    if not np.all(np.isfinite(out)):
        _raise_domain("non-finite value", ~np.isfinite(out), t, x)
    return out


def eval_scalar(node: Node, t: float, x: Sequence[float] = ()) -> float:
    return float(evaluate(node, t, list(x)))


# --------------------------------------------------------------------------
# nonlinearity and condition audits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """A parsed ``f(t, x)`` plus its declared growth envelope.

    ``rho`` is either a positive float (subcritical, ``|f| <= b(1 + |t|^rho)``)
    or the string ``"critical"`` (``|f| <= b + c|t|^(p*-1)``).
    """

    ast: Node
    rho: float | str = 1.0
    b: float = 1.0
    c: float = 0.0
    source: str = ""

    def __post_init__(self):
        if isinstance(self.rho, str):
            if self.rho != "critical":
                raise ValueError(f"rho must be a positive number or 'critical', got {self.rho!r}")
        elif not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if self.c < 0:
            raise ValueError(f"c must be nonnegative, got {self.c}")
        if not self.source:
            object.__setattr__(self, "source", to_source(self.ast))

    @classmethod
    def from_source(cls, source: str, rho: float | str = 1.0, b: float = 1.0, c: float = 0.0):
        return cls(parse(source), rho, b, c, source)

    @property
    def is_critical(self) -> bool:
        return self.rho == "critical"

    @property
    def depends_on_x(self) -> bool:
        return depends_on_x(self.ast)

    def growth_exponent(self, p_star: float | None = None) -> float:
        if self.is_critical:
            if p_star is None:
                raise ValueError("critical growth needs p_star")
            return p_star - 1.0
        return float(self.rho)

    def __call__(self, t, x=None) -> np.ndarray:
        return evaluate(self.ast, t, x)


@dataclass
class ConditionReport:
    condition: str
    verdict: bool
    samples: dict
    worst_case: dict
    tolerances: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": bool(self.verdict),
            "samples": self.samples,
            "worst_case": self.worst_case,
            "tolerances": self.tolerances,
            "details": self.details,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def default_t_samples(t_max: float = 4.0, count: int = 41) -> np.ndarray:
    return np.linspace(-t_max, t_max, count)


def default_x_samples(dim: int, per_axis: int = 3, lengths: Sequence[float] | None = None) -> np.ndarray:
    """Interior lattice of ``per_axis**dim`` points, shape ``(count, dim)``."""
    lengths = [1.0] * dim if lengths is None else list(lengths)
    axes = [(np.arange(per_axis) + 0.5) / per_axis * L for L in lengths]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def default_t_grid(t_max: float = 1.0, t_min: float = 1e-8, count: int = 17) -> np.ndarray:
    return np.logspace(np.log10(t_max), np.log10(t_min), count)


def _table(f: Nonlinearity, t_samples, x_samples):
    """``f`` on the product grid, shape ``(len(t), len(x))``."""
    t = np.asarray(t_samples, dtype=float)
    xs = np.atleast_2d(np.asarray(x_samples, dtype=float))
    coords = [xs[:, k][None, :] for k in range(xs.shape[1])]
    return evaluate(f.ast, t[:, None], coords)


def _locate_domain_error(f, t_samples, x_samples):
    for t in t_samples:
        for x in np.atleast_2d(x_samples):
            try:
                eval_scalar(f.ast, t, x)
            except DomainError as exc:
                return {"t": float(t), "x": [float(v) for v in x], "value": None, "error": str(exc)}
    return {"t": None, "x": None, "value": None}


def _sample_box(t_samples, x_samples) -> dict:
    xs = np.atleast_2d(x_samples)
    return {
        "t_min": float(np.min(t_samples)),
        "t_max": float(np.max(t_samples)),
        "t_count": int(len(t_samples)),
        "x_count": int(xs.shape[0]),
    }


def check_p1(
    f: Nonlinearity,
    t_samples,
    x_samples,
    tol_abs: float = 1e-12,
    tol_rel: float = 1e-10,
) -> ConditionReport:
    """Audit oddness and strict monotonicity in ``t`` on a sample box."""
    t = np.asarray(t_samples, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("t_samples must be a strictly increasing 1-d array")
    if not np.allclose(t, -t[::-1], rtol=0, atol=1e-14 * max(1.0, np.max(np.abs(t)))):
        raise ValueError("t_samples must be symmetric about 0")
    tolerances = {"odd_abs": tol_abs, "odd_rel": tol_rel}
    box = _sample_box(t, x_samples)
    try:
        vals = _table(f, t, x_samples)
    except DomainError as exc:
        return ConditionReport(
            "p1", False, box, _locate_domain_error(f, t, x_samples), tolerances,
            {"failure": "domain error", "message": str(exc)},
        )
    xs = np.atleast_2d(x_samples)
    mirrored = vals[::-1]
    defect = np.abs(vals + mirrored)
    allowed = tol_abs + tol_rel * np.maximum(np.abs(vals), np.abs(mirrored))
    odd_ok = defect <= allowed
    steps = np.diff(vals, axis=0)
    mono_ok = steps > 0
    details = {
        "max_odd_defect": float(defect.max()),
        "min_increment": float(steps.min()),
    }
    if not odd_ok.all():
        i, j = np.unravel_index(np.argmax(defect - allowed), defect.shape)
        # report the positive member of the symmetric pair
        i = max(i, t.size - 1 - i)
        worst = {"t": float(t[i]), "x": xs[j].tolist(), "value": float(vals[i, j] + mirrored[i, j])}
        details["failure"] = "oddness"
        return ConditionReport("p1", False, box, worst, tolerances, details)
    if not mono_ok.all():
        i, j = np.unravel_index(np.argmin(steps), steps.shape)
        worst = {"t": float(t[i + 1]), "x": xs[j].tolist(), "value": float(steps[i, j])}
        details["failure"] = "monotonicity"
        return ConditionReport("p1", False, box, worst, tolerances, details)
    i, j = np.unravel_index(np.argmin(steps), steps.shape)
    worst = {"t": float(t[i + 1]), "x": xs[j].tolist(), "value": float(steps[i, j])}
    return ConditionReport("p1", True, box, worst, tolerances, details)


def check_growth(
    f: Nonlinearity,
    t_samples,
    x_samples,
    *,
    b: float,
    rho: float | None = None,
    c: float | None = None,
    p_star: float | None = None,
    tol: float = 1e-12,
) -> ConditionReport:
    """Audit a growth envelope on a sample box.

    With ``rho`` the envelope is ``b (1 + |t|^rho)``; with ``c`` and ``p_star``
    it is ``b + c |t|^(p_star - 1)``. The report carries the largest ratio of
    ``|f|`` to the envelope.
    """
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    t = np.asarray(t_samples, dtype=float)
    if rho is not None:
        if not rho > 0:
            raise ValueError(f"rho must be positive, got {rho}")
        condition = "p2"
        envelope = b * (1.0 + np.abs(t) ** rho)
        params = {"b": b, "rho": rho}
    elif c is not None and p_star is not None:
        if c < 0:
            raise ValueError(f"c must be nonnegative, got {c}")
        condition = "p3"
        envelope = b + c * np.abs(t) ** (p_star - 1.0)
        params = {"b": b, "c": c, "p_star": p_star}
    else:
        raise ValueError("give either rho, or both c and p_star")
    box = _sample_box(t, x_samples)
    tolerances = {"ratio": tol}
    try:
        vals = _table(f, t, x_samples)
    except DomainError as exc:
        return ConditionReport(
            condition, False, box, _locate_domain_error(f, t, x_samples), tolerances,
            {"failure": "domain error", "message": str(exc), **params},
        )
    ratio = np.abs(vals) / envelope[:, None]
    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    xs = np.atleast_2d(x_samples)
    max_ratio = float(ratio[i, j])
    worst = {"t": float(t[i]), "x": xs[j].tolist(), "value": float(vals[i, j])}
    details = {"max_ratio": max_ratio, **params}
    return ConditionReport(condition, max_ratio <= 1.0 + tol, box, worst, tolerances, details)


def check_p4(
    f: Nonlinearity,
    p_star: float,
    t_grid,
    x_samples,
    threshold: float = 1e6,
) -> ConditionReport:
    """Finite-sample heuristic for ``liminf_{t->0+} inf_x f(t,x) / t^(p*-1) = +inf``.

    The ratios ``r_k = min_x f(t_k, x) / t_k^(p*-1)`` must exceed ``threshold``
    and be nondecreasing over the last half of the (decreasing) grid.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) >= 0):
        raise ValueError("t_grid must be strictly decreasing")
    if t.min() < 1e-8 or t.min() <= 0:
        raise ValueError("t_grid entries must be >= 1e-8")
    box = _sample_box(t, x_samples)
    tolerances = {"threshold": threshold, "monotone_rel": 1e-12}
    try:
        vals = _table(f, t, x_samples)
    except DomainError as exc:
        return ConditionReport(
            "p4", False, box, _locate_domain_error(f, t, x_samples), tolerances,
            {"failure": "domain error", "message": str(exc), "heuristic": True},
        )
    inf_x = vals.min(axis=1)
    ratios = inf_x / t ** (p_star - 1.0)
    tail = ratios[t.size // 2:]
    above = bool(np.all(tail > threshold))
    nondecreasing = bool(np.all(tail[1:] >= tail[:-1] * (1.0 - 1e-12)))
    k = int(np.argmin(tail)) + t.size // 2
    xs = np.atleast_2d(x_samples)
    worst = {"t": float(t[k]), "x": xs[int(np.argmin(vals[k]))].tolist(), "value": float(ratios[k])}
    details = {
        "heuristic": True,
        "note": "finite-sample surrogate for a liminf; cannot prove the condition",
        "ratios": [float(r) for r in ratios],
        "t_grid": [float(v) for v in t],
        "tail_above_threshold": above,
        "tail_nondecreasing": nondecreasing,
        "p_star": p_star,
    }
    return ConditionReport("p4", above and nondecreasing, box, worst, tolerances, details)
