"""Expression language shared by environments, predicates and processes.

Supports + - * /, min/max, comparisons, boolean connectives, conditional
expressions, one bounded additive noise term per state variable, and
symbolic mode literals for actuators (``off`` encodes to +1, ``on`` to -1;
mode equality compiles to a sign test).

Two evaluators are provided: a concrete one over floats and a symbolic one
over affine forms whose free symbols range over intervals.  The symbolic
evaluator splits on comparisons that straddle their operand's range, which
is what drives guard splitting in the interval engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from .intervals import EPS, INF, Interval

ON = -1.0
OFF = 1.0

MODE_LITERALS = {"on": ON, "off": OFF}


class EvalError(Exception):
    """Raised on runtime evaluation failures (division by zero, etc.)."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Name(Expr):
    """State variable, binder, parameter, token or mode literal."""

    ident: str


@dataclass(frozen=True)
class Noise(Expr):
    """Bounded additive noise of a state variable (evolution laws only)."""

    var: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # + - * /
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Cmp(Expr):
    op: str  # > >= < <= == !=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class BoolOp(Expr):
    op: str  # && ||
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not(Expr):
    arg: Expr


@dataclass(frozen=True)
class Fn(Expr):
    name: str  # min | max
    args: tuple[Expr, ...]


@dataclass(frozen=True)
class IfExpr(Expr):
    cond: Expr
    then: Expr
    els: Expr


@dataclass(frozen=True)
class Lit(Expr):
    """Injected runtime value (substitution of a binder).  ``value`` is a
    float in concrete execution or a :class:`SymValue` in symbolic mode."""

    value: object

    def __str__(self) -> str:  # keeps term reprs short
        return f"Lit({self.value})"


def free_names(e: Expr) -> set[str]:
    if isinstance(e, Name):
        return {e.ident}
    if isinstance(e, Num) or isinstance(e, Lit):
        return set()
    if isinstance(e, Noise):
        return {e.var}
    if isinstance(e, (BinOp, Cmp, BoolOp)):
        return free_names(e.left) | free_names(e.right)
    if isinstance(e, (Neg, Not)):
        return free_names(e.arg)
    if isinstance(e, Fn):
        out: set[str] = set()
        for a in e.args:
            out |= free_names(a)
        return out
    if isinstance(e, IfExpr):
        return free_names(e.cond) | free_names(e.then) | free_names(e.els)
    raise TypeError(e)


def subst_expr(e: Expr, binding: Mapping[str, object]) -> Expr:
    """Replace named binders with literal runtime values."""
    if isinstance(e, Name):
        if e.ident in binding:
            return Lit(binding[e.ident])
        return e
    if isinstance(e, (Num, Lit, Noise)):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, subst_expr(e.left, binding), subst_expr(e.right, binding))
    if isinstance(e, Neg):
        return Neg(subst_expr(e.arg, binding))
    if isinstance(e, Cmp):
        return Cmp(e.op, subst_expr(e.left, binding), subst_expr(e.right, binding))
    if isinstance(e, BoolOp):
        return BoolOp(e.op, subst_expr(e.left, binding), subst_expr(e.right, binding))
    if isinstance(e, Not):
        return Not(subst_expr(e.arg, binding))
    if isinstance(e, Fn):
        return Fn(e.name, tuple(subst_expr(a, binding) for a in e.args))
    if isinstance(e, IfExpr):
        return IfExpr(
            subst_expr(e.cond, binding),
            subst_expr(e.then, binding),
            subst_expr(e.els, binding),
        )
    raise TypeError(e)


# ---------------------------------------------------------------------------
# Concrete evaluation
# ---------------------------------------------------------------------------


def eval_concrete(e: Expr, scope: Mapping[str, float], noise: Mapping[str, float] | None = None):
    """Evaluate to a float or bool.  ``scope`` supplies names, ``noise`` the
    realised noise draws for evolution expressions."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Lit):
        if not isinstance(e.value, (int, float)):
            raise EvalError(f"symbolic value in concrete evaluation: {e.value!r}")
        return float(e.value)
    if isinstance(e, Name):
        if e.ident in scope:
            return scope[e.ident]
        if e.ident in MODE_LITERALS:
            return MODE_LITERALS[e.ident]
        raise EvalError(f"unbound name {e.ident!r}")
    if isinstance(e, Noise):
        if noise is None or e.var not in noise:
            raise EvalError(f"noise({e.var}) outside an evolution law")
        return noise[e.var]
    if isinstance(e, BinOp):
        l = eval_concrete(e.left, scope, noise)
        r = eval_concrete(e.right, scope, noise)
        if e.op == "+":
            return l + r
        if e.op == "-":
            return l - r
        if e.op == "*":
            return l * r
        if e.op == "/":
            if abs(r) < EPS:
                raise EvalError("division by zero")
            return l / r
        raise EvalError(f"bad operator {e.op}")
    if isinstance(e, Neg):
        return -eval_concrete(e.arg, scope, noise)
    if isinstance(e, Cmp):
        e = desugar_mode_cmp(e)
        l = eval_concrete(e.left, scope, noise)
        r = eval_concrete(e.right, scope, noise)
        return _cmp(e.op, l, r)
    if isinstance(e, BoolOp):
        l = eval_concrete(e.left, scope, noise)
        if e.op == "&&":
            return bool(l) and bool(eval_concrete(e.right, scope, noise))
        return bool(l) or bool(eval_concrete(e.right, scope, noise))
    if isinstance(e, Not):
        return not eval_concrete(e.arg, scope, noise)
    if isinstance(e, Fn):
        vals = [eval_concrete(a, scope, noise) for a in e.args]
        if e.name == "min":
            return min(vals)
        if e.name == "max":
            return max(vals)
        raise EvalError(f"unknown function {e.name}")
    if isinstance(e, IfExpr):
        if eval_concrete(e.cond, scope, noise):
            return eval_concrete(e.then, scope, noise)
        return eval_concrete(e.els, scope, noise)
    raise TypeError(e)


def desugar_mode_cmp(e: Cmp) -> Cmp:
    """Actuator modes encode as reals with ``off`` any value >= 0 and ``on``
    any value < 0, so equality against a mode literal is a sign test."""
    mode = None
    other = None
    if isinstance(e.right, Name) and e.right.ident in MODE_LITERALS:
        mode, other = e.right.ident, e.left
    elif isinstance(e.left, Name) and e.left.ident in MODE_LITERALS:
        mode, other = e.left.ident, e.right
    if mode is None or e.op not in ("==", "!="):
        return e
    positive = (mode == "off") == (e.op == "==")
    return Cmp(">=" if positive else "<", other, Num(0.0))


def _cmp(op: str, l: float, r: float) -> bool:
    if op == ">":
        return l > r + EPS
    if op == ">=":
        return l >= r - EPS
    if op == "<":
        return l < r - EPS
    if op == "<=":
        return l <= r + EPS
    if op == "==":
        return abs(l - r) <= EPS
    if op == "!=":
        return abs(l - r) > EPS
    raise EvalError(f"bad comparison {op}")


# ---------------------------------------------------------------------------
# Symbolic values: affine forms over interval-ranged symbols
# ---------------------------------------------------------------------------
#
# A symbol is either ("var", x) for the current value of state variable x,
# or ("sym", i) for a slot noise / sensor error / snapshot symbol whose
# range lives in the enclosing symbolic state.


Symbol = tuple[str, object]


@dataclass(frozen=True)
class SymValue:
    """Affine form  const + sum(coeff * symbol)."""

    coeffs: tuple[tuple[Symbol, float], ...]
    const: float

    @staticmethod
    def constant(v: float) -> "SymValue":
        return SymValue((), v)

    @staticmethod
    def of_symbol(sym: Symbol) -> "SymValue":
        return SymValue(((sym, 1.0),), 0.0)

    def is_constant(self) -> bool:
        return not self.coeffs

    def add(self, other: "SymValue") -> "SymValue":
        d = dict(self.coeffs)
        for s, c in other.coeffs:
            d[s] = d.get(s, 0.0) + c
        return SymValue(_norm(d), self.const + other.const)

    def scale(self, k: float) -> "SymValue":
        return SymValue(_norm({s: c * k for s, c in self.coeffs}), self.const * k)

    def shift(self, c: float) -> "SymValue":
        return SymValue(self.coeffs, self.const + c)

    def range_over(self, ranges: Callable[[Symbol], Interval]) -> Interval:
        iv = Interval.point(self.const)
        for s, c in self.coeffs:
            iv = iv.add(ranges(s).scale(c))
        return iv

    def symbols(self) -> set[Symbol]:
        return {s for s, _ in self.coeffs}

    def __str__(self) -> str:
        parts = [f"{c:+g}*{s[1]}" for s, c in self.coeffs]
        return "".join(parts) + f"{self.const:+g}"


def _norm(d: Mapping[Symbol, float]) -> tuple[tuple[Symbol, float], ...]:
    items = [(s, c) for s, c in d.items() if abs(c) > EPS]
    items.sort(key=lambda sc: repr(sc[0]))
    return tuple(items)


class NonAffine(Exception):
    """The expression leaves the affine fragment over interval symbols."""


@dataclass
class SymScope:
    """Evaluation scope for the symbolic evaluator.

    ``values`` maps names to SymValue; ``ranges`` resolves symbol ranges;
    ``constrain`` narrows a symbol's range and returns a refined scope key
    (handled by the caller through returned Condition objects).
    """

    values: Mapping[str, SymValue]
    ranges: Callable[[Symbol], Interval]


Condition = tuple[Symbol, Interval]  # symbol must lie in the interval


def eval_affine(e: Expr, scope: SymScope) -> SymValue:
    """Evaluate a real-valued expression to an affine form.

    Conditional sub-expressions are not allowed here; the caller handles
    them via :func:`eval_symbolic_branches`.
    """
    if isinstance(e, Num):
        return SymValue.constant(e.value)
    if isinstance(e, Lit):
        if isinstance(e.value, SymValue):
            return e.value
        return SymValue.constant(float(e.value))
    if isinstance(e, Name):
        if e.ident in scope.values:
            return scope.values[e.ident]
        if e.ident in MODE_LITERALS:
            return SymValue.constant(MODE_LITERALS[e.ident])
        raise EvalError(f"unbound name {e.ident!r}")
    if isinstance(e, BinOp):
        l = eval_affine(e.left, scope)
        r = eval_affine(e.right, scope)
        if e.op == "+":
            return l.add(r)
        if e.op == "-":
            return l.add(r.scale(-1.0))
        if e.op == "*":
            if l.is_constant():
                return r.scale(l.const)
            if r.is_constant():
                return l.scale(r.const)
            raise NonAffine("product of two symbolic quantities")
        if e.op == "/":
            if r.is_constant():
                if abs(r.const) < EPS:
                    raise EvalError("division by zero")
                return l.scale(1.0 / r.const)
            raise NonAffine("division by a symbolic quantity")
    if isinstance(e, Neg):
        return eval_affine(e.arg, scope).scale(-1.0)
    if isinstance(e, Fn):
        vals = [eval_affine(a, scope) for a in e.args]
        ivs = [v.range_over(scope.ranges) for v in vals]
        # min/max collapse to one argument when ranges are disjoint enough.
        if e.name == "min":
            best = min(range(len(vals)), key=lambda i: ivs[i].hi)
            for j in range(len(vals)):
                if j != best and ivs[j].lo < ivs[best].hi - EPS:
                    raise NonAffine("overlapping min()")
            return vals[best]
        if e.name == "max":
            best = max(range(len(vals)), key=lambda i: ivs[i].lo)
            for j in range(len(vals)):
                if j != best and ivs[j].hi > ivs[best].lo + EPS:
                    raise NonAffine("overlapping max()")
            return vals[best]
        raise EvalError(f"unknown function {e.name}")
    if isinstance(e, IfExpr):
        raise NonAffine("conditional expression needs branch evaluation")
    if isinstance(e, Noise):
        raise NonAffine("noise term outside evolution handling")
    raise NonAffine(f"non-affine node {type(e).__name__}")


def branch_on_guard(
    guard: Expr, scope: SymScope
) -> list[tuple[bool, list[Condition]]]:
    """Enumerate guard outcomes with the symbol constraints that realise them.

    Returns pairs ``(outcome, conditions)``; one pair when the guard is
    decided on the whole scope, two when it straddles.  Only comparisons of
    an affine form against another affine form whose difference involves at
    most one symbol can be inverted exactly; multi-symbol differences are
    resolved existentially against the dominant symbol (sound for one-noise
    fragments, flagged by the caller otherwise).
    """
    if isinstance(guard, BoolOp):
        out: list[tuple[bool, list[Condition]]] = []
        for lv, lc in branch_on_guard(guard.left, scope):
            for rv, rc in branch_on_guard(guard.right, scope):
                val = (lv and rv) if guard.op == "&&" else (lv or rv)
                out.append((val, lc + rc))
        return _merge_outcomes(out)
    if isinstance(guard, Not):
        return [(not v, c) for v, c in branch_on_guard(guard.arg, scope)]
    if isinstance(guard, Cmp):
        guard = desugar_mode_cmp(guard)
        diff = eval_affine(guard.left, scope).add(
            eval_affine(guard.right, scope).scale(-1.0)
        )
        return _branch_cmp(guard.op, diff, scope)
    raise NonAffine(f"unsupported guard {type(guard).__name__}")


def _merge_outcomes(out):
    # Collapse duplicates with identical conditions.
    seen = []
    for item in out:
        if item not in seen:
            seen.append(item)
    return seen


def _branch_cmp(op: str, diff: SymValue, scope: SymScope):
    """Branch on  diff <op> 0."""
    iv = diff.range_over(scope.ranges)
    if op in ("==", "!="):
        hit = iv.contains(0.0)
        if iv.is_point():
            val = abs(iv.lo) <= EPS
            return [(val if op == "==" else not val, [])]
        if not hit:
            return [(op == "!=", [])]
        # Equality on a genuine interval: both outcomes possible; the
        # equality cell is a single point, kept without refinement.
        return [(op == "==", []), (op == "!=", [])]

    # Normalise to  diff > 0  /  diff >= 0.
    if op == "<":
        return [(not v, c) for v, c in _branch_cmp(">=", diff, scope)]
    if op == "<=":
        return [(not v, c) for v, c in _branch_cmp(">", diff, scope)]

    strict = op == ">"
    can_true = iv.hi > EPS if strict else iv.hi >= -EPS
    can_false = iv.lo <= EPS if strict else iv.lo < -EPS
    if can_true and not can_false:
        return [(True, [])]
    if can_false and not can_true:
        return [(False, [])]

    syms = diff.coeffs
    if len(syms) == 1:
        (sym, coeff) = syms[0]
        # coeff*s + const > 0   <=>   s > -const/coeff (coeff > 0)
        bound = -diff.const / coeff
        if coeff > 0:
            true_iv = Interval(bound, INF, strict, True)
            false_iv = Interval(-INF, bound, True, not strict)
        else:
            true_iv = Interval(-INF, bound, True, strict)
            false_iv = Interval(bound, INF, not strict, True)
        return [(True, [(sym, true_iv)]), (False, [(sym, false_iv)])]

    if len(syms) >= 2:
        # Existential split on the widest-contribution symbol: the branch
        # is possible for values of that symbol where some valuation of the
        # remaining symbols realises the outcome.
        sym, coeff = max(syms, key=lambda sc: _spread(scope.ranges(sc[0]), sc[1]))
        rest = SymValue(tuple(sc for sc in syms if sc[0] != sym), diff.const)
        rest_iv = rest.range_over(scope.ranges)
        # coeff*s + rest > 0 possible  <=>  coeff*s > -rest_iv.hi ...
        if coeff > 0:
            t_bound = -rest_iv.hi / coeff
            f_bound = -rest_iv.lo / coeff
            true_iv = Interval(t_bound, INF, strict or rest_iv.hi_open, True)
            false_iv = Interval(-INF, f_bound, True, (not strict) or rest_iv.lo_open)
        else:
            t_bound = -rest_iv.hi / coeff
            f_bound = -rest_iv.lo / coeff
            true_iv = Interval(-INF, t_bound, True, strict or rest_iv.hi_open)
            false_iv = Interval(f_bound, INF, (not strict) or rest_iv.lo_open, True)
        out = []
        ti = scope.ranges(sym).intersect(true_iv)
        if ti is not None:
            out.append((True, [(sym, ti)]))
        fi = scope.ranges(sym).intersect(false_iv)
        if fi is not None:
            out.append((False, [(sym, fi)]))
        return out

    # Constant diff straddling zero can only happen through EPS slop.
    return [(iv.lo > 0, [])]


def _spread(iv: Interval, coeff: float) -> float:
    if iv.hi == INF or iv.lo == -INF:
        return INF
    return abs(coeff) * (iv.hi - iv.lo)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC = {"||": 1, "&&": 2, "cmp": 3, "+": 4, "-": 4, "*": 5, "/": 5}


def expr_to_str(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Num):
        v = e.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    if isinstance(e, Lit):
        if isinstance(e.value, (int, float)):
            return expr_to_str(Num(float(e.value)))
        return str(e.value)
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Noise):
        return f"noise({e.var})"
    if isinstance(e, Neg):
        return f"-{expr_to_str(e.arg, 6)}"
    if isinstance(e, Not):
        return f"!{expr_to_str(e.arg, 6)}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{expr_to_str(e.left, p)} {e.op} {expr_to_str(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, Cmp):
        p = _PREC["cmp"]
        s = f"{expr_to_str(e.left, p + 1)} {e.op} {expr_to_str(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, BoolOp):
        p = _PREC[e.op]
        s = f"{expr_to_str(e.left, p)} {e.op} {expr_to_str(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, Fn):
        return f"{e.name}({', '.join(expr_to_str(a) for a in e.args)})"
    if isinstance(e, IfExpr):
        s = (
            f"if {expr_to_str(e.cond)} then {expr_to_str(e.then)} "
            f"else {expr_to_str(e.els)}"
        )
        return f"({s})" if prec > 0 else s
    raise TypeError(e)
