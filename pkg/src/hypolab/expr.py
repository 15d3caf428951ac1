"""Immutable scalar expressions over the coordinates (t, x_i, y_j, z_k).

The node set is deliberately small: constants, coordinate references, n-ary
sums and products, quotients, powers with a real exponent, exp/sin/cos/tanh,
a C-infinity step ("bump"), and a guarded quotient that carries a power
series for a removable singularity. Construction goes through the lower-case
helper functions, which apply conservative simplifications only: constant
folding, dropping zero terms and unit factors, and flattening nested sums or
products. Terms are never reordered, so structurally equal trees stay equal.

Expressions serialize to a prefix s-expression text form, for example
``(mul (const -36.0) (pow (y 1) 4) (add (x 1) (const 12.0)))``, and the
round trip is bit exact.
"""

from __future__ import annotations

import math
import sys
from typing import Iterable, Mapping

import numpy as np

# Derivative trees of high order get structurally deep.
sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))

CoordKey = tuple[str, int]

_EMPTY: frozenset = frozenset()
_COORD_KINDS = ("t", "x", "y", "z")
_FUNC_NAMES = ("exp", "sin", "cos", "tanh")

# Below this value of the bump argument the step and all its derivatives
# evaluate to exact 0.0 in double precision anyway; branching there avoids
# inf*0 artifacts from the closed form.
BUMP_ZERO_EDGE = 1e-12

# Taylor coefficients of u/(exp(u)-1) about u=0 (Bernoulli numbers / n!).
EXPM1_RATIO_SERIES = (
    1.0,
    -0.5,
    1.0 / 12.0,
    0.0,
    -1.0 / 720.0,
    0.0,
    1.0 / 30240.0,
    0.0,
    -1.0 / 1209600.0,
    0.0,
    1.0 / 47900160.0,
)


class ExprError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    """Non-finite intermediate during tree evaluation; names the node."""


class Expr:
    __slots__ = ("_hash", "_free")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __ne__(self, other) -> bool:
        return not self.__eq__(other)

    def _key(self):  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def free_coords(self) -> frozenset[CoordKey]:
        return self._free

    def __repr__(self) -> str:
        return to_sexpr(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        v = float(value)
        if not math.isfinite(v):
            raise ExprError(f"non-finite constant {value!r}")
        self.value = v
        self._hash = hash(("c", v))
        self._free = _EMPTY

    def _key(self):
        return (self.value,)


class Coord(Expr):
    __slots__ = ("kind", "index")

    def __init__(self, kind: str, index: int = 0):
        if kind not in _COORD_KINDS:
            raise ExprError(f"unknown coordinate kind {kind!r}")
        index = int(index)
        if kind == "t":
            index = 0
        elif index < 1:
            raise ExprError("coordinate indices are 1-based")
        self.kind = kind
        self.index = index
        self._hash = hash(("v", kind, index))
        self._free = frozenset(((kind, index),))

    def _key(self):
        return (self.kind, self.index)

    @property
    def key(self) -> CoordKey:
        return (self.kind, self.index)


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: tuple[Expr, ...]):
        self.terms = terms
        self._hash = hash(("+",) + tuple(t._hash for t in terms))
        self._free = frozenset().union(*(t._free for t in terms))

    def _key(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: tuple[Expr, ...]):
        self.factors = factors
        self._hash = hash(("*",) + tuple(f._hash for f in factors))
        self._free = frozenset().union(*(f._free for f in factors))

    def _key(self):
        return self.factors


class Div(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num: Expr, den: Expr):
        self.num = num
        self.den = den
        self._hash = hash(("/", num._hash, den._hash))
        self._free = num._free | den._free

    def _key(self):
        return (self.num, self.den)


class Pow(Expr):
    """base ** exponent with a real exponent (integer exponents evaluate by
    repeated multiplication so all engines agree bit for bit)."""

    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: float):
        e = float(exponent)
        if not math.isfinite(e):
            raise ExprError("non-finite exponent")
        if e == int(e) and abs(e) > 64:
            raise ExprError("integer exponent too large")
        self.base = base
        self.exponent = e
        self._hash = hash(("^", base._hash, e))
        self._free = base._free

    def _key(self):
        return (self.base, self.exponent)

    @property
    def int_exponent(self) -> int | None:
        e = self.exponent
        return int(e) if e == int(e) else None


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in _FUNC_NAMES:
            raise ExprError(f"unknown function {name!r}")
        self.name = name
        self.arg = arg
        self._hash = hash((name, arg._hash))
        self._free = arg._free

    def _key(self):
        return (self.name, self.arg)


class Bump(Expr):
    """order-th derivative of the C-infinity step B(s): B=0 for s<=0, B=1
    for s>=1, B(s)=a(s)/(a(s)+a(1-s)) with a(s)=exp(-1/s) in between."""

    __slots__ = ("order", "arg")

    def __init__(self, order: int, arg: Expr):
        order = int(order)
        if order < 0:
            raise ExprError("negative bump derivative order")
        self.order = order
        self.arg = arg
        self._hash = hash(("b", order, arg._hash))
        self._free = arg._free

    def _key(self):
        return (self.order, self.arg)


class Guarded(Expr):
    """num/den with a removable singularity at coord == at.

    Within |coord - at| < radius the value comes from the stored power
    series in (coord - at); outside it comes from the closed form. num and
    den may reference only the guard coordinate, which keeps derivatives in
    the other coordinates exactly zero and lets the series differentiate by
    coefficient shift.
    """

    __slots__ = ("num", "den", "coord", "at", "radius", "series")

    def __init__(self, num: Expr, den: Expr, coord: CoordKey, at: float,
                 radius: float, series: tuple[float, ...]):
        kind, index = coord
        ckey = Coord(kind, index).key
        if not (num._free | den._free) <= {ckey}:
            raise ExprError("guarded quotient may reference only its guard coordinate")
        if not series:
            raise ExprError("empty guard series")
        if not (radius > 0 and math.isfinite(at)):
            raise ExprError("bad guard metadata")
        self.num = num
        self.den = den
        self.coord = ckey
        self.at = float(at)
        self.radius = float(radius)
        self.series = tuple(float(c) for c in series)
        self._hash = hash(("g", num._hash, den._hash, ckey, self.at,
                           self.radius, self.series))
        self._free = frozenset((ckey,))

    def _key(self):
        return (self.num, self.den, self.coord, self.at, self.radius, self.series)


# ---------------------------------------------------------------------------
# constructors with conservative simplification

def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return Const(v)
    raise ExprError(f"cannot coerce {v!r} to an expression")


def const(v: float) -> Const:
    return Const(v)


def coord(kind: str, index: int = 0) -> Coord:
    return Coord(kind, index)


def tvar() -> Coord:
    return Coord("t", 0)


def xvar(i: int) -> Coord:
    return Coord("x", i)


def yvar(j: int) -> Coord:
    return Coord("y", j)


def zvar(k: int) -> Coord:
    return Coord("z", k)


def add(*terms) -> Expr:
    flat: list[Expr] = []
    csum = 0.0
    for term in terms:
        term = _as_expr(term)
        if isinstance(term, Const):
            csum += term.value
        elif isinstance(term, Add):
            for sub_t in term.terms:
                if isinstance(sub_t, Const):
                    csum += sub_t.value
                else:
                    flat.append(sub_t)
        else:
            flat.append(term)
    if csum != 0.0:
        flat.insert(0, Const(csum))
    if not flat:
        return Const(0.0)
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*factors) -> Expr:
    flat: list[Expr] = []
    cprod = 1.0
    for f in factors:
        f = _as_expr(f)
        if isinstance(f, Const):
            cprod *= f.value
        elif isinstance(f, Mul):
            for sub_f in f.factors:
                if isinstance(sub_f, Const):
                    cprod *= sub_f.value
                else:
                    flat.append(sub_f)
        else:
            flat.append(f)
    if cprod == 0.0:
        return Const(0.0)
    if cprod != 1.0:
        flat.insert(0, Const(cprod))
    if not flat:
        return Const(cprod) if cprod != 1.0 else Const(1.0)
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def neg(a) -> Expr:
    return mul(-1.0, a)


def sub(a, b) -> Expr:
    a = _as_expr(a)
    b = _as_expr(b)
    if a == b:
        return Const(0.0)
    return add(a, mul(-1.0, b))


def div(num, den) -> Expr:
    num = _as_expr(num)
    den = _as_expr(den)
    if isinstance(den, Const):
        if den.value == 0.0:
            raise ExprError("division by the zero constant")
        if isinstance(num, Const):
            return Const(num.value / den.value)
        if den.value == 1.0:
            return num
    if isinstance(num, Const) and num.value == 0.0:
        return Const(0.0)
    return Div(num, den)


def seqpow(v: float, e: int) -> float:
    """Integer power by repeated multiplication; the shared runtime rule."""
    r = v
    for _ in range(abs(e) - 1):
        r *= v
    if e < 0:
        r = 1.0 / r
    return r


def power(base, exponent: float) -> Expr:
    base = _as_expr(base)
    e = float(exponent)
    if e == 0.0:
        return Const(1.0)
    if e == 1.0:
        return base
    if isinstance(base, Const):
        if e == int(e):
            return Const(seqpow(base.value, int(e)))
        return Const(math.pow(base.value, e))
    return Pow(base, e)


def _func(name: str, arg) -> Expr:
    arg = _as_expr(arg)
    if isinstance(arg, Const):
        return Const(getattr(math, name)(arg.value))
    return Func(name, arg)


def exp(arg) -> Expr:
    return _func("exp", arg)


def sin(arg) -> Expr:
    return _func("sin", arg)


def cos(arg) -> Expr:
    return _func("cos", arg)


def tanh(arg) -> Expr:
    return _func("tanh", arg)


def bump(arg, order: int = 0) -> Expr:
    return Bump(order, _as_expr(arg))


def guarded_quotient(num, den, guard_coord: Coord | CoordKey, at: float,
                     radius: float, series: Iterable[float]) -> Guarded:
    if isinstance(guard_coord, Coord):
        guard_coord = guard_coord.key
    return Guarded(_as_expr(num), _as_expr(den), guard_coord, at, radius,
                   tuple(series))


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def is_const(e: Expr) -> bool:
    return isinstance(e, Const)


# ---------------------------------------------------------------------------
# the interior closed form of the bump step and its derivatives

_BUMP_PLACEHOLDER = Coord("x", 1)
_bump_interior_cache: list[Expr] = []


def bump_interior(order: int) -> Expr:
    """Closed form of B^(order) on 0 < s < 1, in the placeholder (x 1)."""
    if not _bump_interior_cache:
        s = _BUMP_PLACEHOLDER
        a_here = exp(div(-1.0, s))
        a_there = exp(div(-1.0, sub(1.0, s)))
        _bump_interior_cache.append(div(a_here, add(a_here, a_there)))
    while len(_bump_interior_cache) <= order:
        _bump_interior_cache.append(
            differentiate(_bump_interior_cache[-1], _BUMP_PLACEHOLDER.key))
    return _bump_interior_cache[order]


# ---------------------------------------------------------------------------
# differentiation

_diff_memo: dict[tuple[Expr, CoordKey], Expr] = {}


def differentiate(e: Expr, key: Coord | CoordKey) -> Expr:
    if isinstance(key, Coord):
        key = key.key
    kind, index = key
    if kind == "t":
        key = ("t", 0)
    if key not in e._free:
        return Const(0.0)
    memo_key = (e, key)
    cached = _diff_memo.get(memo_key)
    if cached is not None:
        return cached
    result = _diff(e, key)
    _diff_memo[memo_key] = result
    return result


def _diff(e: Expr, key: CoordKey) -> Expr:
    if isinstance(e, Coord):
        return Const(1.0)
    if isinstance(e, Add):
        return add(*(differentiate(t, key) for t in e.terms))
    if isinstance(e, Mul):
        pieces = []
        fs = e.factors
        for i, f in enumerate(fs):
            dfi = differentiate(f, key)
            if is_zero(dfi):
                continue
            pieces.append(mul(*fs[:i], dfi, *fs[i + 1:]))
        return add(*pieces)
    if isinstance(e, Div):
        dn = differentiate(e.num, key)
        dd = differentiate(e.den, key)
        if is_zero(dd):
            return div(dn, e.den)
        return div(sub(mul(dn, e.den), mul(e.num, dd)), power(e.den, 2))
    if isinstance(e, Pow):
        return mul(e.exponent, power(e.base, e.exponent - 1.0),
                   differentiate(e.base, key))
    if isinstance(e, Func):
        da = differentiate(e.arg, key)
        if e.name == "exp":
            outer: Expr = Func("exp", e.arg)
        elif e.name == "sin":
            outer = cos(e.arg)
        elif e.name == "cos":
            outer = neg(sin(e.arg))
        else:  # tanh
            outer = sub(1.0, power(Func("tanh", e.arg), 2))
        return mul(outer, da)
    if isinstance(e, Bump):
        return mul(Bump(e.order + 1, e.arg), differentiate(e.arg, key))
    if isinstance(e, Guarded):
        if len(e.series) < 2:
            raise ExprError("guard series exhausted by differentiation")
        dn = differentiate(e.num, key)
        dd = differentiate(e.den, key)
        new_num = sub(mul(dn, e.den), mul(e.num, dd))
        shifted = tuple((j + 1) * c for j, c in enumerate(e.series[1:]))
        return Guarded(new_num, power(e.den, 2), e.coord, e.at, e.radius, shifted)
    raise ExprError(f"cannot differentiate node {type(e).__name__}")


# ---------------------------------------------------------------------------
# evaluation

class Point:
    """A time-state sample (t, x, y, z)."""

    __slots__ = ("t", "x", "y", "z")

    def __init__(self, t: float = 0.0, x: Iterable[float] = (),
                 y: Iterable[float] = (), z: Iterable[float] = ()):
        self.t = float(t)
        self.x = tuple(float(v) for v in x)
        self.y = tuple(float(v) for v in y)
        self.z = tuple(float(v) for v in z)

    def coord_value(self, kind: str, index: int) -> float:
        if kind == "t":
            return self.t
        try:
            return getattr(self, kind)[index - 1]
        except IndexError:
            raise ExprError(f"point has no coordinate ({kind} {index})") from None

    def as_array(self) -> np.ndarray:
        return np.array(self.x + self.y + self.z, dtype=float)

    def __repr__(self) -> str:
        return f"Point(t={self.t}, x={self.x}, y={self.y}, z={self.z})"


def _check_finite(v: float, node: Expr) -> float:
    if not math.isfinite(v):
        raise EvaluationError(f"non-finite value at node {to_sexpr(node)[:120]}")
    return v


def evaluate(e: Expr, pt: Point) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Coord):
        return pt.coord_value(e.kind, e.index)
    if isinstance(e, Add):
        acc = evaluate(e.terms[0], pt)
        for term in e.terms[1:]:
            acc += evaluate(term, pt)
        return _check_finite(acc, e)
    if isinstance(e, Mul):
        acc = evaluate(e.factors[0], pt)
        for f in e.factors[1:]:
            acc *= evaluate(f, pt)
        return _check_finite(acc, e)
    if isinstance(e, Div):
        den = evaluate(e.den, pt)
        if den == 0.0:
            raise EvaluationError(f"division by zero in {to_sexpr(e)[:80]}")
        return _check_finite(evaluate(e.num, pt) / den, e)
    if isinstance(e, Pow):
        base = evaluate(e.base, pt)
        ie = e.int_exponent
        if ie is not None:
            return _check_finite(seqpow(base, ie), e)
        return _check_finite(math.pow(base, e.exponent), e)
    if isinstance(e, Func):
        return _check_finite(getattr(math, e.name)(evaluate(e.arg, pt)), e)
    if isinstance(e, Bump):
        s = evaluate(e.arg, pt)
        if s <= BUMP_ZERO_EDGE:
            return 0.0
        if s >= 1.0:
            return 1.0 if e.order == 0 else 0.0
        return evaluate(bump_interior(e.order), Point(x=(s,)))
    if isinstance(e, Guarded):
        v = pt.coord_value(*e.coord)
        u = v - e.at
        if abs(u) < e.radius:
            acc = e.series[-1]
            for c in reversed(e.series[:-1]):
                acc = acc * u + c
            return acc
        return _check_finite(evaluate(e.num, pt) / evaluate(e.den, pt), e)
    raise ExprError(f"cannot evaluate node {type(e).__name__}")


def numpy_evaluate(e: Expr, t=0.0, x=(), y=(), z=(), _memo=None):
    """Vectorized evaluation; array inputs broadcast together."""
    if _memo is None:
        _memo = {}
    hit = _memo.get(e)
    if hit is not None:
        return hit
    with np.errstate(all="ignore"):
        out = _numpy_eval(e, t, x, y, z, _memo)
    _memo[e] = out
    return out


def _np_coord(kind, index, t, x, y, z):
    if kind == "t":
        return np.asarray(t, dtype=float)
    arrs = {"x": x, "y": y, "z": z}[kind]
    return np.asarray(arrs[index - 1], dtype=float)


def _numpy_eval(e: Expr, t, x, y, z, memo):
    rec = lambda sub_e: numpy_evaluate(sub_e, t, x, y, z, memo)
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Coord):
        return _np_coord(e.kind, e.index, t, x, y, z)
    if isinstance(e, Add):
        acc = rec(e.terms[0])
        for term in e.terms[1:]:
            acc = acc + rec(term)
        return acc
    if isinstance(e, Mul):
        acc = rec(e.factors[0])
        for f in e.factors[1:]:
            acc = acc * rec(f)
        return acc
    if isinstance(e, Div):
        return rec(e.num) / rec(e.den)
    if isinstance(e, Pow):
        base = rec(e.base)
        ie = e.int_exponent
        if ie is None:
            return np.power(base, e.exponent)
        acc = base.copy() if isinstance(base, np.ndarray) else base
        for _ in range(abs(ie) - 1):
            acc = acc * base
        if ie < 0:
            acc = 1.0 / acc
        return acc
    if isinstance(e, Func):
        return getattr(np, e.name)(rec(e.arg))
    if isinstance(e, Bump):
        s = np.asarray(rec(e.arg), dtype=float)
        interior = numpy_evaluate(bump_interior(e.order), 0.0, (s,), (), (), {})
        hi = 1.0 if e.order == 0 else 0.0
        out = np.where(s <= BUMP_ZERO_EDGE, 0.0, np.where(s >= 1.0, hi, interior))
        return out
    if isinstance(e, Guarded):
        v = _np_coord(*e.coord, t, x, y, z)
        u = v - e.at
        acc = np.full_like(np.asarray(u, dtype=float), e.series[-1])
        for c in reversed(e.series[:-1]):
            acc = acc * u + c
        closed = rec(e.num) / rec(e.den)
        return np.where(np.abs(u) < e.radius, acc, closed)
    raise ExprError(f"cannot evaluate node {type(e).__name__}")


# ---------------------------------------------------------------------------
# substitution

def substitute(e: Expr, mapping: Mapping[CoordKey, Expr], _memo=None) -> Expr:
    if not mapping:
        return e
    if _memo is None:
        _memo = {}
    if not (e._free & set(mapping)):
        return e
    hit = _memo.get(e)
    if hit is not None:
        return hit
    out = _substitute(e, mapping, _memo)
    _memo[e] = out
    return out


def _substitute(e: Expr, mapping, memo) -> Expr:
    rec = lambda sub_e: substitute(sub_e, mapping, memo)
    if isinstance(e, Coord):
        return mapping.get(e.key, e)
    if isinstance(e, Add):
        return add(*(rec(term) for term in e.terms))
    if isinstance(e, Mul):
        return mul(*(rec(f) for f in e.factors))
    if isinstance(e, Div):
        return div(rec(e.num), rec(e.den))
    if isinstance(e, Pow):
        return power(rec(e.base), e.exponent)
    if isinstance(e, Func):
        return _func(e.name, rec(e.arg))
    if isinstance(e, Bump):
        return bump(rec(e.arg), e.order)
    if isinstance(e, Guarded):
        if e.coord in mapping:
            raise ExprError("cannot substitute into a guard coordinate")
        return e
    raise ExprError(f"cannot substitute into node {type(e).__name__}")


# ---------------------------------------------------------------------------
# s-expression serialization

def _fmt_float(v: float) -> str:
    return repr(float(v))


def to_sexpr(e: Expr) -> str:
    if isinstance(e, Const):
        return f"(const {_fmt_float(e.value)})"
    if isinstance(e, Coord):
        return "t" if e.kind == "t" else f"({e.kind} {e.index})"
    if isinstance(e, Add):
        return "(add " + " ".join(to_sexpr(t) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(mul " + " ".join(to_sexpr(f) for f in e.factors) + ")"
    if isinstance(e, Div):
        return f"(div {to_sexpr(e.num)} {to_sexpr(e.den)})"
    if isinstance(e, Pow):
        ie = e.int_exponent
        etxt = str(ie) if ie is not None else _fmt_float(e.exponent)
        return f"(pow {to_sexpr(e.base)} {etxt})"
    if isinstance(e, Func):
        return f"({e.name} {to_sexpr(e.arg)})"
    if isinstance(e, Bump):
        return f"(bump {e.order} {to_sexpr(e.arg)})"
    if isinstance(e, Guarded):
        kind, index = e.coord
        ctxt = "t" if kind == "t" else f"({kind} {index})"
        ser = " ".join(_fmt_float(c) for c in e.series)
        return (f"(guard {to_sexpr(e.num)} {to_sexpr(e.den)} {ctxt} "
                f"{_fmt_float(e.at)} {_fmt_float(e.radius)} (series {ser}))")
    raise ExprError(f"cannot serialize node {type(e).__name__}")


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_sexpr(text: str) -> Expr:
    tokens = _tokenize(text)
    if not tokens:
        raise ExprError("empty s-expression")
    pos = 0

    def read():
        nonlocal pos
        if pos >= len(tokens):
            raise ExprError("unexpected end of s-expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ExprError("unexpected ')'")
        if tok != "(":
            return _atom(tok)
        head = tokens[pos]
        pos += 1
        args = []
        while True:
            if pos >= len(tokens):
                raise ExprError("missing ')'")
            if tokens[pos] == ")":
                pos += 1
                break
            args.append(read())
        return _form(head, args)

    def _atom(tok: str):
        if tok == "t":
            return tvar()
        try:
            return Const(float(tok))
        except ValueError:
            raise ExprError(f"unknown atom {tok!r}") from None

    def _form(head: str, args: list):
        if head in ("x", "y", "z"):
            (idx,) = args
            return Coord(head, int(_const_value(idx)))
        if head == "const":
            (v,) = args
            return Const(_const_value(v))
        if head == "add":
            return add(*args)
        if head == "mul":
            return mul(*args)
        if head == "sub":
            a, b = args
            return sub(a, b)
        if head == "neg":
            (a,) = args
            return neg(a)
        if head == "div":
            a, b = args
            return div(a, b)
        if head == "pow":
            a, b = args
            return power(a, _const_value(b))
        if head in _FUNC_NAMES:
            (a,) = args
            return _func(head, a)
        if head == "bump":
            order, a = args
            return bump(a, int(_const_value(order)))
        if head == "guard":
            num, den, cvar, at, radius, series = args
            if not isinstance(cvar, Coord):
                raise ExprError("guard coordinate must be a coordinate")
            if not isinstance(series, tuple):
                raise ExprError("guard series must be a (series ...) form")
            return Guarded(num, den, cvar.key, _const_value(at),
                           _const_value(radius), series)
        if head == "series":
            return tuple(_const_value(a) for a in args)
        raise ExprError(f"unknown s-expression head {head!r}")

    def _const_value(node) -> float:
        if isinstance(node, Const):
            return node.value
        raise ExprError("expected a numeric atom")

    result = read()
    if pos != len(tokens):
        raise ExprError("trailing tokens after s-expression")
    if not isinstance(result, Expr):
        raise ExprError("s-expression does not denote an expression")
    return result


def max_coord_index(e: Expr, kind: str) -> int:
    return max((idx for k, idx in e._free if k == kind), default=0)


def clear_caches() -> None:
    _diff_memo.clear()
    del _bump_interior_cache[1:]
