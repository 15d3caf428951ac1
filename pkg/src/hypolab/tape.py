"""Compile expression trees to a flat instruction tape.

A tape is a straight-line program with conditional jumps, executed against a
register file of doubles. The same tape runs on the pure-Python interpreter
and on the compiled one, with identical operation order, so results agree bit
for bit. Common subexpressions are shared through a scoped cache: code inside
a conditional branch may reuse registers computed before the branch, but
registers it produces are not visible afterwards, since the branch may not
have executed.

Input layout: a tuple of coordinate keys, one per input slot, in the order
the runtime will supply them. ``None`` marks a slot the expressions must not
reference. The extra coordinate kind ``e`` (1-based) names exogenous input
channels, used for time-varying data fed to the integrators alongside state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .expr import (Add, Bump, Const, Coord, Div, Expr, Func, Guarded, Mul,
                   Pow, bump_interior, substitute)

OP_LOADC = 0
OP_LOADV = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POWI = 6
OP_POWF = 7
OP_EXP = 8
OP_SIN = 9
OP_COS = 10
OP_TANH = 11
OP_COPY = 12
OP_ADDI = 13
OP_JMP = 14
OP_JLE = 15
OP_JGE = 16
OP_JABS_LT = 17

_FUNC_OPS = {"exp": OP_EXP, "sin": OP_SIN, "cos": OP_COS, "tanh": OP_TANH}

_BUMP_PLACEHOLDER_KEY = ("x", 1)


class TapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Tape:
    code: np.ndarray       # (n, 4) int32 rows: op, a, b, dst
    imm: np.ndarray        # (n,) float64
    out_regs: np.ndarray   # (n_out,) int32
    n_regs: int
    layout: tuple

    @property
    def n_inputs(self) -> int:
        return len(self.layout)

    @property
    def n_outputs(self) -> int:
        return len(self.out_regs)


def exog(channel: int) -> Coord:
    """Placeholder for exogenous input channel ``channel`` (1-based)."""
    return Coord("e", channel)


# Coord rejects unknown kinds; register "e" once at import.
if "e" not in ex._COORD_KINDS:
    ex._COORD_KINDS = ex._COORD_KINDS + ("e",)


class _Compiler:
    def __init__(self, layout):
        self.layout = tuple(layout)
        self.slot_of = {}
        for i, key in enumerate(self.layout):
            if key is None:
                continue
            if key in self.slot_of:
                raise TapeError(f"duplicate layout slot {key}")
            self.slot_of[key] = i
        self.code: list[list[int]] = []
        self.imm: list[float] = []
        self.scopes: list[dict] = [{}]
        self.n_regs = 0

    # -- scoped CSE ---------------------------------------------------
    def _lookup(self, key):
        for scope in reversed(self.scopes):
            reg = scope.get(key)
            if reg is not None:
                return reg
        return None

    def _remember(self, key, reg):
        self.scopes[-1][key] = reg

    def _alloc(self) -> int:
        reg = self.n_regs
        self.n_regs += 1
        return reg

    def _emit(self, op, a=0, b=0, dst=0, imm=0.0) -> int:
        self.code.append([op, a, b, dst])
        self.imm.append(imm)
        return len(self.code) - 1

    def _patch(self, at: int, target: int) -> None:
        self.code[at][2] = target

    def _here(self) -> int:
        return len(self.code)

    # -- node compilation ----------------------------------------------
    def compile(self, e: Expr) -> int:
        if isinstance(e, Const):
            return self._const(e.value)
        reg = self._lookup(e)
        if reg is not None:
            return reg
        reg = self._node(e)
        self._remember(e, reg)
        return reg

    def _const(self, value: float) -> int:
        key = ("c", float(value).hex())
        reg = self._lookup(key)
        if reg is None:
            reg = self._alloc()
            self._emit(OP_LOADC, dst=reg, imm=value)
            self._remember(key, reg)
        return reg

    def _node(self, e: Expr) -> int:
        if isinstance(e, Coord):
            slot = self.slot_of.get(e.key)
            if slot is None:
                raise TapeError(f"expression references {e.key} outside layout {self.layout}")
            reg = self._alloc()
            self._emit(OP_LOADV, a=slot, dst=reg)
            return reg
        if isinstance(e, Add):
            acc = self.compile(e.terms[0])
            for term in e.terms[1:]:
                rt = self.compile(term)
                nxt = self._alloc()
                self._emit(OP_ADD, a=acc, b=rt, dst=nxt)
                acc = nxt
            return acc
        if isinstance(e, Mul):
            acc = self.compile(e.factors[0])
            for f in e.factors[1:]:
                rf = self.compile(f)
                nxt = self._alloc()
                self._emit(OP_MUL, a=acc, b=rf, dst=nxt)
                acc = nxt
            return acc
        if isinstance(e, Div):
            rn = self.compile(e.num)
            rd = self.compile(e.den)
            reg = self._alloc()
            self._emit(OP_DIV, a=rn, b=rd, dst=reg)
            return reg
        if isinstance(e, Pow):
            rb = self.compile(e.base)
            reg = self._alloc()
            ie = e.int_exponent
            if ie is not None:
                self._emit(OP_POWI, a=rb, b=ie, dst=reg)
            else:
                self._emit(OP_POWF, a=rb, dst=reg, imm=e.exponent)
            return reg
        if isinstance(e, Func):
            ra = self.compile(e.arg)
            reg = self._alloc()
            self._emit(_FUNC_OPS[e.name], a=ra, dst=reg)
            return reg
        if isinstance(e, Bump):
            return self._bump(e)
        if isinstance(e, Guarded):
            return self._guard(e)
        raise TapeError(f"cannot compile node {type(e).__name__}")

    def _bump(self, e: Bump) -> int:
        if isinstance(e.arg, Const):
            # resolve the branch now; substituting a constant into the
            # interior form would fold eagerly and can hit its poles
            s = e.arg.value
            if s <= ex.BUMP_ZERO_EDGE:
                val = 0.0
            elif s >= 1.0:
                val = 1.0 if e.order == 0 else 0.0
            else:
                val = ex.evaluate(bump_interior(e.order), ex.Point(x=(s,)))
            reg = self._alloc()
            self._emit(OP_LOADC, dst=reg, imm=val)
            return reg
        rs = self.compile(e.arg)
        res = self._alloc()
        j_zero = self._emit(OP_JLE, a=rs, imm=ex.BUMP_ZERO_EDGE)
        j_one = self._emit(OP_JGE, a=rs, imm=1.0)
        self.scopes.append({})
        body = substitute(bump_interior(e.order), {_BUMP_PLACEHOLDER_KEY: e.arg})
        rb = self.compile(body)
        self.scopes.pop()
        self._emit(OP_COPY, a=rb, dst=res)
        j_end1 = self._emit(OP_JMP)
        self._patch(j_zero, self._here())
        self._emit(OP_LOADC, dst=res, imm=0.0)
        j_end2 = self._emit(OP_JMP)
        self._patch(j_one, self._here())
        self._emit(OP_LOADC, dst=res, imm=1.0 if e.order == 0 else 0.0)
        end = self._here()
        self._patch(j_end1, end)
        self._patch(j_end2, end)
        return res

    def _guard(self, e: Guarded) -> int:
        ukey = ("gu", e.coord, e.at)
        ru = self._lookup(ukey)
        if ru is None:
            rv = self.compile(Coord(*e.coord))
            rat = self._const(e.at)
            ru = self._alloc()
            self._emit(OP_SUB, a=rv, b=rat, dst=ru)
            self._remember(ukey, ru)
        res = self._alloc()
        j_series = self._emit(OP_JABS_LT, a=ru, imm=e.radius)
        self.scopes.append({})
        rn = self.compile(e.num)
        rd = self.compile(e.den)
        self.scopes.pop()
        self._emit(OP_DIV, a=rn, b=rd, dst=res)
        j_end = self._emit(OP_JMP)
        self._patch(j_series, self._here())
        self._emit(OP_LOADC, dst=res, imm=e.series[-1])
        for c in reversed(e.series[:-1]):
            self._emit(OP_MUL, a=res, b=ru, dst=res)
            self._emit(OP_ADDI, a=res, dst=res, imm=c)
        self._patch(j_end, self._here())
        return res


def compile_exprs(exprs, layout) -> Tape:
    comp = _Compiler(layout)
    out_regs = [comp.compile(ex._as_expr(e)) for e in exprs]
    return Tape(
        code=np.array(comp.code, dtype=np.int32).reshape(-1, 4),
        imm=np.array(comp.imm, dtype=np.float64),
        out_regs=np.array(out_regs, dtype=np.int32),
        n_regs=max(comp.n_regs, 1),
        layout=comp.layout,
    )
