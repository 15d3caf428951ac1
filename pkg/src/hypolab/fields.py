"""Vector fields over named coordinates and their Lie brackets.

A VectorField pairs a tuple of component expressions with the tuple of
coordinates those components are differentiated against. A TimeSpaceField
additionally carries a time component (slot 0); its bracket treats time as
coordinate zero of the extended state, so the time slot of any bracket is
structurally zero whenever both time components are constants.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import expr as ex
from .expr import Coord, CoordKey, Expr, Point


class FieldError(ValueError):
    pass


def _as_components(components) -> tuple[Expr, ...]:
    return tuple(ex._as_expr(c) for c in components)


def _as_coord_keys(coords) -> tuple[CoordKey, ...]:
    keys = []
    for c in coords:
        if isinstance(c, Coord):
            keys.append(c.key)
        else:
            kind, index = c
            keys.append(Coord(kind, index).key)
    if len(set(keys)) != len(keys):
        raise FieldError("duplicate coordinates")
    return tuple(keys)


def state_coords(n_x: int, n_y: int, n_z: int) -> tuple[CoordKey, ...]:
    keys = [("x", i + 1) for i in range(n_x)]
    keys += [("y", j + 1) for j in range(n_y)]
    keys += [("z", k + 1) for k in range(n_z)]
    return tuple(keys)


class VectorField:
    """dim components differentiated against an equal-length coordinate list."""

    __slots__ = ("components", "coords")

    def __init__(self, components: Iterable, coords: Iterable):
        self.components = _as_components(components)
        self.coords = _as_coord_keys(coords)
        if len(self.components) != len(self.coords):
            raise FieldError(
                f"{len(self.components)} components over {len(self.coords)} coordinates")

    @property
    def dim(self) -> int:
        return len(self.components)

    def is_time_dependent(self) -> bool:
        return any(("t", 0) in c.free_coords for c in self.components)

    def __eq__(self, other) -> bool:
        return (isinstance(other, VectorField)
                and self.coords == other.coords
                and self.components == other.components)

    def __hash__(self) -> int:
        return hash((self.coords, self.components))

    def __repr__(self) -> str:
        body = " ".join(ex.to_sexpr(c) for c in self.components)
        return f"VectorField[{self.dim}]({body})"


def evaluate_field(field: VectorField, pt: Point) -> np.ndarray:
    return np.array([ex.evaluate(c, pt) for c in field.components], dtype=float)


def jacobian_apply(of: VectorField, along: Sequence[Expr]) -> tuple[Expr, ...]:
    """Row i of the result is sum_j along_j * d(of_i)/d(coord_j)."""
    out = []
    for comp in of.components:
        terms = []
        for key, a in zip(of.coords, along):
            d = ex.differentiate(comp, key)
            if not ex.is_zero(d) and not ex.is_zero(a):
                terms.append(ex.mul(a, d))
        out.append(ex.add(*terms))
    return tuple(out)


def lie_bracket(v: VectorField, w: VectorField) -> VectorField:
    """[v, w] = (Jacobian of w) v - (Jacobian of v) w."""
    if v.coords != w.coords:
        raise FieldError("bracket of fields over different coordinates")
    jw_v = jacobian_apply(w, v.components)
    jv_w = jacobian_apply(v, w.components)
    return VectorField(
        tuple(ex.sub(a, b) for a, b in zip(jw_v, jv_w)), v.coords)


class TimeSpaceField:
    """A vector field on time-extended state: slot 0 moves time."""

    __slots__ = ("time_component", "space")

    def __init__(self, time_component, space: VectorField):
        self.time_component = ex._as_expr(time_component)
        self.space = space

    @property
    def coords(self) -> tuple[CoordKey, ...]:
        return self.space.coords

    @property
    def dim(self) -> int:
        return self.space.dim

    def components_with_time(self) -> tuple[Expr, ...]:
        return (self.time_component,) + self.space.components

    def __eq__(self, other) -> bool:
        return (isinstance(other, TimeSpaceField)
                and self.time_component == other.time_component
                and self.space == other.space)

    def __hash__(self) -> int:
        return hash((self.time_component, self.space))

    def __repr__(self) -> str:
        return (f"TimeSpaceField(time={ex.to_sexpr(self.time_component)}, "
                f"space={self.space!r})")


def time_space_bracket(v: TimeSpaceField, w: TimeSpaceField) -> TimeSpaceField:
    """Bracket on time-extended state.

    Component i of the space part is
        v0 dt(w_i) - w0 dt(v_i) + sum_j (v_j dj(w_i) - w_j dj(v_i)),
    and the time slot of the result is
        sum over extended coords of the same pattern applied to the time
        components, which collapses to zero when both time components are
        constant (the only case produced here, since brackets of inputs with
        constant time slots keep that property).
    """
    if v.coords != w.coords:
        raise FieldError("bracket of fields over different coordinates")
    tkey = ("t", 0)

    def directional(scalar: Expr, mover: TimeSpaceField) -> Expr:
        terms = []
        dt_term = ex.differentiate(scalar, tkey)
        if not ex.is_zero(dt_term) and not ex.is_zero(mover.time_component):
            terms.append(ex.mul(mover.time_component, dt_term))
        for key, a in zip(mover.coords, mover.space.components):
            d = ex.differentiate(scalar, key)
            if not ex.is_zero(d) and not ex.is_zero(a):
                terms.append(ex.mul(a, d))
        return ex.add(*terms)

    time_slot = ex.sub(directional(w.time_component, v),
                       directional(v.time_component, w))
    space = tuple(
        ex.sub(directional(wc, v), directional(vc, w))
        for vc, wc in zip(v.space.components, w.space.components))
    return TimeSpaceField(time_slot, VectorField(space, v.coords))


def evaluate_time_space_field(field: TimeSpaceField, pt: Point) -> np.ndarray:
    vals = [ex.evaluate(field.time_component, pt)]
    vals += [ex.evaluate(c, pt) for c in field.space.components]
    return np.array(vals, dtype=float)
