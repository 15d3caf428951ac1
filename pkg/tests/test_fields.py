import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hypolab.expr as ex
import hypolab.fields as fl
from hypolab.expr import Point


def _spiral_fields():
    x, y = ex.xvar(1), ex.yvar(1)
    r2 = ex.add(ex.power(x, 2), ex.power(y, 2))
    F = fl.VectorField((ex.add(x, ex.neg(y), ex.neg(ex.mul(x, r2))),
                        ex.add(x, y, ex.neg(ex.mul(y, r2)))),
                       (("x", 1), ("y", 1)))
    G = fl.VectorField((ex.const(1.0), ex.const(0.0)), (("x", 1), ("y", 1)))
    return F, G


def test_bracket_oracle_spiral():
    F, G = _spiral_fields()
    br = fl.lie_bracket(G, F)
    val = fl.evaluate_field(br, Point(x=[1.0], y=[0.0]))
    assert np.allclose(val, [-2.0, 1.0])


def test_bracket_antisymmetry_structural():
    F, G = _spiral_fields()
    fwd = fl.lie_bracket(F, G)
    bwd = fl.lie_bracket(G, F)
    pt = Point(x=[0.3], y=[-1.2])
    assert np.allclose(fl.evaluate_field(fwd, pt),
                       -fl.evaluate_field(bwd, pt), atol=1e-12)


def test_self_bracket_is_structurally_zero():
    F, _ = _spiral_fields()
    br = fl.lie_bracket(F, F)
    assert all(ex.is_zero(c) for c in br.components)


def test_dimension_mismatch_rejected():
    F, _ = _spiral_fields()
    H = fl.VectorField((ex.const(1.0),), (("x", 1),))
    with pytest.raises(fl.FieldError):
        fl.lie_bracket(F, H)


_coeff = st.floats(-2.0, 2.0)


def _poly_field(coords, a, b, c):
    x, y = ex.xvar(1), ex.yvar(1)
    return fl.VectorField(
        (ex.add(ex.mul(a, ex.power(x, 2)), ex.mul(b, y)),
         ex.add(ex.mul(c, ex.mul(x, y)), ex.const(1.0))), coords)


@given(_coeff, _coeff, _coeff, _coeff, _coeff, _coeff,
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
@settings(max_examples=60, deadline=None)
def test_jacobi_identity_sampled(a1, b1, c1, a2, b2, c2, xv, yv):
    coords = (("x", 1), ("y", 1))
    A = _poly_field(coords, a1, b1, c1)
    B = _poly_field(coords, a2, b2, c2)
    C = fl.VectorField((ex.sin(ex.xvar(1)), ex.cos(ex.yvar(1))), coords)
    pt = Point(x=[xv], y=[yv])
    total = (fl.evaluate_field(fl.lie_bracket(A, fl.lie_bracket(B, C)), pt)
             + fl.evaluate_field(fl.lie_bracket(B, fl.lie_bracket(C, A)), pt)
             + fl.evaluate_field(fl.lie_bracket(C, fl.lie_bracket(A, B)), pt))
    assert np.max(np.abs(total)) < 1e-9


@given(_coeff, _coeff, st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
@settings(max_examples=60, deadline=None)
def test_bilinearity_sampled(s, t, xv, yv):
    coords = (("x", 1), ("y", 1))
    A = _poly_field(coords, 1.0, -0.5, 0.7)
    B = _poly_field(coords, -0.3, 1.1, 0.2)
    C = fl.VectorField((ex.cos(ex.yvar(1)), ex.mul(ex.xvar(1), ex.yvar(1))),
                       coords)
    lhs = fl.lie_bracket(
        fl.VectorField(tuple(ex.add(ex.mul(s, a), ex.mul(t, b))
                             for a, b in zip(A.components, B.components)),
                       coords), C)
    pt = Point(x=[xv], y=[yv])
    want = (s * fl.evaluate_field(fl.lie_bracket(A, C), pt)
            + t * fl.evaluate_field(fl.lie_bracket(B, C), pt))
    assert np.allclose(fl.evaluate_field(lhs, pt), want, atol=1e-9)


def test_time_space_bracket_time_slot_structurally_zero():
    x = ex.xvar(1)
    V = fl.TimeSpaceField(ex.const(1.0),
                          fl.VectorField((ex.mul(ex.tvar(), x),), (("x", 1),)))
    W = fl.TimeSpaceField(ex.const(0.0),
                          fl.VectorField((ex.sin(x),), (("x", 1),)))
    br = fl.time_space_bracket(V, W)
    assert ex.is_zero(br.time_component)


def test_time_space_bracket_sees_time_derivative():
    x = ex.xvar(1)
    V = fl.TimeSpaceField(ex.const(1.0),
                          fl.VectorField((ex.const(0.0),), (("x", 1),)))
    W = fl.TimeSpaceField(ex.const(0.0),
                          fl.VectorField((ex.mul(ex.tvar(), x),), (("x", 1),)))
    br = fl.time_space_bracket(V, W)
    val = fl.evaluate_time_space_field(br, Point(t=2.0, x=[3.0]))
    # d/dt (t x) along V = x
    assert np.allclose(val, [0.0, 3.0])


def test_state_coords_layout():
    keys = fl.state_coords(2, 1, 2)
    assert keys == (("x", 1), ("x", 2), ("y", 1), ("z", 1), ("z", 2))
