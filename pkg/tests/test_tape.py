import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hypolab.engine as en
import hypolab.expr as ex
import hypolab.tape as tp
from hypolab.expr import Point

LAYOUT = (("t", 0), ("x", 1), ("y", 1), ("z", 1))


def _inputs(t, xv, yv, zv):
    return np.array([t, xv, yv, zv])


def _tree_value(e, t, xv, yv, zv):
    return ex.evaluate(e, Point(t=t, x=[xv], y=[yv], z=[zv]))


def test_simple_program():
    e = ex.add(ex.mul(ex.xvar(1), ex.yvar(1)), ex.const(2.0))
    tape = tp.compile_exprs([e], LAYOUT)
    out = en.eval_tape(tape, _inputs(0.0, 3.0, 4.0, 0.0))
    assert out[0] == 14.0


def test_unknown_layout_coordinate_rejected():
    e = ex.zvar(2)
    with pytest.raises(tp.TapeError):
        tp.compile_exprs([e], LAYOUT)


def test_common_subexpressions_share_registers():
    s = ex.sin(ex.xvar(1))
    e1 = ex.mul(s, s)
    e2 = ex.add(s, ex.const(1.0))
    tape = tp.compile_exprs([e1, e2], LAYOUT)
    sin_ops = np.count_nonzero(tape.code[:, 0] == tp.OP_SIN)
    assert sin_ops == 1


def test_branch_code_for_bump():
    e = ex.bump(ex.xvar(1))
    tape = tp.compile_exprs([e], LAYOUT)
    for s, want in [(-0.5, 0.0), (0.0, 0.0), (0.5, 0.5), (1.0, 1.0),
                    (7.0, 1.0)]:
        got = en.eval_tape(tape, _inputs(0.0, s, 0.0, 0.0))[0]
        assert abs(got - want) < 1e-14


def test_guard_branch_matches_tree():
    z = ex.zvar(1)
    num = ex.sub(ex.exp(z), 1.0)
    series = tuple(1.0 / math.factorial(k + 1) for k in range(8))
    g = ex.guarded_quotient(num, z, ("z", 1), 0.0, 1e-3, series)
    tape = tp.compile_exprs([g], LAYOUT)
    for zv in [-2.0, -1e-3, -1e-5, 0.0, 1e-5, 2e-3, 1.0]:
        got = en.eval_tape(tape, _inputs(0.0, 0.0, 0.0, zv))[0]
        want = _tree_value(g, 0.0, 0.0, 0.0, zv)
        assert got == want


def test_exog_channels():
    e = ex.mul(tp.exog(1), ex.add(ex.xvar(1), tp.exog(2)))
    layout = (("t", 0), ("e", 1), ("e", 2), ("x", 1))
    tape = tp.compile_exprs([e], layout)
    out = en.eval_tape(tape, np.array([0.0, 2.0, 5.0, 1.0]))
    assert out[0] == 12.0


def test_integer_power_sequence_bit_identity():
    x = ex.xvar(1)
    e = ex.power(x, 7)
    tape = tp.compile_exprs([e], LAYOUT)
    for xv in [0.3, -1.7, 2.0]:
        got = en.eval_tape(tape, _inputs(0.0, xv, 0.0, 0.0))[0]
        assert got == _tree_value(e, 0.0, xv, 0.0, 0.0)


_leaf = st.sampled_from([ex.xvar(1), ex.yvar(1), ex.zvar(1), ex.tvar(),
                         ex.const(0.5), ex.const(-1.5)])


def _nodes(children):
    return st.one_of(
        st.tuples(children, children).map(lambda ab: ex.add(*ab)),
        st.tuples(children, children).map(lambda ab: ex.mul(*ab)),
        st.tuples(children, children).map(lambda ab: ex.sub(*ab)),
        children.map(ex.sin),
        children.map(ex.cos),
        children.map(ex.exp),
        children.map(ex.tanh),
        children.map(ex.bump),
        children.map(lambda c: ex.power(c, 2)),
    )


_exprs = st.recursive(_leaf, _nodes, max_leaves=16)


@given(_exprs, st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
@settings(max_examples=200, deadline=None)
def test_tape_matches_tree_exactly(e, t, xv, yv, zv):
    tape = tp.compile_exprs([e], LAYOUT)
    try:
        want = _tree_value(e, t, xv, yv, zv)
    except ex.EvaluationError:
        return
    got = en.eval_tape(tape, _inputs(t, xv, yv, zv))[0]
    assert got == want or (math.isnan(got) and math.isnan(want))


def test_eval_tape_many_rows():
    e = ex.add(ex.power(ex.xvar(1), 2), ex.zvar(1))
    tape = tp.compile_exprs([e], LAYOUT)
    rows = np.array([[0.0, 1.0, 0.0, 3.0], [0.0, -2.0, 0.0, 0.5]])
    out = en.eval_tape_many(tape, rows)
    assert np.allclose(out[:, 0], [4.0, 4.5])
