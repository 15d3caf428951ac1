import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hypolab.expr as ex
import hypolab.models as md
from hypolab.expr import Point


def test_builtin_names_and_dims():
    assert md.BUILTIN_NAMES == ("hodgkin-huxley", "toy-cascade",
                                "toy-mexicanhat", "spiral", "rotor-chain-1",
                                "rotor-chain-2")
    dims = {name: (md.builtin(name).n_x, md.builtin(name).n_y)
            for name in md.BUILTIN_NAMES}
    assert dims["hodgkin-huxley"] == (1, 3)
    assert dims["toy-cascade"] == (1, 1)
    assert dims["toy-mexicanhat"] == (2, 1)
    assert dims["spiral"] == (1, 1)
    assert dims["rotor-chain-1"] == (1, 5)
    assert dims["rotor-chain-2"] == (2, 4)


def test_unknown_builtin():
    with pytest.raises(md.ModelError):
        md.builtin("nope")


def test_cascade_depth_option():
    m = md.builtin("toy-cascade", n_y=3)
    assert m.n_y == 3
    # each deeper internal state relaxes toward the one before it
    pt = Point(0.0, [0.5], [2.0, 7.0, 1.0], [0.0])
    assert ex.evaluate(m.g[1], pt) == 2.0 - 7.0
    assert ex.evaluate(m.g[2], pt) == 7.0 - 1.0


def test_hh_rate_oracles():
    r = md.hh_rates()
    p10 = Point(0.0, [10.0], [0.0, 0.0, 0.0], [0.0])
    assert abs(ex.evaluate(r["alpha1"], p10) - 0.1) < 1e-12
    d = ex.differentiate(r["alpha1"], ("x", 1))
    assert abs(ex.evaluate(d, p10) - 0.005) < 1e-12
    p25 = Point(0.0, [25.0], [0.0, 0.0, 0.0], [0.0])
    assert abs(ex.evaluate(r["alpha2"], p25) - 1.0) < 1e-12


def test_hh_drift_oracle():
    m = md.builtin("hodgkin-huxley")
    pt = Point(0.0, [2.0], [0.5, 0.5, 0.5], [0.0])
    d = ex.differentiate(m.f[0], ("y", 1))
    assert abs(ex.evaluate(d, pt) - (-252.0)) < 1e-9


def test_equilibrium_oracles():
    hh = md.builtin("hodgkin-huxley")
    eq = md.equilibrium_state(hh)
    assert abs(eq.x[0] - 0.04621485793844206) < 1e-9
    # stationarity of the zero-input observed dynamics
    for comp in list(hh.g) + list(hh.f):
        assert abs(ex.evaluate(comp, eq)) < 1e-9

    tc = md.equilibrium_state(md.builtin("toy-cascade"))
    assert tc.x == (1.0,) and tc.y == (1.0,) and tc.z == (0.0,)
    tc_neg = md.equilibrium_state(md.builtin("toy-cascade"), branch=-1)
    assert tc_neg.x == (-1.0,)

    sp = md.equilibrium_state(md.builtin("spiral"))
    assert sp.x == (1.0,) and sp.y == (0.0,)

    mh = md.equilibrium_state(md.builtin("toy-mexicanhat"))
    assert mh.x == (1.0, 0.0) and mh.y == (0.0,)


def test_cascade_profile_saturates():
    h = md.cascade_profile()
    assert abs(ex.evaluate(h, Point(x=[1.0])) - 1.0) < 1e-12
    assert abs(ex.evaluate(h, Point(x=[-1.0])) - 1.0) < 1e-12
    assert abs(ex.evaluate(h, Point(x=[10.0])) - 5.0) < 1e-12


def test_signal_validation_catches_aperiodic():
    with pytest.raises(md.ModelError):
        md.SignalSpec.offset_sine(1.0, 1.0, 1.37, n=1).validate(1.0)
    md.SignalSpec.offset_sine(1.0, 1.0, 2 * math.pi, n=1).validate(1.0)


def test_signal_expression_kind_round_trip():
    sig = md.SignalSpec.expression(["(mul (const 2.0) (sin (mul (const "
                                    "6.283185307179586) t)))"])
    sig.validate(1.0)
    back = md.SignalSpec.from_json_dict(sig.to_json_dict())
    assert back.exprs() == sig.exprs()


def test_signal_rejects_state_dependence():
    with pytest.raises(md.ModelError):
        md.SignalSpec.expression(["(x 1)"]).validate(1.0)


def test_model_json_round_trip():
    m = md.builtin("toy-mexicanhat")
    back = md.ModelSpec.from_json_dict(m.to_json_dict())
    assert back.f == m.f and back.g == m.g and back.sigma == m.sigma
    assert back.period == m.period and back.domain_x == m.domain_x


def test_with_sigma_recomputes_noise_dim():
    m = md.builtin("toy-mexicanhat")
    assert m.n_w == 2
    m2 = m.with_sigma([[ex.const(1.0)], [ex.const(0.0)]])
    assert m2.n_w == 1
    with pytest.raises(md.ModelError):
        m.with_sigma([[ex.const(1.0)]])


def test_stratonovich_correction_oracles():
    m = md.builtin("toy-cascade")
    z = ex.zvar(1)
    # constant noise keeps the raw drift
    bt = md.stratonovich_drift(m)
    assert bt == m.b
    # sigma = z: correction is -z/2
    m2 = m.with_sigma([[z]])
    bt2 = md.stratonovich_drift(m2)
    val = ex.evaluate(bt2[0], Point(z=[2.0]))
    assert abs(val - (-2.0 - 1.0)) < 1e-12


def test_b_hat_includes_signal():
    m = md.builtin("toy-cascade")
    bh = md.b_hat(m)
    got = ex.evaluate(bh[0], Point(t=0.25, z=[0.5]))
    sig = ex.evaluate(m.signal.exprs()[0], Point(t=0.25))
    assert abs(got - (sig - 0.5)) < 1e-12


def test_time_space_field_assembly():
    m = md.builtin("toy-cascade")
    der = md.assemble_time_space_fields(m)
    assert ex.evaluate(der.v0.time_component, Point()) == 1.0
    for vk in der.v_noise:
        assert ex.is_zero(vk.time_component)
        comps = vk.space.components
        # noise enters the observed and input slots identically, skips y
        assert comps[0] == comps[2]
        assert ex.is_zero(comps[1])


def test_point_shape_checked():
    m = md.builtin("spiral")
    with pytest.raises(md.ModelError):
        m.point(0.0, [1.0, 2.0])


@given(st.floats(0.1, 5.0), st.floats(-2.0, 2.0))
@settings(max_examples=50, deadline=None)
def test_signal_periodicity_property(period, phase):
    sig = md.SignalSpec.offset_sine(1.0, 0.5, 2 * math.pi / period, n=1)
    sig.validate(period)
    e = sig.exprs()[0]
    t = abs(phase)
    v1 = ex.evaluate(e, Point(t=t))
    v2 = ex.evaluate(e, Point(t=t + period))
    assert abs(v1 - v2) < 1e-9
