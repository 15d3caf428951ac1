import numpy as np
import pytest

import hypolab.expr as ex
import hypolab.hoermander as hx
import hypolab.models as md
from hypolab.expr import Point


def test_input_chain_bracket_oracle():
    m = md.builtin("toy-cascade")
    pt = Point(0.0, [1.0], [1.0], [0.0])
    v = hx.star_bracket(m, (1,), pt, mode="nested")
    assert np.allclose(v, [-5.0, 2.0, -1.0])
    w = hx.star_bracket(m, (1,), pt, mode="closed-form")
    assert np.allclose(w, v, atol=1e-12)


def test_feed_chain_bracket_oracle():
    m = md.builtin("toy-cascade")
    pt = Point(0.0, [1.0], [1.0], [0.0])
    v = hx.cascade_bracket(m, 1, pt)
    assert np.allclose(v, [5.0, -2.0, 1.0])


def test_feed_chain_shape_errors():
    m = md.builtin("toy-mexicanhat")
    with pytest.raises(hx.ShapeError):
        hx.cascade_bracket(m, 1, Point(0.0, [1.0, 0.0], [0.0], [0.0, 0.0]))
    tc = md.builtin("toy-cascade")
    with pytest.raises(hx.ShapeError):
        hx.cascade_bracket(tc, 5, Point(0.0, [1.0], [1.0], [0.0]))


def test_nested_equals_closed_form_nonconstant_sigma():
    z = ex.zvar(1)
    m = md.builtin("toy-cascade").with_sigma([[ex.add(2.0, ex.sin(z))]])
    rng = np.random.default_rng(0)
    for kappa in [(1,), (1, 1), (1, 1, 1)]:
        for _ in range(10):
            pt = Point(0.0, rng.uniform(-1.5, 1.5, 1),
                       rng.uniform(-1.5, 1.5, 1), rng.uniform(-1.5, 1.5, 1))
            a = hx.star_bracket(m, kappa, pt, mode="nested")
            b = hx.star_bracket(m, kappa, pt, mode="closed-form")
            assert np.max(np.abs(a - b)) < 1e-9


def test_coefficient_table_oracle():
    z = ex.zvar(1)
    m = md.builtin("toy-cascade").with_sigma([[z]])
    table = hx.coeff_table(m, (1, 1))
    assert set(table.entries) == {(1,), (2,)}
    assert abs(ex.evaluate(table.entries[(1,)], Point(z=[3.0])) - 3.0) < 1e-12
    assert abs(ex.evaluate(table.entries[(2,)], Point(z=[3.0])) - 9.0) < 1e-12


def test_constant_sigma_middle_coefficients_vanish_symbolically():
    for name in md.BUILTIN_NAMES:
        m = md.builtin(name)
        if not m.sigma_is_constant():
            continue
        for k in range(1, m.n_w + 1):
            for n in range(2, 4):
                table = hx.coeff_table(m, (k,) * n)
                for alpha, coeff in table.entries.items():
                    order = sum(alpha)
                    if 1 <= order <= n - 1:
                        assert ex.is_zero(coeff), (name, alpha)


def test_kappa_validated():
    m = md.builtin("toy-cascade")
    with pytest.raises(hx.ShapeError):
        hx.coeff_table(m, (0,))
    with pytest.raises(hx.ShapeError):
        hx.coeff_table(m, (2,))
    with pytest.raises(hx.ShapeError):
        hx.star_bracket(m, (), Point(0.0, [1.0], [1.0], [0.0]))


def test_diagonal_mode_oracle_mexicanhat():
    m = md.builtin("toy-mexicanhat")
    sig = [[ex.zvar(1), ex.const(0.0)], [ex.const(0.0), ex.zvar(2)]]
    m = m.with_sigma(sig)
    pt = Point(0.0, [1.0, 0.0], [0.0], [1.0, 1.0])
    rep = hx.check_star_conditions(m, pt, mode="diagonal", paths=(1, 2, 2))
    assert rep.verdict == "pass"
    assert abs(rep.det - (-8.0)) < 1e-9


def test_constant_surjective_mode_oracle():
    m = md.builtin("toy-mexicanhat").with_sigma(
        [[ex.const(1.0), ex.const(1.0), ex.const(2.0)],
         [ex.const(0.0), ex.const(1.0), ex.const(1.0)]])
    pt = Point(0.0, [1.0, 0.0], [0.0], [0.0, 0.0])
    rep = hx.check_star_conditions(m, pt, mode="constant-surjective",
                                   paths=((1,), (1, 2), (2, 2)))
    assert rep.verdict == "pass"
    rows = np.array(rep.vectors)
    assert np.allclose(rows[0], [-2.0, 0.0, 2.0])
    assert np.allclose(rows[1], [-6.0, -2.0, 2.0])
    assert np.allclose(rows[2], [-8.0, -4.0, 4.0])


def test_constant_surjective_requires_constant_sigma():
    z = ex.zvar(1)
    m = md.builtin("toy-cascade").with_sigma([[z]])
    with pytest.raises(hx.ShapeError):
        hx.check_star_conditions(m, Point(0.0, [1.0], [1.0], [0.0]),
                                 mode="constant-surjective", paths=((1,),))


def test_cascade_conditions_pass_and_fail():
    tc = md.builtin("toy-cascade", n_y=3)
    for side in (1.0, -1.0):
        region = {"x": [(side - 0.2, side + 0.2)], "y": [(0.8, 1.2)] * 3}
        ok = hx.check_cascade_conditions(tc, region, samples=100, seed=1)
        assert ok["H1"].verdict == "pass"
        assert ok["H2"].verdict == "pass"
    bad = hx.check_cascade_conditions(md.builtin("rotor-chain-1"),
                                      samples=100, seed=1)
    assert bad["H1"].verdict == "fail"
    assert bad["H1"].witness["kind"] == "vanishing-link"
    assert bad["H1"].witness["component"] == 2


def test_rank_certificates():
    hh = md.builtin("hodgkin-huxley")
    eq = md.equilibrium_state(hh).as_array()
    cert = hx.hoermander_rank(hh, eq, strategy="star")
    assert cert.verdict == "pass" and cert.rank == 5
    assert len(cert.per_t) == 10
    assert len({v["rank"] for v in cert.per_t}) == 1

    tc = md.builtin("toy-cascade", n_y=3)
    cert2 = hx.hoermander_rank(tc, np.array([1.0, 1.0, 1.0, 1.0, 0.0]),
                               strategy="cascade")
    assert cert2.verdict == "pass" and cert2.rank == 5


def test_rank_fails_without_noise():
    m = md.builtin("toy-cascade").with_sigma([[ex.const(0.0)]])
    cert = hx.hoermander_rank(m, np.array([1.0, 1.0, 0.0]))
    assert cert.verdict == "fail"
    assert cert.rank < 3


def test_rank_explicit_time_samples():
    m = md.builtin("toy-cascade")
    cert = hx.hoermander_rank(m, np.array([1.0, 1.0, 0.0]),
                              t_samples=[0.0, 0.25])
    assert len(cert.per_t) == 2
