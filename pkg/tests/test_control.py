import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hypolab.control as ct
import hypolab.expr as ex
import hypolab.models as md
from hypolab.fields import VectorField


def test_kronecker_oracles():
    r = ct.kronecker_search(1.0, math.sqrt(2.0), 0.1)
    assert (r.found, r.n, r.m) == (True, 5, 7)
    assert abs(r.error - 0.0711) < 1e-4
    r2 = ct.kronecker_search(1.0, math.pi, 0.01)
    assert (r2.n, r2.m) == (7, 22)


def test_kronecker_rejects_rational_ratio():
    with pytest.raises(ValueError):
        ct.kronecker_search(1.0, 1.5, 0.1)
    with pytest.raises(ValueError):
        ct.kronecker_search(2.0, 3.0 + 1e-14, 0.1)


def test_kronecker_not_found_within_bound():
    r = ct.kronecker_search(1.0, math.sqrt(2.0), 1e-9, bound=50)
    assert not r.found


@given(st.integers(1, 60), st.integers(1, 60))
@settings(max_examples=80, deadline=None)
def test_kronecker_rational_property(p, q):
    # any exact fraction with small denominator must be refused
    if math.gcd(p, q) != 1 or q > 1000:
        return
    with pytest.raises(ValueError):
        ct.kronecker_search(1.0, p / q, 0.1)


def test_rho_rest_mode_budget():
    path, k = ct.synthesize_rho([0.0], [1.0], 0.2, 1.0)
    assert k >= 6
    assert path.max_rate(4000) <= 0.2 + 1e-12
    assert np.allclose(path.value(path.t_end), [1.0])
    assert np.allclose(path.value(0.0), [0.0])
    # smooth flat ends
    assert np.allclose(path.derivative(0.0), [0.0])
    assert np.allclose(path.derivative(path.t_end), [0.0])


def test_rho_trivial_when_already_there():
    path, k = ct.synthesize_rho([0.7, -0.1], [0.7, -0.1], 0.5, 2.0)
    assert k == 1
    assert np.allclose(path.value(1.0), [0.7, -0.1])
    assert np.allclose(path.derivative(1.0), [0.0, 0.0])


def test_rho_periodic_mode_reaches_target():
    tv = ex.tvar()
    w = 2 * math.pi
    star = [ex.sin(ex.mul(w, tv))]
    anti = [ex.mul(-1.0 / w, ex.cos(ex.mul(w, tv)))]
    path, k = ct.synthesize_rho([0.0], [1.0], 1.5, 1.0,
                                mode="zero-mean-periodic", star_signal=star,
                                star_antiderivative=anti, cycle_period=1.0)
    assert np.allclose(path.value(path.t_end), [1.0], atol=1e-12)
    assert path.max_rate(4000) <= 1.5 + 1e-9


def test_rho_periodic_mode_rejects_nonzero_mean():
    tv = ex.tvar()
    star = [ex.add(0.3, ex.sin(ex.mul(2 * math.pi, tv)))]
    anti = [ex.add(ex.mul(0.3, tv),
                   ex.mul(-1.0 / (2 * math.pi),
                          ex.cos(ex.mul(2 * math.pi, tv))))]
    with pytest.raises(ValueError):
        ct.synthesize_rho([0.0], [1.0], 1.5, 1.0, mode="zero-mean-periodic",
                          star_signal=star, star_antiderivative=anti,
                          cycle_period=1.0)


def test_rho_periodic_mode_rejects_bad_antiderivative():
    tv = ex.tvar()
    star = [ex.sin(ex.mul(2 * math.pi, tv))]
    anti = [ex.mul(0.5, ex.cos(ex.mul(2 * math.pi, tv)))]
    with pytest.raises(ValueError):
        ct.synthesize_rho([0.0], [1.0], 1.5, 1.0, mode="zero-mean-periodic",
                          star_signal=star, star_antiderivative=anti,
                          cycle_period=1.0)


def test_path_rejects_jumps():
    a = ct.constant_segment(0.0, 1.0, [0.0])
    b = ct.constant_segment(1.0, 2.0, [0.5])
    with pytest.raises(ValueError):
        ct.SmoothPath([a, b])


def test_control_signal_exactness():
    m = md.builtin("toy-cascade")
    path, _ = ct.synthesize_rho([0.0], [1.0], 0.5, 1.0)
    sig = ct.control_input(path, m)
    t = 1.3
    z = path.value(t)
    hdot = sig.at(t)
    pt = ex.Point(t=t, z=z)
    got = (ex.evaluate(m.signal.exprs()[0], pt)
           + ex.evaluate(md.stratonovich_drift(m)[0], pt) + hdot[0])
    assert abs(got - path.derivative(t)[0]) < 1e-12


def test_control_singular_sigma_error_names_location():
    m = md.builtin("toy-cascade").with_sigma([[ex.const(0.0)]])
    path, _ = ct.synthesize_rho([0.0], [1.0], 0.5, 1.0)
    sig = ct.control_input(path, m)
    with pytest.raises(ct.SingularNoiseError) as err:
        sig.at(0.5)
    assert err.value.t == 0.5


def test_integrate_ode_decay_oracle():
    f = VectorField((ex.neg(ex.xvar(1)),), (("x", 1),))
    traj = ct.integrate_ode(f, [1.0], (0.0, 1.0))
    assert abs(traj.final[0] - math.exp(-1.0)) < 1e-8
    assert abs(traj.at(0.4995)[0] - math.exp(-0.4995)) < 1e-10


def test_integrate_ode_spiral_stays_on_cycle():
    m = md.builtin("spiral")
    f = VectorField(m.f + m.g, (("x", 1), ("y", 1)))
    traj = ct.integrate_ode(f, [1.0, 0.0], (0.0, 100.0))
    r = np.sqrt(traj.states[:, 0] ** 2 + traj.states[:, 1] ** 2)
    assert np.max(np.abs(r - 1.0)) < 1e-6


def test_integrate_ode_hh_equilibrium_quiescent():
    m = md.builtin("hodgkin-huxley")
    eq = md.equilibrium_state(m)
    f = VectorField(m.f + m.g, (("x", 1), ("y", 1), ("y", 2), ("y", 3)))
    y0 = np.array(eq.x + eq.y)
    traj = ct.integrate_ode(f, y0, (0.0, 50.0))
    assert np.max(np.abs(traj.states - y0)) < 1e-4


def test_plan_missing_metadata():
    m = md.builtin("toy-cascade")
    with pytest.raises(ct.PlanningError) as err:
        ct.plan_attain(m, [1.0, 1.0, 0.0], ([1.0, 1.0], [0.5]), mode="local")
    assert err.value.diagnostics["reason"] == "missing-metadata"


def test_plan_wait_timeout_diagnostics():
    m = md.builtin("toy-cascade")
    with pytest.raises(ct.PlanningError) as err:
        ct.plan_attain(m, [1.0, 1.0, 0.0], ([5.0, 5.0], [0.5]), mode="local",
                       metadata={"delta": 0.5, "gamma": [ex.const(1.0)],
                                 "gamma_duration": 1.0, "wait_timeout": 2})
    d = err.value.diagnostics
    assert d["reason"] == "phase2-timeout"
    assert d["min_distance"] > 0


def test_plan_local_phases_and_budget():
    m = md.builtin("toy-cascade")
    plan = ct.plan_attain(m, [1.0, 1.0, 0.0], ([1.0, 1.0], [0.5]),
                          mode="local",
                          metadata={"delta": 0.5, "gamma": [ex.const(1.0)],
                                    "gamma_duration": 2.0})
    d = plan.diagnostics
    assert d["phase1_end"] == 2.0
    assert d["phase2_end"] >= d["phase1_end"]
    assert d["phase3_end"] > d["phase2_end"]
    assert plan.duration > d["phase3_end"]
    # strict interior budget for the final input ramp
    tail = [plan.path.derivative(t)
            for t in np.linspace(d["phase2_end"], plan.duration, 500)]
    assert np.max(np.abs(tail)) <= 0.95 * 0.5 + 1e-9


def test_certify_spiral_attains_target():
    m = md.builtin("spiral")
    plan = ct.plan_attain(m, [0.3, -0.2, 0.25], ([1.0, 0.0], [0.0]),
                          mode="simple", metadata={"delta": 0.5})
    cert = ct.certify_attainability(plan, m, eps=1e-2, n_max=700)
    assert cert.passed
    assert cert.best_distance < 1e-2
    assert cert.first_hit is not None and cert.first_hit > 0


def test_certify_reports_failure_for_tight_eps():
    m = md.builtin("spiral")
    plan = ct.plan_attain(m, [0.3, -0.2, 0.25], ([1.0, 0.0], [0.0]),
                          mode="simple", metadata={"delta": 0.5})
    cert = ct.certify_attainability(plan, m, eps=1e-12, n_max=30)
    assert not cert.passed
    assert cert.first_hit is None


def test_closed_loop_tracks_path():
    m = md.builtin("toy-mexicanhat")
    plan = ct.plan_attain(m, [0.5, 0.5, 0.5, 0.0, 0.0],
                          ([0.5, 0.5, 0.5], [1.0, -1.0]),
                          mode="simple", metadata={"delta": 0.5})
    ts, states, div = ct.run_closed_loop(m, plan.path, np.array(plan.phi0),
                                         plan.duration)
    assert div == -1
    idx = range(0, len(ts), 37)
    errs = [np.max(np.abs(states[i, 3:] - plan.path.value(ts[i])))
            for i in idx]
    assert max(errs) < 1e-9
