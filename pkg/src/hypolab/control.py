"""Steering plans: smooth input paths, exact-tracking controls, and
deterministic attainability certificates.

The controlled system replaces the noise increment with a chosen control
rate: given a smooth target path rho for the input state, the control

    hdot(t) = pinv(sigma(rho(t))) (rhodot(t) - S(t) - btilde(rho(t)))

makes rho an exact solution of the input equation, and the rest of the
state follows the closed loop

    udot = f(u, v) + S(t) + btilde(w) + sigma(w) hdot,
    vdot = g(u, v),
    wdot = S(t) + btilde(w) + sigma(w) hdot.

Plans are built in one of three modes and certified by integrating the
closed loop and measuring grid-time distances to the target.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import engine as en
from . import expr as ex
from . import tape as tp
from .expr import Expr, Point
from .fields import VectorField
from .models import ModelSpec, assemble_time_space_fields, stratonovich_drift

DEFAULT_STEP = 1e-3
PHASE3_MARGIN = 0.95


class PlanningError(RuntimeError):
    """Plan construction failed; carries structured diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularNoiseError(ValueError):
    def __init__(self, t: float, z):
        super().__init__(
            f"noise matrix is not right-invertible at t={t}, z={tuple(z)}")
        self.t = t
        self.z = tuple(float(v) for v in z)


# ---------------------------------------------------------------------------
# commensurability search

@dataclass(frozen=True)
class KroneckerResult:
    found: bool
    n: int
    m: int
    error: float
    eps: float
    bound: int

    def to_json_dict(self) -> dict:
        return {"found": self.found, "n": self.n, "m": self.m,
                "error": self.error, "eps": self.eps, "bound": self.bound}


def kronecker_search(period: float, target_period: float, eps: float,
                     bound: int = 10000) -> KroneckerResult:
    """Smallest n <= bound with |n*target_period - m*period| < eps.

    Rejects (nearly) rationally dependent periods, where grid times can lock
    to finitely many phases: if a fraction with denominator <= 1000 matches
    the ratio to within 1e-12, the search refuses to run.
    """
    if period <= 0 or target_period <= 0:
        raise ValueError("periods must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    ratio = target_period / period
    approx = Fraction(ratio).limit_denominator(1000)
    if abs(ratio - float(approx)) < 1e-12:
        raise ValueError(
            f"period ratio {ratio!r} is rational within 1e-12 "
            f"({approx.numerator}/{approx.denominator}); grid phases cannot "
            "equidistribute")
    best = None
    for n in range(1, int(bound) + 1):
        m = round(n * ratio)
        err = abs(n * target_period - m * period)
        if err < eps:
            best = (n, m, err)
            break
    if best is None:
        return KroneckerResult(False, 0, 0, math.inf, float(eps), int(bound))
    n, m, err = best
    # exact rational recheck of the float comparison
    exact = abs(Fraction(n) * Fraction(target_period) - Fraction(m) * Fraction(period))
    if not exact < Fraction(eps):
        return KroneckerResult(False, 0, 0, float(exact), float(eps), int(bound))
    return KroneckerResult(True, int(n), int(m), float(err), float(eps), int(bound))


# ---------------------------------------------------------------------------
# smooth paths

@dataclass(frozen=True)
class ExprSegment:
    t0: float
    t1: float
    exprs: tuple[Expr, ...]
    dexprs: tuple[Expr, ...]

    @staticmethod
    def make(t0: float, t1: float, exprs) -> "ExprSegment":
        exprs = tuple(ex._as_expr(e) for e in exprs)
        d = tuple(ex.differentiate(c, ("t", 0)) for c in exprs)
        return ExprSegment(float(t0), float(t1), exprs, d)

    @property
    def dim(self) -> int:
        return len(self.exprs)

    def value(self, t: float) -> np.ndarray:
        pt = Point(t)
        return np.array([ex.evaluate(c, pt) for c in self.exprs])

    def derivative(self, t: float) -> np.ndarray:
        pt = Point(t)
        return np.array([ex.evaluate(c, pt) for c in self.dexprs])


class SampledSegment:
    """Cubic interpolation through integrator nodes with matching slopes."""

    __slots__ = ("t0", "t1", "ts", "values", "derivs")

    def __init__(self, ts, values, derivs):
        self.ts = np.asarray(ts, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.derivs = np.asarray(derivs, dtype=float)
        if len(self.ts) < 2 or self.values.shape != self.derivs.shape \
                or self.values.shape[0] != len(self.ts):
            raise ValueError("inconsistent sampled segment data")
        self.t0 = float(self.ts[0])
        self.t1 = float(self.ts[-1])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def _locate(self, t: float):
        i = int(np.searchsorted(self.ts, t, side="right")) - 1
        i = min(max(i, 0), len(self.ts) - 2)
        ta, tb = self.ts[i], self.ts[i + 1]
        h = tb - ta
        s = (t - ta) / h
        return i, h, s

    def value(self, t: float) -> np.ndarray:
        i, h, s = self._locate(t)
        ya, yb = self.values[i], self.values[i + 1]
        da, db = self.derivs[i], self.derivs[i + 1]
        s2, s3 = s * s, s * s * s
        return (ya * (2 * s3 - 3 * s2 + 1) + da * h * (s3 - 2 * s2 + s)
                + yb * (-2 * s3 + 3 * s2) + db * h * (s3 - s2))

    def derivative(self, t: float) -> np.ndarray:
        i, h, s = self._locate(t)
        ya, yb = self.values[i], self.values[i + 1]
        da, db = self.derivs[i], self.derivs[i + 1]
        s2 = s * s
        return (ya * (6 * s2 - 6 * s) / h + da * (3 * s2 - 4 * s + 1)
                + yb * (6 * s - 6 * s2) / h + db * (3 * s2 - 2 * s))


class SmoothPath:
    """Piecewise path for the input state; constant-clamped outside its span."""

    def __init__(self, segments: Sequence):
        if not segments:
            raise ValueError("a path needs at least one segment")
        self.segments = list(segments)
        dims = {s.dim for s in self.segments}
        if len(dims) != 1:
            raise ValueError("segments disagree on dimension")
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(a.t1 - b.t0) > 1e-9:
                raise ValueError("segments are not contiguous")
            gap = float(np.max(np.abs(a.value(a.t1) - b.value(b.t0))))
            if gap > 1e-7:
                raise ValueError(f"path jumps by {gap:.3e} at t={a.t1}")

    @property
    def dim(self) -> int:
        return self.segments[0].dim

    @property
    def t_start(self) -> float:
        return self.segments[0].t0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1

    def _segment_at(self, t: float):
        for seg in self.segments:
            if t < seg.t1:
                return seg
        return self.segments[-1]

    def value(self, t: float) -> np.ndarray:
        if t <= self.t_start:
            return self.segments[0].value(self.t_start)
        if t >= self.t_end:
            return self.segments[-1].value(self.t_end)
        return self._segment_at(t).value(t)

    def derivative(self, t: float) -> np.ndarray:
        if t < self.t_start or t > self.t_end:
            return np.zeros(self.dim)
        return self._segment_at(t).derivative(t)

    def extended(self, extra) -> "SmoothPath":
        return SmoothPath(self.segments + list(extra))

    def max_rate(self, samples: int = 2000) -> float:
        ts = np.linspace(self.t_start, self.t_end, samples)
        return max(float(np.max(np.abs(self.derivative(t)))) for t in ts)


def constant_segment(t0: float, t1: float, values) -> ExprSegment:
    return ExprSegment.make(t0, t1, [ex.const(float(v)) for v in values])


# ---------------------------------------------------------------------------
# path synthesis

def _ramp_periods(gap: float, delta: float, period: float) -> int:
    if gap == 0.0:
        return 1
    k = max(1, math.ceil(2.0 * gap / (delta * period)))
    # the ceil above can land exactly on the budget; keep strictly within
    while 2.0 * gap / (k * period) > delta:
        k += 1
    return k


def synthesize_rho(z0, zstar, delta: float, period: float,
                   mode: str = "rest-at-target", t0: float = 0.0,
                   star_signal=None, star_antiderivative=None,
                   cycle_period: float | None = None):
    """Smooth input path from z0 with rate budget delta; returns (path, k).

    rest-at-target: one smoothstep ramp over k periods, then constant at
    the target; k is minimal for the budget sup |rhodot| <= delta.
    zero-mean-periodic: adds a periodic drift term whose antiderivative is
    supplied explicitly, so the path tracks a moving target; the ramp then
    gets the rate budget left over by the drift.
    """
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    zstar = np.atleast_1d(np.asarray(zstar, dtype=float))
    if z0.shape != zstar.shape:
        raise ValueError("start and target dimensions differ")
    if not (delta > 0 and period > 0):
        raise ValueError("delta and period must be positive")
    n = len(z0)
    tv = ex.tvar()
    if mode == "rest-at-target":
        gap = float(np.max(np.abs(zstar - z0)))
        k = _ramp_periods(gap, delta, period)
        width = k * period
        exprs = []
        for i in range(n):
            dz = zstar[i] - z0[i]
            if dz == 0.0:
                exprs.append(ex.const(z0[i]))
            else:
                arg = ex.mul(1.0 / width, ex.sub(tv, t0))
                exprs.append(ex.add(z0[i], ex.mul(dz, ex.bump(arg))))
        return SmoothPath([ExprSegment.make(t0, t0 + width, exprs)]), k
    if mode == "zero-mean-periodic":
        if star_signal is None or star_antiderivative is None or cycle_period is None:
            raise ValueError("periodic mode needs the drift, its antiderivative, "
                             "and the drift period")
        drift = tuple(ex._as_expr(e) for e in np.atleast_1d(star_signal))
        anti = tuple(ex._as_expr(e) for e in np.atleast_1d(star_antiderivative))
        if len(drift) != n or len(anti) != n:
            raise ValueError("drift component count does not match the path dimension")
        ts = np.linspace(0.0, float(cycle_period), 512, endpoint=False)
        for s_e, a_e in zip(drift, anti):
            mean = (ex.evaluate(a_e, Point(float(cycle_period))) -
                    ex.evaluate(a_e, Point(0.0))) / float(cycle_period)
            if abs(mean) >= 1e-10:
                raise ValueError(f"drift mean {mean:.3e} is not zero")
            sampled = [abs(ex.evaluate(s_e, Point(t)) -
                           ex.evaluate(ex.differentiate(a_e, ("t", 0)), Point(t)))
                       for t in ts[::8]]
            if max(sampled) > 1e-9:
                raise ValueError("antiderivative does not match the drift")
        sup_s = max(abs(ex.evaluate(s_e, Point(t)))
                    for s_e in drift for t in ts)
        if sup_s >= delta:
            raise ValueError(
                f"drift magnitude {sup_s:.3g} uses up the rate budget {delta}")
        budget = delta - sup_s
        anti0 = np.array([ex.evaluate(a_e, Point(t0)) for a_e in anti])
        # end value of the drift term depends on the width, solve iteratively
        k = 1
        for _ in range(64):
            width = k * period
            anti_end = np.array([ex.evaluate(a_e, Point(t0 + width)) for a_e in anti])
            dz = zstar - z0 - (anti_end - anti0)
            k_new = _ramp_periods(float(np.max(np.abs(dz))), budget, period)
            if k_new <= k:
                break
            k = k_new
        width = k * period
        anti_end = np.array([ex.evaluate(a_e, Point(t0 + width)) for a_e in anti])
        dz = zstar - z0 - (anti_end - anti0)
        exprs = []
        for i in range(n):
            terms = [ex.const(z0[i] - anti0[i]), anti[i]]
            if dz[i] != 0.0:
                arg = ex.mul(1.0 / width, ex.sub(tv, t0))
                terms.append(ex.mul(dz[i], ex.bump(arg)))
            exprs.append(ex.add(*terms))
        return SmoothPath([ExprSegment.make(t0, t0 + width, exprs)]), k
    raise ValueError(f"unknown synthesis mode {mode!r}")


# ---------------------------------------------------------------------------
# exact-tracking control

class ControlSignal:
    """Control rate that makes the given path an exact input trajectory."""

    def __init__(self, path: SmoothPath, m: ModelSpec):
        if path.dim != m.n_x:
            raise ValueError("path dimension does not match the input state")
        self.path = path
        self.m = m
        self._signal = m.signal.exprs()
        self._btilde = stratonovich_drift(m)

    def at(self, t: float) -> np.ndarray:
        z = self.path.value(t)
        zdot = self.path.derivative(t)
        pt = Point(t=t, z=z)
        sig = self.m.sigma_matrix_at(pt)
        rhs = zdot - np.array([ex.evaluate(c, pt) for c in self._signal]) \
            - np.array([ex.evaluate(c, pt) for c in self._btilde])
        gram = sig @ sig.T
        sv = np.linalg.svd(gram, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
            raise SingularNoiseError(t, z)
        return sig.T @ np.linalg.solve(gram, rhs)

    def grid(self, t0: float, h: float, nsteps: int) -> np.ndarray:
        rows = np.empty((2 * nsteps + 1, self.m.n_w))
        for q in range(2 * nsteps + 1):
            rows[q] = self.at(t0 + 0.5 * q * h)
        return rows


def control_input(rho: SmoothPath, m: ModelSpec) -> ControlSignal:
    return ControlSignal(rho, m)


# ---------------------------------------------------------------------------
# generic fixed-step integration with dense output

@dataclass
class Trajectory:
    ts: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    diverged_step: int = -1

    @property
    def diverged(self) -> bool:
        return self.diverged_step >= 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        seg = SampledSegment(self.ts, self.states, self.derivs)
        return seg.value(t)

    def dense(self) -> SampledSegment:
        return SampledSegment(self.ts, self.states, self.derivs)


def _steps_for(span: float, step: float) -> tuple[int, float]:
    nsteps = max(1, round(span / step))
    return nsteps, span / nsteps


def integrate_ode(field: VectorField, y0, t_span, config=None) -> Trajectory:
    """Fixed-step RK4 with cubic dense output."""
    config = dict(config or {})
    step = float(config.get("step", DEFAULT_STEP))
    stride = int(config.get("stride", 1))
    t0, t1 = (float(v) for v in t_span)
    if t1 <= t0:
        raise ValueError("empty time span")
    layout = (("t", 0),) + field.coords
    tape_ = tp.compile_exprs(field.components, layout)
    nsteps, h = _steps_for(t1 - t0, step)
    if nsteps % stride:
        stride = 1
    states, derivs, n_valid, diverged = en.run_rk4(
        tape_, np.asarray(y0, dtype=float), t0, h, nsteps, stride,
        want_deriv=True)
    ts = t0 + h * stride * np.arange(states.shape[0])
    return Trajectory(ts[:n_valid], states[:n_valid], derivs[:n_valid],
                      diverged_step=diverged)


# ---------------------------------------------------------------------------
# closed loop

def closed_loop_tape(m: ModelSpec) -> tp.Tape:
    der = assemble_time_space_fields(m)
    sig = m.signal.exprs()
    comps = []
    for i in range(m.n_x):
        noise = [ex.mul(m.sigma[i][k], tp.exog(k + 1)) for k in range(m.n_w)
                 if not ex.is_zero(m.sigma[i][k])]
        comps.append(ex.add(m.f[i], sig[i], der.b_tilde[i], *noise))
    comps.extend(m.g)
    for i in range(m.n_x):
        noise = [ex.mul(m.sigma[i][k], tp.exog(k + 1)) for k in range(m.n_w)
                 if not ex.is_zero(m.sigma[i][k])]
        comps.append(ex.add(sig[i], der.b_tilde[i], *noise))
    layout = (("t", 0),) + tuple(("e", k + 1) for k in range(m.n_w)) \
        + m.state_coord_keys()
    return tp.compile_exprs(comps, layout)


def run_closed_loop(m: ModelSpec, path: SmoothPath, phi0, t_end: float,
                    step: float = DEFAULT_STEP):
    """Integrate the controlled system, then coast with the control off.

    Integration restarts at every path segment boundary so a step never
    straddles a control discontinuity. Returns (ts, states, diverged_step).
    """
    tape_ = closed_loop_tape(m)
    ctrl = ControlSignal(path, m)
    state = np.asarray(phi0, dtype=float)
    if state.shape != (m.state_dim,):
        state = m.point(0.0, phi0).as_array()
    cuts = [seg.t0 for seg in path.segments if seg.t0 < t_end]
    cuts += [min(path.t_end, t_end)]
    if path.t_end < t_end:
        cuts.append(t_end)
    all_ts = [np.array([cuts[0]])]
    all_states = [state[None, :].copy()]
    t_cur = cuts[0]
    for t_next in cuts[1:]:
        if t_next <= t_cur + 1e-12:
            continue
        nsteps, h = _steps_for(t_next - t_cur, step)
        if t_cur < path.t_end - 1e-12:
            exog = ctrl.grid(t_cur, h, nsteps)
        else:
            exog = np.zeros((2 * nsteps + 1, m.n_w))
        states, _, n_valid, diverged = en.run_rk4(
            tape_, state, t_cur, h, nsteps, 1, exog_rows=exog)
        ts = t_cur + h * np.arange(states.shape[0])
        all_ts.append(ts[1:n_valid])
        all_states.append(states[1:n_valid])
        if diverged >= 0:
            return (np.concatenate(all_ts), np.vstack(all_states), diverged)
        state = states[n_valid - 1].copy()
        t_cur = t_next
    return np.concatenate(all_ts), np.vstack(all_states), -1


# ---------------------------------------------------------------------------
# plans

@dataclass
class ControlPlan:
    model: str
    mode: str
    phi0: tuple
    target_observed: tuple      # (x*, y*) block, dim n_x + n_y
    target_input: tuple         # z* block, dim n_x
    path: SmoothPath
    periods: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.path.t_end

    @property
    def target_state(self) -> np.ndarray:
        return np.array(self.target_observed + self.target_input)

    def summary(self) -> dict:
        return {"model": self.model, "mode": self.mode,
                "duration": self.duration, "periods": self.periods,
                "phi0": list(self.phi0),
                "target": list(self.target_observed) + list(self.target_input),
                "diagnostics": _plain(self.diagnostics)}


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _normalize_target(m: ModelSpec, target):
    try:
        observed, z_star = target
    except (TypeError, ValueError):
        raise PlanningError("target must be a pair (observed block, input block)",
                            {"reason": "bad-target"}) from None
    observed = tuple(float(v) for v in np.atleast_1d(observed))
    z_star = tuple(float(v) for v in np.atleast_1d(z_star))
    if len(observed) != m.n_x + m.n_y or len(z_star) != m.n_x:
        raise PlanningError(
            f"target blocks have dims {len(observed)}/{len(z_star)}, "
            f"model needs {m.n_x + m.n_y}/{m.n_x}",
            {"reason": "bad-target-shape"})
    return observed, z_star


def _as_exprs(value, n: int, label: str):
    if value is None:
        raise PlanningError(f"missing metadata entry {label!r}",
                            {"reason": "missing-metadata", "key": label})
    items = value if isinstance(value, (list, tuple)) else [value]
    out = []
    for item in items:
        if isinstance(item, str):
            out.append(ex.parse_sexpr(item))
        else:
            out.append(ex._as_expr(item))
    if len(out) != n:
        raise PlanningError(f"metadata entry {label!r} needs {n} components",
                            {"reason": "bad-metadata", "key": label})
    return tuple(out)


def plan_attain(m: ModelSpec, phi0, target, mode: str = "simple",
                metadata: dict | None = None) -> ControlPlan:
    """Build a steering plan toward (observed target, input target)."""
    md = dict(metadata or {})
    pt0 = phi0 if isinstance(phi0, Point) else m.point(0.0, phi0)
    phi0_state = pt0.x + pt0.y + pt0.z
    observed, z_star = _normalize_target(m, target)
    delta = float(md.get("delta", 0.5))
    rest_periods = int(md.get("rest_periods", 1))
    T = m.period
    z0 = np.array(pt0.z)

    if mode == "simple":
        path, k = synthesize_rho(z0, z_star, delta, T)
        if rest_periods > 0:
            path = path.extended([constant_segment(
                path.t_end, path.t_end + rest_periods * T, z_star)])
        return ControlPlan(m.name, mode, phi0_state, observed, z_star, path, k,
                           {"delta": delta, "ramp_periods": k})

    if mode == "periodic":
        star = _as_exprs(md.get("star_signal"), m.n_x, "star_signal")
        anti = _as_exprs(md.get("star_antiderivative"), m.n_x,
                         "star_antiderivative")
        cycle = md.get("cycle_period")
        if cycle is None:
            raise PlanningError("missing metadata entry 'cycle_period'",
                                {"reason": "missing-metadata",
                                 "key": "cycle_period"})
        try:
            path, k = synthesize_rho(z0, z_star, delta, T,
                                     mode="zero-mean-periodic",
                                     star_signal=star,
                                     star_antiderivative=anti,
                                     cycle_period=float(cycle))
        except ValueError as err:
            raise PlanningError(str(err), {"reason": "synthesis"}) from err
        return ControlPlan(m.name, mode, phi0_state, observed, z_star, path, k,
                           {"delta": delta, "cycle_period": float(cycle),
                            "ramp_periods": k})

    if mode == "local":
        gamma = _as_exprs(md.get("gamma"), m.n_x, "gamma")
        t1 = md.get("gamma_duration")
        if t1 is None:
            raise PlanningError("missing metadata entry 'gamma_duration'",
                                {"reason": "missing-metadata",
                                 "key": "gamma_duration"})
        t1 = float(t1)
        step = float(md.get("plan_step", DEFAULT_STEP))
        wait_timeout = float(md.get("wait_timeout", 200.0)) * T
        gdot = tuple(ex.differentiate(c, ("t", 0)) for c in gamma)
        g0 = np.array([ex.evaluate(c, Point(0.0)) for c in gamma])
        if float(np.max(np.abs(g0 - np.array(pt0.x)))) > 1e-9:
            raise PlanningError(
                "observed path does not start at the initial state",
                {"reason": "gamma-start-mismatch", "gamma0": list(g0),
                 "x0": list(pt0.x)})

        # phase 1: ride the observed path; internals and input state follow
        nx, ny = m.n_x, m.n_y
        sub_map = {("x", i + 1): tp.exog(i + 1) for i in range(nx)}
        v_comps = [ex.substitute(c, sub_map) for c in m.g]
        w_comps = [ex.sub(tp.exog(nx + i + 1), ex.substitute(m.f[i], sub_map))
                   for i in range(nx)]
        layout = (("t", 0),) + tuple(("e", q + 1) for q in range(2 * nx)) \
            + tuple(("y", j + 1) for j in range(ny)) \
            + tuple(("z", i + 1) for i in range(nx))
        tape1 = tp.compile_exprs(v_comps + w_comps, layout)
        nsteps, h = _steps_for(t1, step)
        exog = np.empty((2 * nsteps + 1, 2 * nx))
        for q in range(2 * nsteps + 1):
            tq = 0.5 * q * h
            exog[q, :nx] = [ex.evaluate(c, Point(tq)) for c in gamma]
            exog[q, nx:] = [ex.evaluate(c, Point(tq)) for c in gdot]
        y0 = np.concatenate([pt0.y, pt0.z])
        states, derivs, n_valid, diverged = en.run_rk4(
            tape1, y0, 0.0, h, nsteps, 1, exog_rows=exog, want_deriv=True)
        if diverged >= 0:
            raise PlanningError("phase 1 integration diverged",
                                {"reason": "phase1-divergence",
                                 "step_index": diverged})
        ts1 = h * np.arange(n_valid)
        seg1 = SampledSegment(ts1, states[:n_valid, ny:],
                              derivs[:n_valid, ny:])
        v1 = states[n_valid - 1, :ny]
        w1 = states[n_valid - 1, ny:]
        gamma_end = np.array([ex.evaluate(c, Point(t1)) for c in gamma])

        # phase 2: hold the input state and wait for the observed block to
        # drift into the half-budget ball around the observed target
        o_star = np.array(observed)
        obs_field = VectorField(m.f + m.g, m.state_coord_keys()[:nx + ny])
        state2 = np.concatenate([gamma_end, v1])
        t2 = None
        t_elapsed = 0.0
        chunk = T
        min_seen = math.inf
        while t_elapsed < wait_timeout:
            traj = integrate_ode(obs_field, state2,
                                 (t1 + t_elapsed, t1 + t_elapsed + chunk),
                                 {"step": step})
            if traj.diverged:
                raise PlanningError("phase 2 integration diverged",
                                    {"reason": "phase2-divergence"})
            dist = np.linalg.norm(traj.states - o_star, axis=1)
            min_seen = min(min_seen, float(dist.min()))
            hit = np.nonzero(dist <= delta / 2.0)[0]
            if hit.size:
                t2 = float(traj.ts[hit[0]])
                state2 = traj.states[hit[0]]
                break
            state2 = traj.final
            t_elapsed += chunk
        if t2 is None:
            raise PlanningError(
                "observed state never reached the waiting ball",
                {"reason": "phase2-timeout", "waited": wait_timeout,
                 "min_distance": min_seen, "ball_radius": delta / 2.0})

        segments = [seg1]
        if t2 > t1 + 1e-12:
            segments.append(constant_segment(t1, t2, w1))

        # phase 3: move the input state to its target, strictly inside budget
        path3, k3 = synthesize_rho(w1, z_star, PHASE3_MARGIN * delta, T, t0=t2)
        segments.extend(path3.segments)
        t3 = path3.t_end

        # phase 4: rest
        if rest_periods > 0:
            segments.append(constant_segment(t3, t3 + rest_periods * T, z_star))
        path = SmoothPath(segments)
        return ControlPlan(
            m.name, mode, phi0_state, observed, z_star, path, k3,
            {"delta": delta, "phase1_end": t1, "phase2_end": t2,
             "phase3_end": t3, "duration": path.t_end,
             "wait_distance": min_seen})

    raise PlanningError(f"unknown plan mode {mode!r}", {"reason": "bad-mode"})


# ---------------------------------------------------------------------------
# certification

@dataclass(frozen=True)
class AttainabilityCertificate:
    model: str
    mode: str
    verdict: str
    best_distance: float
    best_period: int
    first_hit: int | None
    eps: float
    n_max: int
    step: float
    plan_duration: float
    diverged: bool
    grid_count: int

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json_dict(self) -> dict:
        return _plain({
            "model": self.model, "mode": self.mode, "verdict": self.verdict,
            "best_distance": self.best_distance,
            "best_period": self.best_period, "first_hit": self.first_hit,
            "eps": self.eps, "n_max": self.n_max, "step": self.step,
            "plan_duration": self.plan_duration, "diverged": self.diverged,
            "grid_count": self.grid_count})

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)


def certify_attainability(plan: ControlPlan, m: ModelSpec, eps: float,
                          n_max: int, config=None) -> AttainabilityCertificate:
    """Drive the closed loop along the plan, coast, and measure grid hits."""
    config = dict(config or {})
    step = float(config.get("step", DEFAULT_STEP))
    T = m.period
    target = plan.target_state
    horizon = n_max * T
    t_plan = min(plan.path.t_end, horizon)

    ts, states, diverged = run_closed_loop(m, plan.path, np.array(plan.phi0),
                                           t_plan, step)
    grid_states: list[np.ndarray] = []
    k = 0
    while k * T <= ts[-1] + 1e-9:
        idx = int(np.argmin(np.abs(ts - k * T)))
        grid_states.append(states[idx])
        k += 1
    if diverged >= 0:
        dists = [float(np.linalg.norm(s - target)) for s in grid_states]
        best = int(np.argmin(dists)) if dists else 0
        return AttainabilityCertificate(
            m.name, plan.mode, "fail",
            float(min(dists)) if dists else math.inf,
            best, None, float(eps), int(n_max), step, plan.path.t_end,
            True, len(grid_states))

    tape_ = closed_loop_tape(m)
    state = states[-1].copy()
    t_cur = float(ts[-1])
    while k * T <= horizon + 1e-9:
        t_next = k * T
        span = t_next - t_cur
        if span <= 1e-12:
            grid_states.append(state.copy())
            k += 1
            continue
        nsteps, h = _steps_for(span, step)
        exog = np.zeros((2 * nsteps + 1, m.n_w))
        seg_states, _, n_valid, diverged = en.run_rk4(
            tape_, state, t_cur, h, nsteps, nsteps, exog_rows=exog)
        if diverged >= 0:
            break
        state = seg_states[n_valid - 1].copy()
        t_cur = t_next
        grid_states.append(state.copy())
        k += 1

    dists = np.array([np.linalg.norm(s - target) for s in grid_states])
    best = int(np.argmin(dists))
    hits = np.nonzero(dists <= eps)[0]
    first_hit = int(hits[0]) if hits.size else None
    verdict = "pass" if (diverged < 0 and hits.size) else "fail"
    return AttainabilityCertificate(
        m.name, plan.mode, verdict, float(dists[best]), best, first_hit,
        float(eps), int(n_max), step, plan.path.t_end, diverged >= 0,
        len(grid_states))
