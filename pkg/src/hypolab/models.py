"""Model registry: driven systems with internal states.

A model couples three blocks. The observed block x (dim n_x) feels the input
increment directly, the internal block y (dim n_y) is noise free, and the
input state z (dim n_x) integrates a periodic signal plus its own drift and
noise:

    dx = f(x, y) dt + dz
    dy = g(x, y) dt
    dz = [S(t) + b(z)] dt + sigma(z) dW,   dW of dim n_w.

f, g are expressions over (x, y); b and sigma over z; the signal S over t
alone, with period T. Six builtin models cover the test surface; custom ones
load from JSON and round trip bit exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .expr import (EXPM1_RATIO_SERIES, Expr, Point, add, bump, const, cos,
                   div, exp, guarded_quotient, mul, neg, power, sin, sub,
                   tanh, tvar, xvar, yvar, zvar)
from .fields import TimeSpaceField, VectorField, state_coords

BUILTIN_NAMES = ("hodgkin-huxley", "toy-cascade", "toy-mexicanhat", "spiral",
                 "rotor-chain-1", "rotor-chain-2")

PERIODICITY_TOL = 1e-12
_PERIODICITY_GRID = 1000


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# periodic input signal

@dataclass(frozen=True)
class SignalSpec:
    """Periodic scalar signal per observed channel.

    kinds: "zero"; "constant" (offset only); "sinusoid-sum" with per-channel
    waves (amplitude, frequency, phase) where each frequency must be an
    integer multiple of the base rate 2*pi/T; "expression" with per-channel
    expressions over t whose sampled period must match T.
    """

    kind: str
    offset: tuple[float, ...] = ()
    waves: tuple[tuple[tuple[float, float, float], ...], ...] = ()
    raw: tuple[Expr, ...] = ()

    @staticmethod
    def zero(n: int = 1) -> "SignalSpec":
        return SignalSpec("zero", offset=(0.0,) * n)

    @staticmethod
    def constant(values) -> "SignalSpec":
        vals = tuple(float(v) for v in np.atleast_1d(values))
        return SignalSpec("constant", offset=vals)

    @staticmethod
    def offset_sine(level: float, amplitude: float, frequency: float,
                    phase: float = 0.0, n: int = 1) -> "SignalSpec":
        wave = ((float(amplitude), float(frequency), float(phase)),)
        return SignalSpec("sinusoid-sum", offset=(float(level),) * n,
                          waves=(wave,) * n)

    @staticmethod
    def expression(exprs) -> "SignalSpec":
        if isinstance(exprs, (str, ex.Expr)):
            exprs = [exprs]
        raws = tuple(ex.parse_sexpr(e) if isinstance(e, str) else ex._as_expr(e)
                     for e in exprs)
        return SignalSpec("expression", offset=(0.0,) * len(raws), raw=raws)

    @property
    def n_channels(self) -> int:
        if self.kind == "expression":
            return len(self.raw)
        return len(self.offset)

    def exprs(self) -> tuple[Expr, ...]:
        if self.kind == "zero":
            return tuple(const(0.0) for _ in self.offset)
        if self.kind == "constant":
            return tuple(const(v) for v in self.offset)
        if self.kind == "sinusoid-sum":
            out = []
            for off, chan in zip(self.offset, self.waves):
                terms = [const(off)] if off != 0.0 else []
                for amp, freq, phase in chan:
                    arg = add(mul(freq, tvar()), phase)
                    terms.append(mul(amp, sin(arg)))
                out.append(add(*terms) if terms else const(0.0))
            return tuple(out)
        if self.kind == "expression":
            return self.raw
        raise ModelError(f"unknown signal kind {self.kind!r}")

    def validate(self, period: float) -> None:
        if self.kind not in ("zero", "constant", "sinusoid-sum", "expression"):
            raise ModelError(f"unknown signal kind {self.kind!r}")
        if self.kind == "sinusoid-sum":
            if len(self.waves) != len(self.offset):
                raise ModelError("per-channel wave list does not match offsets")
            base = 2.0 * math.pi / period
            for chan in self.waves:
                for amp, freq, phase in chan:
                    ratio = freq / base
                    if abs(ratio - round(ratio)) > 1e-9:
                        raise ModelError(
                            f"wave frequency {freq} is not a multiple of 2*pi/T")
        for e in self.exprs():
            extra = {k for k in e.free_coords if k != ("t", 0)}
            if extra:
                raise ModelError(f"signal references state coordinates {extra}")
        ts = np.linspace(0.0, period, _PERIODICITY_GRID, endpoint=False)
        for e in self.exprs():
            a = ex.numpy_evaluate(e, t=ts)
            b = ex.numpy_evaluate(e, t=ts + period)
            scale = max(1.0, float(np.max(np.abs(a))))
            gap = float(np.max(np.abs(a - b)))
            if gap > PERIODICITY_TOL * scale:
                raise ModelError(
                    f"signal is not {period}-periodic (sampled gap {gap:.3e})")

    def to_json_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in ("zero", "constant", "sinusoid-sum"):
            d["offset"] = list(self.offset)
        if self.kind == "sinusoid-sum":
            d["waves"] = [[list(w) for w in chan] for chan in self.waves]
        if self.kind == "expression":
            d["exprs"] = [ex.to_sexpr(e) for e in self.raw]
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "SignalSpec":
        kind = d["kind"]
        if kind == "expression":
            return SignalSpec.expression([ex.parse_sexpr(s) for s in d["exprs"]])
        offset = tuple(float(v) for v in d.get("offset", ()))
        if kind == "sinusoid-sum":
            waves = tuple(tuple(tuple(float(x) for x in w) for w in chan)
                          for chan in d["waves"])
            return SignalSpec(kind, offset=offset, waves=waves)
        return SignalSpec(kind, offset=offset)


# ---------------------------------------------------------------------------
# model records

Box = tuple[tuple[float, float], ...]


def _check_box(box, n, label) -> Box:
    out = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(out) != n:
        raise ModelError(f"{label} box has {len(out)} intervals, expected {n}")
    for lo, hi in out:
        if not lo <= hi:
            raise ModelError(f"{label} box interval ({lo}, {hi}) is empty")
    return out


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n_x: int
    n_y: int
    n_w: int
    f: tuple[Expr, ...]
    g: tuple[Expr, ...]
    b: tuple[Expr, ...]
    sigma: tuple[tuple[Expr, ...], ...]
    signal: SignalSpec
    period: float
    domain_x: Box
    domain_y: Box
    domain_z: Box
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.n_x, self.n_w) < 1 or self.n_y < 0:
            raise ModelError("model dimensions must be positive")
        if len(self.f) != self.n_x or len(self.g) != self.n_y:
            raise ModelError("drift component counts do not match dimensions")
        if len(self.b) != self.n_x:
            raise ModelError("input drift must have one component per channel")
        if len(self.sigma) != self.n_x or any(len(r) != self.n_w for r in self.sigma):
            raise ModelError(f"noise matrix must be {self.n_x} x {self.n_w}")
        if not (self.period > 0.0 and math.isfinite(self.period)):
            raise ModelError("period must be positive")
        allowed_xy = {("x", i + 1) for i in range(self.n_x)}
        allowed_xy |= {("y", j + 1) for j in range(self.n_y)}
        allowed_z = {("z", i + 1) for i in range(self.n_x)}
        for label, comps, allowed in (("f", self.f, allowed_xy),
                                      ("g", self.g, allowed_xy),
                                      ("b", self.b, allowed_z)):
            for c in comps:
                extra = c.free_coords - allowed
                if extra:
                    raise ModelError(f"{label} references {sorted(extra)}")
        for row in self.sigma:
            for c in row:
                extra = c.free_coords - allowed_z
                if extra:
                    raise ModelError(f"sigma references {sorted(extra)}")
        if self.signal.n_channels != self.n_x:
            raise ModelError("signal channel count does not match n_x")
        self.signal.validate(self.period)

    # -- dimensions and state layout -----------------------------------
    @property
    def state_dim(self) -> int:
        return 2 * self.n_x + self.n_y

    def state_coord_keys(self):
        return state_coords(self.n_x, self.n_y, self.n_x)

    def point(self, t: float, state) -> Point:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.state_dim,):
            raise ModelError(f"state has shape {state.shape}, expected ({self.state_dim},)")
        nx, ny = self.n_x, self.n_y
        return Point(t, state[:nx], state[nx:nx + ny], state[nx + ny:])

    def sigma_is_constant(self) -> bool:
        return all(ex.is_const(c) for row in self.sigma for c in row)

    def sigma_matrix_at(self, pt: Point) -> np.ndarray:
        return np.array([[ex.evaluate(c, pt) for c in row] for row in self.sigma])

    # -- variants --------------------------------------------------------
    def with_sigma(self, sigma_rows) -> "ModelSpec":
        rows = tuple(tuple(ex._as_expr(c) for c in row) for row in sigma_rows)
        if not rows or len({len(r) for r in rows}) != 1:
            raise ModelError("noise matrix rows must have equal length")
        return replace(self, sigma=rows, n_w=len(rows[0]))

    def with_signal(self, signal: SignalSpec) -> "ModelSpec":
        return replace(self, signal=signal)

    def with_drift(self, b_comps) -> "ModelSpec":
        return replace(self, b=tuple(ex._as_expr(c) for c in b_comps))

    # -- serialization ----------------------------------------------------
    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "n_x": self.n_x,
            "n_y": self.n_y,
            "n_w": self.n_w,
            "period": self.period,
            "f": [ex.to_sexpr(c) for c in self.f],
            "g": [ex.to_sexpr(c) for c in self.g],
            "b": [ex.to_sexpr(c) for c in self.b],
            "sigma": [[ex.to_sexpr(c) for c in row] for row in self.sigma],
            "signal": self.signal.to_json_dict(),
            "domain": {"x": [list(iv) for iv in self.domain_x],
                       "y": [list(iv) for iv in self.domain_y],
                       "z": [list(iv) for iv in self.domain_z]},
            "metadata": dict(self.metadata),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)

    @staticmethod
    def from_json_dict(d: dict) -> "ModelSpec":
        dom = d.get("domain", {})
        n_x = int(d["n_x"])
        n_y = int(d["n_y"])
        return ModelSpec(
            name=str(d.get("name", "custom")),
            n_x=n_x,
            n_y=n_y,
            n_w=int(d["n_w"]),
            f=tuple(ex.parse_sexpr(s) for s in d["f"]),
            g=tuple(ex.parse_sexpr(s) for s in d["g"]),
            b=tuple(ex.parse_sexpr(s) for s in d["b"]),
            sigma=tuple(tuple(ex.parse_sexpr(s) for s in row) for row in d["sigma"]),
            signal=SignalSpec.from_json_dict(d["signal"]),
            period=float(d["period"]),
            domain_x=_check_box(dom.get("x", [(-10.0, 10.0)] * n_x), n_x, "x"),
            domain_y=_check_box(dom.get("y", [(-10.0, 10.0)] * n_y), n_y, "y"),
            domain_z=_check_box(dom.get("z", [(-10.0, 10.0)] * n_x), n_x, "z"),
            metadata=dict(d.get("metadata", {})),
        )

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        return ModelSpec.from_json_dict(json.loads(text))


# ---------------------------------------------------------------------------
# derived drifts and fields

def stratonovich_drift(m: ModelSpec) -> tuple[Expr, ...]:
    """Drift correction: b_l - (1/2) sum_ij sigma_ij d(sigma_lj)/dz_i."""
    out = []
    for l in range(m.n_x):
        corr = []
        for j in range(m.n_w):
            target = m.sigma[l][j]
            if ex.is_const(target):
                continue
            for i in range(m.n_x):
                d = ex.differentiate(target, ("z", i + 1))
                if ex.is_zero(d):
                    continue
                corr.append(mul(m.sigma[i][j], d))
        out.append(sub(m.b[l], mul(0.5, add(*corr))) if corr else m.b[l])
    return tuple(out)


def b_hat(m: ModelSpec) -> tuple[Expr, ...]:
    """Signal plus corrected drift, over (t, z)."""
    bt = stratonovich_drift(m)
    return tuple(add(s, c) for s, c in zip(m.signal.exprs(), bt))


@dataclass(frozen=True)
class DerivedFields:
    """Everything the bracket machinery needs, assembled once per model."""

    coords: tuple
    observed: VectorField          # (f, g) over (x, y), dim n_x + n_y
    b_tilde: tuple[Expr, ...]
    b_hat: tuple[Expr, ...]
    em_drift_z: tuple[Expr, ...]   # signal + raw drift, the integrator form
    v0: TimeSpaceField
    v_noise: tuple[TimeSpaceField, ...]


def assemble_time_space_fields(m: ModelSpec) -> DerivedFields:
    coords = m.state_coord_keys()
    bt = stratonovich_drift(m)
    sig = m.signal.exprs()
    bhat = tuple(add(s, c) for s, c in zip(sig, bt))
    em_drift = tuple(add(s, c) for s, c in zip(sig, m.b))
    xy_coords = coords[:m.n_x + m.n_y]
    observed = VectorField(m.f + m.g, xy_coords)
    v0_space = tuple(add(fc, bh) for fc, bh in zip(m.f, bhat)) + m.g + bhat
    v0 = TimeSpaceField(const(1.0), VectorField(v0_space, coords))
    v_noise = []
    for k in range(m.n_w):
        col = tuple(m.sigma[i][k] for i in range(m.n_x))
        comps = col + tuple(const(0.0) for _ in range(m.n_y)) + col
        v_noise.append(TimeSpaceField(const(0.0), VectorField(comps, coords)))
    return DerivedFields(coords=coords, observed=observed, b_tilde=bt,
                         b_hat=bhat, em_drift_z=em_drift, v0=v0,
                         v_noise=tuple(v_noise))


# ---------------------------------------------------------------------------
# builtins

def _identity_sigma(n: int):
    return tuple(tuple(const(1.0 if i == j else 0.0) for j in range(n))
                 for i in range(n))


def _expm1_ratio_guard(scale: float, c0: float, c1: float):
    """scale * u / (exp(u) - 1) with u = c0 + c1*x, guarded at u = 0."""
    at = -c0 / c1
    u = add(c0, mul(c1, xvar(1)))
    series = tuple(scale * c * ex.seqpow(c1, j) if j else scale * c
                   for j, c in enumerate(EXPM1_RATIO_SERIES))
    return guarded_quotient(mul(scale, u), sub(exp(u), 1.0), ("x", 1), at,
                            1e-3, series)


def hh_rates() -> dict[str, Expr]:
    """Voltage-dependent opening/closing rates of the three gates."""
    x = xvar(1)
    return {
        "alpha1": _expm1_ratio_guard(0.1, 1.0, -0.1),
        "beta1": mul(0.125, exp(mul(-1.0 / 80.0, x))),
        "alpha2": _expm1_ratio_guard(1.0, 2.5, -0.1),
        "beta2": mul(4.0, exp(mul(-1.0 / 18.0, x))),
        "alpha3": mul(0.07, exp(mul(-1.0 / 20.0, x))),
        "beta3": div(1.0, add(exp(add(3.0, mul(-0.1, x))), 1.0)),
    }


def _builtin_hodgkin_huxley(level: float = 15.0, period: float = 20.0) -> ModelSpec:
    x = xvar(1)
    r = hh_rates()
    f = add(mul(-36.0, power(yvar(1), 4), add(x, 12.0)),
            mul(-120.0, power(yvar(2), 3), yvar(3), add(x, -120.0)),
            mul(-0.3, add(x, -10.6)))
    g = []
    for i in (1, 2, 3):
        a, bta = r[f"alpha{i}"], r[f"beta{i}"]
        g.append(sub(mul(a, sub(1.0, yvar(i))), mul(bta, yvar(i))))
    return ModelSpec(
        name="hodgkin-huxley", n_x=1, n_y=3, n_w=1,
        f=(f,), g=tuple(g),
        b=(mul(-0.5, zvar(1)),),
        sigma=((const(1.0),),),
        signal=SignalSpec.offset_sine(level, level, 2.0 * math.pi / period),
        period=period,
        domain_x=((-100.0, 150.0),),
        domain_y=((0.0, 1.0),) * 3,
        domain_z=((-60.0, 60.0),),
        metadata={"spike_threshold": 50.0, "spike_refractory": 2.0},
    )


def cascade_profile() -> Expr:
    """The x -> first-link feed: x^2 inside |x|<2, 5 outside |x|>3, smooth."""
    x2 = power(xvar(1), 2)
    return add(x2, mul(sub(5.0, x2), bump(mul(0.2, sub(x2, 4.0)))))


def _builtin_toy_cascade(n_y: int = 1, level: float = 1.0,
                         period: float = 1.0) -> ModelSpec:
    x = xvar(1)
    ys = [yvar(j + 1) for j in range(n_y)]
    y_sq = add(*(power(yj, 2) for yj in ys))
    f = mul(-1.0, add(1.0, y_sq), sub(power(x, 2), 1.0), x)
    g = [sub(cascade_profile(), ys[0])]
    for j in range(1, n_y):
        g.append(sub(ys[j - 1], ys[j]))
    return ModelSpec(
        name="toy-cascade", n_x=1, n_y=n_y, n_w=1,
        f=(f,), g=tuple(g),
        b=(neg(zvar(1)),),
        sigma=((const(1.0),),),
        signal=SignalSpec.offset_sine(level, level, 2.0 * math.pi / period),
        period=period,
        domain_x=((-3.0, 3.0),),
        domain_y=((-6.0, 6.0),) * n_y,
        domain_z=((-3.0, 3.0),),
    )


def _builtin_toy_mexicanhat(level: float = 1.0, period: float = 1.0) -> ModelSpec:
    x1, x2, y = xvar(1), xvar(2), yvar(1)
    x_sq = add(power(x1, 2), power(x2, 2))
    radial = mul(-1.0, add(1.0, power(y, 2)), sub(x_sq, 1.0))
    f = (mul(radial, x1), mul(radial, x2))
    g = add(mul(-1.0, add(1.0, x_sq), y), sin(sub(x_sq, 1.0)))
    return ModelSpec(
        name="toy-mexicanhat", n_x=2, n_y=1, n_w=2,
        f=f, g=(g,),
        b=(neg(zvar(1)), neg(zvar(2))),
        sigma=_identity_sigma(2),
        signal=SignalSpec.offset_sine(level, level, 2.0 * math.pi / period, n=2),
        period=period,
        domain_x=((-2.0, 2.0),) * 2,
        domain_y=((-2.0, 2.0),),
        domain_z=((-3.0, 3.0),) * 2,
    )


def _builtin_spiral(period: float = 1.0) -> ModelSpec:
    x, y = xvar(1), yvar(1)
    r_sq = add(power(x, 2), power(y, 2))
    f = sub(sub(x, y), mul(x, r_sq))
    g = sub(add(x, y), mul(y, r_sq))
    return ModelSpec(
        name="spiral", n_x=1, n_y=1, n_w=1,
        f=(f,), g=(g,),
        b=(neg(zvar(1)),),
        sigma=((const(1.0),),),
        signal=SignalSpec.zero(),
        period=period,
        domain_x=((-2.0, 2.0),),
        domain_y=((-2.0, 2.0),),
        domain_z=((-2.0, 2.0),),
        metadata={"cycle_period": 2.0 * math.pi, "cycle_point": [1.0, 0.0]},
    )


def _rotor_torque(a: Expr) -> Expr:
    return sin(a)


def _builtin_rotor_chain_1(level: float = 1.0, period: float = 1.0) -> ModelSpec:
    # state: x = p1 (driven momentum); y = (q1, q2, q3, p2, p3)
    q1, q2, q3, p2, p3 = (yvar(j) for j in range(1, 6))
    f = sub(sub(_rotor_torque(sub(q2, q1)), q1), xvar(1))
    g = (xvar(1), p2, p3,
         sub(neg(add(_rotor_torque(sub(q2, q1)), _rotor_torque(sub(q2, q3)))), q2),
         sub(_rotor_torque(sub(q2, q3)), q3))
    return ModelSpec(
        name="rotor-chain-1", n_x=1, n_y=5, n_w=1,
        f=(f,), g=g,
        b=(neg(zvar(1)),),
        sigma=((const(1.0),),),
        signal=SignalSpec.offset_sine(level, level, 2.0 * math.pi / period),
        period=period,
        domain_x=((-4.0, 4.0),),
        domain_y=((-4.0, 4.0),) * 5,
        domain_z=((-3.0, 3.0),),
    )


def _builtin_rotor_chain_2(level: float = 1.0, period: float = 1.0) -> ModelSpec:
    # state: x = (p1, p3); y = (q1, q2, q3, p2)
    q1, q2, q3, p2 = (yvar(j) for j in range(1, 5))
    f1 = sub(sub(_rotor_torque(sub(q2, q1)), q1), xvar(1))
    f2 = sub(sub(_rotor_torque(sub(q2, q3)), q3), xvar(2))
    g = (xvar(1), p2, xvar(2),
         sub(neg(add(_rotor_torque(sub(q2, q1)), _rotor_torque(sub(q2, q3)))), q2))
    return ModelSpec(
        name="rotor-chain-2", n_x=2, n_y=4, n_w=2,
        f=(f1, f2), g=g,
        b=(neg(zvar(1)), neg(zvar(2))),
        sigma=_identity_sigma(2),
        signal=SignalSpec.offset_sine(level, level, 2.0 * math.pi / period, n=2),
        period=period,
        domain_x=((-4.0, 4.0),) * 2,
        domain_y=((-4.0, 4.0),) * 4,
        domain_z=((-3.0, 3.0),) * 2,
    )


_BUILTIN_FACTORIES = {
    "hodgkin-huxley": _builtin_hodgkin_huxley,
    "toy-cascade": _builtin_toy_cascade,
    "toy-mexicanhat": _builtin_toy_mexicanhat,
    "spiral": _builtin_spiral,
    "rotor-chain-1": _builtin_rotor_chain_1,
    "rotor-chain-2": _builtin_rotor_chain_2,
}


def builtin(name: str, **options) -> ModelSpec:
    factory = _BUILTIN_FACTORIES.get(name)
    if factory is None:
        raise ModelError(
            f"unknown model {name!r}; builtins are {', '.join(BUILTIN_NAMES)}")
    return factory(**options)


# ---------------------------------------------------------------------------
# rest states

def equilibrium_state(m: ModelSpec, branch: int = 1) -> Point:
    """Zero of the unforced deterministic field (z at the drift rest point)."""
    name = m.name
    if name == "hodgkin-huxley":
        r = hh_rates()

        def gate_rest(x):
            pt = Point(x=(x,))
            vals = []
            for i in (1, 2, 3):
                a = ex.evaluate(r[f"alpha{i}"], pt)
                bta = ex.evaluate(r[f"beta{i}"], pt)
                vals.append(a / (a + bta))
            return vals

        def residual(x):
            return ex.evaluate(m.f[0], Point(x=(x,), y=gate_rest(x)))

        x_star = brentq(residual, -5.0, 5.0, xtol=1e-12)
        return Point(x=(x_star,), y=gate_rest(x_star), z=(0.0,))
    if name == "toy-cascade":
        x_star = 1.0 if branch >= 0 else -1.0
        level = ex.evaluate(cascade_profile(), Point(x=(x_star,)))
        return Point(x=(x_star,), y=(level,) * m.n_y, z=(0.0,))
    if name == "toy-mexicanhat":
        return Point(x=(1.0 if branch >= 0 else -1.0, 0.0), y=(0.0,), z=(0.0, 0.0))
    if name == "spiral":
        cx, cy = m.metadata.get("cycle_point", (1.0, 0.0))
        return Point(x=(cx,), y=(cy,), z=(0.0,))
    if name in ("rotor-chain-1", "rotor-chain-2"):
        return Point(x=(0.0,) * m.n_x, y=(0.0,) * m.n_y, z=(0.0,) * m.n_x)
    raise ModelError(f"no rest state recipe for model {name!r}")
