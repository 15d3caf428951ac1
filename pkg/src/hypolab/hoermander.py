"""Bracket families and rank certificates for the driven systems.

Two families of drift brackets are built from a model. The input-chain
family starts from a noise column, brackets it with the drift field, and
keeps bracketing with noise columns; it admits a closed form: a pure input
block plus a coefficient-weighted sum of x-derivatives of the observed
field. The feed-chain family repeatedly brackets the drift with the single
noise column and is the right probe for single-channel chain models.

A rank certificate samples the candidate vectors at a state, across one
signal period, and reports the singular spectrum plus a spanning subset.
Shape violations (bad path indices, wrong dimensions, non-constant noise
where a mode requires it) raise ShapeError; a full-rank test that merely
fails returns a report with verdict "fail".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine as en
from . import expr as ex
from .expr import Expr, Point
from .fields import TimeSpaceField, VectorField, evaluate_time_space_field, time_space_bracket
from .models import DerivedFields, ModelSpec, assemble_time_space_fields

RANK_REL_TOL = 1e-8
DET_REL_TOL = 1e-9
NONZERO_TOL = 1e-9


class ShapeError(ValueError):
    """A precondition violation, as opposed to a failed verdict."""


def _json_ready(obj):
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    return obj


def _check_kappa(m: ModelSpec, kappa) -> tuple[int, ...]:
    kappa = tuple(int(k) for k in kappa)
    if not kappa:
        raise ShapeError("empty bracket path")
    for k in kappa:
        if not 1 <= k <= m.n_w:
            raise ShapeError(f"path index {k} outside 1..{m.n_w}")
    return kappa


def _as_state_point(m: ModelSpec, phi, t: float = 0.0) -> Point:
    if isinstance(phi, Point):
        return Point(t, phi.x, phi.y, phi.z)
    return m.point(t, phi)


# ---------------------------------------------------------------------------
# coefficient tables

@dataclass(frozen=True)
class CoeffTable:
    """Coefficients of x-derivative terms in the closed input-chain form.

    entries maps a derivative multi-index over x (tuple of n_x counts,
    1 <= total <= depth) to a polynomial in z. Identically zero entries are
    dropped.
    """

    kappa: tuple[int, ...]
    n_x: int
    entries: dict

    @property
    def depth(self) -> int:
        return len(self.kappa)

    def to_json_dict(self) -> dict:
        return {
            "kappa": list(self.kappa),
            "n_x": self.n_x,
            "entries": {",".join(map(str, a)): ex.to_sexpr(p)
                        for a, p in sorted(self.entries.items())},
        }


def coeff_table(m: ModelSpec, kappa) -> CoeffTable:
    kappa = _check_kappa(m, kappa)
    n = m.n_x
    zkeys = [("z", i + 1) for i in range(n)]

    def unit(i):
        return tuple(1 if q == i else 0 for q in range(n))

    entries: dict = {}
    for i in range(n):
        sig = m.sigma[i][kappa[0] - 1]
        if not ex.is_zero(sig):
            entries[unit(i)] = sig
    for k in kappa[1:]:
        nxt: dict = {}
        seen_alphas = set(entries)
        grown = set()
        for a in seen_alphas:
            for i in range(n):
                grown.add(tuple(v + (1 if q == i else 0) for q, v in enumerate(a)))
        for a in seen_alphas | grown:
            terms = []
            for i in range(n):
                sig = m.sigma[i][k - 1]
                if ex.is_zero(sig):
                    continue
                prev = entries.get(a)
                if prev is not None:
                    d = ex.differentiate(prev, zkeys[i])
                    if not ex.is_zero(d):
                        terms.append(ex.mul(sig, d))
                if a[i] > 0:
                    shifted = tuple(v - (1 if q == i else 0) for q, v in enumerate(a))
                    prev_s = entries.get(shifted)
                    if prev_s is not None:
                        terms.append(ex.mul(sig, prev_s))
            if terms:
                nxt[a] = ex.add(*terms)
        entries = nxt
    return CoeffTable(kappa=kappa, n_x=n, entries=entries)


def zeta_chain(m: ModelSpec, kappa, der: DerivedFields | None = None) -> list[tuple[Expr, ...]]:
    """Input-block chain: bracket the noise column into the corrected input
    drift, then keep bracketing with noise columns; t rides along inert."""
    kappa = _check_kappa(m, kappa)
    if der is None:
        der = assemble_time_space_fields(m)
    n = m.n_x
    zkeys = [("z", i + 1) for i in range(n)]

    def z_bracket(col_idx, target):
        col = [m.sigma[i][col_idx - 1] for i in range(n)]
        out = []
        for l in range(n):
            terms = []
            for i in range(n):
                d = ex.differentiate(target[l], zkeys[i])
                if not (ex.is_zero(col[i]) or ex.is_zero(d)):
                    terms.append(ex.mul(col[i], d))
            for i in range(n):
                ds = ex.differentiate(col[l], zkeys[i])
                if not (ex.is_zero(target[i]) or ex.is_zero(ds)):
                    terms.append(ex.neg(ex.mul(target[i], ds)))
            out.append(ex.add(*terms))
        return tuple(out)

    chain = [z_bracket(kappa[0], der.b_hat)]
    for k in kappa[1:]:
        chain.append(z_bracket(k, chain[-1]))
    return chain


# ---------------------------------------------------------------------------
# bracket evaluation

def _partial_f(der: DerivedFields, n_x: int, alpha, cache: dict) -> tuple[Expr, ...]:
    if alpha in cache:
        return cache[alpha]
    total = sum(alpha)
    if total == 0:
        comps = der.observed.components
    else:
        i = next(q for q, v in enumerate(alpha) if v > 0)
        down = tuple(v - (1 if q == i else 0) for q, v in enumerate(alpha))
        parent = _partial_f(der, n_x, down, cache)
        comps = tuple(ex.differentiate(c, ("x", i + 1)) for c in parent)
    cache[alpha] = comps
    return comps


def _closed_star_vector(m: ModelSpec, der: DerivedFields, table: CoeffTable,
                        zeta: tuple[Expr, ...], pt: Point,
                        dfcache: dict) -> np.ndarray:
    nx, ny = m.n_x, m.n_y
    out = np.zeros(2 * nx + ny)
    zv = np.array([ex.evaluate(c, pt) for c in zeta])
    out[:nx] += zv
    out[nx + ny:] += zv
    for alpha, p in table.entries.items():
        w = ex.evaluate(p, pt)
        if w == 0.0:
            continue
        comps = _partial_f(der, nx, alpha, dfcache)
        for q, c in enumerate(comps):
            out[q] += w * ex.evaluate(c, pt)
    return out


def _nested_star_field(m: ModelSpec, der: DerivedFields, kappa) -> TimeSpaceField:
    field = time_space_bracket(der.v_noise[kappa[0] - 1], der.v0)
    for k in kappa[1:]:
        field = time_space_bracket(der.v_noise[k - 1], field)
    return field


def star_bracket(m: ModelSpec, kappa, point, mode: str = "closed-form") -> np.ndarray:
    """Input-chain bracket vector at a time-state point."""
    kappa = _check_kappa(m, kappa)
    pt = point if isinstance(point, Point) else m.point(0.0, point)
    der = assemble_time_space_fields(m)
    if mode == "nested":
        field = _nested_star_field(m, der, kappa)
        full = evaluate_time_space_field(field, pt)
        return full[1:]
    if mode == "closed-form":
        table = coeff_table(m, kappa)
        zeta = zeta_chain(m, kappa, der)[-1]
        return _closed_star_vector(m, der, table, zeta, pt, {})
    raise ShapeError(f"unknown mode {mode!r}; use nested or closed-form")


def _cascade_fields(m: ModelSpec, der: DerivedFields, n_max: int) -> list[TimeSpaceField]:
    fields = [time_space_bracket(der.v0, der.v_noise[0])]
    for _ in range(1, min(n_max, m.n_y)):
        fields.append(time_space_bracket(der.v0, fields[-1]))
    if n_max > m.n_y:
        inner = time_space_bracket(der.v_noise[0], der.v0)
        fields.append(time_space_bracket(der.v_noise[0], inner))
    return fields


def cascade_bracket(m: ModelSpec, n: int, point) -> np.ndarray:
    """Feed-chain bracket vector; single-channel chain models only."""
    if m.n_x != 1 or m.n_w != 1:
        raise ShapeError("feed-chain brackets need one observed channel and one noise channel")
    n = int(n)
    if not 1 <= n <= m.n_y + 1:
        raise ShapeError(f"chain depth {n} outside 1..{m.n_y + 1}")
    pt = point if isinstance(point, Point) else m.point(0.0, point)
    der = assemble_time_space_fields(m)
    field = _cascade_fields(m, der, n)[n - 1]
    full = evaluate_time_space_field(field, pt)
    return full[1:]


# ---------------------------------------------------------------------------
# pointwise condition checks

@dataclass(frozen=True)
class ConditionVerdict:
    name: str
    verdict: str                 # "pass" | "fail"
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json_dict(self) -> dict:
        return _json_ready({"name": self.name, "verdict": self.verdict,
                            "witness": self.witness})


@dataclass(frozen=True)
class StarConditionReport:
    mode: str
    verdict: str
    paths: tuple
    vectors: np.ndarray
    det: float
    tolerance: float
    point: tuple

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json_dict(self) -> dict:
        return _json_ready({
            "mode": self.mode, "verdict": self.verdict,
            "paths": [list(p) for p in self.paths],
            "vectors": self.vectors, "det": self.det,
            "tolerance": self.tolerance, "point": self.point})


def check_star_conditions(m: ModelSpec, point, mode: str,
                          paths) -> StarConditionReport:
    """Full-rank test of derivative vectors of the observed field.

    diagonal mode: ``paths`` is one tuple of n_x + n_y observed-channel
    indices; row q is the mixed derivative of the observed field along the
    first q indices. constant-surjective mode: ``paths`` is a list of
    n_x + n_y input-chain paths; row q is the coefficient-weighted top-order
    derivative sum for path q, which needs a constant noise matrix.
    """
    pt = point if isinstance(point, Point) else m.point(0.0, point)
    der = assemble_time_space_fields(m)
    dim = m.n_x + m.n_y
    dfcache: dict = {}
    if mode == "diagonal":
        idx = tuple(int(k) for k in paths)
        if len(idx) != dim:
            raise ShapeError(f"need {dim} derivative indices, got {len(idx)}")
        for k in idx:
            if not 1 <= k <= m.n_x:
                raise ShapeError(f"derivative index {k} outside 1..{m.n_x}")
        rows = []
        comps = der.observed.components
        for k in idx:
            comps = tuple(ex.differentiate(c, ("x", k)) for c in comps)
            rows.append([ex.evaluate(c, pt) for c in comps])
        mat = np.array(rows)
        used_paths = (idx,)
    elif mode == "constant-surjective":
        if not m.sigma_is_constant():
            raise ShapeError("this mode requires a constant noise matrix")
        kappas = [_check_kappa(m, k) for k in paths]
        if len(kappas) != dim:
            raise ShapeError(f"need {dim} paths, got {len(kappas)}")
        rows = []
        for kappa in kappas:
            table = coeff_table(m, kappa)
            n = len(kappa)
            vec = np.zeros(dim)
            for alpha, p in table.entries.items():
                if sum(alpha) != n:
                    continue
                w = ex.evaluate(p, pt)
                if w == 0.0:
                    continue
                comps = _partial_f(der, m.n_x, alpha, dfcache)
                vec += w * np.array([ex.evaluate(c, pt) for c in comps])
            rows.append(vec)
        mat = np.array(rows)
        used_paths = tuple(kappas)
    else:
        raise ShapeError(f"unknown mode {mode!r}")
    det = float(np.linalg.det(mat))
    scale = float(np.prod(np.linalg.norm(mat, axis=1)))
    tol = DET_REL_TOL * max(scale, 1e-300)
    verdict = "pass" if abs(det) > tol else "fail"
    return StarConditionReport(mode=mode, verdict=verdict, paths=used_paths,
                               vectors=mat, det=det, tolerance=tol,
                               point=(pt.t, pt.x, pt.y, pt.z))


def _sample_box(box, count: int, seed: int) -> np.ndarray:
    lows = np.array([lo for lo, hi in box])
    highs = np.array([hi for lo, hi in box])
    pts = np.empty((count, len(box)))
    ctr = 0
    for r in range(count):
        for c in range(len(box)):
            u = en.unit_at(seed, ctr)
            ctr += 1
            pts[r, c] = lows[c] + (highs[c] - lows[c]) * u
    return pts


def check_cascade_conditions(m: ModelSpec, region=None, samples: int = 200,
                             seed: int = 0) -> dict[str, ConditionVerdict]:
    """Chain-structure (H-first) and curvature (H-second) checks.

    H-first: the x feed into the first internal state and each link to the
    next one must be nonvanishing on the region, and links may not skip
    levels (checked symbolically). H-second: the Wronskian-type combination
    of first and second x-derivatives of f and the first feed must be
    nonvanishing.
    """
    if m.n_x != 1 or m.n_w != 1:
        raise ShapeError("chain conditions need one observed channel and one noise channel")
    if m.n_y < 1:
        raise ShapeError("chain conditions need at least one internal state")
    if region is None:
        region = {"x": m.domain_x, "y": m.domain_y}
    box = tuple(region["x"]) + tuple(region["y"])
    pts = _sample_box(box, samples, seed)

    def eval_min(expr):
        worst = math.inf
        worst_pt = None
        for row in pts:
            p = Point(0.0, row[:1], row[1:])
            v = abs(ex.evaluate(expr, p))
            if v < worst:
                worst = v
                worst_pt = row
        return worst, worst_pt

    h1 = None
    links = [("x-feed", 1, ex.differentiate(m.g[0], ("x", 1)))]
    for i in range(1, m.n_y):
        links.append((f"link {i}->{i + 1}", i + 1,
                      ex.differentiate(m.g[i], ("y", i))))
    for label, comp, d in links:
        worst, worst_pt = eval_min(d)
        if worst <= NONZERO_TOL:
            h1 = ConditionVerdict("H1", "fail", {
                "kind": "vanishing-link", "link": label, "component": comp,
                "value": worst, "point": list(worst_pt)})
            break
    if h1 is None:
        # no internal state may feed a link more than one level up
        for i in range(1, m.n_y + 1):
            for j in range(i + 2, m.n_y + 1):
                d = ex.differentiate(m.g[j - 1], ("y", i))
                if not ex.is_zero(d):
                    h1 = ConditionVerdict("H1", "fail", {
                        "kind": "level-skip", "from": i, "to": j,
                        "derivative": ex.to_sexpr(d)})
                    break
            if h1 is not None:
                break
    if h1 is None:
        h1 = ConditionVerdict("H1", "pass")

    fx = ex.differentiate(m.f[0], ("x", 1))
    fxx = ex.differentiate(fx, ("x", 1))
    gx = ex.differentiate(m.g[0], ("x", 1))
    gxx = ex.differentiate(gx, ("x", 1))
    wron = ex.sub(ex.mul(fx, gxx), ex.mul(fxx, gx))
    worst, worst_pt = eval_min(wron)
    if worst > NONZERO_TOL:
        h2 = ConditionVerdict("H2", "pass")
    else:
        h2 = ConditionVerdict("H2", "fail", {
            "kind": "vanishing-curvature", "value": worst,
            "point": list(worst_pt) if worst_pt is not None else None})
    return {"H1": h1, "H2": h2}


# ---------------------------------------------------------------------------
# rank certificates

@dataclass(frozen=True)
class RankCertificate:
    model: str
    strategy: str
    depth: int
    state: tuple
    t_samples: tuple
    dim: int
    verdict: str
    per_t: tuple            # per sample: {"t", "rank", "singular_values"}
    spanning: tuple         # ({"descriptor", "vector"}, ...)
    tolerance: float
    candidate_count: int

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def rank(self) -> int:
        return min(row["rank"] for row in self.per_t)

    def to_json_dict(self) -> dict:
        return _json_ready({
            "model": self.model, "strategy": self.strategy,
            "depth": self.depth, "state": self.state,
            "t_samples": self.t_samples, "dim": self.dim,
            "verdict": self.verdict, "rank": self.rank,
            "per_t": self.per_t, "spanning": self.spanning,
            "tolerance": self.tolerance,
            "candidate_count": self.candidate_count})

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)


def _diffusion_brackets(m: ModelSpec, der: DerivedFields, depth: int):
    """Noise fields and their mutual brackets, left-normalized words."""
    out = []
    gen = []
    for k, vf in enumerate(der.v_noise, start=1):
        name = f"noise[{k}]"
        out.append((name, vf))
        gen.append((name, vf))
    prev = list(gen)
    for _ in range(2, depth + 1):
        nxt = []
        for kname, kf in gen:
            for wname, wf in prev:
                br = time_space_bracket(kf, wf)
                if all(ex.is_zero(c) for c in br.space.components):
                    continue
                nxt.append((f"[{kname},{wname}]", br))
        out.extend(nxt)
        prev = nxt
        if not prev:
            break
    return out


def _star_paths(m: ModelSpec, max_len: int, cap: int = 2000):
    paths = []
    level = [()]
    for _ in range(max_len):
        level = [p + (k,) for p in level for k in range(1, m.n_w + 1)]
        paths.extend(level)
        if len(paths) > cap:
            break
    return paths[:cap]


def hoermander_rank(m: ModelSpec, phi, strategy: str = "star",
                    depth: int = 4, t_samples=None) -> RankCertificate:
    """Spanning test for the bracket candidates at a fixed state.

    Candidates: the noise columns, their mutual brackets up to ``depth``,
    and the strategy's drift-bracket family. Verdict is pass when the
    candidates span the full state dimension at every sampled time.
    """
    pt0 = _as_state_point(m, phi)
    state = pt0.x + pt0.y + pt0.z
    if t_samples is None:
        t_samples = 10
    if isinstance(t_samples, int):
        t_samples = tuple(q * m.period / t_samples for q in range(t_samples))
    else:
        t_samples = tuple(float(t) for t in t_samples)
    if not t_samples:
        raise ShapeError("need at least one time sample")
    der = assemble_time_space_fields(m)
    dim = m.state_dim

    candidates: list = []   # (descriptor, kind, payload)
    for name, vf in _diffusion_brackets(m, der, depth):
        candidates.append((name, "field", vf))
    if strategy == "star":
        dfcache: dict = {}
        for kappa in _star_paths(m, m.n_x + m.n_y):
            table = coeff_table(m, kappa)
            zeta = zeta_chain(m, kappa, der)[-1]
            desc = "input-chain[" + ",".join(map(str, kappa)) + "]"
            candidates.append((desc, "star", (table, zeta, dfcache)))
    elif strategy == "cascade":
        if m.n_x != 1 or m.n_w != 1:
            raise ShapeError("the feed-chain strategy needs one observed and one noise channel")
        for n, f in enumerate(_cascade_fields(m, der, m.n_y + 1), start=1):
            candidates.append((f"feed-chain[{n}]", "field", f))
    else:
        raise ShapeError(f"unknown strategy {strategy!r}")

    def vector_at(cand, t):
        desc, kind, payload = cand
        pt = Point(t, pt0.x, pt0.y, pt0.z)
        if kind == "field":
            return evaluate_time_space_field(payload, pt)[1:]
        table, zeta, dfcache = payload
        return _closed_star_vector(m, der, table, zeta, pt, dfcache)

    per_t = []
    verdict = "pass"
    first_matrix = None
    for t in t_samples:
        mat = np.array([vector_at(c, t) for c in candidates])
        if first_matrix is None:
            first_matrix = mat
        sv = np.linalg.svd(mat, compute_uv=False)
        smax = float(sv[0]) if sv.size else 0.0
        rank = int(np.sum(sv > RANK_REL_TOL * smax)) if smax > 0 else 0
        per_t.append({"t": t, "rank": rank,
                      "singular_values": [float(s) for s in sv[:dim]]})
        if rank < dim:
            verdict = "fail"

    spanning = []
    basis: list[np.ndarray] = []
    for cand, vec in zip(candidates, first_matrix):
        v = vec.astype(float)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        r = v.copy()
        for q in basis:
            r -= (q @ r) * q
        if np.linalg.norm(r) > RANK_REL_TOL * norm:
            basis.append(r / np.linalg.norm(r))
            spanning.append({"descriptor": cand[0], "vector": [float(u) for u in v]})
        if len(basis) == dim:
            break

    return RankCertificate(
        model=m.name, strategy=strategy, depth=int(depth),
        state=tuple(float(v) for v in state), t_samples=t_samples, dim=dim,
        verdict=verdict, per_t=tuple(per_t), spanning=tuple(spanning),
        tolerance=RANK_REL_TOL, candidate_count=len(candidates))
