"""Recurrence diagnostics for the period-sampled chain.

Everything here works on grid states Phi_0, Phi_T, Phi_2T, ...: drift of a
Lyapunov function over one period, hitting statistics for small balls,
occupation histograms, return-time accounting, and a two-start consistency
check for time averages.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .engine import derive_seed
from .expr import Expr
from .models import ModelSpec
from .simulate import (GridChain, PathRecord, SimConfig, extract_grid_chain,
                       fresh_seed, simulate_batch, simulate_path)

Z_95_ONE_SIDED = 1.6448536269514722


class RecurrenceError(ValueError):
    pass


def _eval_state_function(e: Expr, m: ModelSpec, states: np.ndarray,
                         times=0.0) -> np.ndarray:
    nx, ny = m.n_x, m.n_y
    x = tuple(states[:, i] for i in range(nx))
    y = tuple(states[:, nx + j] for j in range(ny))
    z = tuple(states[:, nx + ny + i] for i in range(nx))
    out = ex.numpy_evaluate(e, times, x, y, z)
    return np.broadcast_to(np.asarray(out, dtype=float), (states.shape[0],))


# ---------------------------------------------------------------------------
# Lyapunov drift

@dataclass(frozen=True)
class LyapunovSpec:
    """Candidate V >= 1 with a compact box K where drift is not required."""
    V: Expr
    k_lo: tuple
    k_hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "k_lo", tuple(float(v) for v in self.k_lo))
        object.__setattr__(self, "k_hi", tuple(float(v) for v in self.k_hi))
        if len(self.k_lo) != len(self.k_hi):
            raise RecurrenceError("box bounds have different lengths")
        if any(a >= b for a, b in zip(self.k_lo, self.k_hi)):
            raise RecurrenceError("box must have positive extent")

    def outside(self, points: np.ndarray) -> np.ndarray:
        lo = np.array(self.k_lo)
        hi = np.array(self.k_hi)
        return np.any((points < lo) | (points > hi), axis=1)

    def validate(self, m: ModelSpec, samples: int = 400, seed: int = 0):
        if len(self.k_lo) != m.state_dim:
            raise RecurrenceError("box dimension does not match the state")
        rng = np.random.default_rng(seed)
        lo = np.array(self.k_lo)
        hi = np.array(self.k_hi)
        c = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        pts = c + rng.uniform(-3.0, 3.0, size=(samples, len(c))) * half
        probes = [c, lo, hi]
        if len(c) <= 12:
            probes.extend(c + half * np.array(signs)
                          for signs in itertools.product((-1.0, 1.0),
                                                         repeat=len(c)))
        pts = np.vstack([pts, np.array(probes)])
        vals = _eval_state_function(self.V, m, pts)
        if np.min(vals) < 1.0 - 1e-12:
            raise RecurrenceError(
                f"invalid-Lyapunov: V dips to {np.min(vals):.6g}, below 1")
        dirs = rng.normal(size=(64, len(c)))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        r1 = 2.0 * float(np.max(half))
        near = _eval_state_function(self.V, m, c + r1 * dirs)
        far = _eval_state_function(self.V, m, c + 2.0 * r1 * dirs)
        if np.mean(far) <= np.mean(near) + 1e-9:
            raise RecurrenceError(
                "invalid-Lyapunov: no growth away from the box")


@dataclass(frozen=True)
class DriftReport:
    model: str
    verdict: str
    points: np.ndarray
    drifts: np.ndarray
    std_errors: np.ndarray
    lower_bounds: np.ndarray
    replicates: int
    skipped_inside: int

    @property
    def positive(self) -> bool:
        return self.verdict == "positive-drift"

    def to_json_dict(self) -> dict:
        return {"model": self.model, "verdict": self.verdict,
                "replicates": self.replicates,
                "skipped_inside": self.skipped_inside,
                "points": self.points.tolist(),
                "drifts": self.drifts.tolist(),
                "std_errors": self.std_errors.tolist(),
                "lower_bounds": self.lower_bounds.tolist()}


def estimate_lyapunov_drift(m: ModelSpec, lspec: LyapunovSpec, points,
                            replicates: int, config: SimConfig) -> DriftReport:
    """One-period drift V(p) - E[V(Phi_T) | Phi_0 = p] outside the box.

    The verdict is positive-drift only when every tested point's one-sided
    95% lower confidence bound is above zero.
    """
    lspec.validate(m)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != m.state_dim:
        raise RecurrenceError("points do not match the state dimension")
    outside = lspec.outside(points)
    if not np.any(outside):
        raise RecurrenceError(
            "degenerate-partition: no test point lies outside the box")
    tested = points[outside]
    base_seed = config.seed if config.seed is not None else fresh_seed()
    cfg = SimConfig(dt=config.dt, horizon=m.period, stride=config.stride,
                    t0=config.t0, clamp=config.clamp)
    drifts = np.empty(len(tested))
    ses = np.empty(len(tested))
    for i, p in enumerate(tested):
        seeds = [derive_seed(base_seed, i * replicates + r)
                 for r in range(replicates)]
        recs = simulate_batch(m, np.tile(p, (replicates, 1)), cfg, seeds=seeds)
        finals = np.empty(replicates)
        for r, rec in enumerate(recs):
            if rec.diverged:
                finals[r] = np.inf
            else:
                finals[r] = _eval_state_function(
                    lspec.V, m, rec.valid_states()[-1:])[0]
        v0 = _eval_state_function(lspec.V, m, p[None, :])[0]
        drifts[i] = v0 - float(np.mean(finals))
        ses[i] = float(np.std(finals, ddof=1) / math.sqrt(replicates))
    lower = drifts - Z_95_ONE_SIDED * ses
    verdict = "positive-drift" if np.all(lower > 0.0) else "indeterminate"
    return DriftReport(m.name, verdict, tested, drifts, ses, lower,
                       int(replicates), int(np.count_nonzero(~outside)))


# ---------------------------------------------------------------------------
# hitting statistics

@dataclass(frozen=True)
class HittingReport:
    model: str
    center: tuple
    radius: float
    n_max: int
    replicates: int
    frequencies: np.ndarray        # one per start
    mean_first_hit: np.ndarray     # grid index among hitters, nan if none

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.frequencies > 0.0))

    def to_json_dict(self) -> dict:
        return {"model": self.model, "center": list(self.center),
                "radius": self.radius, "n_max": self.n_max,
                "replicates": self.replicates,
                "frequencies": self.frequencies.tolist(),
                "mean_first_hit": self.mean_first_hit.tolist()}


def hitting_frequency(m: ModelSpec, starts, center, radius: float, n_max: int,
                      replicates: int, config: SimConfig) -> HittingReport:
    """Fraction of replicates whose grid chain enters the ball by step n_max."""
    if isinstance(center, ex.Point):
        center = center.as_array()
    center = np.asarray(center, dtype=float)
    if center.shape != (m.state_dim,):
        raise RecurrenceError("ball center does not match the state dimension")
    boxes = m.domain_x + m.domain_y + m.domain_z
    for v, (lo, hi) in zip(center, boxes):
        if not (lo <= v <= hi):
            raise RecurrenceError(
                f"ball center component {v} is outside the model domain "
                f"[{lo}, {hi}]")
    if radius <= 0:
        raise RecurrenceError("radius must be positive")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    base_seed = config.seed if config.seed is not None else fresh_seed()
    per = max(1, round(m.period / config.dt))
    cfg = SimConfig(dt=m.period / per, nsteps=per * n_max, stride=per,
                    t0=config.t0, clamp=config.clamp)
    freqs = np.empty(starts.shape[0])
    mean_hits = np.empty(starts.shape[0])
    for s_idx, start in enumerate(starts):
        seeds = [derive_seed(base_seed, s_idx * replicates + r)
                 for r in range(replicates)]
        recs = simulate_batch(m, np.tile(start, (replicates, 1)), cfg,
                              seeds=seeds)
        hits = []
        for rec in recs:
            chain = rec.valid_states()
            d = np.linalg.norm(chain[1:] - center, axis=1)
            inside = np.nonzero(d <= radius)[0]
            hits.append(int(inside[0]) + 1 if inside.size else None)
        got = [h for h in hits if h is not None]
        freqs[s_idx] = len(got) / replicates
        mean_hits[s_idx] = float(np.mean(got)) if got else math.nan
    return HittingReport(m.name, tuple(center.tolist()), float(radius),
                         int(n_max), int(replicates), freqs, mean_hits)


# ---------------------------------------------------------------------------
# occupation and return times

@dataclass(frozen=True)
class OccupationHistogram:
    edges: tuple
    mass: np.ndarray
    count: int
    columns: tuple

    def to_json_dict(self) -> dict:
        return {"count": self.count, "columns": list(self.columns),
                "edges": [e.tolist() for e in self.edges],
                "mass": self.mass.tolist()}


def occupation_histogram(chains, window=None, bins=20,
                         columns=None) -> OccupationHistogram:
    """Normalized occupation mass of grid states over an index window."""
    if isinstance(chains, GridChain):
        chains = [chains]
    rows = []
    for ch in chains:
        states = ch.states
        if window is not None:
            lo, hi = window
            states = states[int(lo):int(hi) if hi is not None else None]
        if states.shape[0]:
            rows.append(states)
    if not rows:
        raise RecurrenceError("empty-input: no grid states in the window")
    data = np.vstack(rows)
    if columns is not None:
        columns = tuple(int(c) for c in columns)
        data = data[:, list(columns)]
    else:
        columns = tuple(range(data.shape[1]))
    mass, edges = np.histogramdd(data, bins=bins)
    total = mass.sum()
    if total <= 0:
        raise RecurrenceError("empty-input: all grid states fell outside")
    return OccupationHistogram(tuple(edges), mass / total, data.shape[0],
                               columns)


@dataclass(frozen=True)
class ReturnTimeStats:
    visits: int
    first_hit: int | None
    gaps: tuple
    censored_tail: int
    span: int

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gaps)) if self.gaps else math.nan

    @property
    def max_gap(self) -> int:
        return max(self.gaps) if self.gaps else 0

    def accounting(self) -> int:
        lead = self.first_hit if self.first_hit is not None else self.span
        return lead + sum(self.gaps) + self.censored_tail

    def to_json_dict(self) -> dict:
        return {"visits": self.visits, "first_hit": self.first_hit,
                "gaps": list(self.gaps), "censored_tail": self.censored_tail,
                "span": self.span, "mean_gap": self.mean_gap}


def return_time_stats(chain: GridChain, box) -> ReturnTimeStats:
    """Visit gaps for a box; lead-in + gaps + censored tail = chain span."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    states = chain.states
    if lo.shape != (states.shape[1],) or hi.shape != (states.shape[1],):
        raise RecurrenceError("box bounds must match the state dimension")
    inside = np.all((states >= lo) & (states <= hi), axis=1)
    idx = np.nonzero(inside)[0]
    span = states.shape[0] - 1
    if idx.size == 0:
        # the whole span is censored lead-in, nothing after a visit
        return ReturnTimeStats(0, None, (), 0, span)
    gaps = tuple(int(g) for g in np.diff(idx))
    return ReturnTimeStats(int(idx.size), int(idx[0]), gaps,
                           int(span - idx[-1]), span)


# ---------------------------------------------------------------------------
# spikes

@dataclass(frozen=True)
class SpikeTrain:
    threshold: float
    refractory: float
    spike_times: tuple
    intervals: tuple

    def to_json_dict(self) -> dict:
        return {"threshold": self.threshold, "refractory": self.refractory,
                "spike_times": list(self.spike_times),
                "intervals": list(self.intervals)}


def interspike_intervals(record: PathRecord, threshold: float | None = None,
                         refractory: float | None = None,
                         column: int = 0) -> SpikeTrain:
    """Upward threshold crossings of one coordinate with a dead time."""
    if threshold is None:
        threshold = record.metadata.get("spike_threshold")
    if refractory is None:
        refractory = record.metadata.get("spike_refractory")
    if threshold is None or refractory is None:
        raise RecurrenceError(
            "no spike threshold or refractory value; pass them explicitly")
    v = record.valid_states()[:, int(column)]
    ts = record.times
    above = v >= threshold
    crossings = np.nonzero(~above[:-1] & above[1:])[0] + 1
    spikes = []
    last = -math.inf
    for i in crossings:
        if ts[i] - last >= refractory:
            spikes.append(float(ts[i]))
            last = ts[i]
    intervals = tuple(float(d) for d in np.diff(spikes))
    return SpikeTrain(float(threshold), float(refractory), tuple(spikes),
                      intervals)


# ---------------------------------------------------------------------------
# two-start consistency of time averages

@dataclass(frozen=True)
class ErgodicReport:
    model: str
    mean_a: float
    mean_b: float
    se_a: float
    se_b: float
    periods: int
    burn_in: int
    verdict: str

    @property
    def difference(self) -> float:
        return self.mean_a - self.mean_b

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_a, self.se_b)

    def to_json_dict(self) -> dict:
        return {"model": self.model, "mean_a": self.mean_a,
                "mean_b": self.mean_b, "se_a": self.se_a, "se_b": self.se_b,
                "difference": self.difference,
                "combined_se": self.combined_se, "periods": self.periods,
                "burn_in": self.burn_in, "verdict": self.verdict}


def _batch_mean_se(values: np.ndarray, n_batches: int = 32):
    usable = len(values) - len(values) % n_batches
    if usable < n_batches:
        raise RecurrenceError("too few grid samples for batch means")
    batches = values[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(np.mean(values[:usable])), \
        float(np.std(batches, ddof=1) / math.sqrt(n_batches))


def ergodic_consistency(m: ModelSpec, start_a, start_b, functional: Expr,
                        periods: int, config: SimConfig,
                        seeds=None) -> ErgodicReport:
    """Compare grid-time averages of a state functional from two starts.

    Standard errors come from batch means over the post-burn-in chain; the
    verdict is consistent when the two averages agree within three combined
    standard errors.
    """
    if any(kind == "t" for kind, _ in functional.free_coords):
        raise RecurrenceError("the functional must not depend on time")
    per = max(1, round(m.period / config.dt))
    cfg = SimConfig(dt=m.period / per, nsteps=per * int(periods), stride=per,
                    t0=config.t0, clamp=config.clamp)
    if seeds is None:
        base = config.seed if config.seed is not None else fresh_seed()
        seeds = (derive_seed(base, 0), derive_seed(base, 1))
    rec_a = simulate_path(m, start_a, _with_seed(cfg, seeds[0]))
    rec_b = simulate_path(m, start_b, _with_seed(cfg, seeds[1]))
    if rec_a.diverged or rec_b.diverged:
        raise RecurrenceError("a sample path diverged; averages are undefined")
    burn = int(periods) // 10
    va = _eval_state_function(functional, m, rec_a.valid_states()[burn:])
    vb = _eval_state_function(functional, m, rec_b.valid_states()[burn:])
    mean_a, se_a = _batch_mean_se(va)
    mean_b, se_b = _batch_mean_se(vb)
    diff = mean_a - mean_b
    combined = math.hypot(se_a, se_b)
    ok = abs(diff) <= 3.0 * combined
    return ErgodicReport(m.name, mean_a, mean_b, se_a, se_b, int(periods),
                         burn, "consistent" if ok else "inconsistent")


def _with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return SimConfig(dt=cfg.dt, nsteps=cfg.nsteps, horizon=cfg.horizon,
                     stride=cfg.stride, seed=int(seed), t0=cfg.t0,
                     clamp=cfg.clamp)
