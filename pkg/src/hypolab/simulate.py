"""Stochastic simulation of the driven system and grid-time extraction.

Paths follow the Euler-Maruyama rule with the input increment shared by
the raw input state and the observed block it drives:

    dz = (S(t) + b(z)) dt + sigma(z) dW,
    x += f(x, y) dt + dz,      y += g(x, y) dt.

Noise is counter-indexed, so a path is a pure function of (model, start,
config, seed): rerunning it reproduces every byte.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine as en
from . import expr as ex
from . import tape as tp
from .models import ModelSpec, assemble_time_space_fields


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float | None = None
    nsteps: int | None = None
    stride: int = 1
    seed: int | None = None
    t0: float = 0.0
    clamp: object = None      # None, "domain", or (lo, hi) arrays

    def __post_init__(self):
        if self.dt <= 0:
            raise SimulationError("dt must be positive")
        if self.stride < 1:
            raise SimulationError("stride must be at least 1")
        if (self.horizon is None) == (self.nsteps is None):
            raise SimulationError("give exactly one of horizon or nsteps")

    def resolved_steps(self) -> int:
        if self.nsteps is not None:
            n = int(self.nsteps)
        else:
            n = max(1, round(self.horizon / self.dt))
        if n % self.stride:
            n += self.stride - n % self.stride
        return n


def fresh_seed() -> int:
    return int.from_bytes(os.urandom(8), "little") & 0x7FFFFFFFFFFFFFFF


_TAPE_CACHE: dict = {}


def _em_tapes(m: ModelSpec):
    key = (m.n_x, m.n_y, m.n_w, m.f, m.g, m.b, m.sigma,
           tuple(m.signal.exprs()))
    hit = _TAPE_CACHE.get(key)
    if hit is None:
        hit = _TAPE_CACHE[key] = _build_em_tapes(m)
    return hit


def _build_em_tapes(m: ModelSpec):
    der = assemble_time_space_fields(m)
    nx, ny = m.n_x, m.n_y
    obs_layout = (("t", 0),) + tuple(("x", i + 1) for i in range(nx)) \
        + tuple(("y", j + 1) for j in range(ny))
    z_layout = (("t", 0),) + tuple(("z", i + 1) for i in range(nx))
    fg = tp.compile_exprs(tuple(m.f) + tuple(m.g), obs_layout)
    b = tp.compile_exprs(der.em_drift_z, z_layout)
    s = tp.compile_exprs(tuple(c for row in m.sigma for c in row), z_layout)
    return fg, b, s


def _clamp_arrays(m: ModelSpec, clamp):
    if clamp is None:
        return None, None
    if clamp == "domain":
        lo = np.array([b[0] for b in m.domain_x + m.domain_y + m.domain_z])
        hi = np.array([b[1] for b in m.domain_x + m.domain_y + m.domain_z])
        return lo, hi
    lo, hi = clamp
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (m.state_dim,) or hi.shape != (m.state_dim,):
        raise SimulationError("clamp bounds must cover the full state")
    return lo, hi


@dataclass(frozen=True)
class PathRecord:
    model: str
    states: np.ndarray
    t0: float
    dt: float
    stride: int
    seed: int
    n_valid: int
    diverged_step: int
    clamp_count: int
    metadata: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return self.diverged_step >= 0

    @property
    def node_spacing(self) -> float:
        return self.dt * self.stride

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.node_spacing * np.arange(self.n_valid)

    @property
    def horizon(self) -> float:
        return float(self.times[-1]) if self.n_valid else self.t0

    def valid_states(self) -> np.ndarray:
        return self.states[:self.n_valid]


def simulate_path(m: ModelSpec, phi0, config: SimConfig) -> PathRecord:
    """One Euler-Maruyama path; the seed used is recorded on the result."""
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != (m.state_dim,):
        raise SimulationError(
            f"start has shape {phi0.shape}, model needs ({m.state_dim},)")
    seed = config.seed if config.seed is not None else fresh_seed()
    fg, b, s = _em_tapes(m)
    lo, hi = _clamp_arrays(m, config.clamp)
    nsteps = config.resolved_steps()
    states, n_valid, diverged, clamp_count = en.run_em(
        fg, b, s, m.n_x, m.n_y, m.n_w, phi0, config.t0, config.dt, nsteps,
        seed, config.stride, clamp_lo=lo, clamp_hi=hi)
    return PathRecord(m.name, states, config.t0, config.dt, config.stride,
                      int(seed), int(n_valid), int(diverged), int(clamp_count),
                      dict(m.metadata))


def simulate_batch(m: ModelSpec, starts, config: SimConfig,
                   seeds=None) -> list[PathRecord]:
    """Independent paths, one per start, in a thread pool.

    seeds may be a per-path list or a single base used to derive one
    decorrelated stream per path.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    count = starts.shape[0]
    if seeds is None:
        base = config.seed if config.seed is not None else fresh_seed()
        seed_list = [en.derive_seed(base, i) for i in range(count)]
    elif np.isscalar(seeds):
        seed_list = [en.derive_seed(int(seeds), i) for i in range(count)]
    else:
        seed_list = [int(v) for v in seeds]
        if len(seed_list) != count:
            raise SimulationError("seed count does not match start count")
    _em_tapes(m)  # build once before fanning out
    jobs = [replace(config, seed=seed_list[i]) for i in range(count)]
    workers = min(en.worker_count(), count)
    if workers <= 1:
        return [simulate_path(m, starts[i], jobs[i]) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(simulate_path, m, starts[i], jobs[i])
                for i in range(count)]
        return [f.result() for f in futs]


@dataclass(frozen=True)
class GridChain:
    model: str
    states: np.ndarray
    period: float
    times: np.ndarray
    node_offset: float

    def __len__(self) -> int:
        return self.states.shape[0]


GRID_ALIGN_TOL = 1e-9


def extract_grid_chain(record: PathRecord, period: float) -> GridChain:
    """States at (multiples of) the signal period.

    When the period is not a whole number of node spacings, the nearest
    node is used and the worst time offset is reported on the chain.
    """
    if period <= 0:
        raise SimulationError("period must be positive")
    spacing = record.node_spacing
    span = (record.n_valid - 1) * spacing
    if period > span + GRID_ALIGN_TOL:
        raise SimulationError(
            f"period {period} exceeds the recorded horizon {span}")
    ratio = period / spacing
    per = round(ratio)
    states = record.valid_states()
    if per >= 1 and abs(ratio - per) <= GRID_ALIGN_TOL * max(1.0, ratio):
        idx = np.arange(0, record.n_valid, per)
        offset = 0.0
    else:
        k_max = int(span / period + GRID_ALIGN_TOL)
        targets = period * np.arange(k_max + 1)
        idx = np.round(targets / spacing).astype(int)
        idx = np.minimum(idx, record.n_valid - 1)
        offset = float(np.max(np.abs(idx * spacing - targets)))
    times = record.t0 + idx * spacing
    return GridChain(record.model, states[idx], float(period), times, offset)
