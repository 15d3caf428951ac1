"""Runtime selection between the compiled kernels and the pure fallback.

Set HYPOLAB_PURE=1 to force the pure interpreter. HYPOLAB_THREADS caps the
worker pool used for path ensembles. Both engines expose the same functions
with the same semantics; results are bit-for-bit identical.
"""

from __future__ import annotations

import os

import numpy as np

from .tape import Tape

if os.environ.get("HYPOLAB_PURE"):
    from . import _pure as _impl
    USING_COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
        USING_COMPILED = True
    except ImportError:
        from . import _pure as _impl
        USING_COMPILED = False

mix64 = _impl.mix64
u64_at = _impl.u64_at
unit_at = _impl.unit_at
gauss_at = _impl.gauss_at

_MASK = (1 << 64) - 1
_SEED_STREAM = 0xD1342543DE82EF95

_EMPTY_EXOG = np.zeros((0, 0), dtype=float)


def engine_name() -> str:
    return "compiled" if USING_COMPILED else "pure"


def worker_count() -> int:
    env = os.environ.get("HYPOLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def derive_seed(base: int, index: int) -> int:
    """Decorrelated child seed for ensemble member ``index``."""
    return _pure_mix64((int(base) + (int(index) + 1) * _SEED_STREAM) & _MASK)


def _pure_mix64(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return z


def eval_tape(tape: Tape, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape != (tape.n_inputs,):
        raise ValueError(f"expected {tape.n_inputs} inputs, got shape {inputs.shape}")
    return _impl.tape_eval(tape.code, tape.imm, tape.out_regs, tape.n_regs, inputs)


def eval_tape_many(tape: Tape, inputs2d) -> np.ndarray:
    inputs2d = np.ascontiguousarray(inputs2d, dtype=float)
    if inputs2d.ndim != 2 or inputs2d.shape[1] != tape.n_inputs:
        raise ValueError(f"expected (m, {tape.n_inputs}) inputs, got {inputs2d.shape}")
    return np.asarray(_impl.tape_eval_many(tape.code, tape.imm, tape.out_regs,
                                           tape.n_regs, inputs2d))


def run_rk4(tape: Tape, y0, t0: float, h: float, nsteps: int, stride: int = 1,
            exog_rows=None, want_deriv: bool = False):
    """Returns (states, derivs, n_valid, diverged_step)."""
    nsteps = int(nsteps)
    stride = int(stride)
    if nsteps < 0 or stride < 1 or nsteps % stride != 0:
        raise ValueError("nsteps must be a nonnegative multiple of stride")
    y0 = np.asarray(y0, dtype=float)
    nd = tape.n_outputs
    if y0.shape != (nd,):
        raise ValueError(f"state dim {y0.shape} does not match {nd} outputs")
    if exog_rows is None:
        exog_rows = _EMPTY_EXOG
    else:
        exog_rows = np.ascontiguousarray(exog_rows, dtype=float)
        if exog_rows.shape[0] != 2 * nsteps + 1:
            raise ValueError("exog_rows must have one row per half step")
    ne = exog_rows.shape[1] if exog_rows.size else 0
    if tape.n_inputs != 1 + ne + nd:
        raise ValueError(
            f"tape expects {tape.n_inputs} inputs, call supplies {1 + ne + nd}")
    states, derivs, n_valid, diverged = _impl.rk4_fixed(
        tape.code, tape.imm, tape.out_regs, tape.n_regs, y0, float(t0),
        float(h), nsteps, stride, exog_rows, bool(want_deriv))
    return np.asarray(states), np.asarray(derivs), int(n_valid), int(diverged)


def run_em(fg_tape: Tape, b_tape: Tape, s_tape: Tape, n_x: int, n_y: int,
           n_w: int, phi0, t0: float, dt: float, nsteps: int, seed: int,
           stride: int = 1, clamp_lo=None, clamp_hi=None):
    """Returns (states, n_valid, diverged_step, clamp_count)."""
    nsteps = int(nsteps)
    stride = int(stride)
    if nsteps < 0 or stride < 1 or nsteps % stride != 0:
        raise ValueError("nsteps must be a nonnegative multiple of stride")
    dim = 2 * n_x + n_y
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != (dim,):
        raise ValueError(f"start has shape {phi0.shape}, state dim is {dim}")
    if fg_tape.n_outputs != n_x + n_y or b_tape.n_outputs != n_x:
        raise ValueError("tape output counts do not match model dims")
    if s_tape.n_outputs != n_x * n_w:
        raise ValueError("noise tape must emit a full row-major matrix")
    use_clamp = clamp_lo is not None or clamp_hi is not None
    lo = np.full(dim, -np.inf) if clamp_lo is None else np.asarray(clamp_lo, dtype=float)
    hi = np.full(dim, np.inf) if clamp_hi is None else np.asarray(clamp_hi, dtype=float)
    if lo.shape != (dim,) or hi.shape != (dim,):
        raise ValueError("clamp bounds must match state dim")
    states, n_valid, diverged, clamp_count = _impl.em_path(
        fg_tape.code, fg_tape.imm, fg_tape.out_regs, fg_tape.n_regs,
        b_tape.code, b_tape.imm, b_tape.out_regs, b_tape.n_regs,
        s_tape.code, s_tape.imm, s_tape.out_regs, s_tape.n_regs,
        int(n_x), int(n_y), int(n_w), phi0, float(t0), float(dt), nsteps,
        int(seed) & _MASK, stride, lo, hi, use_clamp)
    return np.asarray(states), int(n_valid), int(diverged), int(clamp_count)
