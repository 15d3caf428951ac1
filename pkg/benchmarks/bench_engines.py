"""Compare the compiled kernels against the pure-Python fallback.

Imports both engine modules directly, so the HYPOLAB_PURE switch is
irrelevant here: each workload runs on each engine in the same process
and the outputs are checked for bit-for-bit equality before timing.

Usage:
    python benchmarks/bench_engines.py [--quick]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hypolab import models
from hypolab.simulate import _build_em_tapes

try:
    from hypolab import _core
except ImportError:
    _core = None
from hypolab import _pure


def _time(fn) -> float:
    """Seconds per call, via timeit's adaptive loop count."""
    n, total = timeit.Timer(fn).autorange()
    return total / n


def _em_workload(nsteps: int):
    m = models.builtin("toy-cascade")
    fg, b, s = _build_em_tapes(m)
    dim = 2 * m.n_x + m.n_y
    phi0 = np.array([0.3, -0.2, 0.25])
    lo = np.full(dim, -np.inf)
    hi = np.full(dim, np.inf)

    def call(eng):
        return eng.em_path(
            fg.code, fg.imm, fg.out_regs, fg.n_regs,
            b.code, b.imm, b.out_regs, b.n_regs,
            s.code, s.imm, s.out_regs, s.n_regs,
            m.n_x, m.n_y, m.n_w, phi0, 0.0, 1e-3, nsteps, 42, 1,
            lo, hi, False)

    return call, lambda out: np.asarray(out[0])


def _rk4_workload(nsteps: int):
    # fg tape doubles as the drift of the deterministic (x, y) subsystem
    m = models.builtin("spiral")
    fg, _, _ = _build_em_tapes(m)
    y0 = np.array([0.4, -0.1])
    exog = np.zeros((0, 0), dtype=float)

    def call(eng):
        return eng.rk4_fixed(fg.code, fg.imm, fg.out_regs, fg.n_regs,
                             y0, 0.0, 1e-3, nsteps, 1, exog, False)

    return call, lambda out: np.asarray(out[0])


def _batch_eval_workload(rows: int):
    m = models.builtin("hodgkin-huxley")
    fg, _, _ = _build_em_tapes(m)
    rng = np.random.default_rng(7)
    inputs = rng.uniform(-1.0, 1.0, size=(rows, fg.n_inputs))

    def call(eng):
        return eng.tape_eval_many(fg.code, fg.imm, fg.out_regs, fg.n_regs,
                                  inputs)

    return call, lambda out: np.asarray(out)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true",
                    help="shrink workloads roughly 10x")
    args = ap.parse_args()
    k = 10 if args.quick else 1

    workloads = [
        ("em_path, toy-cascade, %d steps" % (100_000 // k),
         *_em_workload(100_000 // k)),
        ("rk4_fixed, spiral, %d steps" % (100_000 // k),
         *_rk4_workload(100_000 // k)),
        ("tape_eval_many, hodgkin-huxley, %d rows" % (50_000 // k),
         *_batch_eval_workload(50_000 // k)),
    ]

    if _core is None:
        print("compiled extension not built; timing the pure engine only")
    engines = [("pure", _pure)] + ([("compiled", _core)] if _core else [])

    print(f"{'workload':<45} " + "".join(f"{n:>12} " for n, _ in engines)
          + ("speedup" if _core else ""))
    for label, call, extract in workloads:
        baseline = extract(call(_pure))
        if _core is not None:
            got = extract(call(_core))
            if not np.array_equal(baseline, got):
                raise SystemExit(f"engines disagree on {label}")
        secs = [_time(lambda eng=eng: call(eng)) for _, eng in engines]
        row = f"{label:<45} " + "".join(f"{s * 1e3:>10.2f}ms " for s in secs)
        if _core is not None:
            row += f"{secs[0] / secs[1]:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
