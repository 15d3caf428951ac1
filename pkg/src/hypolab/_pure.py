"""Reference interpreter for instruction tapes and the two integrators.

Everything here is mirrored by the compiled extension; operation order and
the arithmetic of every opcode are kept identical so both engines produce
bit-for-bit equal results. Keep this module free of shortcuts that would
change rounding (no numpy vector math inside step loops).
"""

from __future__ import annotations

import math

import numpy as np

from .tape import (OP_ADD, OP_ADDI, OP_COPY, OP_COS, OP_DIV, OP_EXP,
                   OP_JABS_LT, OP_JGE, OP_JLE, OP_JMP, OP_LOADC, OP_LOADV,
                   OP_MUL, OP_POWF, OP_POWI, OP_SIN, OP_SUB, OP_TANH)

DIVERGE_LIMIT = 1e12

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_U53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return z


def u64_at(seed: int, k: int) -> int:
    return mix64((seed + (k + 1) * _GOLDEN) & _MASK)


def unit_at(seed: int, k: int) -> float:
    return ((u64_at(seed, k) >> 11) + 0.5) * _U53


def gauss_at(seed: int, j: int) -> float:
    u1 = unit_at(seed, 2 * j)
    u2 = unit_at(seed, 2 * j + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _prep(code, imm):
    rows = code.tolist()
    imms = imm.tolist()
    return [(r[0], r[1], r[2], r[3], imms[i]) for i, r in enumerate(rows)]


def _run(prog, regs, inp):
    pc = 0
    n = len(prog)
    while pc < n:
        op, a, b, dst, im = prog[pc]
        if op == OP_ADD:
            regs[dst] = regs[a] + regs[b]
        elif op == OP_MUL:
            regs[dst] = regs[a] * regs[b]
        elif op == OP_SUB:
            regs[dst] = regs[a] - regs[b]
        elif op == OP_DIV:
            regs[dst] = regs[a] / regs[b]
        elif op == OP_LOADV:
            regs[dst] = inp[a]
        elif op == OP_LOADC:
            regs[dst] = im
        elif op == OP_POWI:
            v = regs[a]
            r = v
            for _ in range(abs(b) - 1):
                r *= v
            regs[dst] = 1.0 / r if b < 0 else r
        elif op == OP_POWF:
            regs[dst] = math.pow(regs[a], im)
        elif op == OP_EXP:
            regs[dst] = math.exp(regs[a])
        elif op == OP_SIN:
            regs[dst] = math.sin(regs[a])
        elif op == OP_COS:
            regs[dst] = math.cos(regs[a])
        elif op == OP_TANH:
            regs[dst] = math.tanh(regs[a])
        elif op == OP_COPY:
            regs[dst] = regs[a]
        elif op == OP_ADDI:
            regs[dst] = regs[a] + im
        elif op == OP_JMP:
            pc = b
            continue
        elif op == OP_JLE:
            if regs[a] <= im:
                pc = b
                continue
        elif op == OP_JGE:
            if regs[a] >= im:
                pc = b
                continue
        elif op == OP_JABS_LT:
            if abs(regs[a]) < im:
                pc = b
                continue
        else:
            raise ValueError(f"bad opcode {op}")
        pc += 1


def tape_eval(code, imm, out_regs, n_regs, inputs):
    prog = _prep(code, imm)
    regs = [0.0] * n_regs
    _run(prog, regs, [float(v) for v in inputs])
    return np.array([regs[r] for r in out_regs], dtype=float)


def tape_eval_many(code, imm, out_regs, n_regs, inputs2d):
    prog = _prep(code, imm)
    inputs2d = np.ascontiguousarray(inputs2d, dtype=float)
    m = inputs2d.shape[0]
    outs = np.empty((m, len(out_regs)), dtype=float)
    regs = [0.0] * n_regs
    out_list = [int(r) for r in out_regs]
    rows = inputs2d.tolist()
    for i in range(m):
        _run(prog, regs, rows[i])
        row = outs[i]
        for k, r in enumerate(out_list):
            row[k] = regs[r]
    return outs


def _bad(vals) -> bool:
    for v in vals:
        if not (-DIVERGE_LIMIT < v < DIVERGE_LIMIT):
            return True
    return False


def rk4_fixed(code, imm, out_regs, n_regs, y0, t0, h, nsteps, stride,
              exog_rows, want_deriv):
    """Classic fixed-step RK4 on tape inputs (t, exog..., state...).

    ``exog_rows`` holds one row per half step (2*nsteps + 1 rows); pass a
    (0, 0) array when the field takes no exogenous input. Saved rows are the
    nodes 0, stride, 2*stride, ...; nsteps must be a multiple of stride.
    Returns (states, derivs, n_valid, diverged_step) with diverged_step = -1
    when the trajectory stayed within bounds.
    """
    prog = _prep(code, imm)
    nd = len(out_regs)
    out_list = [int(r) for r in out_regs]
    exog_rows = np.ascontiguousarray(exog_rows, dtype=float)
    ne = exog_rows.shape[1] if exog_rows.size else 0
    ex_list = exog_rows.tolist() if ne else None
    t0 = float(t0)
    h = float(h)
    nsave = nsteps // stride + 1
    states = np.empty((nsave, nd), dtype=float)
    derivs = np.empty((nsave, nd), dtype=float) if want_deriv else np.empty((0, nd))
    regs = [0.0] * n_regs
    y = [float(v) for v in y0]
    inp = [0.0] * (1 + ne + nd)

    def field(t, exrow, yy, out):
        inp[0] = t
        if ne:
            row = ex_list[exrow]
            for q in range(ne):
                inp[1 + q] = row[q]
        for q in range(nd):
            inp[1 + ne + q] = yy[q]
        _run(prog, regs, inp)
        for q in range(nd):
            out[q] = regs[out_list[q]]

    k1 = [0.0] * nd
    k2 = [0.0] * nd
    k3 = [0.0] * nd
    k4 = [0.0] * nd
    ytmp = [0.0] * nd
    n_valid = 0
    diverged = -1
    for n in range(nsteps):
        t = t0 + n * h
        field(t, 2 * n, y, k1)
        if n % stride == 0:
            states[n_valid] = y
            if want_deriv:
                derivs[n_valid] = k1
            n_valid += 1
        half = 0.5 * h
        for q in range(nd):
            ytmp[q] = y[q] + half * k1[q]
        field(t + half, 2 * n + 1, ytmp, k2)
        for q in range(nd):
            ytmp[q] = y[q] + half * k2[q]
        field(t + half, 2 * n + 1, ytmp, k3)
        for q in range(nd):
            ytmp[q] = y[q] + h * k3[q]
        field(t + h, 2 * n + 2, ytmp, k4)
        sixth = h / 6.0
        for q in range(nd):
            y[q] = y[q] + sixth * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
        if _bad(y):
            diverged = n
            break
    if diverged < 0:
        states[n_valid] = y
        if want_deriv:
            field(t0 + nsteps * h, 2 * nsteps, y, k1)
            derivs[n_valid] = k1
        n_valid += 1
    return states, derivs, n_valid, diverged


def em_path(fg_code, fg_imm, fg_out, fg_nregs,
            b_code, b_imm, b_out, b_nregs,
            s_code, s_imm, s_out, s_nregs,
            n_x, n_y, n_w, phi0, t0, dt, nsteps, seed, stride,
            clamp_lo, clamp_hi, use_clamp):
    """Euler-Maruyama for the driven system.

    Tapes: fg over (t, x, y) -> n_x + n_y drift entries; b over (t, z) ->
    n_x entries of signal plus raw drift; s over (t, z) -> n_x * n_w noise
    matrix, row major. The same increment feeds x and z. Gaussian draws are
    counter indexed: step n, channel k uses index n*n_w + k, so paths with
    equal seeds agree for any stride. Returns (states, n_valid,
    diverged_step, clamp_count).
    """
    fg_prog = _prep(fg_code, fg_imm)
    b_prog = _prep(b_code, b_imm)
    s_prog = _prep(s_code, s_imm)
    fg_regs = [0.0] * fg_nregs
    b_regs = [0.0] * b_nregs
    s_regs = [0.0] * s_nregs
    fg_out_l = [int(r) for r in fg_out]
    b_out_l = [int(r) for r in b_out]
    s_out_l = [int(r) for r in s_out]
    dim = n_x + n_y + n_x
    phi = [float(v) for v in phi0]
    lo = [float(v) for v in clamp_lo]
    hi = [float(v) for v in clamp_hi]
    t0 = float(t0)
    dt = float(dt)
    sq = math.sqrt(dt)
    nsave = nsteps // stride + 1
    states = np.empty((nsave, dim), dtype=float)
    fg_in = [0.0] * (1 + n_x + n_y)
    z_in = [0.0] * (1 + n_x)
    dw = [0.0] * n_w
    dz = [0.0] * n_x
    n_valid = 0
    diverged = -1
    clamp_count = 0
    seed = int(seed) & _MASK
    for n in range(nsteps):
        if n % stride == 0:
            states[n_valid] = phi
            n_valid += 1
        t = t0 + n * dt
        fg_in[0] = t
        for q in range(n_x + n_y):
            fg_in[1 + q] = phi[q]
        _run(fg_prog, fg_regs, fg_in)
        z_in[0] = t
        for q in range(n_x):
            z_in[1 + q] = phi[n_x + n_y + q]
        _run(b_prog, b_regs, z_in)
        _run(s_prog, s_regs, z_in)
        base = n * n_w
        for k in range(n_w):
            dw[k] = sq * gauss_at(seed, base + k)
        for i in range(n_x):
            acc = b_regs[b_out_l[i]] * dt
            for k in range(n_w):
                acc += s_regs[s_out_l[i * n_w + k]] * dw[k]
            dz[i] = acc
        for i in range(n_x):
            phi[i] += fg_regs[fg_out_l[i]] * dt + dz[i]
        for j in range(n_y):
            phi[n_x + j] += fg_regs[fg_out_l[n_x + j]] * dt
        for i in range(n_x):
            phi[n_x + n_y + i] += dz[i]
        if use_clamp:
            for q in range(dim):
                if phi[q] < lo[q]:
                    phi[q] = lo[q]
                    clamp_count += 1
                elif phi[q] > hi[q]:
                    phi[q] = hi[q]
                    clamp_count += 1
        if _bad(phi):
            diverged = n
            break
    if diverged < 0:
        states[n_valid] = phi
        n_valid += 1
    return states, n_valid, diverged, clamp_count
