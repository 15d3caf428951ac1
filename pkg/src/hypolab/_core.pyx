# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of _pure.py. Opcode numbers, operation order, and every
arithmetic expression match the pure interpreter exactly; both must produce
bit-identical doubles. Keep in sync with tape.py opcode table."""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, cos, exp, fabs, log, pow, sin, sqrt, tanh
from libc.stdint cimport int32_t, uint64_t

cnp.import_array()

cdef enum:
    OP_LOADC = 0
    OP_LOADV = 1
    OP_ADD = 2
    OP_SUB = 3
    OP_MUL = 4
    OP_DIV = 5
    OP_POWI = 6
    OP_POWF = 7
    OP_EXP = 8
    OP_SIN = 9
    OP_COS = 10
    OP_TANH = 11
    OP_COPY = 12
    OP_ADDI = 13
    OP_JMP = 14
    OP_JLE = 15
    OP_JGE = 16
    OP_JABS_LT = 17

cdef double DIVERGE_LIMIT = 1e12

cdef double _U53 = 1.0 / 9007199254740992.0
cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15u


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z ^= z >> 30
    z *= 0xBF58476D1CE4E5B9u
    z ^= z >> 27
    z *= 0x94D049BB133111EBu
    z ^= z >> 31
    return z


cdef inline uint64_t _u64_at(uint64_t seed, uint64_t k) noexcept nogil:
    return _mix64(seed + (k + 1) * _GOLDEN)


cdef inline double _unit_at(uint64_t seed, uint64_t k) noexcept nogil:
    return (<double> (_u64_at(seed, k) >> 11) + 0.5) * _U53


cdef inline double _gauss_at(uint64_t seed, uint64_t j) noexcept nogil:
    cdef double u1 = _unit_at(seed, 2 * j)
    cdef double u2 = _unit_at(seed, 2 * j + 1)
    return sqrt(-2.0 * log(u1)) * cos(2.0 * M_PI * u2)


def mix64(z):
    return int(_mix64(<uint64_t> (int(z) & 0xFFFFFFFFFFFFFFFF)))


def u64_at(seed, k):
    return int(_u64_at(<uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF), <uint64_t> int(k)))


def unit_at(seed, k):
    return _unit_at(<uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF), <uint64_t> int(k))


def gauss_at(seed, j):
    return _gauss_at(<uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF), <uint64_t> int(j))


cdef inline void _run(const int32_t[:, ::1] code, const double[::1] imm,
                      double* regs, const double* inp) noexcept nogil:
    cdef Py_ssize_t pc = 0
    cdef Py_ssize_t n = code.shape[0]
    cdef int op, a, b, dst, q, ab
    cdef double v, r, im
    while pc < n:
        op = code[pc, 0]
        a = code[pc, 1]
        b = code[pc, 2]
        dst = code[pc, 3]
        im = imm[pc]
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
            ab = b if b >= 0 else -b
            for q in range(ab - 1):
                r *= v
            regs[dst] = 1.0 / r if b < 0 else r
        elif op == OP_POWF:
            regs[dst] = pow(regs[a], im)
        elif op == OP_EXP:
            regs[dst] = exp(regs[a])
        elif op == OP_SIN:
            regs[dst] = sin(regs[a])
        elif op == OP_COS:
            regs[dst] = cos(regs[a])
        elif op == OP_TANH:
            regs[dst] = tanh(regs[a])
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
            if fabs(regs[a]) < im:
                pc = b
                continue
        pc += 1


cdef inline bint _bad(const double* vals, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t q
    for q in range(n):
        if not (-DIVERGE_LIMIT < vals[q] < DIVERGE_LIMIT):
            return True
    return False


def tape_eval(code, imm, out_regs, n_regs, inputs):
    cdef const int32_t[:, ::1] c = np.ascontiguousarray(code, dtype=np.int32)
    cdef const double[::1] im = np.ascontiguousarray(imm, dtype=np.float64)
    cdef const int32_t[::1] outs = np.ascontiguousarray(out_regs, dtype=np.int32)
    cdef cnp.ndarray[double, ndim=1] regs = np.zeros(int(n_regs), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] inp = np.ascontiguousarray(inputs, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(outs.shape[0], dtype=np.float64)
    cdef Py_ssize_t k
    _run(c, im, &regs[0], <const double*> cnp.PyArray_DATA(inp))
    for k in range(outs.shape[0]):
        out[k] = regs[outs[k]]
    return out


def tape_eval_many(code, imm, out_regs, n_regs, inputs2d):
    cdef const int32_t[:, ::1] c = np.ascontiguousarray(code, dtype=np.int32)
    cdef const double[::1] im = np.ascontiguousarray(imm, dtype=np.float64)
    cdef const int32_t[::1] outs = np.ascontiguousarray(out_regs, dtype=np.int32)
    cdef const double[:, ::1] inp = np.ascontiguousarray(inputs2d, dtype=np.float64)
    cdef Py_ssize_t m = inp.shape[0]
    cdef Py_ssize_t nout = outs.shape[0]
    cdef cnp.ndarray[double, ndim=1] regs_arr = np.zeros(int(n_regs), dtype=np.float64)
    cdef double* regs = &regs_arr[0]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.empty((m, nout), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(m):
            _run(c, im, regs, &inp[i, 0])
            for k in range(nout):
                out[i, k] = regs[outs[k]]
    return out_arr


def rk4_fixed(code, imm, out_regs, n_regs, y0, t0, h, nsteps, stride,
              exog_rows, want_deriv):
    cdef const int32_t[:, ::1] c = np.ascontiguousarray(code, dtype=np.int32)
    cdef const double[::1] im = np.ascontiguousarray(imm, dtype=np.float64)
    cdef const int32_t[::1] outs = np.ascontiguousarray(out_regs, dtype=np.int32)
    cdef Py_ssize_t nd = outs.shape[0]
    cdef const double[:, ::1] exo = np.ascontiguousarray(exog_rows, dtype=np.float64)
    cdef Py_ssize_t ne = exo.shape[1] if exo.shape[0] > 0 else 0
    cdef Py_ssize_t n_steps = int(nsteps)
    cdef Py_ssize_t strd = int(stride)
    cdef double t_0 = float(t0)
    cdef double hh = float(h)
    cdef bint wd = bool(want_deriv)
    cdef Py_ssize_t nsave = n_steps // strd + 1
    cdef cnp.ndarray[double, ndim=2] states_arr = np.empty((nsave, nd), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] derivs_arr = np.empty((nsave if wd else 0, nd), dtype=np.float64)
    cdef double[:, ::1] states = states_arr
    cdef double[:, ::1] derivs = derivs_arr
    cdef Py_ssize_t nr = int(n_regs)
    cdef cnp.ndarray[double, ndim=1] work = np.zeros(nr + 6 * nd + 1 + ne + nd, dtype=np.float64)
    cdef double* regs = &work[0]
    cdef double* y = regs + nr
    cdef double* k1 = y + nd
    cdef double* k2 = k1 + nd
    cdef double* k3 = k2 + nd
    cdef double* k4 = k3 + nd
    cdef double* ytmp = k4 + nd
    cdef double* inp = ytmp + nd
    cdef Py_ssize_t n, q
    cdef Py_ssize_t n_valid = 0
    cdef Py_ssize_t diverged = -1
    cdef double t, half, sixth
    cdef cnp.ndarray[double, ndim=1] y0c = np.ascontiguousarray(y0, dtype=np.float64)
    for q in range(nd):
        y[q] = y0c[q]
    with nogil:
        for n in range(n_steps):
            t = t_0 + n * hh
            _stage(c, im, outs, regs, inp, ne, exo, t, 2 * n, y, k1, nd)
            if n % strd == 0:
                for q in range(nd):
                    states[n_valid, q] = y[q]
                    if wd:
                        derivs[n_valid, q] = k1[q]
                n_valid += 1
            half = 0.5 * hh
            for q in range(nd):
                ytmp[q] = y[q] + half * k1[q]
            _stage(c, im, outs, regs, inp, ne, exo, t + half, 2 * n + 1, ytmp, k2, nd)
            for q in range(nd):
                ytmp[q] = y[q] + half * k2[q]
            _stage(c, im, outs, regs, inp, ne, exo, t + half, 2 * n + 1, ytmp, k3, nd)
            for q in range(nd):
                ytmp[q] = y[q] + hh * k3[q]
            _stage(c, im, outs, regs, inp, ne, exo, t + hh, 2 * n + 2, ytmp, k4, nd)
            sixth = hh / 6.0
            for q in range(nd):
                y[q] = y[q] + sixth * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
            if _bad(y, nd):
                diverged = n
                break
        if diverged < 0:
            for q in range(nd):
                states[n_valid, q] = y[q]
            if wd:
                _stage(c, im, outs, regs, inp, ne, exo, t_0 + n_steps * hh, 2 * n_steps, y, k1, nd)
                for q in range(nd):
                    derivs[n_valid, q] = k1[q]
            n_valid += 1
    return states_arr, derivs_arr, int(n_valid), int(diverged)


cdef inline void _stage(const int32_t[:, ::1] c, const double[::1] im,
                        const int32_t[::1] outs, double* regs, double* inp,
                        Py_ssize_t ne, const double[:, ::1] exo,
                        double t, Py_ssize_t exrow, const double* yy,
                        double* out, Py_ssize_t nd) noexcept nogil:
    cdef Py_ssize_t q
    inp[0] = t
    for q in range(ne):
        inp[1 + q] = exo[exrow, q]
    for q in range(nd):
        inp[1 + ne + q] = yy[q]
    _run(c, im, regs, inp)
    for q in range(nd):
        out[q] = regs[outs[q]]


def em_path(fg_code, fg_imm, fg_out, fg_nregs,
            b_code, b_imm, b_out, b_nregs,
            s_code, s_imm, s_out, s_nregs,
            n_x, n_y, n_w, phi0, t0, dt, nsteps, seed, stride,
            clamp_lo, clamp_hi, use_clamp):
    cdef const int32_t[:, ::1] fgc = np.ascontiguousarray(fg_code, dtype=np.int32)
    cdef const double[::1] fgi = np.ascontiguousarray(fg_imm, dtype=np.float64)
    cdef const int32_t[::1] fgo = np.ascontiguousarray(fg_out, dtype=np.int32)
    cdef const int32_t[:, ::1] bc = np.ascontiguousarray(b_code, dtype=np.int32)
    cdef const double[::1] bi = np.ascontiguousarray(b_imm, dtype=np.float64)
    cdef const int32_t[::1] bo = np.ascontiguousarray(b_out, dtype=np.int32)
    cdef const int32_t[:, ::1] sc = np.ascontiguousarray(s_code, dtype=np.int32)
    cdef const double[::1] si = np.ascontiguousarray(s_imm, dtype=np.float64)
    cdef const int32_t[::1] so = np.ascontiguousarray(s_out, dtype=np.int32)
    cdef Py_ssize_t nx = int(n_x)
    cdef Py_ssize_t ny = int(n_y)
    cdef Py_ssize_t nw = int(n_w)
    cdef Py_ssize_t dim = nx + ny + nx
    cdef Py_ssize_t n_steps = int(nsteps)
    cdef Py_ssize_t strd = int(stride)
    cdef double t_0 = float(t0)
    cdef double dtt = float(dt)
    cdef double sq = sqrt(dtt)
    cdef uint64_t sd = <uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef bint clamped = bool(use_clamp)
    cdef Py_ssize_t nsave = n_steps // strd + 1
    cdef cnp.ndarray[double, ndim=2] states_arr = np.empty((nsave, dim), dtype=np.float64)
    cdef double[:, ::1] states = states_arr
    cdef Py_ssize_t nfg = int(fg_nregs)
    cdef Py_ssize_t nb = int(b_nregs)
    cdef Py_ssize_t ns = int(s_nregs)
    cdef cnp.ndarray[double, ndim=1] work = np.zeros(
        nfg + nb + ns + dim + 2 * dim + (1 + nx + ny) + (1 + nx) + nw + nx, dtype=np.float64)
    cdef double* fg_regs = &work[0]
    cdef double* b_regs = fg_regs + nfg
    cdef double* s_regs = b_regs + nb
    cdef double* phi = s_regs + ns
    cdef double* lo = phi + dim
    cdef double* hi = lo + dim
    cdef double* fg_in = hi + dim
    cdef double* z_in = fg_in + (1 + nx + ny)
    cdef double* dw = z_in + (1 + nx)
    cdef double* dz = dw + nw
    cdef cnp.ndarray[double, ndim=1] phi0c = np.ascontiguousarray(phi0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] loc = np.ascontiguousarray(clamp_lo, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] hic = np.ascontiguousarray(clamp_hi, dtype=np.float64)
    cdef Py_ssize_t n, q, i, k
    cdef Py_ssize_t n_valid = 0
    cdef Py_ssize_t diverged = -1
    cdef long clamp_count = 0
    cdef double t, acc
    cdef uint64_t base
    for q in range(dim):
        phi[q] = phi0c[q]
        lo[q] = loc[q]
        hi[q] = hic[q]
    with nogil:
        for n in range(n_steps):
            if n % strd == 0:
                for q in range(dim):
                    states[n_valid, q] = phi[q]
                n_valid += 1
            t = t_0 + n * dtt
            fg_in[0] = t
            for q in range(nx + ny):
                fg_in[1 + q] = phi[q]
            _run(fgc, fgi, fg_regs, fg_in)
            z_in[0] = t
            for q in range(nx):
                z_in[1 + q] = phi[nx + ny + q]
            _run(bc, bi, b_regs, z_in)
            _run(sc, si, s_regs, z_in)
            base = (<uint64_t> n) * (<uint64_t> nw)
            for k in range(nw):
                dw[k] = sq * _gauss_at(sd, base + k)
            for i in range(nx):
                acc = b_regs[bo[i]] * dtt
                for k in range(nw):
                    acc += s_regs[so[i * nw + k]] * dw[k]
                dz[i] = acc
            for i in range(nx):
                phi[i] += fg_regs[fgo[i]] * dtt + dz[i]
            for q in range(ny):
                phi[nx + q] += fg_regs[fgo[nx + q]] * dtt
            for i in range(nx):
                phi[nx + ny + i] += dz[i]
            if clamped:
                for q in range(dim):
                    if phi[q] < lo[q]:
                        phi[q] = lo[q]
                        clamp_count += 1
                    elif phi[q] > hi[q]:
                        phi[q] = hi[q]
                        clamp_count += 1
            if _bad(phi, dim):
                diverged = n
                break
        if diverged < 0:
            for q in range(dim):
                states[n_valid, q] = phi[q]
            n_valid += 1
    return states_arr, int(n_valid), int(diverged), int(clamp_count)
