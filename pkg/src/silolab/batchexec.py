"""Lane-parallel executor: many machines, one program, numpy vectors.

The bounded equivalence check runs a program on every point of an input
domain (65,536 lanes for two 8-bit-constrained registers). A Python-loop
interpreter costs seconds per check; this engine runs all lanes together as
uint64 vectors grouped by program counter and finishes in milliseconds.

Semantics are defined by :mod:`machine`; this module must agree with it
bit-for-bit (a property test cross-checks the two engines on random programs
and inputs). Lanes may diverge at conditional jumps; each round advances
every running lane by exactly one instruction, so fuel accounting matches
the scalar engine. Generated code is lockstep in practice and the per-round
program-counter grouping degenerates to one group.

Only final states are produced (no per-lane execution traces): callers that
need executed-instruction lists use the scalar engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .isa import Imm, Mem, Op, Program, Reg, Register
from .machine import DEFAULT_FUEL, MEM_SIZE, MachineState

__all__ = ["BatchResult", "run_batch", "states_to_regs", "lane_state"]

U = np.uint64

# status codes
RUNNING, RET, FUEL, FAULT, BOUND = 0, 1, 2, 3, 4

_STATUS_NAME = {RET: "ret", FUEL: "fuel", FAULT: "fault", BOUND: "bound"}


def _mask(w: int) -> np.uint64:
    return U((1 << w) - 1)


def _sxv(a: np.ndarray, w: int) -> np.ndarray:
    """Sign-extend the low w bits of uint64 lanes; returns int64 lanes."""
    if w == 64:
        return np.ascontiguousarray(a).view(np.int64)
    return (np.left_shift(a, U(64 - w))).view(np.int64) >> np.int64(64 - w)


@dataclass
class BatchResult:
    regs: np.ndarray  # uint64 [8, n]
    zf: np.ndarray
    sf: np.ndarray
    cf: np.ndarray
    of: np.ndarray
    mem: np.ndarray | None  # uint8 [n, MEM_SIZE] or None if untouched zeros
    status: np.ndarray  # int8 [n]
    backward: np.ndarray  # int32 [n]

    def halted(self, i: int) -> str:
        return _STATUS_NAME[int(self.status[i])]


def states_to_regs(states: list[MachineState]) -> np.ndarray:
    out = np.zeros((8, len(states)), dtype=np.uint64)
    for i, s in enumerate(states):
        for r in Register:
            out[r, i] = s.regs[r]
    return out


def lane_state(res: BatchResult, i: int) -> MachineState:
    """Materialize lane ``i`` of a result as a scalar MachineState."""
    s = MachineState()
    for r in Register:
        s.regs[r] = int(res.regs[r, i])
    s.zf, s.sf = bool(res.zf[i]), bool(res.sf[i])
    s.cf, s.of = bool(res.cf[i]), bool(res.of[i])
    if res.mem is not None:
        s.mem = bytearray(res.mem[i].tobytes())
    return s


def _mulh_s64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """High 64 bits of the signed 128-bit product, as uint64 lanes."""
    m32 = U(0xFFFFFFFF)
    a0, a1 = a & m32, a >> U(32)
    b0, b1 = b & m32, b >> U(32)
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> U(32)) + (p01 & m32) + (p10 & m32)
    hi = p11 + (p01 >> U(32)) + (p10 >> U(32)) + (mid >> U(32))
    # unsigned -> signed high adjustment
    hi = hi - np.where(_sxv(a, 64) < 0, b, U(0)) - np.where(_sxv(b, 64) < 0, a, U(0))
    return hi


def run_batch(
    prog: Program,
    regs: np.ndarray,
    mem: np.ndarray | None = None,
    fuel: int = DEFAULT_FUEL,
    loop_bound: int | None = None,
) -> BatchResult:
    """Run ``prog`` on n lanes. ``regs`` is uint64 [8, n]; ``mem`` is uint8
    [n, 256] or None for all-zero memory. Flags start clear (the entry
    convention). Returns final states; input arrays are not mutated."""
    instrs = prog.instrs
    nins = len(instrs)

    # next executable index at or after i (label defs are free to cross)
    skip = [nins] * (nins + 1)
    for i in range(nins - 1, -1, -1):
        skip[i] = i if instrs[i].op is not Op.LABEL else skip[i + 1]
    # backwardness is judged on the label-def index (as in the scalar engine);
    # the normalized target is where the lane actually lands
    target_of = {
        ins.operands[0].name: (i, skip[i])
        for i, ins in enumerate(instrs)
        if ins.op is Op.LABEL
    }

    n = regs.shape[1]
    reg_file = regs.astype(np.uint64, copy=True)
    zf = np.zeros(n, dtype=bool)
    sf = np.zeros(n, dtype=bool)
    cf = np.zeros(n, dtype=bool)
    of = np.zeros(n, dtype=bool)
    if mem is not None:
        mem_file = np.array(mem, dtype=np.uint8, copy=True)
        if mem_file.shape != (n, MEM_SIZE):
            raise ValueError("mem must be [n, %d]" % MEM_SIZE)
    elif prog.uses_mem():
        mem_file = np.zeros((n, MEM_SIZE), dtype=np.uint8)
    else:
        mem_file = None

    pc = np.full(n, skip[0], dtype=np.int64)
    used = np.zeros(n, dtype=np.int64)
    backward = np.zeros(n, dtype=np.int32)
    status = np.zeros(n, dtype=np.int8)

    def cond_vec(cond: str, m: np.ndarray) -> np.ndarray:
        if cond == "e":
            return zf[m]
        if cond == "ne":
            return ~zf[m]
        if cond == "l":
            return sf[m] != of[m]
        if cond == "g":
            return ~zf[m] & (sf[m] == of[m])
        raise ValueError(cond)

    def read_reg(r: Register, w: int, m: np.ndarray) -> np.ndarray:
        v = reg_file[r][m]
        return v & _mask(w) if w < 64 else v

    def write_reg(r: Register, w: int, m: np.ndarray, v: np.ndarray) -> None:
        if w >= 32:
            reg_file[r][m] = v & _mask(w) if w == 32 else v
        else:
            old = reg_file[r][m]
            reg_file[r][m] = (old & ~_mask(w)) | (v & _mask(w))

    def mem_addr(o: Mem, m: np.ndarray, nbytes: int):
        addr = reg_file[o.base][m] + U(o.disp % (1 << 64))
        ok = addr <= U(MEM_SIZE - nbytes)
        return addr, ok

    def read_operand(o, w: int, m: np.ndarray):
        """Returns (values, ok) where ok is None (all fine) or a bool mask
        over the lanes of m marking non-faulting lanes."""
        if isinstance(o, Reg):
            return read_reg(o.reg, w, m), None
        if isinstance(o, Imm):
            return np.full(int(m.sum()), U(o.value & ((1 << w) - 1)), dtype=np.uint64), None
        nbytes = w // 8
        addr, ok = mem_addr(o, m, nbytes)
        rows = np.flatnonzero(m)
        v = np.zeros(len(rows), dtype=np.uint64)
        okr = rows[ok]
        if len(okr):
            a = addr[ok].astype(np.int64)
            cols = a[:, None] + np.arange(nbytes)
            chunk = mem_file[okr[:, None], cols].astype(np.uint64)
            shifts = (np.arange(nbytes, dtype=np.uint64) * U(8))[None, :]
            v[ok] = np.bitwise_or.reduce(chunk << shifts, axis=1)
        return v, (None if ok.all() else ok)

    def write_operand(o, w: int, m: np.ndarray, v: np.ndarray):
        if isinstance(o, Reg):
            write_reg(o.reg, w, m, v)
            return None
        nbytes = w // 8
        addr, ok = mem_addr(o, m, nbytes)
        rows = np.flatnonzero(m)
        okr = rows[ok]
        if len(okr):
            a = addr[ok].astype(np.int64)
            cols = a[:, None] + np.arange(nbytes)
            shifts = np.arange(nbytes, dtype=np.uint64) * U(8)
            bytes_ = ((v[ok][:, None] >> shifts[None, :]) & U(0xFF)).astype(np.uint8)
            mem_file[okr[:, None], cols] = bytes_
        return None if ok.all() else ok

    def set_zs(m: np.ndarray, r: np.ndarray, w: int) -> None:
        zf[m] = r == 0
        sf[m] = ((r >> U(w - 1)) & U(1)).astype(bool)

    def drop_faulted(m: np.ndarray, ok) -> tuple[np.ndarray, np.ndarray | None]:
        """Fault the lanes of m where ok is False; returns (mask, sub-ok)."""
        if ok is None:
            return m, None
        rows = np.flatnonzero(m)
        bad = rows[~ok]
        status[bad] = FAULT
        m2 = m.copy()
        m2[bad] = False
        return m2, ok

    def apply_instr(p: int, m: np.ndarray) -> None:
        ins = instrs[p]
        op = ins.op
        w = ins.width

        if op is Op.RET:
            status[m] = RET
            return

        if op is Op.JMP or op is Op.JCC:
            if op is Op.JMP:
                taken_local = np.ones(int(m.sum()), dtype=bool)
            else:
                taken_local = cond_vec(ins.cond, m)
            rows = np.flatnonzero(m)
            t_rows = rows[taken_local]
            nt_rows = rows[~taken_local]
            pc[nt_rows] = skip[p + 1]
            label_idx, target = target_of[ins.operands[0].name]
            if label_idx < p:
                backward[t_rows] += 1
                if loop_bound is not None:
                    over = t_rows[backward[t_rows] > loop_bound]
                    status[over] = BOUND
                    t_rows = t_rows[backward[t_rows] <= loop_bound]
            pc[t_rows] = target
            return

        if op is Op.SET:
            v = cond_vec(ins.cond, m).astype(np.uint64)
            dst = ins.operands[0]
            m2, ok = (m, None)
            if isinstance(dst, Mem):
                addr, okm = mem_addr(dst, m, 1)
                m2, ok = drop_faulted(m, None if okm.all() else okm)
                v = v if ok is None else v[ok]
            ok2 = write_operand(dst, 8, m2, v)
            assert ok2 is None
            pc[m2] = skip[p + 1]
            return

        if op in (Op.MOV, Op.MOVZ, Op.MOVS, Op.LEA):
            src, dst = ins.operands
            if op is Op.LEA:
                v = (reg_file[src.base][m] + U(src.disp % (1 << 64))) & _mask(w)
                ok = None
            else:
                sw = ins.src_width if op in (Op.MOVZ, Op.MOVS) else w
                v, ok = read_operand(src, sw, m)
                if op is Op.MOVS:
                    v = (_sxv(v, sw).view(np.uint64)) & _mask(w)
            m2, ok = drop_faulted(m, ok)
            if ok is not None:
                v = v[ok]
            okw = write_operand(dst, w, m2, v)
            m3, _ = drop_faulted(m2, okw)
            pc[m3] = skip[p + 1]
            return

        if op in (Op.NEG, Op.NOT):
            dst = ins.operands[0]
            a, ok = read_operand(dst, w, m)
            m2, ok = drop_faulted(m, ok)
            if ok is not None:
                a = a[ok]
            if op is Op.NOT:
                r = ~a & _mask(w)
            else:
                r = (U(0) - a) & _mask(w)
                cf[m2] = a != 0
                of[m2] = a == U(1 << (w - 1))
                set_zs(m2, r, w)
            okw = write_operand(dst, w, m2, r)
            m3, _ = drop_faulted(m2, okw)
            pc[m3] = skip[p + 1]
            return

        # binary ops: src = operands[0], dst = operands[1]
        src, dst = ins.operands
        b, okb = read_operand(src, w, m)
        m2, okb = drop_faulted(m, okb)
        if okb is not None:
            b = b[okb]
        a, oka = read_operand(dst, w, m2)
        m3, oka = drop_faulted(m2, oka)
        if oka is not None:
            a, b = a[oka], b[oka]

        write_back = True
        if op is Op.ADD:
            r = (a + b) & _mask(w)
            cf[m3] = r < a if w == 64 else (a + b) > _mask(w)
            of[m3] = ((~(a ^ b) & (a ^ r)) >> U(w - 1) & U(1)).astype(bool)
            set_zs(m3, r, w)
        elif op in (Op.SUB, Op.CMP):
            r = (a - b) & _mask(w)
            cf[m3] = a < b
            of[m3] = (((a ^ b) & (a ^ r)) >> U(w - 1) & U(1)).astype(bool)
            set_zs(m3, r, w)
            write_back = op is Op.SUB
        elif op in (Op.AND, Op.TEST):
            r = a & b
            cf[m3] = False
            of[m3] = False
            set_zs(m3, r, w)
            write_back = op is Op.AND
        elif op is Op.OR:
            r = a | b
            cf[m3] = False
            of[m3] = False
            set_zs(m3, r, w)
        elif op is Op.XOR:
            r = a ^ b
            cf[m3] = False
            of[m3] = False
            set_zs(m3, r, w)
        elif op is Op.IMUL:
            if w < 64:
                full = _sxv(a, w) * _sxv(b, w)
                r = full.view(np.uint64) & _mask(w)
                ovf = full != _sxv(r, w)
            else:
                lo = a * b
                hi = _mulh_s64(a, b)
                fill = np.where((lo >> U(63)).astype(bool), U(0xFFFFFFFFFFFFFFFF), U(0))
                r = lo
                ovf = hi != fill
            cf[m3] = ovf
            of[m3] = ovf
            set_zs(m3, r, w)
        elif op in (Op.SHL, Op.SAR, Op.SHR):
            cnt = ins.operands[0].value & (63 if w == 64 else 31)
            if cnt == 0:
                pc[m3] = skip[p + 1]
                return
            if op is Op.SHL:
                r = (a << U(cnt)) & _mask(w)
                cf[m3] = ((a >> U(w - cnt)) & U(1)).astype(bool) if cnt <= w else False
                of[m3] = (((r >> U(w - 1)) & U(1)).astype(bool) != cf[m3]) if cnt == 1 else False
            elif op is Op.SHR:
                r = a >> U(cnt) if cnt < 64 else np.zeros_like(a)
                cf[m3] = ((a >> U(cnt - 1)) & U(1)).astype(bool) if cnt <= w else False
                of[m3] = ((a >> U(w - 1)) & U(1)).astype(bool) if cnt == 1 else False
            else:  # SAR
                sa = _sxv(a, w)
                r = (sa >> np.int64(cnt)).view(np.uint64) & _mask(w)
                cf[m3] = ((sa >> np.int64(cnt - 1)) & 1).astype(bool) if cnt <= 64 else (sa < 0)
                of[m3] = False
            set_zs(m3, r, w)
        else:  # pragma: no cover
            raise NotImplementedError(op)

        if write_back:
            okw = write_operand(dst, w, m3, r)
            m4, _ = drop_faulted(m3, okw)
            pc[m4] = skip[p + 1]
        else:
            pc[m3] = skip[p + 1]

    with np.errstate(over="ignore"):
        while True:
            running = status == RUNNING
            if not running.any():
                break
            off_end = running & (pc >= nins)
            if off_end.any():
                status[off_end] = FAULT
                running &= ~off_end
            out_of_fuel = running & (used >= fuel)
            if out_of_fuel.any():
                status[out_of_fuel] = FUEL
                running &= ~out_of_fuel
            if not running.any():
                continue
            used[running] += 1
            pc_round = pc.copy()
            for p in np.unique(pc_round[running]):
                m = running & (pc_round == p)
                apply_instr(int(p), m)

    return BatchResult(reg_file, zf, sf, cf, of, mem_file, status, backward)
