"""Reference interpreter for the miniature ISA.

The machine is eight 64-bit registers, four flags (zf, sf, cf, of), and a
256-byte little-endian memory. Execution starts at the first instruction of a
program and ends at ``ret``, a fault (out-of-range memory access or falling
off the end), fuel exhaustion, or a backward-jump bound if one is given.

Conventions (part of the language definition, relied on everywhere):

* 32-bit register writes zero the upper half; 16/8-bit writes merge.
* Shift counts mask with &31 (widths <= 32) or &63 (width 64); a masked count
  of zero changes neither the destination nor the flags; counts > 1 leave of=0.
* ``imul`` defines zf/sf from the truncated result and cf=of=overflow; real
  hardware leaves zf/sf undefined, a deterministic machine cannot.
* Flags are all clear at function entry; memory bytes the caller did not
  explicitly set are zero.

This module also owns :class:`LiveOutSpec` (which architectural components
count as observable when comparing two final states) and the masked state
comparison used by the verifier: :func:`masked_equal` and :func:`bit_diff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .isa import (
    FLAG_NAMES,
    MEM_SIZE,
    Imm,
    Instruction,
    Label,
    Mem,
    Op,
    Program,
    Reg,
    Register,
    reg_name,
    reg_from_name,
)

__all__ = [
    "MachineState",
    "ExecResult",
    "LiveOutSpec",
    "execute",
    "masked_equal",
    "bit_diff",
    "DEFAULT_FUEL",
]

DEFAULT_FUEL = 4096

_M64 = (1 << 64) - 1


def _mask(w: int) -> int:
    return (1 << w) - 1


def _sx(v: int, w: int) -> int:
    return v - (1 << w) if v >> (w - 1) & 1 else v


@dataclass
class MachineState:
    """Architectural state. Register cells hold unsigned 64-bit values."""

    regs: list[int] = field(default_factory=lambda: [0] * 8)
    zf: bool = False
    sf: bool = False
    cf: bool = False
    of: bool = False
    mem: bytearray = field(default_factory=lambda: bytearray(MEM_SIZE))

    def copy(self) -> "MachineState":
        s = MachineState(list(self.regs), self.zf, self.sf, self.cf, self.of, bytearray(self.mem))
        return s

    def set_reg(self, name: str, value: int) -> "MachineState":
        reg, width = reg_from_name(name)
        if width != 64:
            raise ValueError("set_reg takes 64-bit register names")
        self.regs[reg] = value & _M64
        return self

    def get_reg(self, name: str) -> int:
        reg, width = reg_from_name(name)
        return self.regs[reg] & _mask(width)

    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.zf, self.sf, self.cf, self.of)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MachineState):
            return NotImplemented
        return (
            self.regs == other.regs
            and self.flags() == other.flags()
            and self.mem == other.mem
        )

    def to_json(self) -> dict:
        memhex = self.mem.hex()
        memhex = memhex.rstrip("0")
        if len(memhex) % 2:
            memhex += "0"
        return {
            "regs": {reg_name(r, 64): "0x%x" % self.regs[r] for r in Register},
            "flags": {n: int(getattr(self, n)) for n in FLAG_NAMES},
            "mem": memhex,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MachineState":
        s = cls()
        for name, hexval in obj["regs"].items():
            s.set_reg(name, int(hexval, 16))
        for n in FLAG_NAMES:
            setattr(s, n, bool(obj["flags"][n]))
        raw = bytes.fromhex(obj["mem"])
        if len(raw) > MEM_SIZE:
            raise ValueError("memory image larger than %d bytes" % MEM_SIZE)
        s.mem[: len(raw)] = raw
        return s


@dataclass(frozen=True)
class LiveOutSpec:
    """Observable components of a final state.

    ``regs`` maps each live register to the width (in bits) at which it is
    observed; registers absent from the map are dead. ``flags`` lists live
    flags. ``heap_out`` makes the whole memory observable."""

    regs: tuple[tuple[Register, int], ...]
    flags: frozenset[str]
    heap_out: bool

    @classmethod
    def make(cls, regs: dict[Register, int], flags, heap_out: bool) -> "LiveOutSpec":
        items = tuple(sorted(regs.items()))
        return cls(items, frozenset(flags), heap_out)

    @classmethod
    def all_live(cls) -> "LiveOutSpec":
        return cls.make({r: 64 for r in Register}, FLAG_NAMES, True)

    @classmethod
    def only(cls, **kwargs) -> "LiveOutSpec":
        """Convenience: LiveOutSpec.only(rax=64, flags=(), heap_out=False)."""
        flags = kwargs.pop("flags", ())
        heap = kwargs.pop("heap_out", False)
        regs = {reg_from_name(k)[0]: w for k, w in kwargs.items()}
        return cls.make(regs, flags, heap)

    def reg_width(self, reg: Register) -> int:
        for r, w in self.regs:
            if r == reg:
                return w
        return 0

    def to_json(self) -> dict:
        return {
            "regs": {reg_name(r, 64): w for r, w in self.regs},
            "flags": sorted(self.flags),
            "heap_out": self.heap_out,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LiveOutSpec":
        regs = {reg_from_name(n)[0]: w for n, w in obj["regs"].items()}
        return cls.make(regs, obj["flags"], obj["heap_out"])


@dataclass
class ExecResult:
    state: MachineState
    executed: list[int]
    halted: str  # "ret" | "fuel" | "fault" | "bound"
    backward_jumps: int
    fault: str | None = None


def _read_mem(state: MachineState, base_val: int, disp: int, nbytes: int) -> int | None:
    addr = (base_val + disp) & _M64
    if addr + nbytes > MEM_SIZE:
        return None
    return int.from_bytes(state.mem[addr : addr + nbytes], "little")


def _write_mem(state: MachineState, base_val: int, disp: int, nbytes: int, value: int) -> bool:
    addr = (base_val + disp) & _M64
    if addr + nbytes > MEM_SIZE:
        return False
    state.mem[addr : addr + nbytes] = (value & _mask(8 * nbytes)).to_bytes(nbytes, "little")
    return True


def _write_reg(state: MachineState, reg: Register, w: int, value: int) -> None:
    value &= _mask(w)
    if w == 64:
        state.regs[reg] = value
    elif w == 32:
        state.regs[reg] = value  # 32-bit writes zero-extend
    else:
        state.regs[reg] = (state.regs[reg] & ~_mask(w) & _M64) | value


def _cond_true(state: MachineState, cond: str) -> bool:
    if cond == "e":
        return state.zf
    if cond == "ne":
        return not state.zf
    if cond == "l":
        return state.sf != state.of
    if cond == "g":
        return (not state.zf) and state.sf == state.of
    raise ValueError(f"unknown condition {cond!r}")


def _set_zs(state: MachineState, r: int, w: int) -> None:
    state.zf = r == 0
    state.sf = bool(r >> (w - 1) & 1)


def execute(
    prog: Program,
    state: MachineState,
    fuel: int = DEFAULT_FUEL,
    loop_bound: int | None = None,
) -> ExecResult:
    """Run ``prog`` on a copy of ``state``. Never mutates the input state."""
    st = state.copy()
    labels = prog.label_index()
    instrs = prog.instrs
    pc = 0
    used = 0
    executed: list[int] = []
    backward = 0

    def read_operand(o, w: int) -> int | None:
        if isinstance(o, Reg):
            return st.regs[o.reg] & _mask(w)
        if isinstance(o, Imm):
            return o.value & _mask(w)
        if isinstance(o, Mem):
            return _read_mem(st, st.regs[o.base], o.disp, w // 8)
        raise TypeError(o)

    def fault(reason: str) -> ExecResult:
        return ExecResult(st, executed, "fault", backward, reason)

    while True:
        if pc >= len(instrs):
            return fault("fall_off_end")
        ins = instrs[pc]
        if ins.op is Op.LABEL:
            pc += 1
            continue
        if used >= fuel:
            return ExecResult(st, executed, "fuel", backward)
        used += 1
        executed.append(pc)
        op = ins.op
        w = ins.width

        if op is Op.RET:
            return ExecResult(st, executed, "ret", backward)

        if op is Op.JMP or op is Op.JCC:
            taken = op is Op.JMP or _cond_true(st, ins.cond)
            if taken:
                target = labels[ins.operands[0].name]
                if target < pc:
                    backward += 1
                    if loop_bound is not None and backward > loop_bound:
                        return ExecResult(st, executed, "bound", backward)
                pc = target
            else:
                pc += 1
            continue

        if op is Op.SET:
            v = 1 if _cond_true(st, ins.cond) else 0
            dst = ins.operands[0]
            if isinstance(dst, Reg):
                _write_reg(st, dst.reg, 8, v)
            else:
                if not _write_mem(st, st.regs[dst.base], dst.disp, 1, v):
                    return fault("mem_oob")
            pc += 1
            continue

        if op in (Op.MOV, Op.MOVZ, Op.MOVS, Op.LEA):
            src, dst = ins.operands
            if op is Op.LEA:
                v = (st.regs[src.base] + src.disp) & _mask(w)
            else:
                sw = ins.src_width if op in (Op.MOVZ, Op.MOVS) else w
                v = read_operand(src, sw)
                if v is None:
                    return fault("mem_oob")
                if op is Op.MOVS:
                    v = _sx(v, sw) & _mask(w)
            if isinstance(dst, Reg):
                _write_reg(st, dst.reg, w, v)
            else:
                if not _write_mem(st, st.regs[dst.base], dst.disp, w // 8, v):
                    return fault("mem_oob")
            pc += 1
            continue

        if op in (Op.NEG, Op.NOT):
            dst = ins.operands[0]
            a = read_operand(dst, w)
            if a is None:
                return fault("mem_oob")
            if op is Op.NOT:
                r = ~a & _mask(w)
            else:
                r = (-a) & _mask(w)
                st.cf = a != 0
                st.of = a == (1 << (w - 1))
                _set_zs(st, r, w)
            if isinstance(dst, Reg):
                _write_reg(st, dst.reg, w, r)
            else:
                if not _write_mem(st, st.regs[dst.base], dst.disp, w // 8, r):
                    return fault("mem_oob")
            pc += 1
            continue

        # remaining ops are binary: src = operands[0], dst = operands[1]
        src, dst = ins.operands
        b = read_operand(src, w)
        a = read_operand(dst, w)
        if a is None or b is None:
            return fault("mem_oob")

        write_back = True
        if op is Op.ADD:
            full = a + b
            r = full & _mask(w)
            st.cf = full > _mask(w)
            st.of = _sx(a, w) + _sx(b, w) != _sx(r, w)
            _set_zs(st, r, w)
        elif op in (Op.SUB, Op.CMP):
            r = (a - b) & _mask(w)
            st.cf = a < b
            st.of = _sx(a, w) - _sx(b, w) != _sx(r, w)
            _set_zs(st, r, w)
            write_back = op is Op.SUB
        elif op in (Op.AND, Op.TEST):
            r = a & b
            st.cf = st.of = False
            _set_zs(st, r, w)
            write_back = op is Op.AND
        elif op is Op.OR:
            r = a | b
            st.cf = st.of = False
            _set_zs(st, r, w)
        elif op is Op.XOR:
            r = a ^ b
            st.cf = st.of = False
            _set_zs(st, r, w)
        elif op is Op.IMUL:
            full = _sx(a, w) * _sx(b, w)
            r = full & _mask(w)
            ovf = full != _sx(r, w)
            st.cf = st.of = ovf
            _set_zs(st, r, w)
        elif op in (Op.SHL, Op.SAR, Op.SHR):
            cnt = b & (63 if w == 64 else 31)
            if cnt == 0:
                r = a
                write_back = False
            else:
                if op is Op.SHL:
                    r = (a << cnt) & _mask(w)
                    st.cf = bool((a >> (w - cnt)) & 1) if cnt <= w else False
                    st.of = (bool(r >> (w - 1) & 1) != st.cf) if cnt == 1 else False
                elif op is Op.SHR:
                    r = a >> cnt if cnt < 64 else 0
                    st.cf = bool((a >> (cnt - 1)) & 1) if cnt <= w else False
                    st.of = bool(a >> (w - 1) & 1) if cnt == 1 else False
                else:  # SAR
                    sa = _sx(a, w)
                    r = (sa >> cnt) & _mask(w)
                    st.cf = bool((sa >> (cnt - 1)) & 1) if cnt <= 64 else (sa < 0)
                    st.of = False
                _set_zs(st, r, w)
        else:  # pragma: no cover
            raise NotImplementedError(op)

        if write_back:
            if isinstance(dst, Reg):
                _write_reg(st, dst.reg, w, r)
            else:
                if not _write_mem(st, st.regs[dst.base], dst.disp, w // 8, r):
                    return fault("mem_oob")
        pc += 1


def masked_equal(a: MachineState, b: MachineState, lo: LiveOutSpec) -> bool:
    for r, w in lo.regs:
        if (a.regs[r] ^ b.regs[r]) & _mask(w):
            return False
    for f in lo.flags:
        if getattr(a, f) != getattr(b, f):
            return False
    if lo.heap_out and a.mem != b.mem:
        return False
    return True


def bit_diff(a: MachineState, b: MachineState, lo: LiveOutSpec) -> int:
    """Number of differing observable bits between two final states."""
    n = 0
    for r, w in lo.regs:
        n += ((a.regs[r] ^ b.regs[r]) & _mask(w)).bit_count()
    for f in lo.flags:
        n += getattr(a, f) != getattr(b, f)
    if lo.heap_out:
        n += sum((x ^ y).bit_count() for x, y in zip(a.mem, b.mem))
    return n
