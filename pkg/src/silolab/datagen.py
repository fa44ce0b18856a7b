"""Synthetic optimization-task generation.

Each corpus entry starts from a tiny straight-line/branchy/loopy source
function over 32- or 64-bit integers.  The function is lowered twice:

* ``compile_naive`` produces deliberately verbose code in the style of an
  unoptimized compiler: every variable lives in a stack-frame slot, all
  arithmetic goes through the two scratch registers, and the epilogue
  re-zeroes the frame.
* ``compile_opt`` runs a small optimizing pipeline (slot promotion, copy
  coalescing and propagation, dead-store elimination, strength reduction,
  jump cleanup) and allocates scratches from a rotating register pool.

A task is admitted only after the two lowerings are proven equivalent under
an observability contract inferred from their agreement.  Any verification
failure between the two lowerings is a generator bug and raises immediately;
it is never silently discarded.

The module also provides witnessed semantic mutants (known-broken rewrites,
each confirmed different on a concrete input by the scalar interpreter) and
behavior-preserving variants (known-safe rewrites), which exercise the
verifier from both sides without relying on it to certify its own tests.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Union

from .cost import LatencyTable, cost
from .isa import (
    FLAG_NAMES,
    MAX_LABELS,
    OPINFO,
    Imm,
    Instruction,
    Label,
    Mem,
    Op,
    Program,
    Reg,
    Register,
    canonicalize_labels,
    label_def,
    parse,
    reg_from_name,
    reg_name,
    validate,
)
from .machine import LiveOutSpec, MachineState, execute, masked_equal
from .testgen import SuiteGenError, TestSuite, generate_suite
from .tokens import MAX_SEQ_LEN, tokenize
from .verify import VerifyConfig, infer_live_out, verify

__all__ = [
    "Assign",
    "Bin",
    "Cmp",
    "Const",
    "CorpusEntry",
    "If",
    "Loop",
    "MemLoad",
    "Ret",
    "SourceTask",
    "Store",
    "Un",
    "Var",
    "FAMILIES",
    "FRAME_BASE",
    "SCRATCH_POOL",
    "build_corpus",
    "build_entry",
    "compile_naive",
    "compile_opt",
    "guard_mutant",
    "headroom_witnesses",
    "live_out_from_json",
    "live_out_to_json",
    "load_corpus",
    "make_abs_task",
    "make_cell_task",
    "make_identity_task",
    "make_loop_task",
    "make_select_task",
    "pick_guard_value",
    "preserving_variants",
    "sample_task",
    "semantic_mutants",
]


# --- source-task IR ---------------------------------------------------------

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class MemLoad:
    """Unsigned byte load from a fixed data-region cell."""

    addr: int


Atom = Union[Var, Const, MemLoad]


@dataclass(frozen=True)
class Bin:
    """Binary op over atoms. op in {+ - * & | ^ << >>s}."""

    op: str
    lhs: Atom
    rhs: Atom


@dataclass(frozen=True)
class Un:
    """Unary op over an atom. op in {- ~}."""

    op: str
    arg: Atom


@dataclass(frozen=True)
class Cmp:
    """Comparison producing 0/1. op in {== != <s >s} (signed order)."""

    op: str
    lhs: Atom
    rhs: Atom


Expr = Union[Var, Const, MemLoad, Bin, Un, Cmp]


@dataclass(frozen=True)
class Assign:
    dst: str
    expr: Expr


@dataclass(frozen=True)
class Store:
    """Store the low byte of an atom to a fixed data-region cell."""

    addr: int
    src: Atom


@dataclass(frozen=True)
class If:
    cond: Cmp
    then: tuple
    orelse: tuple = ()


@dataclass(frozen=True)
class Loop:
    """Count a fresh counter down from ``trips`` to zero."""

    trips: int
    body: tuple


@dataclass(frozen=True)
class Ret:
    expr: Atom


Stmt = Union[Assign, Store, If, Loop, Ret]


@dataclass(frozen=True)
class SourceTask:
    """A tiny source function: params in rdi/rsi, one return value."""

    name: str
    family: str
    width: int
    params: tuple[str, ...]
    body: tuple[Stmt, ...]


# Frame slots for naive codegen live at r9+FRAME_BASE, 8 bytes apart.
FRAME_BASE = 128
_SFX = {8: "b", 16: "w", 32: "l", 64: "q"}
_PARAM_REGS = (Register.RDI, Register.RSI)
_LOCAL_HOMES = (Register.RBX, Register.R8)
SCRATCH_POOL = (Register.RBX, Register.R8, Register.RDX, Register.RCX)
_CC = {"==": "e", "!=": "ne", "<s": "l", ">s": "g"}
_BINOP = {"+": "add", "-": "sub", "*": "imul", "&": "and", "|": "or",
          "^": "xor", "<<": "shl", ">>s": "sar"}


def _walk_stmts(body: Iterable[Stmt]):
    for st in body:
        yield st
        if isinstance(st, If):
            yield from _walk_stmts(st.then)
            yield from _walk_stmts(st.orelse)
        elif isinstance(st, Loop):
            yield from _walk_stmts(st.body)


def _var_layout(task: SourceTask) -> list[str]:
    """Slot order: params first, then locals and loop counters as they appear."""
    order = list(task.params)
    for st in _walk_stmts(task.body):
        if isinstance(st, Loop) and "i" not in order:
            order.append("i")
        if isinstance(st, Assign) and st.dst not in order:
            order.append(st.dst)
    return order


def task_input_regs(task: SourceTask) -> tuple[str, ...]:
    return ("rdi", "rsi")[: len(task.params)]


def task_mem_bytes(task: SourceTask) -> int:
    # Only loaded cells need exhaustive probing; stores are checked via the
    # heap plane regardless of initial contents.
    loads = [e.addr for st in _walk_stmts(task.body)
             for e in _exprs_of(st) if isinstance(e, MemLoad)]
    return max(loads) + 1 if loads else 0


def _exprs_of(st: Stmt) -> list[Expr]:
    if isinstance(st, Assign):
        e = st.expr
        out: list[Expr] = [e]
        if isinstance(e, (Bin, Cmp)):
            out += [e.lhs, e.rhs]
        elif isinstance(e, Un):
            out.append(e.arg)
        return out
    if isinstance(st, Store):
        return [st.src]
    if isinstance(st, If):
        return [st.cond, st.cond.lhs, st.cond.rhs]
    if isinstance(st, Ret):
        return [st.expr]
    return []


# --- naive lowering ---------------------------------------------------------

class _NaiveFn:
    """Emits the verbose slot-per-variable lowering as program text."""

    def __init__(self, task: SourceTask):
        self.task = task
        self.w = task.width
        self.sfx = _SFX[task.width]
        self.lines: list[str] = [f".{task.name}:"]
        self.nlabel = 0
        layout = _var_layout(task)
        if len(layout) > 5:
            raise ValueError("too many variables for the frame layout")
        self.slots = {v: FRAME_BASE + 8 * i for i, v in enumerate(layout)}

    def emit(self, text: str) -> None:
        self.lines.append("  " + text)

    def fresh_label(self) -> str:
        self.nlabel += 1
        return f".L{self.nlabel}"

    def slot(self, var: str) -> str:
        return "0x%x(%%r9)" % self.slots[var]

    def reg(self, r: Register, w: int | None = None) -> str:
        return "%" + reg_name(r, w or self.w)

    def load_atom(self, atom: Atom, r: Register) -> None:
        if isinstance(atom, Var):
            self.emit(f"mov{self.sfx} {self.slot(atom.name)}, {self.reg(r)}")
        elif isinstance(atom, Const):
            self.emit(f"mov{self.sfx} {_imm(atom.value)}, {self.reg(r)}")
        else:
            ext = "movzbl" if self.w == 32 else "movzbq"
            self.emit(f"{ext} {_cell(atom.addr)}, {self.reg(r)}")

    def atom_src(self, atom: Atom, r: Register) -> str:
        """Immediate text when possible, else load into r and use r."""
        if isinstance(atom, Const):
            return _imm(atom.value)
        self.load_atom(atom, r)
        return self.reg(r)

    def eval_expr(self, e: Expr) -> None:
        """Evaluate into rcx, clobbering rdx."""
        rc, rd = Register.RCX, Register.RDX
        if isinstance(e, (Var, Const, MemLoad)):
            self.load_atom(e, rc)
        elif isinstance(e, Un):
            self.load_atom(e.arg, rc)
            op = "neg" if e.op == "-" else "not"
            self.emit(f"{op}{self.sfx} {self.reg(rc)}")
        elif isinstance(e, Bin):
            self.load_atom(e.lhs, rc)
            if e.op in ("<<", ">>s"):
                assert isinstance(e.rhs, Const)
                self.emit(f"{_BINOP[e.op]}{self.sfx} {_imm(e.rhs.value)}, {self.reg(rc)}")
            else:
                src = self.atom_src(e.rhs, rd)
                self.emit(f"{_BINOP[e.op]}{self.sfx} {src}, {self.reg(rc)}")
        elif isinstance(e, Cmp):
            self.load_atom(e.lhs, rc)
            src = self.atom_src(e.rhs, rd)
            self.emit(f"cmp{self.sfx} {src}, {self.reg(rc)}")
            self.emit(f"set{_CC[e.op]} %cl")
            ext = "movzbl" if self.w == 32 else "movzbq"
            self.emit(f"{ext} %cl, {self.reg(rc)}")
        else:
            raise TypeError(f"unknown expression {e!r}")

    def emit_cond_jump(self, c: Cmp, target: str) -> None:
        rc, rd = Register.RCX, Register.RDX
        self.load_atom(c.lhs, rc)
        src = self.atom_src(c.rhs, rd)
        self.emit(f"cmp{self.sfx} {src}, {self.reg(rc)}")
        self.emit(f"j{_CC[c.op]} {target}")

    def stmt(self, st: Stmt) -> None:
        rc, rd = Register.RCX, Register.RDX
        if isinstance(st, Assign):
            self.eval_expr(st.expr)
            self.emit(f"mov{self.sfx} {self.reg(rc)}, {self.slot(st.dst)}")
        elif isinstance(st, Store):
            self.load_atom(st.src, rc)
            self.emit(f"movb %cl, {_cell(st.addr)}")
        elif isinstance(st, If):
            lt, le = self.fresh_label(), self.fresh_label()
            self.emit_cond_jump(st.cond, lt)
            for s in st.orelse:
                self.stmt(s)
            self.emit(f"jmp {le}")
            self.lines.append(f"{lt}:")
            for s in st.then:
                self.stmt(s)
            self.lines.append(f"{le}:")
        elif isinstance(st, Loop):
            self.emit(f"mov{self.sfx} {_imm(st.trips)}, {self.reg(rc)}")
            self.emit(f"mov{self.sfx} {self.reg(rc)}, {self.slot('i')}")
            top = self.fresh_label()
            self.lines.append(f"{top}:")
            for s in st.body:
                self.stmt(s)
            self.emit(f"mov{self.sfx} {self.slot('i')}, {self.reg(rc)}")
            self.emit(f"sub{self.sfx} $0x1, {self.reg(rc)}")
            self.emit(f"mov{self.sfx} {self.reg(rc)}, {self.slot('i')}")
            self.emit(f"mov{self.sfx} {self.slot('i')}, {self.reg(rd)}")
            self.emit(f"cmp{self.sfx} $0x0, {self.reg(rd)}")
            self.emit(f"jne {top}")
        elif isinstance(st, Ret):
            self.load_atom(st.expr, rc)
            for var in sorted(self.slots, key=self.slots.get):
                self.emit(f"movq $0x0, {self.slot(var)}")
            self.emit(f"mov{self.sfx} {self.reg(rc)}, {self.reg(Register.RAX)}")
            self.emit("retq")
        else:
            raise TypeError(f"unknown statement {st!r}")


def _imm(v: int) -> str:
    return "$-0x%x" % -v if v < 0 else "$0x%x" % v


def _cell(addr: int) -> str:
    return "0x%x(%%r9)" % addr if addr else "(%r9)"


def compile_naive(task: SourceTask) -> Program:
    """Verbose lowering: slots for every variable, rcx/rdx scratch traffic,
    a frame-zeroing epilogue, and a counted tail-test loop shape."""
    fn = _NaiveFn(task)
    for i, p in enumerate(task.params):
        fn.emit(f"mov{fn.sfx} {fn.reg(_PARAM_REGS[i])}, {fn.slot(p)}")
    for st in task.body:
        fn.stmt(st)
    if not isinstance(task.body[-1], Ret):
        raise ValueError("task body must end with Ret")
    prog = validate(parse("\n".join(fn.lines) + "\n"))
    return canonicalize_labels(prog)


# --- instruction-level analyses ---------------------------------------------

_DST_SLOT = {
    Op.MOV: 1, Op.MOVZ: 1, Op.MOVS: 1, Op.LEA: 1,
    Op.ADD: 1, Op.SUB: 1, Op.IMUL: 1, Op.AND: 1, Op.OR: 1, Op.XOR: 1,
    Op.SHL: 1, Op.SAR: 1, Op.SHR: 1,
    Op.NEG: 0, Op.NOT: 0, Op.SET: 0,
}
_READ_MODIFY = {Op.ADD, Op.SUB, Op.IMUL, Op.AND, Op.OR, Op.XOR,
                Op.SHL, Op.SAR, Op.SHR, Op.NEG, Op.NOT}


def _reads_writes(ins: Instruction):
    """(reads, writes, full_kill, reads_flags, writes_flags) over registers."""
    reads: set[Register] = set()
    writes: set[Register] = set()
    dst = _DST_SLOT.get(ins.op)
    for i, o in enumerate(ins.operands):
        if isinstance(o, Mem):
            reads.add(o.base)
        elif isinstance(o, Reg):
            if i == dst:
                writes.add(o.reg)
                if ins.op in _READ_MODIFY or o.width < 32:
                    reads.add(o.reg)
            else:
                reads.add(o.reg)
    if ins.op is Op.RET:
        reads.add(Register.RAX)
    full_kill = bool(writes) and ins.width >= 32
    reads_flags = ins.op in (Op.JCC, Op.SET)
    return reads, writes, full_kill, reads_flags, OPINFO[ins.op].writes_flags


def _label_index(instrs) -> dict[str, int]:
    return {ins.operands[0].name: i for i, ins in enumerate(instrs)
            if ins.op is Op.LABEL}


def _successors(instrs) -> list[list[int]]:
    labels = _label_index(instrs)
    succ: list[list[int]] = []
    n = len(instrs)
    for i, ins in enumerate(instrs):
        if ins.op is Op.RET:
            succ.append([])
        elif ins.op is Op.JMP:
            succ.append([labels[ins.operands[0].name]])
        elif ins.op is Op.JCC:
            nxt = [labels[ins.operands[0].name]]
            if i + 1 < n:
                nxt.append(i + 1)
            succ.append(nxt)
        else:
            succ.append([i + 1] if i + 1 < n else [])
    return succ


def _mask(regs: Iterable[Register]) -> int:
    m = 0
    for r in regs:
        m |= 1 << int(r)
    return m


def _live_after(instrs) -> list[tuple[int, bool]]:
    """Per-instruction (register bitmask, flags) live immediately after it."""
    n = len(instrs)
    succ = _successors(instrs)
    meta = [_reads_writes(ins) for ins in instrs]
    live_in = [(0, False)] * n
    live_out = [(0, False)] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            om, of_ = 0, False
            for s in succ[i]:
                om |= live_in[s][0]
                of_ = of_ or live_in[s][1]
            reads, writes, kill, rf, wf = meta[i]
            im = (om & ~(_mask(writes) if kill else 0)) | _mask(reads)
            ifl = (of_ and not wf) or rf
            if (om, of_) != live_out[i] or (im, ifl) != live_in[i]:
                live_out[i] = (om, of_)
                live_in[i] = (im, ifl)
                changed = True
    return live_out


def _blocks(instrs) -> list[tuple[int, int]]:
    n = len(instrs)
    leaders = {0}
    for i, ins in enumerate(instrs):
        if ins.op is Op.LABEL:
            leaders.add(i)
        if (ins.is_jump or ins.op is Op.RET) and i + 1 < n:
            leaders.add(i + 1)
    marks = sorted(leaders) + [n]
    return [(marks[i], marks[i + 1]) for i in range(len(marks) - 1)]


# --- optimizing lowering: pass pipeline --------------------------------------

def _promote_slots(prog: Program, task: SourceTask) -> list[Instruction]:
    """Rewrite frame-slot traffic onto home registers and drop the epilogue
    zero-stores of promoted slots (their homes keep live values instead)."""
    homes: dict[int, Register] = {}
    nlocal = 0
    for i, v in enumerate(_var_layout(task)):
        disp = FRAME_BASE + 8 * i
        if v in task.params:
            homes[disp] = _PARAM_REGS[task.params.index(v)]
        else:
            if nlocal >= len(_LOCAL_HOMES):
                raise ValueError("too many locals to promote")
            homes[disp] = _LOCAL_HOMES[nlocal]
            nlocal += 1
    if len(set(homes.values())) != len(homes):
        raise AssertionError("home-register collision")
    out: list[Instruction] = []
    for ins in prog.instrs:
        ops = list(ins.operands)
        if (ins.op is Op.MOV and isinstance(ops[0], Imm)
                and isinstance(ops[1], Mem) and ops[1].base is Register.R9
                and ops[1].disp in homes):
            continue
        for k, o in enumerate(ops):
            if isinstance(o, Mem) and o.base is Register.R9 and o.disp in homes:
                w = ins.src_width if ins.op in (Op.MOVZ, Op.MOVS) and k == 0 else ins.width
                ops[k] = Reg(homes[o.disp], w)
        out.append(replace(ins, operands=tuple(ops)))
    return out


def _pass_coalesce(instrs: list[Instruction]) -> list[Instruction] | None:
    """Find ``mov %S, %T`` ending a def-use span of S and rename the span to
    write T directly.  One rewrite per call; the caller iterates."""
    live = _live_after(instrs)
    for lo, hi in _blocks(instrs):
        for t in range(lo, hi):
            ins = instrs[t]
            if not (ins.op is Op.MOV and ins.width >= 32
                    and isinstance(ins.operands[0], Reg)
                    and isinstance(ins.operands[1], Reg)):
                continue
            s_reg, t_reg, w = ins.operands[0].reg, ins.operands[1].reg, ins.width
            if s_reg == t_reg or ins.operands[0].width != w:
                continue
            # rax is reserved for the epilogue forwarding move; coalescing the
            # whole computation into the result register is allocator overreach.
            if t_reg is Register.RAX:
                continue
            if live[t][0] & (1 << int(s_reg)):
                continue
            # Walk back through the def-use chain of S (read-modify writers
            # included) to the pure def that starts the span.
            start = None
            for j in range(t - 1, lo - 1, -1):
                pj = instrs[j]
                d = pj.operands[_DST_SLOT[pj.op]] if _DST_SLOT.get(pj.op) is not None else None
                if (pj.op in (Op.MOV, Op.MOVZ, Op.MOVS, Op.LEA)
                        and isinstance(d, Reg) and d.reg == s_reg and d.width == w):
                    start = j
                    break
            if start is None:
                continue
            ok = True
            for j in range(start + 1, t):
                reads, writes, *_ = _reads_writes(instrs[j])
                if t_reg in reads or t_reg in writes:
                    ok = False
                    break
                for o in instrs[j].operands:
                    if isinstance(o, Reg) and o.reg == s_reg and o.width != w:
                        ok = False
                    if isinstance(o, Mem) and o.base == s_reg:
                        ok = False
                if not ok:
                    break
            if not ok:
                continue

            def rename(one: Instruction, dst_only: bool) -> Instruction:
                ops = list(one.operands)
                for k, o in enumerate(ops):
                    if isinstance(o, Reg) and o.reg == s_reg and o.width == w:
                        if not dst_only or k == _DST_SLOT.get(one.op):
                            ops[k] = Reg(t_reg, w)
                return replace(one, operands=tuple(ops))

            out = list(instrs)
            out[start] = rename(out[start], dst_only=True)
            for j in range(start + 1, t):
                out[j] = rename(out[j], dst_only=False)
            del out[t]
            # Purge self-moves now: left in place they masquerade as fresh
            # defs and let a later call coalesce the value right back out.
            return [x for x in out if not _is_self_mov(x)]
    return None


def _is_self_mov(ins: Instruction) -> bool:
    return (ins.op is Op.MOV and ins.width >= 32
            and isinstance(ins.operands[0], Reg) and isinstance(ins.operands[1], Reg)
            and ins.operands[0].reg == ins.operands[1].reg)


def _imm_fits(v: int, w: int) -> bool:
    return -(1 << (w - 1)) <= v < (1 << w)


def _pass_copyprop(instrs: list[Instruction]) -> list[Instruction] | None:
    """Forward copy/constant propagation within blocks, plus removal of moves
    that restate a relation the block state already guarantees."""
    out: list[Instruction | None] = list(instrs)
    changed = False
    for lo, hi in _blocks(instrs):
        rel: dict[Register, tuple[tuple, int]] = {}
        for i in range(lo, hi):
            ins = out[i]
            dst = _DST_SLOT.get(ins.op)
            ops = list(ins.operands)
            rew = False
            for k, o in enumerate(ops):
                if not isinstance(o, Reg) or k == dst:
                    continue
                r = rel.get(o.reg)
                if r is None or r[1] < o.width:
                    continue
                val = r[0]
                if val[0] == "reg" and val[1] != o.reg:
                    ops[k] = Reg(val[1], o.width)
                    rew = True
                elif val[0] == "imm" and "i" in OPINFO[ins.op].kinds[k]:
                    v = val[1] & ((1 << o.width) - 1)
                    if _imm_fits(v, o.width) and ins.op not in (Op.SHL, Op.SAR, Op.SHR):
                        ops[k] = Imm(v)
                        rew = True
            if rew:
                ins = replace(ins, operands=tuple(ops))
                out[i] = ins
                changed = True
            if (ins.op is Op.MOV and ins.width >= 32
                    and isinstance(ins.operands[1], Reg)
                    and isinstance(ins.operands[0], (Reg, Imm))):
                d, w = ins.operands[1].reg, ins.width
                src = ins.operands[0]
                cur = rel.get(d)
                if isinstance(src, Reg) and (src.reg == d or cur == (("reg", src.reg), w)):
                    out[i] = None
                    changed = True
                    continue
                if isinstance(src, Imm) and cur == (("imm", src.value & ((1 << w) - 1)), w):
                    out[i] = None
                    changed = True
                    continue
            _, writes, _, _, _ = _reads_writes(ins)
            for wr in writes:
                rel.pop(wr, None)
                for key in [k for k, v in rel.items() if v[0] == ("reg", wr)]:
                    rel.pop(key)
            if (ins.op is Op.MOV and ins.width >= 32
                    and isinstance(ins.operands[1], Reg)):
                d, w = ins.operands[1].reg, ins.width
                src = ins.operands[0]
                if isinstance(src, Reg) and src.reg != d:
                    rel[d] = (("reg", src.reg), w)
                elif isinstance(src, Imm):
                    rel[d] = (("imm", src.value & ((1 << w) - 1)), w)
    if not changed:
        return None
    return [x for x in out if x is not None]


def _pass_dse(instrs: list[Instruction]) -> list[Instruction] | None:
    """Drop instructions whose register result and flag effects are dead.
    Stores to memory are never dropped; cell loads may be (fixed r9 frame
    addressing cannot fault)."""
    live = _live_after(instrs)
    out: list[Instruction] = []
    changed = False
    for i, ins in enumerate(instrs):
        if ins.op in (Op.RET, Op.JMP, Op.JCC, Op.LABEL) or ins.writes_mem():
            out.append(ins)
            continue
        _, writes, _, _, wf = _reads_writes(ins)
        lm, lf = live[i]
        regs_dead = all(not (lm >> int(r)) & 1 for r in writes)
        flags_dead = not (wf and lf)
        if writes and regs_dead and flags_dead:
            changed = True
            continue
        if not writes and wf and not lf:  # cmp/test for nobody
            changed = True
            continue
        out.append(ins)
    return out if changed else None


def _pass_strength(instrs: list[Instruction]) -> list[Instruction] | None:
    """imul by a power of two becomes a shift when flags are dead after it."""
    live = _live_after(instrs)
    for i, ins in enumerate(instrs):
        if ins.op is not Op.IMUL or not isinstance(ins.operands[0], Imm):
            continue
        if live[i][1]:
            continue
        k = ins.operands[0].value
        if k < 1 or k & (k - 1):
            continue
        out = list(instrs)
        if k == 1:
            del out[i]
        else:
            out[i] = Instruction(Op.SHL, ins.width,
                                 (Imm(k.bit_length() - 1), ins.operands[1]))
        return out
    return None


def _referenced_labels(instrs) -> set[str]:
    return {ins.operands[0].name for ins in instrs if ins.is_jump}


def _pass_jumps(instrs: list[Instruction]) -> list[Instruction] | None:
    labels = _label_index(instrs)
    for i, ins in enumerate(instrs):
        if ins.op is not Op.JMP:
            continue
        t = labels[ins.operands[0].name]
        if t > i and all(x.op is Op.LABEL for x in instrs[i + 1: t]):
            out = list(instrs)
            del out[i]
            return out
    used = _referenced_labels(instrs)
    dead = [i for i, ins in enumerate(instrs)
            if ins.op is Op.LABEL and ins.operands[0].name not in used]
    if dead:
        out = [ins for i, ins in enumerate(instrs) if i not in set(dead)]
        return out
    return None


def _pool_order(rotation: int) -> tuple[Register, ...]:
    r = rotation % len(SCRATCH_POOL)
    return SCRATCH_POOL[r:] + SCRATCH_POOL[:r]


def _pass_pool_rename(instrs: list[Instruction], rotation: int) -> list[Instruction]:
    """Renumber pool registers in first-write order onto the rotated pool."""
    order: list[Register] = []
    for ins in instrs:
        _, writes, *_ = _reads_writes(ins)
        for r in writes:
            if r in SCRATCH_POOL and r not in order:
                order.append(r)
    mapping = dict(zip(order, _pool_order(rotation)))
    out = []
    for ins in instrs:
        ops = list(ins.operands)
        for k, o in enumerate(ops):
            if isinstance(o, Reg) and o.reg in mapping:
                ops[k] = Reg(mapping[o.reg], o.width)
            elif isinstance(o, Mem) and o.base in mapping:
                ops[k] = Mem(mapping[o.base], o.disp)
        out.append(replace(ins, operands=tuple(ops)))
    return out


def compile_opt(task: SourceTask, rotation: int = 0) -> Program:
    """Optimizing lowering: promote slots to registers, then iterate copy
    coalescing, propagation, dead-code elimination and strength reduction to
    a fixed point, then tidy jumps and renumber the scratch pool."""
    instrs = _promote_slots(compile_naive(task), task)
    for _ in range(64):
        for p in (_pass_coalesce, _pass_copyprop, _pass_dse, _pass_strength):
            nxt = p(instrs)
            if nxt is not None:
                instrs = nxt
                break
        else:
            break
    for _ in range(16):
        nxt = _pass_jumps(instrs)
        if nxt is None:
            break
        instrs = nxt
    instrs = _pass_pool_rename(instrs, rotation)
    prog = canonicalize_labels(Program(task.name, tuple(instrs)))
    return validate(parse(str(prog)))


# --- headroom witnesses -------------------------------------------------------

def _w_forward_result(prog: Program) -> Program | None:
    """If the function ends ``mov %S, %rax; ret`` with S a pool register and
    rax otherwise untouched, compute into rax directly and drop the move."""
    ins = prog.instrs
    if len(ins) < 2 or ins[-1].op is not Op.RET:
        return None
    mv = ins[-2]
    if not (mv.op is Op.MOV and isinstance(mv.operands[0], Reg)
            and isinstance(mv.operands[1], Reg)
            and mv.operands[1].reg is Register.RAX
            and mv.operands[0].reg in SCRATCH_POOL):
        return None
    s = mv.operands[0].reg
    for other in ins[:-2]:
        for o in other.operands:
            if isinstance(o, Reg) and o.reg is Register.RAX:
                return None
            if isinstance(o, Mem) and o.base in (Register.RAX, s):
                return None
    out = []
    for other in ins[:-2]:
        ops = tuple(Reg(Register.RAX, o.width)
                    if isinstance(o, Reg) and o.reg == s else o
                    for o in other.operands)
        out.append(replace(other, operands=ops))
    out.append(ins[-1])
    return Program(prog.name, tuple(out))


def _w_fold_exit_test(prog: Program) -> Program | None:
    """Drop ``cmp $0, %R`` between ``sub $1, %R`` and ``jne``: the subtract
    already leaves exactly the flags the compare would."""
    ins = prog.instrs
    for i in range(len(ins) - 2):
        a, b, c = ins[i], ins[i + 1], ins[i + 2]
        if not (a.op is Op.SUB and isinstance(a.operands[0], Imm)
                and a.operands[0].value == 1 and isinstance(a.operands[1], Reg)):
            continue
        if not (b.op is Op.CMP and isinstance(b.operands[0], Imm)
                and b.operands[0].value == 0 and isinstance(b.operands[1], Reg)
                and b.operands[1].reg == a.operands[1].reg
                and b.width == a.width):
            continue
        if not (c.op is Op.JCC and c.cond == "ne"):
            continue
        out = list(ins)
        del out[i + 1]
        return Program(prog.name, tuple(out))
    return None


def _w_swap_accumulator(prog: Program) -> Program | None:
    """Rewrite the mask-based absolute value so the result accumulates in rax
    from the start, saving the final move (and freeing the scratch)."""
    ins = prog.instrs
    if len(ins) != 6 or ins[5].op is not Op.RET:
        return None
    m0, m1, m2, m3, m4 = ins[:5]
    if not (m0.op is Op.MOV and m1.op is Op.SAR and m2.op is Op.XOR
            and m3.op is Op.SUB and m4.op is Op.MOV):
        return None
    w = m0.width
    if not all(x.width == w for x in (m1, m2, m3, m4)):
        return None
    if not (isinstance(m0.operands[0], Reg) and isinstance(m0.operands[1], Reg)):
        return None
    a, b = m0.operands[0].reg, m0.operands[1].reg
    if b not in SCRATCH_POOL:
        return None
    if not (isinstance(m1.operands[0], Imm) and m1.operands[0].value == w - 1
            and m1.operands[1] == Reg(b, w)):
        return None
    if m2.operands != (Reg(b, w), Reg(a, w)) or m3.operands != (Reg(b, w), Reg(a, w)):
        return None
    if m4.operands != (Reg(a, w), Reg(Register.RAX, w)):
        return None
    rax = Reg(Register.RAX, w)
    ra = Reg(a, w)
    return Program(prog.name, (
        Instruction(Op.MOV, w, (ra, rax)),
        Instruction(Op.SAR, w, (Imm(w - 1), ra)),
        Instruction(Op.XOR, w, (ra, rax)),
        Instruction(Op.SUB, w, (ra, rax)),
        ins[5],
    ))


_WITNESSES: tuple[tuple[str, Callable[[Program], Program | None]], ...] = (
    ("swap-accumulator", _w_swap_accumulator),
    ("fold-exit-test", _w_fold_exit_test),
    ("forward-result", _w_forward_result),
)


def headroom_witnesses(prog: Program) -> list[tuple[str, Program]]:
    """Candidate hand-optimizations of ``prog``, single steps and two-step
    compositions.  Candidates are proposals only; callers must verify them."""
    seen = {str(prog)}
    out: list[tuple[str, Program]] = []
    frontier: list[tuple[str, Program]] = [("", prog)]
    for _ in range(2):
        nxt: list[tuple[str, Program]] = []
        for name, p in frontier:
            for wname, fn in _WITNESSES:
                q = fn(p)
                if q is None or str(q) in seen:
                    continue
                seen.add(str(q))
                label = f"{name}+{wname}" if name else wname
                out.append((label, q))
                nxt.append((label, q))
        frontier = nxt
    return out


# --- corpus entries -----------------------------------------------------------

def live_out_to_json(lo: LiveOutSpec) -> dict:
    return {
        "regs": {reg_name(r, 64): w for r, w in lo.regs},
        "flags": sorted(lo.flags),
        "heap_out": lo.heap_out,
    }


def live_out_from_json(obj: dict) -> LiveOutSpec:
    regs = {reg_from_name(n)[0]: w for n, w in obj["regs"].items()}
    return LiveOutSpec.make(regs, frozenset(obj["flags"]), obj["heap_out"])


@dataclass
class CorpusEntry:
    """One admitted task: verbose source program, optimized reference, the
    inferred observability contract, and enough metadata to regenerate the
    test suite deterministically (suites are never stored)."""

    id: str
    family: str
    width: int
    f_s: str
    f_ref: str
    input_regs: tuple[str, ...]
    mem_bytes: int
    live_out: LiveOutSpec
    suite_seed: int
    suite_k: int
    cost_s: float
    cost_ref: float
    headroom_cost: float | None = None
    headroom_witness: str | None = None

    def suite(self) -> TestSuite:
        return generate_suite(parse(self.f_s), k=self.suite_k,
                              seed=self.suite_seed, input_regs=self.input_regs)

    def verify_config(self, **over) -> VerifyConfig:
        base = dict(input_regs=self.input_regs, mem_bytes=self.mem_bytes)
        base.update(over)
        return VerifyConfig(**base)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "family": self.family,
            "width": self.width,
            "f_s": self.f_s,
            "f_ref": self.f_ref,
            "input_regs": list(self.input_regs),
            "mem_bytes": self.mem_bytes,
            "live_out": live_out_to_json(self.live_out),
            "suite_seed": self.suite_seed,
            "suite_k": self.suite_k,
            "cost_s": self.cost_s,
            "cost_ref": self.cost_ref,
            "headroom_cost": self.headroom_cost,
            "headroom_witness": self.headroom_witness,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusEntry":
        return cls(
            id=obj["id"],
            family=obj["family"],
            width=obj["width"],
            f_s=obj["f_s"],
            f_ref=obj["f_ref"],
            input_regs=tuple(obj["input_regs"]),
            mem_bytes=obj["mem_bytes"],
            live_out=live_out_from_json(obj["live_out"]),
            suite_seed=obj["suite_seed"],
            suite_k=obj["suite_k"],
            cost_s=obj["cost_s"],
            cost_ref=obj["cost_ref"],
            headroom_cost=obj["headroom_cost"],
            headroom_witness=obj["headroom_witness"],
        )


def build_entry(task: SourceTask, entry_id: str, suite_seed: int,
                rotation: int = 0, suite_k: int = 32) -> tuple[CorpusEntry | None, str]:
    """Lower a task both ways and admit it (or return a discard reason).

    A verification failure between the two lowerings raises RuntimeError:
    the optimizer must be correct, and the contract inference is designed to
    absorb every legitimate difference it introduces.
    """
    f_s = compile_naive(task)
    f_ref = compile_opt(task, rotation)
    if len(tokenize(f_s)) > MAX_SEQ_LEN or len(tokenize(f_ref)) > MAX_SEQ_LEN:
        return None, "too-long"
    regs = task_input_regs(task)
    membytes = task_mem_bytes(task)
    cfg = VerifyConfig(input_regs=regs, mem_bytes=membytes)
    try:
        suite = generate_suite(f_s, k=suite_k, seed=suite_seed, input_regs=regs)
    except SuiteGenError as e:
        return None, f"suite:{e}"
    inf = infer_live_out(f_s, f_ref, suite, cfg)
    if inf.discarded:
        return None, inf.reason
    check = verify(f_ref, f_s, suite, inf.live_out, cfg)
    if not check.equivalent:
        raise RuntimeError(
            f"optimized lowering disagrees with source lowering for "
            f"{task.family}/{entry_id}: {check.verdict.name} {check.detail}")
    lat = LatencyTable.default()
    cost_s = cost(f_s, suite, lat).c_total
    cost_ref = cost(f_ref, suite, lat).c_total
    if cost_ref > cost_s:
        raise RuntimeError(f"optimizer regressed cost for {task.family}/{entry_id}")
    best_cost, best_name = None, None
    for wname, cand in headroom_witnesses(f_ref):
        out = verify(cand, f_s, suite, inf.live_out, cfg)
        if not out.equivalent:
            continue
        c = cost(cand, suite, lat).c_total
        if c < cost_ref and (best_cost is None or c < best_cost):
            best_cost, best_name = c, wname
    entry = CorpusEntry(
        id=entry_id, family=task.family, width=task.width,
        f_s=str(f_s), f_ref=str(f_ref), input_regs=regs, mem_bytes=membytes,
        live_out=inf.live_out, suite_seed=suite_seed, suite_k=suite_k,
        cost_s=cost_s, cost_ref=cost_ref,
        headroom_cost=best_cost, headroom_witness=best_name)
    return entry, "ok"


# --- task sampling -------------------------------------------------------------

FAMILIES = ("identity", "const", "arith", "absval", "select", "loop", "cell")
_FAMILY_WEIGHTS = (0.10, 0.08, 0.30, 0.12, 0.12, 0.20, 0.08)
_ARITH_OPS = ("+", "-", "&", "|", "^", "*", "<<", ">>s")
_ARITH_WEIGHTS = (0.22, 0.18, 0.12, 0.08, 0.14, 0.10, 0.08, 0.08)


def make_identity_task(width: int = 32, which: int = 0) -> SourceTask:
    params = ("a",) if which == 0 else ("a", "b")
    return SourceTask("ident", "identity", width, params,
                      (Ret(Var(params[which])),))


def make_const_task(width: int, value: int) -> SourceTask:
    return SourceTask("constfn", "const", width, ("a",), (Ret(Const(value)),))


def make_abs_task(width: int = 32) -> SourceTask:
    a, c = Var("a"), Var("c")
    return SourceTask("absval", "absval", width, ("a",), (
        Assign("c", Bin(">>s", a, Const(width - 1))),
        Assign("a", Bin("^", a, c)),
        Assign("a", Bin("-", a, c)),
        Ret(a),
    ))


def make_sign_task(width: int = 32) -> SourceTask:
    return SourceTask("signfn", "absval", width, ("a",), (
        Assign("c", Bin(">>s", Var("a"), Const(width - 1))),
        Ret(Var("c")),
    ))


def make_select_task(width: int = 32, op: str = "<s", swap: bool = False,
                     rhs_const: int | None = None) -> SourceTask:
    """``c = (a <op> rhs) ? x : y; return c`` in the uniform two-jump shape."""
    if rhs_const is not None:
        rhs: Atom = Const(rhs_const)
        taken: Atom = Var("a")
        other: Atom = Const(rhs_const)
        params = ("a",)
    else:
        rhs = Var("b")
        taken, other = (Var("b"), Var("a")) if swap else (Var("a"), Var("b"))
        params = ("a", "b")
    return SourceTask("select", "select", width, params, (
        If(Cmp(op, Var("a"), rhs), (Assign("c", taken),), (Assign("c", other),)),
        Ret(Var("c")),
    ))


def make_loop_task(width: int = 32, trips: int = 3, op: str = "+",
                   init: int = 0, two_params: bool = False) -> SourceTask:
    params = ("a", "b") if two_params else ("a",)
    body: tuple[Stmt, ...] = (Assign("c", Bin(op, Var("c"), Var("a"))),)
    if two_params:
        body = body + (Assign("c", Bin("^", Var("c"), Var("b"))),)
    return SourceTask("loopfn", "loop", width, params, (
        Assign("c", Const(init)),
        Loop(trips, body),
        Ret(Var("c")),
    ))


def make_cell_task(width: int = 32, cell: int = 2, combine: str | None = "+",
                   store_to: int | None = None) -> SourceTask:
    stmts: list[Stmt] = [Assign("c", MemLoad(cell))]
    if combine:
        stmts.append(Assign("c", Bin(combine, Var("c"), Var("a"))))
    if store_to is not None:
        stmts.append(Store(store_to, Var("c")))
    stmts.append(Ret(Var("c")))
    return SourceTask("cellfn", "cell", width, ("a",), tuple(stmts))


def make_store_task(width: int = 32, cell: int = 1) -> SourceTask:
    return SourceTask("storefn", "cell", width, ("a",), (
        Store(cell, Var("a")),
        Ret(Var("a")),
    ))


def _sample_arith(rng: random.Random, width: int) -> SourceTask:
    nparams = 1 if rng.random() < 0.5 else 2
    params = ("a", "b")[:nparams]
    defined = list(params)
    locals_avail = ["c", "d"]
    body: list[Stmt] = []
    for _ in range(rng.randint(1, 2)):
        dst = locals_avail.pop(0)
        kind = rng.random()
        if kind < 0.12:
            body.append(Assign(dst, Un(rng.choice("-~"), Var(rng.choice(defined)))))
        elif kind < 0.24:
            op = rng.choice(("==", "!=", "<s", ">s"))
            rhs: Atom = (Const(rng.randint(-4, 9)) if rng.random() < 0.5
                         else Var(rng.choice(defined)))
            body.append(Assign(dst, Cmp(op, Var(rng.choice(defined)), rhs)))
        else:
            op = rng.choices(_ARITH_OPS, weights=_ARITH_WEIGHTS)[0]
            lhs = Var(rng.choice(defined))
            if op in ("<<", ">>s"):
                rhs = Const(rng.randint(1, 7))
            elif op == "*" and rng.random() < 0.6:
                rhs = Const(rng.choice((2, 3, 4, 5, 8)))
            elif rng.random() < 0.35:
                rhs = Const(rng.randint(-8, 12))
            else:
                rhs = Var(rng.choice(defined))
            body.append(Assign(dst, Bin(op, lhs, rhs)))
        defined.append(dst)
    ret = rng.choice(defined[nparams:] or defined)
    body.append(Ret(Var(ret)))
    return SourceTask("arith", "arith", width, params, tuple(body))


def _sample_loop(rng: random.Random, width: int) -> SourceTask:
    return make_loop_task(
        width=width,
        trips=rng.randint(1, 4),
        op=rng.choices(("+", "-", "^", "&", "|"), weights=(5, 2, 2, 1, 1))[0],
        init=rng.randint(0, 3),
        two_params=rng.random() < 0.35,
    )


def _sample_cell(rng: random.Random, width: int) -> SourceTask:
    r = rng.random()
    if r < 0.25:
        return make_store_task(width, cell=rng.randint(0, 3))
    if r < 0.55:
        return make_cell_task(width, cell=rng.randint(0, 3), combine=None)
    if r < 0.85:
        return make_cell_task(width, cell=rng.randint(0, 3),
                              combine=rng.choice(("+", "^", "&")))
    return make_cell_task(width, cell=rng.randint(0, 3), combine="+",
                          store_to=rng.randint(0, 3))


def sample_task(rng: random.Random) -> SourceTask:
    """Draw one task; families and widths follow the corpus mix."""
    width = 32 if rng.random() < 0.7 else 64
    family = rng.choices(FAMILIES, weights=_FAMILY_WEIGHTS)[0]
    if family == "identity":
        return make_identity_task(width, which=rng.randint(0, 1))
    if family == "const":
        return make_const_task(width, rng.choice((-3, -1, 0, 1, 2, 5, 7, 42, 0x7F)))
    if family == "arith":
        return _sample_arith(rng, width)
    if family == "absval":
        return make_abs_task(width) if rng.random() < 0.75 else make_sign_task(width)
    if family == "select":
        if rng.random() < 0.3:
            return make_select_task(width, op=rng.choice(("<s", ">s")),
                                    rhs_const=rng.randint(-4, 9))
        return make_select_task(width, op=rng.choice(("<s", ">s", "==", "!=")),
                                swap=rng.random() < 0.5)
    if family == "loop":
        return _sample_loop(rng, width)
    return _sample_cell(rng, width)


# --- corpus building ------------------------------------------------------------

_SPLIT_BASE = {"train": 0, "dev": 1_000_000, "test": 2_000_000}


def _dedup_key(prog_text: str) -> str:
    return prog_text.split("\n", 1)[1]


def build_corpus(out_dir, n_train: int = 2000, n_dev: int = 200,
                 n_test: int = 300, seed: int = 0, suite_k: int = 32,
                 progress: Callable[[str, int, int], None] | None = None) -> dict:
    """Sample, lower, and admit tasks until each split is full.

    Writes ``train.jsonl``/``dev.jsonl``/``test.jsonl`` plus ``meta.json``
    with admission statistics.  Duplicate source programs (ignoring the
    function name) are dropped across all splits.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    meta: dict = {"seed": seed, "suite_k": suite_k, "splits": {}}
    for split, want in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        base = _SPLIT_BASE[split]
        entries: list[CorpusEntry] = []
        discards: Counter = Counter()
        families: Counter = Counter()
        j = 0
        while len(entries) < want:
            j += 1
            if j > want * 400:
                raise RuntimeError(f"admission stalled for split {split}")
            task = sample_task(random.Random(f"{seed}:{split}:{j}"))
            key = _dedup_key(str(compile_naive(task)))
            if key in seen:
                discards["duplicate"] += 1
                continue
            entry_id = f"{split}-{len(entries):05d}"
            entry, reason = build_entry(task, entry_id, suite_seed=base + j,
                                        rotation=j % len(SCRATCH_POOL),
                                        suite_k=suite_k)
            if entry is None:
                discards[reason.split(":")[0] if reason.startswith("suite") else reason] += 1
                continue
            seen.add(key)
            entries.append(entry)
            families[entry.family] += 1
            if progress and len(entries) % 50 == 0:
                progress(split, len(entries), j)
        path = out / f"{split}.jsonl"
        with path.open("w") as fh:
            for e in entries:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
        meta["splits"][split] = {
            "count": len(entries),
            "candidates": j,
            "discards": dict(sorted(discards.items())),
            "families": dict(sorted(families.items())),
            "headroom": sum(1 for e in entries if e.headroom_cost is not None),
            "mean_cost_s": round(sum(e.cost_s for e in entries) / len(entries), 3),
            "mean_cost_ref": round(sum(e.cost_ref for e in entries) / len(entries), 3),
        }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def load_corpus(path, split: str) -> list[CorpusEntry]:
    p = Path(path) / f"{split}.jsonl"
    entries = []
    with p.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(CorpusEntry.from_json(json.loads(line)))
    return entries


# --- witnessed semantic mutants ---------------------------------------------------

_OP_FLIP = {Op.ADD: Op.SUB, Op.SUB: Op.ADD, Op.AND: Op.OR, Op.OR: Op.AND,
            Op.XOR: Op.AND, Op.IMUL: Op.ADD, Op.SHL: Op.SAR, Op.SAR: Op.SHL,
            Op.SHR: Op.SAR}
_COND_FLIP = {"e": "ne", "ne": "e", "l": "g", "g": "l"}


def _scalar_differs(a: Program, b: Program, probes: list[MachineState],
                    lo: LiveOutSpec, fuel: int, loop_bound: int) -> MachineState | None:
    """First probe state on which the two programs observably disagree."""
    for st in probes:
        ra = execute(a, st.copy(), fuel=fuel, loop_bound=loop_bound)
        rb = execute(b, st.copy(), fuel=fuel, loop_bound=loop_bound)
        if ra.halted != rb.halted:
            return st
        if ra.halted == "ret" and not masked_equal(ra.state, rb.state, lo):
            return st
    return None


def _mutate_once(prog: Program, rng: random.Random) -> tuple[str, Program] | None:
    ins = list(prog.instrs)
    kind = rng.choice(("opflip", "constbump", "condflip", "dropjump", "dropinstr"))
    idxs = list(range(len(ins)))
    rng.shuffle(idxs)
    if kind == "opflip":
        for i in idxs:
            op = ins[i].op
            if op in _OP_FLIP:
                new = _OP_FLIP[op]
                if new is Op.IMUL and not isinstance(ins[i].operands[1], Reg):
                    continue
                ins[i] = replace(ins[i], op=new)
                return kind, Program(prog.name, tuple(ins))
    elif kind == "constbump":
        for i in idxs:
            one = ins[i]
            for k, o in enumerate(one.operands):
                if not isinstance(o, Imm):
                    continue
                if one.op in (Op.SHL, Op.SAR, Op.SHR):
                    v = (o.value + 1) % one.width
                else:
                    v = o.value + 1
                    if not _imm_fits(v, one.width or 64):
                        v = o.value - 1
                ops = list(one.operands)
                ops[k] = Imm(v)
                ins[i] = replace(one, operands=tuple(ops))
                return kind, Program(prog.name, tuple(ins))
    elif kind == "condflip":
        for i in idxs:
            if ins[i].op in (Op.JCC, Op.SET):
                ins[i] = replace(ins[i], cond=_COND_FLIP[ins[i].cond])
                return kind, Program(prog.name, tuple(ins))
    elif kind == "dropjump":
        for i in idxs:
            if ins[i].op is Op.JCC:
                del ins[i]
                return kind, Program(prog.name, tuple(ins))
    else:
        for i in idxs:
            if ins[i].op not in (Op.RET, Op.LABEL):
                del ins[i]
                return kind, Program(prog.name, tuple(ins))
    return None


def semantic_mutants(prog: Program, suite: TestSuite, lo: LiveOutSpec,
                     rng: random.Random, limit: int = 8,
                     fuel: int = 4096, loop_bound: int = 4,
                     ) -> list[tuple[str, Program, MachineState]]:
    """Broken variants of ``prog``, each witnessed by a concrete input where
    the scalar interpreter observes a difference.  The witness is computed
    independently of the batch verifier, so these can test it honestly."""
    probes = [c.inp for c in suite.cases]
    out: list[tuple[str, Program, MachineState]] = []
    texts = {str(prog)}
    for _ in range(60):
        if len(out) >= limit:
            break
        got = _mutate_once(prog, rng)
        if got is None:
            continue
        kind, mut = got
        if str(mut) in texts:
            continue
        texts.add(str(mut))
        try:
            mut = validate(parse(str(mut)))
        except Exception:
            continue
        wit = _scalar_differs(prog, mut, probes, lo, fuel, loop_bound)
        if wit is not None:
            out.append((kind, mut, wit))
    return out


def _flags_rewritten_on_all_paths(prog: Program) -> bool:
    """True when no path can read flags, or reach ret, before writing them."""
    labels = _label_index(prog.instrs)
    stack, seen = [0], set()
    while stack:
        i = stack.pop()
        if i in seen or i >= len(prog.instrs):
            continue
        seen.add(i)
        ins = prog.instrs[i]
        if ins.op in (Op.JCC, Op.SET) or ins.op is Op.RET:
            return False
        if ins.op is Op.JMP:
            stack.append(labels[ins.operands[0].name])
            continue
        if OPINFO[ins.op].writes_flags:
            continue
        stack.append(i + 1)
    return True


def pick_guard_value(suite: TestSuite, domain_bits: int = 8,
                     input_reg: str = "rdi") -> int:
    """A grid-reachable input value for ``input_reg`` that the suite never
    exercises, suitable for hiding a rare-input behavior change."""
    used = {c.inp.get_reg(input_reg) for c in suite.cases}
    for b in range(2, 1 << (domain_bits - 1)):
        if b not in used:
            return b
    raise ValueError("no unused in-domain value")


def guard_mutant(prog: Program, value: int) -> Program | None:
    """Prefix ``prog`` with a trap that corrupts rdi only when it equals
    ``value``.  Returns None when the body could observe the trap's own flag
    writes, which would change behavior on every input instead."""
    if not _flags_rewritten_on_all_paths(prog):
        return None
    existing = {ins.operands[0].name for ins in prog.instrs
                if ins.op is Op.LABEL or ins.is_jump}
    n = 90
    while f".L{n}" in existing:
        n += 1
    skip = f".L{n}"
    head = (
        Instruction(Op.CMP, 64, (Imm(value), Reg(Register.RDI, 64))),
        Instruction(Op.JCC, 0, (Label(skip),), cond="ne"),
        Instruction(Op.NOT, 64, (Reg(Register.RDI, 64),)),
        label_def(skip),
    )
    mut = Program(prog.name, head + prog.instrs)
    return validate(parse(str(mut)))


# --- behavior-preserving variants --------------------------------------------------

def _variant_relabel(prog: Program, rng: random.Random) -> Program | None:
    labels = [ins.operands[0].name for ins in prog.instrs if ins.op is Op.LABEL]
    if not labels:
        return None
    offset = rng.randint(3, 9)
    mapping = {name: f".L{90 + offset + i}" for i, name in enumerate(labels)}
    out = []
    for ins in prog.instrs:
        if (ins.op is Op.LABEL or ins.is_jump) and ins.operands[0].name in mapping:
            out.append(replace(ins, operands=(Label(mapping[ins.operands[0].name]),)))
        else:
            out.append(ins)
    return Program(prog.name, tuple(out))


def _variant_dead_mov(prog: Program, rng: random.Random,
                      lo: LiveOutSpec) -> Program | None:
    dead = [r for r in SCRATCH_POOL if lo.reg_width(r) == 0]
    if not dead:
        return None
    r = rng.choice(dead)
    ins = Instruction(Op.MOV, 64, (Imm(rng.randint(1, 9)), Reg(r, 64)))
    out = list(prog.instrs)
    out.insert(len(out) - 1, ins)
    return Program(prog.name, tuple(out))


def _variant_jump_to_next(prog: Program, rng: random.Random) -> Program | None:
    existing = {ins.operands[0].name for ins in prog.instrs
                if ins.op is Op.LABEL or ins.is_jump}
    n = 80
    while f".L{n}" in existing:
        n += 1
    name = f".L{n}"
    pos = rng.randint(1, len(prog.instrs) - 1)
    out = list(prog.instrs)
    out[pos:pos] = [Instruction(Op.JMP, 0, (Label(name),)), label_def(name)]
    return Program(prog.name, tuple(out))


def _variant_duplicate_mov(prog: Program, rng: random.Random) -> Program | None:
    cands = [i for i, ins in enumerate(prog.instrs)
             if ins.op is Op.MOV and isinstance(ins.operands[0], (Reg, Imm))
             and isinstance(ins.operands[1], Reg)]
    if not cands:
        return None
    i = rng.choice(cands)
    out = list(prog.instrs)
    out.insert(i + 1, out[i])
    return Program(prog.name, tuple(out))


def _variant_swap_independent(prog: Program, rng: random.Random) -> Program | None:
    idxs = list(range(len(prog.instrs) - 1))
    rng.shuffle(idxs)
    for i in idxs:
        a, b = prog.instrs[i], prog.instrs[i + 1]
        if any(x.op in (Op.RET, Op.LABEL) or x.is_jump for x in (a, b)):
            continue
        if a.writes_mem() or b.writes_mem() or a.reads_mem() or b.reads_mem():
            continue
        ra, wa, _, fa, wfa = _reads_writes(a)
        rb, wb, _, fb, wfb = _reads_writes(b)
        if (ra | wa) & (rb | wb):
            continue
        if fa or fb or (wfa and wfb):
            continue
        out = list(prog.instrs)
        out[i], out[i + 1] = b, a
        return Program(prog.name, tuple(out))
    return None


def preserving_variants(prog: Program, lo: LiveOutSpec, rng: random.Random,
                        limit: int = 6) -> list[tuple[str, Program]]:
    """Rewrites of ``prog`` that are equivalent under ``lo`` by construction:
    label renames, dead constant loads, jumps to the next line, duplicated
    idempotent moves, and swaps of independent neighbors."""
    makers: list[tuple[str, Callable[[], Program | None]]] = [
        ("relabel", lambda: _variant_relabel(prog, rng)),
        ("dead-mov", lambda: _variant_dead_mov(prog, rng, lo)),
        ("jump-next", lambda: _variant_jump_to_next(prog, rng)),
        ("dup-mov", lambda: _variant_duplicate_mov(prog, rng)),
        ("swap", lambda: _variant_swap_independent(prog, rng)),
    ]
    out: list[tuple[str, Program]] = []
    texts = {str(prog)}
    for name, fn in makers:
        if len(out) >= limit:
            break
        try:
            v = fn()
        except Exception:
            v = None
        if v is None or str(v) in texts:
            continue
        try:
            v = validate(parse(str(v)))
        except Exception:
            continue
        texts.add(str(v))
        out.append((name, v))
    return out
