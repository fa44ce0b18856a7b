"""Random-program and random-state generators shared by the test modules.

These deliberately produce programs that may fault, loop, or leave junk anywhere:
the point is to exercise the full semantic surface, not to be useful code.
Programs are always syntactically valid (they round-trip through the parser).
"""

from __future__ import annotations

import random

from silolab.isa import (
    CONDITIONS,
    WIDTHS,
    Imm,
    Instruction,
    Label,
    Mem,
    Op,
    Program,
    Reg,
    Register,
    label_def,
    parse,
    validate,
)
from silolab.machine import MachineState

_BIN_OPS = [Op.ADD, Op.SUB, Op.AND, Op.OR, Op.XOR, Op.CMP, Op.TEST]
_BASES = [Register.R9, Register.RDI, Register.RAX]


def _rand_reg(rng: random.Random, w: int) -> Reg:
    return Reg(rng.choice(list(Register)), w)


def _rand_imm(rng: random.Random, w: int) -> Imm:
    if rng.random() < 0.3:
        return Imm(rng.choice([0, 1, -1, 2, -(1 << (w - 1)), (1 << (w - 1)) - 1]))
    return Imm(rng.randrange(-(1 << (w - 1)), 1 << (w - 1)))


def _rand_mem(rng: random.Random) -> Mem:
    # mostly valid addresses when the base holds a small value, sometimes junk
    disp = rng.choice([0, 1, 4, 8, 16, 64, 128, 200, 248, 255, 260, -8])
    return Mem(rng.choice(_BASES), disp)


def _rand_rm(rng: random.Random, w: int, allow_mem: bool):
    if allow_mem and rng.random() < 0.25:
        return _rand_mem(rng)
    return _rand_reg(rng, w)


def _rand_rim(rng: random.Random, w: int, allow_mem: bool):
    x = rng.random()
    if x < 0.3:
        return _rand_imm(rng, w)
    if allow_mem and x < 0.5:
        return _rand_mem(rng)
    return _rand_reg(rng, w)


def random_instruction(rng: random.Random, labels: list[str], allow_mem: bool = True) -> Instruction:
    w = rng.choice(WIDTHS)
    kind = rng.random()
    if kind < 0.30:
        src = _rand_rim(rng, w, allow_mem)
        dst = _rand_rm(rng, w, allow_mem)
        if isinstance(src, Mem) and isinstance(dst, Mem):
            dst = _rand_reg(rng, w)
        return Instruction(Op.MOV, w, (src, dst))
    if kind < 0.55:
        op = rng.choice(_BIN_OPS)
        src = _rand_rim(rng, w, allow_mem)
        dst = _rand_rm(rng, w, allow_mem)
        if isinstance(src, Mem) and isinstance(dst, Mem):
            src = _rand_imm(rng, w)
        return Instruction(op, w, (src, dst))
    if kind < 0.62:
        return Instruction(rng.choice([Op.NEG, Op.NOT]), w, (_rand_rm(rng, w, allow_mem),))
    if kind < 0.72:
        op = rng.choice([Op.SHL, Op.SAR, Op.SHR])
        return Instruction(op, w, (Imm(rng.randrange(0, 64 if rng.random() < 0.2 else w)),
                                   _rand_rm(rng, w, allow_mem)))
    if kind < 0.78:
        w2 = rng.choice((16, 32, 64))
        return Instruction(Op.IMUL, w2, (_rand_rim(rng, w2, allow_mem), _rand_reg(rng, w2)))
    if kind < 0.84:
        pairs = [(8, 16), (8, 32), (8, 64), (16, 32), (16, 64)]
        if rng.random() < 0.5:
            sw, dw = rng.choice(pairs)
            return Instruction(Op.MOVZ, dw, (_rand_rm(rng, sw, allow_mem), _rand_reg(rng, dw)),
                               src_width=sw)
        sw, dw = rng.choice(pairs + [(32, 64)])
        return Instruction(Op.MOVS, dw, (_rand_rm(rng, sw, allow_mem), _rand_reg(rng, dw)),
                           src_width=sw)
    if kind < 0.88:
        return Instruction(Op.SET, 8, (_rand_rm(rng, 8, allow_mem),), cond=rng.choice(CONDITIONS))
    if kind < 0.92 and allow_mem:
        wl = rng.choice((32, 64))
        return Instruction(Op.LEA, wl, (_rand_mem(rng), _rand_reg(rng, wl)))
    if labels and kind < 0.97:
        if rng.random() < 0.4:
            return Instruction(Op.JMP, 0, (Label(rng.choice(labels)),))
        return Instruction(Op.JCC, 0, (Label(rng.choice(labels)),), cond=rng.choice(CONDITIONS))
    return Instruction(Op.MOV, w, (_rand_imm(rng, w), _rand_reg(rng, w)))


def random_program(rng: random.Random, max_len: int = 12, allow_mem: bool = True,
                   allow_jumps: bool = True) -> Program:
    n = rng.randrange(1, max_len + 1)
    n_labels = rng.randrange(0, 3) if allow_jumps else 0
    labels = [f".L{i + 1}" for i in range(n_labels)]
    body: list[Instruction] = []
    for _ in range(n):
        body.append(random_instruction(rng, labels if allow_jumps else [], allow_mem))
    for lab in labels:
        body.insert(rng.randrange(0, len(body) + 1), label_def(lab))
    if rng.random() < 0.15:
        body.insert(rng.randrange(0, len(body) + 1), Instruction(Op.RET, 0, ()))
    body.append(Instruction(Op.RET, 0, ()))
    prog = validate(Program("fuzz", tuple(body)))
    # belt and braces: anything we make must survive its own printer
    return parse(str(prog))


def random_state(rng: random.Random, data_bytes: int = 64) -> MachineState:
    s = MachineState()
    for r in Register:
        x = rng.random()
        if x < 0.2:
            s.regs[r] = rng.choice([0, 1, (1 << 64) - 1, 1 << 63, (1 << 63) - 1])
        elif x < 0.5:
            s.regs[r] = rng.randrange(0, 256)
        else:
            s.regs[r] = rng.getrandbits(64)
    for i in range(data_bytes):
        s.mem[i] = rng.getrandbits(8)
    return s
