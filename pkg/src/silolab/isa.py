"""A miniature x86-64-flavored assembly language.

Programs are straight-line AT&T-syntax functions over eight 64-bit registers,
four arithmetic flags, and a 256-byte memory. The surface syntax is a strict
subset of what gcc emits for small integer functions: width-suffixed mnemonics
(``movl``, ``sarq``), ``%reg`` register operands with the usual sub-register
names (``%eax``, ``%al``), ``$imm`` immediates, ``disp(%base)`` memory
operands, and local labels ``.L1:``. The first line of a program is its
function header ``.name:``.

This module owns the data model (registers, operands, instructions, programs),
the opcode table with per-opcode operand constraints and flag effects, the
parser, the printer, and label canonicalization. Execution semantics live in
``machine``; the closed token vocabulary lives in ``tokens``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Union

__all__ = [
    "MEM_SIZE",
    "WIDTHS",
    "Register",
    "Reg",
    "Imm",
    "Mem",
    "Label",
    "Operand",
    "Op",
    "OpInfo",
    "OPINFO",
    "CONDITIONS",
    "FLAG_NAMES",
    "Instruction",
    "Program",
    "AsmError",
    "reg_name",
    "reg_from_name",
    "mnemonic",
    "all_mnemonics",
    "parse",
    "parse_operand",
    "canonicalize_labels",
    "label_def",
    "MAX_LABELS",
]

MEM_SIZE = 256
WIDTHS = (8, 16, 32, 64)
MAX_LABELS = 16

FLAG_NAMES = ("zf", "sf", "cf", "of")

_SUFFIX = {8: "b", 16: "w", 32: "l", 64: "q"}
_SUFFIX_TO_WIDTH = {v: k for k, v in _SUFFIX.items()}


class Register(IntEnum):
    RAX = 0
    RBX = 1
    RCX = 2
    RDX = 3
    RSI = 4
    RDI = 5
    R8 = 6
    R9 = 7


# name tables per (register, width); the 8/16-bit names follow the x86 scheme
_REG_NAMES: dict[tuple[Register, int], str] = {}
for _r, _names in [
    (Register.RAX, ("rax", "eax", "ax", "al")),
    (Register.RBX, ("rbx", "ebx", "bx", "bl")),
    (Register.RCX, ("rcx", "ecx", "cx", "cl")),
    (Register.RDX, ("rdx", "edx", "dx", "dl")),
    (Register.RSI, ("rsi", "esi", "si", "sil")),
    (Register.RDI, ("rdi", "edi", "di", "dil")),
    (Register.R8, ("r8", "r8d", "r8w", "r8b")),
    (Register.R9, ("r9", "r9d", "r9w", "r9b")),
]:
    for _w, _n in zip((64, 32, 16, 8), _names):
        _REG_NAMES[(_r, _w)] = _n

_NAME_TO_REG: dict[str, tuple[Register, int]] = {v: k for k, v in _REG_NAMES.items()}


def reg_name(reg: Register, width: int) -> str:
    return _REG_NAMES[(reg, width)]


def reg_from_name(name: str) -> tuple[Register, int]:
    try:
        return _NAME_TO_REG[name]
    except KeyError:
        raise AsmError(f"unknown register %{name}") from None


@dataclass(frozen=True, slots=True)
class Reg:
    reg: Register
    width: int

    def __str__(self) -> str:
        return "%" + reg_name(self.reg, self.width)


@dataclass(frozen=True, slots=True)
class Imm:
    value: int

    def __str__(self) -> str:
        return "$-0x%x" % -self.value if self.value < 0 else "$0x%x" % self.value


@dataclass(frozen=True, slots=True)
class Mem:
    base: Register
    disp: int

    def __str__(self) -> str:
        b = "(%" + reg_name(self.base, 64) + ")"
        if self.disp == 0:
            return b
        if self.disp < 0:
            return "-0x%x" % -self.disp + b
        return "0x%x" % self.disp + b


@dataclass(frozen=True, slots=True)
class Label:
    name: str

    def __str__(self) -> str:
        return self.name


Operand = Union[Reg, Imm, Mem, Label]


class Op(IntEnum):
    MOV = 0
    MOVZ = 1
    MOVS = 2
    LEA = 3
    ADD = 4
    SUB = 5
    IMUL = 6
    NEG = 7
    NOT = 8
    AND = 9
    OR = 10
    XOR = 11
    SHL = 12
    SAR = 13
    SHR = 14
    CMP = 15
    TEST = 16
    SET = 17
    JMP = 18
    JCC = 19
    RET = 20
    LABEL = 21


# operand kind strings: r = register, i = immediate, m = memory, l = label
@dataclass(frozen=True)
class OpInfo:
    kinds: tuple[str, ...]  # allowed kinds per operand slot, in AT&T order
    widths: tuple[int, ...]  # instruction widths this opcode exists at
    writes_flags: bool  # may write zf/sf/cf/of
    mem_write_slot: int | None  # operand slot that may be a written Mem, if any


_RIM = "rim"
_RM = "rm"

OPINFO: dict[Op, OpInfo] = {
    Op.MOV: OpInfo((_RIM, _RM), WIDTHS, False, 1),
    Op.MOVZ: OpInfo((_RM, "r"), WIDTHS, False, None),
    Op.MOVS: OpInfo((_RM, "r"), WIDTHS, False, None),
    Op.LEA: OpInfo(("m", "r"), (32, 64), False, None),
    Op.ADD: OpInfo((_RIM, _RM), WIDTHS, True, 1),
    Op.SUB: OpInfo((_RIM, _RM), WIDTHS, True, 1),
    Op.IMUL: OpInfo((_RIM, "r"), (16, 32, 64), True, None),
    Op.NEG: OpInfo((_RM,), WIDTHS, True, 0),
    Op.NOT: OpInfo((_RM,), WIDTHS, False, 0),
    Op.AND: OpInfo((_RIM, _RM), WIDTHS, True, 1),
    Op.OR: OpInfo((_RIM, _RM), WIDTHS, True, 1),
    Op.XOR: OpInfo((_RIM, _RM), WIDTHS, True, 1),
    Op.SHL: OpInfo(("i", _RM), WIDTHS, True, 1),
    Op.SAR: OpInfo(("i", _RM), WIDTHS, True, 1),
    Op.SHR: OpInfo(("i", _RM), WIDTHS, True, 1),
    Op.CMP: OpInfo((_RIM, _RM), WIDTHS, True, None),
    Op.TEST: OpInfo((_RIM, _RM), WIDTHS, True, None),
    Op.SET: OpInfo((_RM,), (8,), False, 0),
    Op.JMP: OpInfo(("l",), (0,), False, None),
    Op.JCC: OpInfo(("l",), (0,), False, None),
    Op.RET: OpInfo((), (0,), False, None),
    Op.LABEL: OpInfo(("l",), (0,), False, None),
}

# condition codes shared by set<cc> and j<cc>
CONDITIONS = ("e", "ne", "l", "g")

_BASE_MNEMONIC = {
    Op.MOV: "mov",
    Op.MOVZ: "movz",
    Op.MOVS: "movs",
    Op.LEA: "lea",
    Op.ADD: "add",
    Op.SUB: "sub",
    Op.IMUL: "imul",
    Op.NEG: "neg",
    Op.NOT: "not",
    Op.AND: "and",
    Op.OR: "or",
    Op.XOR: "xor",
    Op.SHL: "shl",
    Op.SAR: "sar",
    Op.SHR: "shr",
    Op.CMP: "cmp",
    Op.TEST: "test",
}


class AsmError(ValueError):
    """Raised on any syntactic or structural problem in program text."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True, slots=True)
class Instruction:
    """One instruction. ``width`` is the operation width in bits (0 for
    width-less ops: jumps, ret, label defs). ``src_width`` is only meaningful
    for movz/movs (the narrower source width); ``cond`` only for SET/JCC."""

    op: Op
    width: int
    operands: tuple[Operand, ...]
    src_width: int = 0
    cond: str = ""

    def __str__(self) -> str:
        m = mnemonic(self)
        if self.op is Op.LABEL:
            return f"{self.operands[0]}:"
        if not self.operands:
            return m
        return m + " " + ", ".join(str(o) for o in self.operands)

    @property
    def is_jump(self) -> bool:
        return self.op in (Op.JMP, Op.JCC)

    def reads_mem(self) -> bool:
        info = OPINFO[self.op]
        for i, o in enumerate(self.operands):
            if isinstance(o, Mem) and self.op is not Op.LEA:
                if info.mem_write_slot == i and self.op in (Op.MOV, Op.SET):
                    continue  # a mov/set to memory only writes its slot
                return True
        return False

    def writes_mem(self) -> bool:
        i = OPINFO[self.op].mem_write_slot
        return i is not None and isinstance(self.operands[i], Mem)


def mnemonic(instr: Instruction) -> str:
    op = instr.op
    if op is Op.RET:
        return "retq"
    if op is Op.JMP:
        return "jmp"
    if op is Op.JCC:
        return "j" + instr.cond
    if op is Op.SET:
        return "set" + instr.cond
    if op is Op.LABEL:
        return ""
    if op in (Op.MOVZ, Op.MOVS):
        return _BASE_MNEMONIC[op] + _SUFFIX[instr.src_width] + _SUFFIX[instr.width]
    return _BASE_MNEMONIC[op] + _SUFFIX[instr.width]


_EXT_PAIRS = [(8, 16), (8, 32), (8, 64), (16, 32), (16, 64)]


def all_mnemonics() -> list[str]:
    """Every legal mnemonic, in a fixed deterministic order."""
    out: list[str] = []
    for op in (Op.MOV, Op.ADD, Op.SUB, Op.AND, Op.OR, Op.XOR, Op.CMP, Op.TEST,
               Op.NEG, Op.NOT, Op.SHL, Op.SAR, Op.SHR):
        out.extend(_BASE_MNEMONIC[op] + _SUFFIX[w] for w in WIDTHS)
    out.extend("imul" + _SUFFIX[w] for w in (16, 32, 64))
    out.extend("lea" + _SUFFIX[w] for w in (32, 64))
    for sw, dw in _EXT_PAIRS:
        out.append("movz" + _SUFFIX[sw] + _SUFFIX[dw])
    for sw, dw in _EXT_PAIRS + [(32, 64)]:
        out.append("movs" + _SUFFIX[sw] + _SUFFIX[dw])
    out.extend("set" + c for c in CONDITIONS)
    out.append("jmp")
    out.extend("j" + c for c in CONDITIONS)
    out.append("retq")
    return out


def label_def(name: str) -> Instruction:
    return Instruction(Op.LABEL, 0, (Label(name),))


@dataclass(frozen=True, slots=True)
class Program:
    """A named function: a header line ``.name:`` and an instruction tuple."""

    name: str
    instrs: tuple[Instruction, ...]

    def __str__(self) -> str:
        lines = [f".{self.name}:"]
        for ins in self.instrs:
            if ins.op is Op.LABEL:
                lines.append(str(ins))
            else:
                lines.append("  " + str(ins))
        return "\n".join(lines) + "\n"

    def label_index(self) -> dict[str, int]:
        """Map label name -> index of its defining pseudo-instruction."""
        out: dict[str, int] = {}
        for i, ins in enumerate(self.instrs):
            if ins.op is Op.LABEL:
                out[ins.operands[0].name] = i
        return out

    def uses_mem(self) -> bool:
        return any(isinstance(o, Mem) for ins in self.instrs for o in ins.operands)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_LABEL_RE = re.compile(r"^\.[A-Za-z_0-9]+$")
_INT_RE = re.compile(r"^-?(0x[0-9a-fA-F]+|\d+)$")
_MEM_RE = re.compile(r"^(-?(?:0x[0-9a-fA-F]+|\d+))?\((%[a-z0-9]+)\)$")


def _parse_int(text: str) -> int:
    neg = text.startswith("-")
    t = text[1:] if neg else text
    v = int(t, 16) if t.startswith("0x") else int(t, 10)
    return -v if neg else v


def parse_operand(text: str) -> Operand:
    text = text.strip()
    if text.startswith("%"):
        reg, width = reg_from_name(text[1:])
        return Reg(reg, width)
    if text.startswith("$"):
        body = text[1:]
        if not _INT_RE.match(body):
            raise AsmError(f"bad immediate {text!r}")
        return Imm(_parse_int(body))
    if text.startswith("."):
        if not _LABEL_RE.match(text):
            raise AsmError(f"bad label {text!r}")
        return Label(text)
    m = _MEM_RE.match(text)
    if m:
        disp = _parse_int(m.group(1)) if m.group(1) else 0
        reg, width = reg_from_name(m.group(2)[1:])
        if width != 64:
            raise AsmError(f"memory base must be a 64-bit register, got {m.group(2)}")
        return Mem(reg, disp)
    raise AsmError(f"cannot parse operand {text!r}")


def _split_mnemonic(mnem: str) -> Instruction | None:
    """Return a prototype Instruction (no operands) for a mnemonic, or None."""
    if mnem == "retq":
        return Instruction(Op.RET, 0, ())
    if mnem == "jmp":
        return Instruction(Op.JMP, 0, ())
    for c in CONDITIONS:
        if mnem == "j" + c:
            return Instruction(Op.JCC, 0, (), cond=c)
        if mnem == "set" + c:
            return Instruction(Op.SET, 8, (), cond=c)
    for base in ("movz", "movs"):
        if mnem.startswith(base) and len(mnem) == 6:
            sw = _SUFFIX_TO_WIDTH.get(mnem[4])
            dw = _SUFFIX_TO_WIDTH.get(mnem[5])
            if sw and dw and sw < dw:
                if base == "movz" and (sw, dw) not in _EXT_PAIRS:
                    return None
                op = Op.MOVZ if base == "movz" else Op.MOVS
                return Instruction(op, dw, (), src_width=sw)
            return None
    for op, base in _BASE_MNEMONIC.items():
        if op in (Op.MOVZ, Op.MOVS):
            continue
        if mnem.startswith(base) and len(mnem) == len(base) + 1:
            w = _SUFFIX_TO_WIDTH.get(mnem[-1])
            if w and w in OPINFO[op].widths:
                return Instruction(op, w, ())
            return None
    return None


def _imm_fits(value: int, width: int) -> bool:
    # accept either signed or unsigned literals of the operation width
    return -(1 << (width - 1)) <= value < (1 << width)


def _check_operands(proto: Instruction, ops: tuple[Operand, ...], line: int) -> None:
    info = OPINFO[proto.op]
    if len(ops) != len(info.kinds):
        raise AsmError(
            f"{mnemonic(proto)} expects {len(info.kinds)} operand(s), got {len(ops)}",
            line,
        )
    mem_count = 0
    for slot, (o, kinds) in enumerate(zip(ops, info.kinds)):
        if isinstance(o, Reg):
            if "r" not in kinds:
                raise AsmError(f"operand {slot + 1} of {mnemonic(proto)} cannot be a register", line)
            want = proto.src_width if (proto.op in (Op.MOVZ, Op.MOVS) and slot == 0) else proto.width
            if o.width != want:
                raise AsmError(
                    f"register {o} is {o.width}-bit, {mnemonic(proto)} wants {want}-bit there",
                    line,
                )
        elif isinstance(o, Imm):
            if "i" not in kinds:
                raise AsmError(f"operand {slot + 1} of {mnemonic(proto)} cannot be an immediate", line)
            if proto.op in (Op.SHL, Op.SAR, Op.SHR):
                if not 0 <= o.value <= 63:
                    raise AsmError(f"shift count {o.value} out of range 0..63", line)
            elif not _imm_fits(o.value, proto.width):
                raise AsmError(f"immediate {o} does not fit in {proto.width} bits", line)
        elif isinstance(o, Mem):
            if "m" not in kinds:
                raise AsmError(f"operand {slot + 1} of {mnemonic(proto)} cannot be memory", line)
            mem_count += 1
            if not -(1 << 15) <= o.disp < (1 << 15):
                raise AsmError(f"displacement {o.disp:#x} does not fit in 16 bits", line)
        elif isinstance(o, Label):
            if "l" not in kinds:
                raise AsmError(f"operand {slot + 1} of {mnemonic(proto)} cannot be a label", line)
        else:  # pragma: no cover - operand parser returns only the above
            raise AsmError("bad operand", line)
    if mem_count > 1:
        raise AsmError("at most one memory operand per instruction", line)


def validate(prog: Program) -> Program:
    """Structural checks shared by the parser and the detokenizer."""
    seen: dict[str, int] = {}
    for i, ins in enumerate(prog.instrs):
        if ins.op is Op.LABEL:
            name = ins.operands[0].name
            if name in seen:
                raise AsmError(f"duplicate label {name}")
            seen[name] = i
    for ins in prog.instrs:
        if ins.is_jump and ins.operands[0].name not in seen:
            raise AsmError(f"jump to undefined label {ins.operands[0].name}")
    if not _NAME_RE.match(prog.name):
        raise AsmError(f"bad function name {prog.name!r}")
    return prog


def parse(text: str) -> Program:
    """Parse program text. Raises AsmError with a line number on failure."""
    name: str | None = None
    instrs: list[Instruction] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if name is None:
            if not (line.startswith(".") and line.endswith(":")):
                raise AsmError("program must start with a '.name:' header", line_no)
            name = line[1:-1]
            if not _NAME_RE.match(name):
                raise AsmError(f"bad function name {name!r}", line_no)
            continue
        if line.endswith(":"):
            lab = line[:-1]
            if not _LABEL_RE.match(lab):
                raise AsmError(f"bad label definition {line!r}", line_no)
            instrs.append(label_def(lab))
            continue
        parts = line.split(None, 1)
        proto = _split_mnemonic(parts[0])
        if proto is None:
            raise AsmError(f"unknown mnemonic {parts[0]!r}", line_no)
        ops: tuple[Operand, ...] = ()
        if len(parts) > 1:
            try:
                ops = tuple(parse_operand(p) for p in parts[1].split(","))
            except AsmError as e:
                raise AsmError(str(e), line_no) from None
        _check_operands(proto, ops, line_no)
        instrs.append(
            Instruction(proto.op, proto.width, ops, src_width=proto.src_width, cond=proto.cond)
        )
    if name is None:
        raise AsmError("empty program")
    prog = Program(name, tuple(instrs))
    try:
        return validate(prog)
    except AsmError as e:
        raise AsmError(str(e), None) from None


def canonicalize_labels(prog: Program) -> Program:
    """Rename labels to .L1, .L2, ... in order of first textual appearance.

    Appearance means any occurrence, whether a definition or a jump operand,
    so the numbering is stable under moving label definitions around."""
    order: dict[str, str] = {}

    def canon(name: str) -> str:
        if name not in order:
            order[name] = f".L{len(order) + 1}"
        return order[name]

    out: list[Instruction] = []
    for ins in prog.instrs:
        if ins.op is Op.LABEL or ins.is_jump:
            lab = Label(canon(ins.operands[0].name))
            out.append(Instruction(ins.op, ins.width, (lab,), src_width=ins.src_width, cond=ins.cond))
        else:
            out.append(ins)
    return Program(prog.name, tuple(out))
