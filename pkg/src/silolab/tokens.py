"""Closed token vocabulary for programs.

Every syntactically valid program maps to a sequence over a fixed vocabulary
and back. The encoding is positional, with disjoint token classes, so no
separator tokens are needed:

* ``BOS FUNC`` opens a program (the function name is erased: a single FUNC
  token stands for the header) and ``EOS`` closes it.
* A label definition ``.L3:`` is ``DEF <.L3>``.
* An instruction is its mnemonic token followed by operand tokens in AT&T
  order: a register is one register-name token; an immediate is a sign token
  (``IMM+`` / ``IMM-``) followed by the hex nibbles of its magnitude,
  most-significant first, without leading zeros (zero is the single nibble
  ``0``); a memory operand is ``MEM`` followed by the displacement encoded
  like an immediate and then the 64-bit base register token; a jump target is
  its label token.

Labels must be canonical (``.L1`` ... ``.L16``): canonicalize before
tokenizing. Detokenization validates the result like the parser does, so a
token sequence either yields a well-formed :class:`~silolab.isa.Program` or
raises :class:`DetokenizeError`.
"""

from __future__ import annotations

from .isa import (
    MAX_LABELS,
    AsmError,
    Imm,
    Instruction,
    Label,
    Mem,
    Op,
    Operand,
    Program,
    Reg,
    Register,
    all_mnemonics,
    label_def,
    mnemonic,
    reg_name,
    validate,
)
from . import isa

__all__ = [
    "PAD",
    "BOS",
    "EOS",
    "FUNC",
    "DEF",
    "MEM",
    "IMM_POS",
    "IMM_NEG",
    "VOCAB",
    "VOCAB_SIZE",
    "token_id",
    "token_text",
    "tokenize",
    "detokenize",
    "TokenizeError",
    "DetokenizeError",
    "MAX_SEQ_LEN",
]

MAX_SEQ_LEN = 512

PAD, BOS, EOS, FUNC, DEF, MEM, IMM_POS, IMM_NEG = range(8)

_SPECIAL_TEXT = ["<pad>", "<bos>", "<eos>", "<func>", "<def>", "<mem>", "<imm+>", "<imm->"]
_NIBBLES = "0123456789abcdef"


def _build_vocab() -> list[str]:
    vocab = list(_SPECIAL_TEXT)
    vocab.extend(_NIBBLES)  # ids 8..23
    vocab.extend(all_mnemonics())
    for r in Register:
        for w in (64, 32, 16, 8):
            vocab.append("%" + reg_name(r, w))
    vocab.extend(f".L{i}" for i in range(1, MAX_LABELS + 1))
    assert len(vocab) == len(set(vocab))
    return vocab


VOCAB: list[str] = _build_vocab()
VOCAB_SIZE = len(VOCAB)
_TEXT_TO_ID = {t: i for i, t in enumerate(VOCAB)}
_NIBBLE_BASE = 8


class TokenizeError(ValueError):
    pass


class DetokenizeError(ValueError):
    pass


def token_id(text: str) -> int:
    try:
        return _TEXT_TO_ID[text]
    except KeyError:
        raise TokenizeError(f"no token {text!r}") from None


def token_text(tid: int) -> str:
    if 0 <= tid < VOCAB_SIZE:
        return VOCAB[tid]
    raise DetokenizeError(f"token id {tid} out of range")


def _emit_magnitude(out: list[int], value: int) -> None:
    assert value >= 0
    for ch in "%x" % value:
        out.append(_NIBBLE_BASE + _NIBBLES.index(ch))


def _emit_imm(out: list[int], value: int) -> None:
    out.append(IMM_NEG if value < 0 else IMM_POS)
    _emit_magnitude(out, -value if value < 0 else value)


def tokenize(prog: Program) -> list[int]:
    out = [BOS, FUNC]
    for ins in prog.instrs:
        if ins.op is Op.LABEL:
            out.append(DEF)
            out.append(token_id(ins.operands[0].name))
            continue
        out.append(token_id(mnemonic(ins)))
        for o in ins.operands:
            if isinstance(o, Reg):
                out.append(token_id(str(o)))
            elif isinstance(o, Imm):
                _emit_imm(out, o.value)
            elif isinstance(o, Mem):
                out.append(MEM)
                _emit_imm(out, o.disp)
                out.append(token_id("%" + reg_name(o.base, 64)))
            elif isinstance(o, Label):
                out.append(token_id(o.name))
            else:  # pragma: no cover
                raise TokenizeError(f"bad operand {o!r}")
    out.append(EOS)
    return out


class _Reader:
    def __init__(self, ids: list[int]):
        self.ids = ids
        self.pos = 0

    def peek(self) -> int:
        if self.pos >= len(self.ids):
            raise DetokenizeError("truncated token sequence")
        return self.ids[self.pos]

    def take(self) -> int:
        t = self.peek()
        self.pos += 1
        return t


def _is_nibble(tid: int) -> bool:
    return _NIBBLE_BASE <= tid < _NIBBLE_BASE + 16


def _read_magnitude(r: _Reader) -> int:
    if not _is_nibble(r.peek()):
        raise DetokenizeError("expected a hex nibble")
    digits = []
    while r.pos < len(r.ids) and _is_nibble(r.peek()):
        digits.append(_NIBBLES[r.take() - _NIBBLE_BASE])
    if len(digits) > 1 and digits[0] == "0":
        raise DetokenizeError("leading zero in immediate")
    if len(digits) > 16:
        raise DetokenizeError("immediate magnitude too wide")
    return int("".join(digits), 16)


def _read_imm_value(r: _Reader) -> int:
    sign = r.take()
    if sign not in (IMM_POS, IMM_NEG):
        raise DetokenizeError("expected an immediate sign token")
    mag = _read_magnitude(r)
    if sign == IMM_NEG and mag == 0:
        raise DetokenizeError("negative zero immediate")
    return -mag if sign == IMM_NEG else mag


def detokenize(ids: list[int], name: str = "f") -> Program:
    """Decode a token sequence into a validated Program.

    The sequence must be exactly BOS FUNC <body> EOS with no padding; the
    function name is not part of the encoding, so a placeholder is used."""
    r = _Reader(list(ids))
    if r.take() != BOS or r.take() != FUNC:
        raise DetokenizeError("sequence must start with BOS FUNC")
    instrs: list[Instruction] = []
    while True:
        t = r.take()
        if t == EOS:
            break
        if t == DEF:
            lab = token_text(r.take())
            if not lab.startswith(".L"):
                raise DetokenizeError("DEF must be followed by a label token")
            instrs.append(label_def(lab))
            continue
        mnem = token_text(t)
        proto = isa._split_mnemonic(mnem)
        if proto is None:
            raise DetokenizeError(f"expected a mnemonic, got {mnem!r}")
        kinds = isa.OPINFO[proto.op].kinds
        operands: list[Operand] = []
        for slot in range(len(kinds)):
            t2 = r.peek()
            text = token_text(t2) if t2 >= _NIBBLE_BASE + 16 else ""
            if t2 in (IMM_POS, IMM_NEG):
                operands.append(Imm(_read_imm_value(r)))
            elif t2 == MEM:
                r.take()
                disp = _read_imm_value(r)
                base = token_text(r.take())
                if not base.startswith("%"):
                    raise DetokenizeError("memory operand must end with a base register")
                reg, width = isa.reg_from_name(base[1:])
                if width != 64:
                    raise DetokenizeError("memory base must be 64-bit")
                operands.append(Mem(reg, disp))
            elif text.startswith("%"):
                reg, width = isa.reg_from_name(text[1:])
                operands.append(Reg(reg, width))
                r.take()
            elif text.startswith(".L"):
                operands.append(Label(text))
                r.take()
            else:
                raise DetokenizeError(f"unexpected token {token_text(t2)!r} in operand position")
        try:
            isa._check_operands(proto, tuple(operands), 0)
        except AsmError as e:
            raise DetokenizeError(str(e)) from None
        instrs.append(
            Instruction(proto.op, proto.width, tuple(operands), src_width=proto.src_width, cond=proto.cond)
        )
    if r.pos != len(r.ids):
        raise DetokenizeError("trailing tokens after EOS")
    prog = Program(name, tuple(instrs))
    try:
        return validate(prog)
    except AsmError as e:
        raise DetokenizeError(str(e)) from None
