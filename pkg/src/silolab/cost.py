"""Static latency cost model and the shaped optimization objective.

Cost has two parts: ``c_all`` charges every instruction in the listing
(pressure to delete code) and ``c_exe`` charges the mean executed latency
over a test suite (pressure to shorten hot paths). A memory operand adds a
flat surcharge on top of the opcode's base latency. Label definitions are
free. The total is ``c = c_all + c_exe``.

The objective ``j`` used for reinforcement adds a verification penalty and a
dense shaping term: ``j = c + lam * v + bit_rate * mean_bits``, clipped from
above. ``mean_bits`` is the average Hamming distance between the candidate's
observable outputs and the recorded ones over the suite, so near-misses score
better than garbage even though both have v = 1. Unparseable candidates get
the clip value exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .isa import AsmError, Mem, Op, Program
from .machine import DEFAULT_FUEL, LiveOutSpec, bit_diff, execute
from .testgen import TestSuite
from .tokens import DetokenizeError
from .verify import Verdict, VerifyConfig, VerifyOutcome, coerce_program, verify

__all__ = [
    "LatencyTable",
    "CostReport",
    "ObjectiveConfig",
    "ObjectiveReport",
    "cost_all",
    "cost_exe",
    "cost",
    "objective",
]

_BASE_LATENCY: dict[Op, float] = {
    Op.MOV: 1, Op.MOVZ: 1, Op.MOVS: 1, Op.LEA: 1,
    Op.ADD: 1, Op.SUB: 1, Op.NEG: 1, Op.NOT: 1,
    Op.AND: 1, Op.OR: 1, Op.XOR: 1,
    Op.IMUL: 3, Op.SHL: 2, Op.SAR: 2, Op.SHR: 2,
    Op.CMP: 1, Op.TEST: 1, Op.SET: 1,
    Op.JMP: 1, Op.JCC: 1, Op.RET: 1, Op.LABEL: 0,
}

MEM_SURCHARGE = 3.0


@dataclass(frozen=True)
class LatencyTable:
    base: tuple[tuple[Op, float], ...]
    mem_surcharge: float = MEM_SURCHARGE

    @classmethod
    def default(cls) -> "LatencyTable":
        return cls(tuple(_BASE_LATENCY.items()))

    def latency(self, instr) -> float:
        lat = dict(self.base)[instr.op]
        if instr.op is not Op.LEA:  # lea computes the address, never touches memory
            lat += self.mem_surcharge * sum(isinstance(o, Mem) for o in instr.operands)
        return lat

    def to_text(self) -> str:
        lines = [f"{op.name.lower()} {v:g}" for op, v in self.base]
        lines.append(f"mem_operand {self.mem_surcharge:g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LatencyTable":
        base: dict[Op, float] = {}
        surcharge = MEM_SURCHARGE
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"latency table line {lineno}: expected 'name value'")
            name, sval = parts
            try:
                val = float(sval)
            except ValueError:
                raise ValueError(f"latency table line {lineno}: bad value {sval!r}")
            if name == "mem_operand":
                surcharge = val
            else:
                try:
                    base[Op[name.upper()]] = val
                except KeyError:
                    raise ValueError(f"latency table line {lineno}: unknown op {name!r}")
        missing = [op.name.lower() for op in _BASE_LATENCY if op not in base]
        if missing:
            raise ValueError(f"latency table missing entries for: {', '.join(missing)}")
        return cls(tuple(base.items()), surcharge)

    @classmethod
    def from_file(cls, path: str | Path) -> "LatencyTable":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class CostReport:
    c_all: float
    c_exe: float

    @property
    def c_total(self) -> float:
        return self.c_all + self.c_exe


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 50_000.0
    bit_rate: float = 100.0
    clip: float = 100_000.0


@dataclass
class ObjectiveReport:
    j: float
    v: int
    verdict: Verdict
    cost: CostReport | None
    mean_bits: float | None
    clipped: bool
    outcome: VerifyOutcome | None = None


def cost_all(prog: Program, lat: LatencyTable | None = None) -> float:
    lat = lat or LatencyTable.default()
    return sum(lat.latency(i) for i in prog.instrs)


def cost_exe(
    prog: Program,
    suite: TestSuite,
    lat: LatencyTable | None = None,
    fuel: int = DEFAULT_FUEL,
) -> float:
    """Mean executed latency over the suite inputs.

    Runs that fault or run out of fuel contribute the latency of whatever
    did execute, which keeps the value defined for arbitrary candidates."""
    lat = lat or LatencyTable.default()
    total = 0.0
    for case in suite.cases:
        res = execute(prog, case.inp, fuel=fuel)
        total += sum(lat.latency(prog.instrs[i]) for i in res.executed)
    return total / len(suite.cases)


def cost(prog: Program, suite: TestSuite, lat: LatencyTable | None = None) -> CostReport:
    lat = lat or LatencyTable.default()
    return CostReport(cost_all(prog, lat), cost_exe(prog, suite, lat))


def objective(
    candidate,
    spec: Program,
    suite: TestSuite,
    lo: LiveOutSpec,
    vcfg: VerifyConfig,
    lat: LatencyTable | None = None,
    ocfg: ObjectiveConfig | None = None,
) -> ObjectiveReport:
    """Score a candidate rewrite: j = min(clip, c + lam*v + bit_rate*bits)."""
    lat = lat or LatencyTable.default()
    ocfg = ocfg or ObjectiveConfig()
    try:
        prog = coerce_program(candidate)
    except (AsmError, DetokenizeError):
        return ObjectiveReport(ocfg.clip, 1, Verdict.UNPARSEABLE, None, None, True)

    out = verify(prog, spec, suite, lo, vcfg)
    rep = cost(prog, suite, lat)
    bits = 0.0
    if out.v:
        for case in suite.cases:
            res = execute(prog, case.inp, fuel=vcfg.fuel)
            bits += bit_diff(res.state, case.out, lo)
        bits /= len(suite.cases)
    raw = rep.c_total + ocfg.lam * out.v + ocfg.bit_rate * bits
    j = min(ocfg.clip, raw)
    return ObjectiveReport(j, out.v, out.verdict, rep, bits, raw > ocfg.clip, out)
