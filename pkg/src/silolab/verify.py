"""Bounded equivalence checking and observable-output inference.

Equivalence here is decidable by construction: inputs are constrained to a
small sign-extended domain per input register (plus a handful of probe values
for any enumerated memory bytes), loops are cut off after a fixed number of
backward jumps, and the whole input space is enumerated. A candidate is
equivalent to its specification when both return cleanly on every point and
agree on every observable component.

The pipeline is staged cheapest-first:

1. parse / detokenize (malformed candidates are the common case for sampled
   rewrites and cost nothing to reject),
2. the recorded test suite, run on the scalar engine,
3. exhaustive enumeration on the lane-parallel engine, chunked so a deadline
   can be enforced between chunks.

Any fault, loop-bound overrun, fuel exhaustion, or timeout conservatively
counts as "not verified" (v = 1).

`infer_live_out` recovers which output components a specification actually
defines by diffing an unoptimized/optimized program pair over the same input
space: components where the two disagree cannot be contractual and are pruned
(64 -> 32 -> 16 -> 8 bits -> dead for registers). Pairs whose agreed-upon
behavior collapses to a trivial function are discarded as underspecified.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .batchexec import BOUND, FUEL, RET, BatchResult, run_batch, states_to_regs
from .isa import AsmError, Program, Register, parse, reg_from_name
from .machine import (
    DEFAULT_FUEL,
    FLAG_NAMES,
    MEM_SIZE,
    LiveOutSpec,
    MachineState,
    execute,
    masked_equal,
)
from .testgen import TestSuite
from .tokens import DetokenizeError, detokenize

__all__ = [
    "Verdict",
    "VerifyConfig",
    "VerifyOutcome",
    "InferResult",
    "verify",
    "coerce_program",
    "check_testsuite",
    "check_exhaustive",
    "infer_live_out",
    "PROBE_BYTES",
    "MAX_LANES",
]

# values enumerated for each verified memory byte (sign/magnitude corners)
PROBE_BYTES = (0x00, 0x01, 0x7F, 0x80, 0xFF)

# hard cap on the exhaustive input space; configs above this are rejected
MAX_LANES = 1 << 24


class Verdict(Enum):
    EQUIVALENT = "equivalent"
    COUNTEREXAMPLE = "counterexample"
    BOUND_EXCEEDED = "bound_exceeded"
    TIMEOUT = "timeout"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class VerifyConfig:
    loop_bound: int = 4
    timeout_s: float = 5.0
    domain_bits: int = 8
    input_regs: tuple[str, ...] = ("rdi", "rsi")
    mem_bytes: int = 0  # leading data-region bytes enumerated over PROBE_BYTES
    fuel: int = DEFAULT_FUEL
    chunk_lanes: int = 1 << 16


@dataclass
class VerifyOutcome:
    verdict: Verdict
    v: int
    witness: MachineState | None = None
    wall_ms: float = 0.0
    stage: str = ""
    detail: str = ""

    @property
    def equivalent(self) -> bool:
        return self.verdict is Verdict.EQUIVALENT


@dataclass
class InferResult:
    live_out: LiveOutSpec | None
    discarded: bool
    reason: str
    iterations: int
    converged: bool


def _mask(w: int) -> np.uint64:
    return np.uint64((1 << w) - 1)


def coerce_program(candidate) -> Program:
    if isinstance(candidate, Program):
        return candidate
    if isinstance(candidate, str):
        return parse(candidate)
    if isinstance(candidate, (list, tuple)):
        return detokenize(list(candidate))
    raise TypeError(f"cannot interpret {type(candidate).__name__} as a program")


class _Grid:
    """Mixed-radix enumeration of the verification input space.

    Dimension order: input registers first, then probed memory bytes; the
    last dimension varies fastest. Chunks are decoded from flat indices, so
    nothing larger than one chunk is ever materialized.
    """

    def __init__(self, cfg: VerifyConfig):
        bits = cfg.domain_bits
        if not 1 <= bits <= 16:
            raise ValueError("domain_bits must be in [1, 16]")
        raw = np.arange(1 << bits, dtype=np.uint64)
        if bits < 64:
            sx = (raw << np.uint64(64 - bits)).view(np.int64) >> np.int64(64 - bits)
            vals = sx.view(np.uint64)
        else:
            vals = raw
        self.dims: list[tuple[str, int, np.ndarray]] = []
        for name in cfg.input_regs:
            r, w = reg_from_name(name)
            if w != 64:
                raise ValueError(f"input register {name!r} must be 64-bit")
            self.dims.append(("reg", int(r), vals))
        for j in range(cfg.mem_bytes):
            self.dims.append(("mem", j, np.array(PROBE_BYTES, dtype=np.uint8)))
        self.total = math.prod(len(v) for _, _, v in self.dims) if self.dims else 1
        if self.total > MAX_LANES:
            raise ValueError(
                f"input space has {self.total} points, above the cap of {MAX_LANES}"
            )
        self.has_mem = cfg.mem_bytes > 0

    def chunk(self, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray | None]:
        idx = np.arange(lo, hi, dtype=np.int64)
        n = hi - lo
        regs = np.zeros((8, n), dtype=np.uint64)
        mem = np.zeros((n, MEM_SIZE), dtype=np.uint8) if self.has_mem else None
        stride = self.total
        for kind, which, vals in self.dims:
            stride //= len(vals)
            sel = (idx // stride) % len(vals)
            if kind == "reg":
                regs[which] = vals[sel]
            else:
                mem[:, which] = vals[sel]
        return regs, mem

    def lane_input(self, flat: int) -> MachineState:
        s = MachineState()
        stride = self.total
        for kind, which, vals in self.dims:
            stride //= len(vals)
            sel = (flat // stride) % len(vals)
            if kind == "reg":
                s.regs[which] = int(vals[sel])
            else:
                s.mem[which] = int(vals[sel])
        return s


def _mem_diff_lanes(ra: BatchResult, rb: BatchResult) -> np.ndarray | None:
    """Per-lane final-memory disagreement, or None when both are all-zero."""
    ma, mb = ra.mem, rb.mem
    if ma is None and mb is None:
        return None
    if ma is None:
        return (mb != 0).any(axis=1)
    if mb is None:
        return (ma != 0).any(axis=1)
    return (ma != mb).any(axis=1)


def _mismatch_lanes(ra: BatchResult, rb: BatchResult, lo: LiveOutSpec) -> np.ndarray:
    bad = (ra.status != RET) | (rb.status != RET)
    for r, w in lo.regs:
        bad |= ((ra.regs[r] ^ rb.regs[r]) & _mask(w)) != 0
    for f in lo.flags:
        bad |= getattr(ra, f) != getattr(rb, f)
    if lo.heap_out:
        md = _mem_diff_lanes(ra, rb)
        if md is not None:
            bad |= md
    return bad


def _classify_lane(ra: BatchResult, rb: BatchResult, i: int) -> tuple[Verdict, str]:
    for res, who in ((ra, "candidate"), (rb, "spec")):
        st = int(res.status[i])
        if st in (BOUND, FUEL):
            kind = "loop bound" if st == BOUND else "fuel"
            return Verdict.BOUND_EXCEEDED, f"{who} exceeded {kind}"
        if st != RET:
            return Verdict.COUNTEREXAMPLE, f"{who} faulted"
    return Verdict.COUNTEREXAMPLE, "observable outputs differ"


def check_testsuite(
    candidate: Program,
    suite: TestSuite,
    lo: LiveOutSpec,
    cfg: VerifyConfig,
    deadline: float | None = None,
) -> VerifyOutcome:
    """Run the candidate on each recorded input and compare under ``lo``."""
    t0 = time.monotonic()
    if deadline is None:
        deadline = t0 + cfg.timeout_s

    def done(verdict, witness=None, detail=""):
        wall = (time.monotonic() - t0) * 1e3
        v = 0 if verdict is Verdict.EQUIVALENT else 1
        return VerifyOutcome(verdict, v, witness, wall, "suite", detail)

    for i, case in enumerate(suite.cases):
        if time.monotonic() > deadline:
            return done(Verdict.TIMEOUT, detail=f"timed out before case {i}")
        res = execute(candidate, case.inp, fuel=cfg.fuel, loop_bound=cfg.loop_bound)
        if res.halted in ("bound", "fuel"):
            return done(Verdict.BOUND_EXCEEDED, case.inp, f"case {i}: {res.halted}")
        if res.halted != "ret":
            return done(Verdict.COUNTEREXAMPLE, case.inp, f"case {i}: fault ({res.fault})")
        if not masked_equal(res.state, case.out, lo):
            return done(Verdict.COUNTEREXAMPLE, case.inp, f"case {i}: outputs differ")
    return done(Verdict.EQUIVALENT)


def check_exhaustive(
    candidate: Program,
    spec: Program,
    lo: LiveOutSpec,
    cfg: VerifyConfig,
    deadline: float | None = None,
) -> VerifyOutcome:
    """Enumerate the whole bounded input space and compare under ``lo``."""
    t0 = time.monotonic()
    if deadline is None:
        deadline = t0 + cfg.timeout_s

    def done(verdict, witness=None, detail=""):
        wall = (time.monotonic() - t0) * 1e3
        v = 0 if verdict is Verdict.EQUIVALENT else 1
        return VerifyOutcome(verdict, v, witness, wall, "exhaustive", detail)

    grid = _Grid(cfg)
    for base in range(0, grid.total, cfg.chunk_lanes):
        if time.monotonic() > deadline:
            return done(Verdict.TIMEOUT, detail=f"timed out at lane {base}")
        hi = min(base + cfg.chunk_lanes, grid.total)
        regs, mem = grid.chunk(base, hi)
        ra = run_batch(candidate, regs, mem, fuel=cfg.fuel, loop_bound=cfg.loop_bound)
        rb = run_batch(spec, regs, mem, fuel=cfg.fuel, loop_bound=cfg.loop_bound)
        bad = _mismatch_lanes(ra, rb, lo)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            verdict, detail = _classify_lane(ra, rb, i)
            return done(verdict, grid.lane_input(base + i), f"lane {base + i}: {detail}")
    return done(Verdict.EQUIVALENT)


def verify(
    candidate,
    spec: Program,
    suite: TestSuite,
    lo: LiveOutSpec,
    cfg: VerifyConfig,
) -> VerifyOutcome:
    """Full pipeline: parse, test suite, exhaustive enumeration.

    ``candidate`` may be a Program, program text, or a token id sequence.
    Returns v = 0 only for candidates equivalent on the entire bounded domain.
    """
    t0 = time.monotonic()
    deadline = t0 + cfg.timeout_s
    try:
        prog = coerce_program(candidate)
    except (AsmError, DetokenizeError) as e:
        wall = (time.monotonic() - t0) * 1e3
        return VerifyOutcome(Verdict.UNPARSEABLE, 1, None, wall, "parse", str(e))

    out = check_testsuite(prog, suite, lo, cfg, deadline)
    if out.verdict is not Verdict.EQUIVALENT:
        out.wall_ms = (time.monotonic() - t0) * 1e3
        return out
    out = check_exhaustive(prog, spec, lo, cfg, deadline)
    out.wall_ms = (time.monotonic() - t0) * 1e3
    return out


# trivial behaviors that make an inferred contract vacuous: doing nothing,
# returning 0, returning 1 (mov keeps flags intact, unlike an xor idiom)
_SPURIOUS = (
    ("ret", ".sp:\n  retq\n"),
    ("ret0", ".sp:\n  movl $0x0, %eax\n  retq\n"),
    ("ret1", ".sp:\n  movl $0x1, %eax\n  retq\n"),
)


class _Evidence:
    """Accumulated disagreement between two programs over many inputs."""

    def __init__(self) -> None:
        self.reg_or = np.zeros(8, dtype=np.uint64)
        self.flag_diff = {f: False for f in FLAG_NAMES}
        self.mem_diff = False
        self.nonterm: str | None = None

    def add(self, ra: BatchResult, rb: BatchResult) -> None:
        for res, who in ((ra, "unoptimized"), (rb, "optimized")):
            if (res.status != RET).any():
                i = int(np.flatnonzero(res.status != RET)[0])
                self.nonterm = f"{who} program did not return ({res.halted(i)})"
                return
        self.reg_or |= np.bitwise_or.reduce(ra.regs ^ rb.regs, axis=1)
        for f in FLAG_NAMES:
            self.flag_diff[f] |= bool((getattr(ra, f) != getattr(rb, f)).any())
        md = _mem_diff_lanes(ra, rb)
        if md is not None:
            self.mem_diff |= bool(md.any())

    def prune(self) -> LiveOutSpec:
        regs: dict[Register, int] = {}
        for r in Register:
            d = int(self.reg_or[r])
            for w in (64, 32, 16, 8):
                if d & ((1 << w) - 1) == 0:
                    regs[r] = w
                    break
        flags = [f for f in FLAG_NAMES if not self.flag_diff[f]]
        return LiveOutSpec.make(regs, flags, not self.mem_diff)


def infer_live_out(
    f_s: Program,
    f_ref: Program,
    suite: TestSuite,
    cfg: VerifyConfig,
    budget: int = 8,
) -> InferResult:
    """Infer the observable-output contract from an unoptimized/optimized pair.

    Starts from everything-live and prunes components the pair disagrees on,
    iterating to a fixed point within ``budget`` rounds. Returns a discard
    (live_out=None) when either program fails to return on some input, when
    the run evidence is exhausted by the deadline, or when the pruned
    contract is also satisfied by a trivial program.
    """
    t0 = time.monotonic()
    deadline = t0 + cfg.timeout_s

    evidence = _Evidence()

    def feed(regs: np.ndarray, mem: np.ndarray | None) -> bool:
        ra = run_batch(f_s, regs, mem, fuel=cfg.fuel, loop_bound=cfg.loop_bound)
        rb = run_batch(f_ref, regs, mem, fuel=cfg.fuel, loop_bound=cfg.loop_bound)
        evidence.add(ra, rb)
        return evidence.nonterm is None

    # recorded suite inputs (randomized data region) plus the full grid
    sregs = states_to_regs([c.inp for c in suite.cases])
    smem = np.array([np.frombuffer(bytes(c.inp.mem), dtype=np.uint8)
                     for c in suite.cases])
    if not feed(sregs, smem):
        return InferResult(None, True, evidence.nonterm, 0, False)
    grid = _Grid(cfg)
    for base in range(0, grid.total, cfg.chunk_lanes):
        if time.monotonic() > deadline:
            return InferResult(None, True, "timeout", 0, False)
        regs, mem = grid.chunk(base, min(base + cfg.chunk_lanes, grid.total))
        if not feed(regs, mem):
            return InferResult(None, True, evidence.nonterm, 0, False)

    # prune to a fixed point; the evidence is deterministic, so re-running
    # the programs each round would reproduce it and the loop settles fast
    lo = LiveOutSpec.all_live()
    iterations = 0
    converged = False
    while iterations < budget:
        iterations += 1
        nxt = evidence.prune()
        if nxt == lo:
            converged = True
            break
        lo = nxt

    for name, text in _SPURIOUS:
        probe = parse(text)
        out = verify(probe, f_ref, suite, lo, cfg)
        if out.equivalent:
            return InferResult(None, True, f"spurious:{name}", iterations, converged)

    return InferResult(lo, False, "", iterations, converged)
