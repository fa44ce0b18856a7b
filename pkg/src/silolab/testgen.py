"""Input/output test-suite generation for candidate screening.

A test suite for a specification program is K recorded runs: sampled input
states and the final states the specification produced on them. The verifier
uses suites as a cheap first stage (most wrong candidates die here) before
the exhaustive bounded check.

Sampling mixes boundary values, small integers, and uniform 64-bit values in
the designated input registers, and randomizes the observable data region of
memory; the frame region [128, 256) starts zero per the calling convention,
and flags start clear. Inputs on which the specification does not return
cleanly are resampled, so every stored case has a ``ret`` outcome.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .isa import Program
from .machine import DEFAULT_FUEL, MachineState, execute

__all__ = [
    "TestCase",
    "TestSuite",
    "SuiteGenError",
    "generate_suite",
    "suite_to_jsonl",
    "suite_from_jsonl",
    "DATA_REGION_BYTES",
]

# observable scratch cells live below this; the frame convention owns the rest
DATA_REGION_BYTES = 64

_BOUNDARY = (0, 1, (1 << 64) - 1, 1 << 63, (1 << 63) - 1)


class SuiteGenError(RuntimeError):
    pass


@dataclass(frozen=True)
class TestCase:
    inp: MachineState
    out: MachineState


@dataclass
class TestSuite:
    cases: list[TestCase]
    k: int
    seed: int
    input_regs: tuple[str, ...] = ("rdi", "rsi")

    def __len__(self) -> int:
        return len(self.cases)


def _sample_input(rng: random.Random, input_regs, data_bytes: int) -> MachineState:
    s = MachineState()
    for name in input_regs:
        x = rng.random()
        if x < 0.25:
            v = rng.choice(_BOUNDARY)
        elif x < 0.55:
            v = rng.randrange(-16, 17) % (1 << 64)
        else:
            v = rng.getrandbits(64)
        s.set_reg(name, v)
    for i in range(data_bytes):
        s.mem[i] = rng.getrandbits(8)
    return s


def generate_suite(
    spec: Program,
    k: int = 32,
    seed: int = 0,
    input_regs: tuple[str, ...] = ("rdi", "rsi"),
    data_bytes: int = DATA_REGION_BYTES,
    fuel: int = DEFAULT_FUEL,
) -> TestSuite:
    """Sample k recorded runs of ``spec``. Deterministic in ``seed``."""
    if k <= 0:
        raise ValueError("suite size k must be positive")
    if not 0 <= data_bytes <= 128:
        raise ValueError("data_bytes must stay inside the data region")
    rng = random.Random(seed)
    cases: list[TestCase] = []
    failures = 0
    while len(cases) < k:
        inp = _sample_input(rng, input_regs, data_bytes)
        res = execute(spec, inp, fuel=fuel)
        if res.halted != "ret":
            failures += 1
            if failures >= 10 * k:
                raise SuiteGenError(
                    f"spec {spec.name!r} failed to return on {failures} sampled inputs"
                )
            continue
        cases.append(TestCase(inp, res.state))
    return TestSuite(cases, k, seed, tuple(input_regs))


def suite_to_jsonl(suite: TestSuite) -> str:
    lines = [json.dumps({"k": suite.k, "seed": suite.seed,
                         "input_regs": list(suite.input_regs)}, sort_keys=True)]
    for c in suite.cases:
        lines.append(json.dumps({"in": c.inp.to_json(), "out": c.out.to_json()},
                                sort_keys=True))
    return "\n".join(lines) + "\n"


def suite_from_jsonl(text: str) -> TestSuite:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty suite")
    head = json.loads(lines[0])
    cases = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        cases.append(TestCase(MachineState.from_json(obj["in"]),
                              MachineState.from_json(obj["out"])))
    if len(cases) != head["k"]:
        raise ValueError(f"suite header claims k={head['k']}, found {len(cases)} cases")
    return TestSuite(cases, head["k"], head["seed"], tuple(head["input_regs"]))
