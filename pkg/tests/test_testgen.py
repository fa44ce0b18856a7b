"""Suite generation: sampling discipline, determinism, stored-run soundness."""

import pytest

from silolab.isa import Register, parse
from silolab.machine import execute
from silolab.testgen import (
    DATA_REGION_BYTES,
    SuiteGenError,
    generate_suite,
    suite_from_jsonl,
    suite_to_jsonl,
)

IDENT = """.ident:
  movq %rdi, %rax
  retq
"""

ABS = """.abs:
  movl %edi, %eax
  sarl $0x1f, %edi
  xorl %edi, %eax
  subl %edi, %eax
  retq
"""


def test_identity_outputs_mirror_inputs():
    suite = generate_suite(parse(IDENT), k=32, seed=7)
    assert len(suite) == 32
    for c in suite.cases:
        assert c.out.get_reg("rax") == c.inp.get_reg("rdi")
        assert c.out.get_reg("rdi") == c.inp.get_reg("rdi")
        assert c.out.mem == c.inp.mem


def test_abs_outputs_match_arithmetic_oracle():
    suite = generate_suite(parse(ABS), k=32, seed=3, input_regs=("rdi",))
    for c in suite.cases:
        a = c.inp.get_reg("rdi") & 0xFFFFFFFF
        signed = a - (1 << 32) if a >> 31 else a
        assert c.out.get_reg("rax") == abs(signed) & 0xFFFFFFFF


def test_inputs_respect_conventions():
    suite = generate_suite(parse(IDENT), k=16, seed=0, input_regs=("rdi",))
    for c in suite.cases:
        s = c.inp
        # only the declared input register varies; frame region stays zero
        assert all(s.regs[r] == 0 for r in Register if r != Register.RDI)
        assert all(b == 0 for b in s.mem[DATA_REGION_BYTES:])
        assert s.flags() == (False, False, False, False)


def test_sampling_mix_hits_boundaries_and_smalls():
    suite = generate_suite(parse(IDENT), k=64, seed=1, input_regs=("rdi",))
    vals = [c.inp.get_reg("rdi") for c in suite.cases]
    assert any(v in (0, 1, (1 << 64) - 1, 1 << 63) for v in vals)
    assert any(0 < v <= 16 or v >= (1 << 64) - 16 for v in vals)
    assert any(v.bit_length() > 32 and v >> 63 == 0 for v in vals)


def test_k_and_data_bytes_validation():
    with pytest.raises(ValueError):
        generate_suite(parse(IDENT), k=0)
    with pytest.raises(ValueError):
        generate_suite(parse(IDENT), k=-3)
    with pytest.raises(ValueError):
        generate_suite(parse(IDENT), k=4, data_bytes=200)


def test_reproducible_and_seed_sensitive():
    a = suite_to_jsonl(generate_suite(parse(ABS), k=16, seed=5, input_regs=("rdi",)))
    b = suite_to_jsonl(generate_suite(parse(ABS), k=16, seed=5, input_regs=("rdi",)))
    c = suite_to_jsonl(generate_suite(parse(ABS), k=16, seed=6, input_regs=("rdi",)))
    assert a == b
    assert a != c


def test_jsonl_roundtrip():
    suite = generate_suite(parse(ABS), k=8, seed=2, input_regs=("rdi",))
    back = suite_from_jsonl(suite_to_jsonl(suite))
    assert back.k == suite.k and back.seed == suite.seed
    assert back.input_regs == suite.input_regs
    for x, y in zip(suite.cases, back.cases):
        assert x.inp == y.inp and x.out == y.out


def test_stored_runs_replay_exactly():
    spec = parse(ABS)
    suite = generate_suite(spec, k=16, seed=9, input_regs=("rdi",))
    for c in suite.cases:
        res = execute(spec, c.inp)
        assert res.halted == "ret"
        assert res.state == c.out


def test_nonreturning_specs_are_rejected():
    faulty = parse(".bad:\n  movq 0xff(%r9), %rax\n  retq\n")
    with pytest.raises(SuiteGenError):
        generate_suite(faulty, k=1, seed=0)
    spinner = parse(".spin:\n.L1:\n  jmp .L1\n")
    with pytest.raises(SuiteGenError):
        generate_suite(spinner, k=1, seed=0)


def test_header_mismatch_rejected():
    text = suite_to_jsonl(generate_suite(parse(IDENT), k=4, seed=0))
    lines = text.splitlines()
    bad = "\n".join([lines[0].replace('"k": 4', '"k": 5')] + lines[1:])
    with pytest.raises(ValueError):
        suite_from_jsonl(bad)
