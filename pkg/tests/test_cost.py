"""Latency table, the two-part cost, and objective shaping exactness."""

import pytest

from silolab.cost import (
    CostReport,
    LatencyTable,
    ObjectiveConfig,
    cost,
    cost_all,
    cost_exe,
    objective,
)
from silolab.isa import Program, parse
from silolab.machine import LiveOutSpec, bit_diff, execute
from silolab.testgen import generate_suite
from silolab.verify import Verdict, VerifyConfig

LONE_RET = ".f:\n  retq\n"

ABS = """.abs:
  movl %edi, %eax
  sarl $0x1f, %edi
  xorl %edi, %eax
  subl %edi, %eax
  retq
"""

# same function, one instruction longer: accumulates in a scratch register
# and moves the result out at the end
REF_ABS = """.abs:
  movl %edi, %ebx
  sarl $0x1f, %ebx
  xorl %ebx, %edi
  subl %ebx, %edi
  movl %edi, %eax
  retq
"""

LOOP3 = """.loop3:
  movq $0x3, %rcx
.L1:
  subq $0x1, %rcx
  jne .L1
  retq
"""

FLAGS_ALL = ("zf", "sf", "cf", "of")


def suite_for(text, k=16, seed=1, regs=("rdi",)):
    return generate_suite(parse(text), k=k, seed=seed, input_regs=regs)


def test_lone_ret_costs():
    p = parse(LONE_RET)
    s = suite_for(LONE_RET)
    assert cost_all(p) == 1.0
    assert cost_exe(p, s) == 1.0
    assert cost(p, s).c_total == 2.0


def test_abs_straightline_costs():
    p = parse(ABS)
    s = suite_for(ABS)
    # mov 1 + sar 2 + xor 1 + sub 1 + ret 1
    assert cost_all(p) == 6.0
    # straight-line code executes every instruction on every input
    assert cost_exe(p, s) == 6.0
    assert cost(p, s).c_total == 12.0


def test_shorter_program_costs_strictly_less():
    s = suite_for(REF_ABS)
    long_rep = cost(parse(REF_ABS), s)
    short_rep = cost(parse(ABS), s)
    assert long_rep.c_all == 7.0 and long_rep.c_total == 14.0
    assert short_rep.c_total < long_rep.c_total


def test_memory_operand_surcharge():
    assert cost_all(parse(".f:\n  movq 0x10(%r9), %rax\n  retq\n")) == 5.0  # (1+3)+1
    assert cost_all(parse(".f:\n  movb %cl, 0x3f(%r9)\n  retq\n")) == 5.0


def test_latency_classes():
    lat = LatencyTable.default()
    one_of = lambda text: parse(f".f:\n  {text}\n  retq\n").instrs[0]
    assert lat.latency(one_of("shlq $0x2, %rax")) == 2.0
    assert lat.latency(one_of("sarl $0x1, %ecx")) == 2.0
    assert lat.latency(one_of("imulq %rsi, %rdi")) == 3.0
    assert lat.latency(one_of("leaq 0x8(%rdi), %rax")) == 1.0
    assert lat.latency(one_of("sete %al")) == 1.0
    assert lat.latency(one_of("movzbl 0x0(%r9), %eax")) == 4.0
    label = parse(".f:\n.L1:\n  jmp .L1\n").instrs[0]
    assert lat.latency(label) == 0.0


def test_loop_executed_latency():
    p = parse(LOOP3)
    s = suite_for(LOOP3)
    # listing: mov + sub + jne + ret (label free)
    assert cost_all(p) == 4.0
    # executed: mov, then 3 trips of (sub, jne), then ret
    assert cost_exe(p, s) == 8.0


def test_untaken_branch_costs_from_recorded_paths():
    text = """.sel:
  movq $0x1, %rax
  cmpq $0x0, %rdi
  jne .L1
  movq $0x0, %rax
.L1:
  retq
"""
    p = parse(text)
    s = suite_for(text, k=32, seed=4)
    expected = sum(5.0 if c.inp.get_reg("rdi") == 0 else 4.0 for c in s.cases) / 32
    assert cost_exe(p, s) == expected


def test_label_rename_does_not_change_cost():
    renamed = LOOP3.replace(".L1", ".L7")
    s = suite_for(LOOP3)
    assert cost(parse(renamed), s) == cost(parse(LOOP3), s)


def test_removing_an_instruction_never_raises_static_cost():
    p = parse(REF_ABS)
    base = cost_all(p)
    for i in range(len(p.instrs)):
        trimmed = Program(p.name, p.instrs[:i] + p.instrs[i + 1:])
        assert cost_all(trimmed) <= base


def test_latency_table_text_roundtrip():
    lat = LatencyTable.default()
    again = LatencyTable.from_text(lat.to_text())
    assert again == lat
    custom = LatencyTable.from_text(lat.to_text().replace("mem_operand 3", "mem_operand 7"))
    assert custom.latency(parse(".f:\n  movq 0x0(%r9), %rax\n  retq\n").instrs[0]) == 8.0


def test_latency_table_rejects_bad_input():
    lat = LatencyTable.default()
    with pytest.raises(ValueError, match="missing"):
        LatencyTable.from_text("mov 1\n")
    with pytest.raises(ValueError, match="unknown op"):
        LatencyTable.from_text(lat.to_text() + "frob 2\n")
    with pytest.raises(ValueError, match="bad value"):
        LatencyTable.from_text(lat.to_text() + "mov fast\n")
    with pytest.raises(ValueError, match="expected"):
        LatencyTable.from_text("mov\n")


def _vcfg():
    return VerifyConfig(input_regs=("rdi",))


def test_objective_equivalent_is_pure_cost():
    spec = parse(REF_ABS)
    s = suite_for(REF_ABS)
    lo = LiveOutSpec.only(rax=32, flags=FLAGS_ALL, heap_out=True)
    rep = objective(ABS, spec, s, lo, _vcfg())
    assert rep.v == 0 and rep.verdict is Verdict.EQUIVALENT
    assert rep.j == rep.cost.c_total == 12.0
    assert rep.mean_bits == 0.0 and not rep.clipped
    # the superoptimization signal: the shorter equivalent scores below the spec
    self_rep = objective(REF_ABS, spec, s, lo, _vcfg())
    assert rep.j < self_rep.j == 14.0


def test_objective_near_miss_shaping_is_exact():
    ident = ".f:\n  movq %rdi, %rax\n  retq\n"
    spec = parse(ident)
    s = suite_for(ident, k=16, seed=2)
    lo = LiveOutSpec.only(rax=64)
    rep = objective(".f:\n  movq $0x0, %rax\n  retq\n", spec, s, lo, _vcfg())
    assert rep.v == 1
    bits = sum(bin(c.inp.get_reg("rdi")).count("1") for c in s.cases) / len(s.cases)
    assert rep.mean_bits == bits
    assert rep.j == 4.0 + 50_000.0 + 100.0 * bits
    assert not rep.clipped


def test_objective_matches_recomputed_components():
    spec = parse(REF_ABS)
    s = suite_for(REF_ABS, k=8, seed=3)
    lo = LiveOutSpec.only(rax=32)
    cand = parse(".abs:\n  movl %edi, %eax\n  retq\n")  # wrong on negatives
    rep = objective(cand, spec, s, lo, _vcfg())
    assert rep.v == 1
    bits = 0.0
    for c in s.cases:
        bits += bit_diff(execute(cand, c.inp).state, c.out, lo)
    bits /= len(s.cases)
    assert rep.j == rep.cost.c_total + 50_000.0 + 100.0 * bits


def test_objective_clipping():
    ident = ".f:\n  movq %rdi, %rax\n  retq\n"
    spec = parse(ident)
    s = suite_for(ident, k=8, seed=2)
    lo = LiveOutSpec.only(rax=64)
    ocfg = ObjectiveConfig(clip=50_001.0)
    rep = objective(".f:\n  movq $0x0, %rax\n  retq\n", spec, s, lo, _vcfg(), ocfg=ocfg)
    assert rep.clipped and rep.j == 50_001.0


def test_objective_unparseable_gets_clip_exactly():
    ident = ".f:\n  movq %rdi, %rax\n  retq\n"
    spec = parse(ident)
    s = suite_for(ident, k=4, seed=0)
    lo = LiveOutSpec.only(rax=64)
    for junk in ("not a program", [0, 1, 2]):
        rep = objective(junk, spec, s, lo, _vcfg())
        assert rep.j == 100_000.0 and rep.clipped
        assert rep.verdict is Verdict.UNPARSEABLE
        assert rep.cost is None and rep.mean_bits is None
