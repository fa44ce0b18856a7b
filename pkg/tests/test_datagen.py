"""Task generation: both lowerings, admission, witnesses, mutants, corpus IO."""

import json
import random
from pathlib import Path

import pytest

from silolab.cost import LatencyTable, cost
from silolab.datagen import (
    CorpusEntry,
    build_corpus,
    build_entry,
    compile_naive,
    compile_opt,
    guard_mutant,
    headroom_witnesses,
    live_out_from_json,
    live_out_to_json,
    load_corpus,
    make_abs_task,
    make_cell_task,
    make_const_task,
    make_identity_task,
    make_loop_task,
    make_select_task,
    make_store_task,
    pick_guard_value,
    preserving_variants,
    sample_task,
    semantic_mutants,
    task_mem_bytes,
)
from silolab.isa import Imm, Mem, Op, Reg, Register, parse
from silolab.machine import execute, masked_equal
from silolab.verify import Verdict, check_testsuite, verify

NAIVE_ABS = """\
.absval:
  movl %edi, 0x80(%r9)
  movl 0x80(%r9), %ecx
  sarl $0x1f, %ecx
  movl %ecx, 0x88(%r9)
  movl 0x80(%r9), %ecx
  movl 0x88(%r9), %edx
  xorl %edx, %ecx
  movl %ecx, 0x80(%r9)
  movl 0x80(%r9), %ecx
  movl 0x88(%r9), %edx
  subl %edx, %ecx
  movl %ecx, 0x80(%r9)
  movl 0x80(%r9), %ecx
  movq $0x0, 0x80(%r9)
  movq $0x0, 0x88(%r9)
  movl %ecx, %eax
  retq
"""

OPT_ABS = """\
.absval:
  movl %edi, %ebx
  sarl $0x1f, %ebx
  xorl %ebx, %edi
  subl %ebx, %edi
  movl %edi, %eax
  retq
"""

BEST_ABS = """\
.absval:
  movl %edi, %eax
  sarl $0x1f, %edi
  xorl %edi, %eax
  subl %edi, %eax
  retq
"""

OPT_LOOP3 = """\
.loopfn:
  movl $0x0, %ebx
  movl $0x3, %r8d
.L1:
  addl %edi, %ebx
  subl $0x1, %r8d
  cmpl $0x0, %r8d
  jne .L1
  movl %ebx, %eax
  retq
"""

OPT_SELECT = """\
.select:
  cmpl %esi, %edi
  jl .L1
  movl %esi, %ebx
  jmp .L2
.L1:
  movl %edi, %ebx
.L2:
  movl %ebx, %eax
  retq
"""


def entry_for(task, seed=7, rotation=0):
    entry, reason = build_entry(task, "t-00000", suite_seed=seed, rotation=rotation)
    assert entry is not None, reason
    return entry


# --- exact lowering shapes ----------------------------------------------------

def test_naive_abs_exact_listing():
    assert str(compile_naive(make_abs_task(32))) == NAIVE_ABS


def test_opt_abs_exact_listing():
    assert str(compile_opt(make_abs_task(32))) == OPT_ABS


def test_opt_loop_exact_listing():
    assert str(compile_opt(make_loop_task(32, trips=3))) == OPT_LOOP3


def test_opt_select_exact_listing():
    assert str(compile_opt(make_select_task(32))) == OPT_SELECT


def test_opt_identity_is_two_instructions():
    assert str(compile_opt(make_identity_task(32))) == ".ident:\n  movl %edi, %eax\n  retq\n"


def test_naive_texture_conventions():
    # Verbose lowering: every value travels through a frame slot, scratch
    # traffic uses only rcx/rdx, and the epilogue re-zeroes the frame.
    for task in (make_abs_task(32), make_loop_task(64, trips=2),
                 make_select_task(32), make_cell_task(32)):
        prog = compile_naive(task)
        regs = {o.reg for ins in prog.instrs for o in ins.operands
                if isinstance(o, Reg)}
        allowed = {Register.RCX, Register.RDX, Register.RDI, Register.RSI,
                   Register.RAX}
        assert regs <= allowed
        slots = [o for ins in prog.instrs for o in ins.operands
                 if isinstance(o, Mem) and o.disp >= 0x80]
        assert slots, "naive code must use frame slots"
        assert all(o.base is Register.R9 for o in slots)
        zeroing = [ins for ins in prog.instrs
                   if ins.op is Op.MOV and ins.width == 64
                   and isinstance(ins.operands[0], Imm)
                   and ins.operands[0].value == 0
                   and isinstance(ins.operands[1], Mem)
                   and ins.operands[1].disp >= 0x80]
        assert len(zeroing) == len({o.disp for o in slots})


def test_opt_never_touches_frame_slots():
    for task in (make_abs_task(32), make_loop_task(32, trips=4),
                 make_select_task(64), make_cell_task(32), make_store_task(32)):
        prog = compile_opt(task)
        for ins in prog.instrs:
            for o in ins.operands:
                if isinstance(o, Mem):
                    assert o.disp < 0x80, f"frame slot survived: {ins}"


def test_opt_registers_come_from_pool():
    pool = {Register.RBX, Register.R8, Register.RDX, Register.RCX}
    ok = pool | {Register.RDI, Register.RSI, Register.RAX, Register.R9}
    for j in range(40):
        task = sample_task(random.Random(f"pool:{j}"))
        prog = compile_opt(task, rotation=j % 4)
        regs = {o.reg for ins in prog.instrs for o in ins.operands
                if isinstance(o, Reg)}
        assert regs <= ok


def test_pool_rotation_varies_register_choice():
    texts = {str(compile_opt(make_loop_task(32, trips=3), rotation=r))
             for r in range(4)}
    assert len(texts) >= 2
    # All rotations stay equivalent to the same verbose lowering.
    e0 = entry_for(make_loop_task(32, trips=3), rotation=0)
    for r in range(1, 4):
        er = entry_for(make_loop_task(32, trips=3), rotation=r)
        assert er.cost_ref == e0.cost_ref


# --- headroom witnesses --------------------------------------------------------

def test_abs_witness_reaches_best_form():
    cands = dict(headroom_witnesses(parse(OPT_ABS)))
    assert "swap-accumulator" in cands
    assert str(cands["swap-accumulator"]) == BEST_ABS


def test_loop_witnesses_compose():
    cands = dict(headroom_witnesses(parse(OPT_LOOP3)))
    assert {"fold-exit-test", "forward-result", "fold-exit-test+forward-result"} \
        <= set(cands)
    best = cands["fold-exit-test+forward-result"]
    mnems = [str(i).split()[0] for i in best.instrs]
    assert "cmpl" not in mnems
    assert str(best.instrs[-2]) != "movl %ebx, %eax"


def test_headroom_is_verified_and_strict():
    for task in (make_abs_task(32), make_loop_task(32, trips=3),
                 make_select_task(32), make_cell_task(32)):
        e = entry_for(task)
        assert e.headroom_cost is not None
        assert e.headroom_cost < e.cost_ref


def test_saturated_tasks_report_no_headroom():
    for task in (make_identity_task(32), make_store_task(32)):
        e = entry_for(task)
        assert e.headroom_cost is None
        assert e.headroom_witness is None


def test_witness_candidates_verify_against_source():
    e = entry_for(make_loop_task(32, trips=3))
    f_s, suite, cfg = parse(e.f_s), e.suite(), e.verify_config()
    for name, cand in headroom_witnesses(parse(e.f_ref)):
        out = verify(cand, f_s, suite, e.live_out, cfg)
        assert out.equivalent, (name, out.detail)


# --- admission pipeline ---------------------------------------------------------

def test_const_zero_and_one_are_spurious():
    _, reason = build_entry(make_const_task(32, 0), "t-0", suite_seed=3)
    assert reason == "spurious:ret"
    _, reason = build_entry(make_const_task(32, 1), "t-0", suite_seed=3)
    assert reason == "spurious:ret1"
    entry, reason = build_entry(make_const_task(32, 7), "t-0", suite_seed=3)
    assert reason == "ok" and entry is not None


def test_admission_inferred_contract_holds():
    # Independent re-check: the stored contract really relates the lowerings.
    for task in (make_abs_task(32), make_loop_task(32, trips=2),
                 make_select_task(32, op=">s"), make_cell_task(64)):
        e = entry_for(task)
        out = verify(parse(e.f_ref), parse(e.f_s), e.suite(), e.live_out,
                     e.verify_config())
        assert out.verdict is Verdict.EQUIVALENT


def test_admission_random_sweep():
    reasons = set()
    admitted = 0
    for j in range(60):
        task = sample_task(random.Random(f"sweep:{j}"))
        entry, reason = build_entry(task, f"s-{j:05d}", suite_seed=j,
                                    rotation=j % 4)
        if entry is None:
            assert reason.startswith("spurious") or reason in ("too-long",)
            reasons.add(reason)
            continue
        admitted += 1
        assert entry.cost_ref <= entry.cost_s
        assert parse(entry.f_s).name == parse(entry.f_ref).name
        out = verify(parse(entry.f_ref), parse(entry.f_s), entry.suite(),
                     entry.live_out, entry.verify_config())
        assert out.verdict is Verdict.EQUIVALENT
    assert admitted >= 45


def test_admission_is_deterministic():
    a = build_entry(make_loop_task(32, trips=3), "t-1", suite_seed=11, rotation=2)[0]
    b = build_entry(make_loop_task(32, trips=3), "t-1", suite_seed=11, rotation=2)[0]
    assert a.to_json() == b.to_json()


def test_mem_bytes_only_counts_loads():
    assert task_mem_bytes(make_cell_task(32, cell=2)) == 3
    assert task_mem_bytes(make_store_task(32, cell=3)) == 0
    e = entry_for(make_cell_task(32, cell=2))
    assert e.mem_bytes == 3


# --- witnessed mutants -----------------------------------------------------------

def test_semantic_mutants_are_flagged_by_verifier():
    rng = random.Random(5)
    for task in (make_abs_task(32), make_select_task(32), make_loop_task(32, trips=2)):
        e = entry_for(task)
        f_s, suite, cfg = parse(e.f_s), e.suite(), e.verify_config()
        muts = semantic_mutants(parse(e.f_ref), suite, e.live_out, rng, limit=5)
        assert len(muts) >= 3
        for kind, mut, wit in muts:
            # The witness came from the scalar interpreter; the batch verifier
            # must reject the mutant on its own.
            out = verify(mut, f_s, suite, e.live_out, cfg)
            assert out.v == 1, (kind, str(mut))


def test_mutant_witness_reproduces_difference():
    e = entry_for(make_select_task(32))
    muts = semantic_mutants(parse(e.f_ref), e.suite(), e.live_out,
                            random.Random(9), limit=3)
    ref = parse(e.f_ref)
    for _, mut, wit in muts:
        ra = execute(ref, wit.copy(), fuel=4096, loop_bound=4)
        rb = execute(mut, wit.copy(), fuel=4096, loop_bound=4)
        assert (ra.halted != rb.halted
                or not masked_equal(ra.state, rb.state, e.live_out))


def test_guard_mutant_needs_second_verification_stage():
    e = entry_for(make_abs_task(32))
    suite = e.suite()
    value = pick_guard_value(suite)
    mut = guard_mutant(parse(e.f_ref), value)
    assert mut is not None
    cfg = e.verify_config()
    stage1 = check_testsuite(mut, suite, e.live_out, cfg)
    assert stage1.verdict is Verdict.EQUIVALENT  # trap input never sampled
    full = verify(mut, parse(e.f_s), suite, e.live_out, cfg)
    assert full.verdict is Verdict.COUNTEREXAMPLE
    assert full.witness.get_reg("rdi") == value


def test_guard_mutant_refuses_flag_transparent_bodies():
    # Identity never rewrites flags, so the trap's own cmp would leak into the
    # observable flags on every input; the builder must decline.
    e = entry_for(make_identity_task(32))
    assert guard_mutant(parse(e.f_ref), 42) is None


# --- behavior-preserving variants --------------------------------------------------

def test_preserving_variants_stay_equivalent():
    rng = random.Random(3)
    for task in (make_abs_task(32), make_loop_task(32, trips=3),
                 make_select_task(32)):
        e = entry_for(task)
        f_s, suite, cfg = parse(e.f_s), e.suite(), e.verify_config()
        variants = preserving_variants(parse(e.f_ref), e.live_out, rng, limit=6)
        assert len(variants) >= 2
        for name, var in variants:
            assert str(var) != e.f_ref
            out = verify(var, f_s, suite, e.live_out, cfg)
            assert out.v == 0, (name, str(var), out.detail)


# --- corpus building ----------------------------------------------------------------

def test_corpus_build_load_and_rebuild(tmp_path):
    meta = build_corpus(tmp_path / "c1", n_train=10, n_dev=3, n_test=3, seed=5)
    for split, want in (("train", 10), ("dev", 3), ("test", 3)):
        entries = load_corpus(tmp_path / "c1", split)
        assert len(entries) == want
        assert [e.id for e in entries] == [f"{split}-{i:05d}" for i in range(want)]
        assert meta["splits"][split]["count"] == want
    # Dedup is global: no repeated source body anywhere.
    bodies = [e.f_s.split("\n", 1)[1]
              for split in ("train", "dev", "test")
              for e in load_corpus(tmp_path / "c1", split)]
    assert len(bodies) == len(set(bodies))
    # Deterministic rebuild, byte for byte.
    build_corpus(tmp_path / "c2", n_train=10, n_dev=3, n_test=3, seed=5)
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "meta.json"):
        assert (tmp_path / "c1" / name).read_bytes() == \
            (tmp_path / "c2" / name).read_bytes()


def test_corpus_entry_json_roundtrip():
    e = entry_for(make_cell_task(32, cell=1))
    clone = CorpusEntry.from_json(json.loads(json.dumps(e.to_json())))
    assert clone == e
    assert clone.suite().cases[0].inp == e.suite().cases[0].inp


def test_live_out_json_roundtrip():
    e = entry_for(make_loop_task(32, trips=2))
    lo = live_out_from_json(live_out_to_json(e.live_out))
    assert lo == e.live_out


def test_entry_suite_regeneration_is_stable():
    e = entry_for(make_select_task(32), seed=21)
    s1, s2 = e.suite(), e.suite()
    assert [c.inp for c in s1.cases] == [c.inp for c in s2.cases]
    assert [c.out for c in s1.cases] == [c.out for c in s2.cases]


def test_cost_fields_match_recomputation():
    e = entry_for(make_abs_task(32))
    lat = LatencyTable.default()
    assert e.cost_s == cost(parse(e.f_s), e.suite(), lat).c_total
    assert e.cost_ref == cost(parse(e.f_ref), e.suite(), lat).c_total
