"""Interpreter semantics, state comparison, and the scalar/batch cross-check."""

import random

import numpy as np
import pytest

from silolab.batchexec import lane_state, run_batch, states_to_regs
from silolab.isa import Register, parse
from silolab.machine import LiveOutSpec, MachineState, bit_diff, execute, masked_equal

from progutil import random_program, random_state

ABS = parse(""".abs:
  movl %edi, %eax
  sarl $0x1f, %edi
  xorl %edi, %eax
  subl %edi, %eax
  retq
""")


def run_on_rdi(prog, rdi):
    s = MachineState().set_reg("rdi", rdi % (1 << 64))
    return execute(prog, s)


def test_abs_hand_simulated_values():
    # hand-walked: a=-5 -> c=a>>31=-1, a^c=4, 4-(-1)=5
    assert run_on_rdi(ABS, -5).state.get_reg("eax") == 5
    assert run_on_rdi(ABS, 7).state.get_reg("eax") == 7
    assert run_on_rdi(ABS, 0).state.get_reg("eax") == 0
    # 32-bit INT_MIN negates to itself
    assert run_on_rdi(ABS, -(1 << 31)).state.get_reg("eax") == 1 << 31


def test_abs_trace_shape():
    r = run_on_rdi(ABS, -5)
    assert r.halted == "ret"
    assert r.executed == [0, 1, 2, 3, 4]
    assert r.backward_jumps == 0


def test_execute_does_not_mutate_input():
    s = MachineState().set_reg("rdi", 41)
    before = s.copy()
    execute(parse(".f:\n  addq $0x1, %rdi\n  retq\n"), s)
    assert s == before


def test_fall_off_end_is_a_fault():
    r = execute(parse(".f:\n  movq $0x1, %rax\n"), MachineState())
    assert r.halted == "fault" and r.fault == "fall_off_end"


def test_memory_out_of_range_faults():
    r = execute(parse(".f:\n  movq $0x0, 0x100(%r9)\n  retq\n"), MachineState())
    assert r.halted == "fault" and r.fault == "mem_oob"
    # 8-byte access straddling the end also faults
    r = execute(parse(".f:\n  movq %rax, 0xf9(%r9)\n  retq\n"), MachineState())
    assert r.halted == "fault"
    # ...but the last full-width slot is fine
    r = execute(parse(".f:\n  movq %rax, 0xf8(%r9)\n  retq\n"), MachineState())
    assert r.halted == "ret"


def test_negative_effective_address_faults():
    s = MachineState().set_reg("r9", 4)
    r = execute(parse(".f:\n  movq -0x8(%r9), %rax\n  retq\n"), s)
    assert r.halted == "fault" and r.fault == "mem_oob"


def test_fuel_exhaustion():
    p = parse(".f:\n.L1:\n  jmp .L1\n  retq\n")
    r = execute(p, MachineState(), fuel=10)
    assert r.halted == "fuel"
    assert len(r.executed) == 10


def test_loop_bound_exceeded_reports_bound_plus_one():
    # counter of 6 -> the loop needs 5 backward jumps; bound 4 halts on the 5th
    p = parse(""".f:
  movq $0x6, %rcx
.L1:
  subq $0x1, %rcx
  jg .L1
  retq
""")
    r = execute(p, MachineState(), loop_bound=4)
    assert r.halted == "bound"
    assert r.backward_jumps == 5
    ok = execute(p, MachineState(), loop_bound=5)
    assert ok.halted == "ret" and ok.backward_jumps == 5


def test_label_defs_cost_no_fuel_and_are_not_executed():
    p = parse(".f:\n.L1:\n.L2:\n  movq $0x1, %rax\n  retq\n")
    r = execute(p, MachineState(), fuel=2)
    assert r.halted == "ret"
    assert r.executed == [2, 3]


def test_width_write_rules():
    # 32-bit writes zero the upper half, 16/8-bit writes merge
    s = MachineState().set_reg("rax", 0xFFFF_FFFF_FFFF_FFFF)
    r = execute(parse(".f:\n  movl $0x7, %eax\n  retq\n"), s)
    assert r.state.get_reg("rax") == 7
    r = execute(parse(".f:\n  movw $0x7, %ax\n  retq\n"), s)
    assert r.state.get_reg("rax") == 0xFFFF_FFFF_FFFF_0007
    r = execute(parse(".f:\n  movb $0x7, %al\n  retq\n"), s)
    assert r.state.get_reg("rax") == 0xFFFF_FFFF_FFFF_FF07


def test_extension_moves():
    s = MachineState().set_reg("rcx", 0x80)
    r = execute(parse(".f:\n  movzbl %cl, %eax\n  retq\n"), s)
    assert r.state.get_reg("rax") == 0x80
    r = execute(parse(".f:\n  movsbl %cl, %eax\n  retq\n"), s)
    assert r.state.get_reg("rax") == 0xFFFFFF80
    s2 = MachineState().set_reg("rcx", 0x8000_0000)
    r = execute(parse(".f:\n  movslq %ecx, %rax\n  retq\n"), s2)
    assert r.state.get_reg("rax") == 0xFFFF_FFFF_8000_0000


def test_flag_semantics_spot_checks():
    # cmp equal values -> zf
    r = execute(parse(".f:\n  cmpq %rdi, %rdi\n  retq\n"), MachineState())
    assert r.state.zf and not r.state.sf
    # unsigned borrow -> cf
    s = MachineState().set_reg("rax", 1)
    r = execute(parse(".f:\n  subq $0x2, %rax\n  retq\n"), s)
    assert r.state.cf and r.state.sf
    # signed overflow on add
    s = MachineState().set_reg("rax", (1 << 63) - 1)
    r = execute(parse(".f:\n  addq $0x1, %rax\n  retq\n"), s)
    assert r.state.of and not r.state.cf
    # logic ops clear cf/of
    r = execute(parse(".f:\n  xorq %rax, %rax\n  retq\n"), s)
    assert r.state.zf and not r.state.cf and not r.state.of
    # mov leaves flags alone
    p = parse(".f:\n  cmpq %rdi, %rdi\n  movq $0x5, %rax\n  retq\n")
    assert execute(p, MachineState()).state.zf
    # shift by zero leaves flags alone (zf stays set from the cmp)
    p = parse(".f:\n  cmpq %rdi, %rdi\n  shlq $0x0, %rax\n  retq\n")
    assert execute(p, MachineState()).state.zf
    # sar of a negative value saturates to -1
    s = MachineState().set_reg("rax", (-2) % (1 << 64))
    r = execute(parse(".f:\n  sarq $0x3f, %rax\n  retq\n"), s)
    assert r.state.get_reg("rax") == (1 << 64) - 1


def test_conditional_jumps():
    p = parse(""".f:
  cmpq %rsi, %rdi
  jl .L1
  movq $0x0, %rax
  retq
.L1:
  movq $0x1, %rax
  retq
""")
    lt = MachineState().set_reg("rdi", (-3) % (1 << 64)).set_reg("rsi", 5)
    ge = MachineState().set_reg("rdi", 5).set_reg("rsi", 5)
    assert execute(p, lt).state.get_reg("rax") == 1
    assert execute(p, ge).state.get_reg("rax") == 0


def test_setcc_writes_only_low_byte():
    s = MachineState().set_reg("rax", 0xAAAA)
    p = parse(".f:\n  cmpq %rdi, %rdi\n  sete %al\n  retq\n")
    assert execute(p, s).state.get_reg("rax") == 0xAA01


def test_imul_flags_and_values():
    s = MachineState().set_reg("rax", 1 << 32).set_reg("rcx", 1 << 32)
    r = execute(parse(".f:\n  imulq %rcx, %rax\n  retq\n"), s)
    assert r.state.get_reg("rax") == 0
    assert r.state.cf and r.state.of and r.state.zf
    s = MachineState().set_reg("rax", (-7) % (1 << 64))
    r = execute(parse(".f:\n  imulq $0x3, %rax\n  retq\n"), s)
    assert r.state.get_reg("rax") == (-21) % (1 << 64)
    assert not r.state.cf and r.state.sf


def test_deterministic_replay():
    rng = random.Random(7)
    for _ in range(50):
        p = random_program(rng)
        s = random_state(rng)
        r1 = execute(p, s)
        r2 = execute(p, s)
        assert r1.state == r2.state and r1.executed == r2.executed


def test_fuel_monotonicity():
    rng = random.Random(8)
    checked = 0
    for _ in range(200):
        p = random_program(rng)
        s = random_state(rng)
        r = execute(p, s, fuel=64)
        if r.halted == "ret":
            r2 = execute(p, s, fuel=64 + 17)
            assert r2.state == r.state and r2.executed == r.executed
            checked += 1
    assert checked > 50


# ---------------------------------------------------------------------------
# masked comparison
# ---------------------------------------------------------------------------


def test_masked_equal_width_narrowing():
    a = MachineState().set_reg("rax", 0x1111_2222_3333_4444)
    b = MachineState().set_reg("rax", 0x9999_8888_3333_4444)
    assert masked_equal(a, b, LiveOutSpec.only(rax=32))
    assert not masked_equal(a, b, LiveOutSpec.only(rax=64))
    assert masked_equal(a, b, LiveOutSpec.only(rcx=64))


def test_masked_equal_flags_and_heap():
    a, b = MachineState(), MachineState()
    b.zf = True
    assert masked_equal(a, b, LiveOutSpec.only())
    assert not masked_equal(a, b, LiveOutSpec.only(flags=("zf",)))
    b.zf = False
    b.mem[200] = 9
    assert masked_equal(a, b, LiveOutSpec.only(rax=64))
    assert not masked_equal(a, b, LiveOutSpec.only(rax=64, heap_out=True))


def test_bit_diff_popcount_oracle():
    rng = random.Random(5)
    for _ in range(200):
        a, b = random_state(rng), random_state(rng)
        b.zf = bool(rng.getrandbits(1))
        lo = LiveOutSpec.only(rax=64, rcx=rng.choice([8, 16, 32, 64]),
                              flags=("zf",), heap_out=True)
        expect = ((a.regs[Register.RAX] ^ b.regs[Register.RAX])).bit_count()
        w = lo.reg_width(Register.RCX)
        expect += ((a.regs[Register.RCX] ^ b.regs[Register.RCX]) & ((1 << w) - 1)).bit_count()
        expect += a.zf != b.zf
        expect += sum((x ^ y).bit_count() for x, y in zip(a.mem, b.mem))
        assert bit_diff(a, b, lo) == expect
        assert (bit_diff(a, b, lo) == 0) == masked_equal(a, b, lo)


def test_bit_diff_all_live_zero_iff_identical():
    rng = random.Random(6)
    s = random_state(rng)
    assert bit_diff(s, s.copy(), LiveOutSpec.all_live()) == 0


def test_live_out_spec_json_roundtrip():
    lo = LiveOutSpec.only(rax=64, rdi=32, flags=("zf", "of"), heap_out=True)
    assert LiveOutSpec.from_json(lo.to_json()) == lo


def test_machine_state_json_roundtrip():
    rng = random.Random(11)
    for _ in range(20):
        s = random_state(rng)
        s.sf = True
        t = MachineState.from_json(s.to_json())
        assert t == s


# ---------------------------------------------------------------------------
# batch engine agrees with the scalar engine bit-for-bit
# ---------------------------------------------------------------------------


def _assert_lane_matches(res, i, scalar):
    got = lane_state(res, i)
    want = scalar.state
    assert got.regs == want.regs
    assert got.flags() == want.flags()
    if res.mem is not None:
        assert got.mem == want.mem
    assert res.halted(i) == scalar.halted
    assert int(res.backward[i]) == scalar.backward_jumps


def test_batch_matches_scalar_on_random_programs():
    rng = random.Random(4242)
    for _ in range(250):
        p = random_program(rng)
        lanes = [random_state(rng) for _ in range(16)]
        for s in lanes:
            s.set_reg("r9", rng.choice([0, 64, 128, 200]))
        regs = states_to_regs(lanes)
        mem = np.stack([np.frombuffer(bytes(s.mem), dtype=np.uint8) for s in lanes])
        bound = rng.choice([None, 4])
        res = run_batch(p, regs, mem, fuel=128, loop_bound=bound)
        for i, s in enumerate(lanes):
            scalar = execute(p, s, fuel=128, loop_bound=bound)
            _assert_lane_matches(res, i, scalar)


def test_batch_none_memory_means_zero_memory():
    p = parse(".f:\n  movzbl 0x3f(%r9), %eax\n  retq\n")
    res = run_batch(p, np.zeros((8, 4), dtype=np.uint64))
    assert (res.regs[Register.RAX] == 0).all()
    assert res.mem is not None  # program touches memory, so it materializes


def test_batch_skips_memory_plane_for_pure_register_programs():
    res = run_batch(ABS, np.zeros((8, 3), dtype=np.uint64))
    assert res.mem is None


def test_batch_abs_over_full_byte_domain():
    vals = np.arange(256, dtype=np.uint64)
    signed = np.where(vals < 128, vals, vals - 256)  # sign-extended bytes
    regs = np.zeros((8, 256), dtype=np.uint64)
    regs[Register.RDI] = signed.astype(np.uint64)
    res = run_batch(ABS, regs)
    expect = np.abs(signed.astype(np.int64)).astype(np.uint64)
    assert (res.regs[Register.RAX] == expect).all()
    assert (res.status == 1).all()
