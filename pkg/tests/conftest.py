"""Shared fixtures: a small built corpus and a warm-started policy model.

The warm model memorizes the cheaper verified rewrite (headroom witness) for
one entry and the compiler target for the rest, which is the smallest setup
where exploration actually finds and logs replacements deterministically.
"""

import pytest
import torch

from silolab.datagen import (
    build_entry,
    headroom_witnesses,
    make_abs_task,
    make_cell_task,
    make_identity_task,
    make_loop_task,
    make_select_task,
    make_sign_task,
)
from silolab.isa import parse
from silolab.model import (
    AdamState,
    ModelConfig,
    PolicyModel,
    ScheduleConfig,
    adam_step,
    batch_xent,
)
from silolab.tokens import detokenize, tokenize


def _build(eid, task, seed, rotation=0):
    entry, why = build_entry(task, eid, suite_seed=seed, rotation=rotation)
    assert entry is not None, (eid, why)
    return entry


@pytest.fixture(scope="session")
def corpus6():
    return [
        _build("abs32", make_abs_task(32), 1000),
        _build("sign32", make_sign_task(32), 1001, rotation=1),
        _build("sel32", make_select_task(32), 1002, rotation=2),
        _build("loop3", make_loop_task(32, trips=3), 1003, rotation=3),
        _build("cell32", make_cell_task(32), 1004),
        _build("ident32", make_identity_task(32), 1005),
    ]


@pytest.fixture(scope="session")
def warm4(corpus6):
    """(model, entries, witness_text) with the model overfit to emit the
    abs32 headroom witness for abs32 and f_ref for three other entries."""
    entries = [e for e in corpus6
               if e.id in ("abs32", "sign32", "sel32", "ident32")]
    abs_entry = entries[0]
    assert abs_entry.headroom_witness is not None
    witness = dict(headroom_witnesses(parse(abs_entry.f_ref)))[
        abs_entry.headroom_witness]
    pairs = []
    for e in entries:
        tgt = witness if e.id == "abs32" else parse(e.f_ref)
        pairs.append((tokenize(parse(e.f_s)), tokenize(tgt)))

    cfg = ModelConfig(layers=1, model_dim=64, heads=4, ff_dim=128, dropout=0.0)
    model = PolicyModel(cfg, init_seed=21)
    opt = AdamState()
    sched = ScheduleConfig(warmup=100, factor=2.0, model_dim=64)
    model.train()
    loss_val = float("inf")
    for _ in range(6_000):
        model.zero_grad(set_to_none=True)
        loss, _ = batch_xent(model, pairs)
        loss_val = float(loss.detach())
        if loss_val < 5e-4:
            break
        loss.backward()
        grads = {n: p.grad.detach().clone()
                 for n, p in model.named_parameters()}
        assert adam_step(model, grads, opt, sched).applied
    model.eval()
    assert loss_val < 5e-4, f"warm start failed to memorize (loss {loss_val})"
    # Report the witness as it reads after a token roundtrip: the encoding
    # carries no function name, so rewrites come back under the placeholder.
    return model, entries, str(detokenize(tokenize(witness)))


@pytest.fixture()
def warm_model(warm4):
    """A fresh copy of the warm model so tests can mutate parameters."""
    model, entries, witness = warm4
    clone = PolicyModel(model.config)
    clone.load_state_dict({k: v.detach().clone()
                           for k, v in model.state_dict().items()})
    clone.step = 0
    clone.eval()
    return clone
