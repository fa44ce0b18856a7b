"""Training procedures: supervised pre-training, self-imitation, REINFORCE.

The three learners share one model/optimizer stack and one discipline: every
source of randomness is a pure function of (seed, step, entry), so a run can
be replayed, resumed, or split across actor processes and still produce the
same replacement log.

Self-imitation (the dataset-replacement fine-tuner) treats the corpus as a
mutable view: exploration samples rewrites, the evaluation service scores
them, and a verified strictly-cheaper rewrite replaces that entry's training
target. The original corpus files are never touched; replacements live in the
run's state and its line-delimited log, which carries the full rewrite text so
every hop can be re-verified offline.
"""

from __future__ import annotations

import collections
import csv
import hashlib
import json
import math
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch

from .cost import ObjectiveConfig
from .datagen import CorpusEntry
from .isa import parse
from .model import (
    AdamState,
    PolicyModel,
    ScheduleConfig,
    adam_step,
    batch_xent,
    beam_decode,
    load_checkpoint,
    pad_batch,
    sample_batch,
    save_checkpoint,
)
from .tokens import PAD, tokenize

__all__ = [
    "BaselineTracker",
    "ReinforceConfig",
    "TrainState",
    "Replacement",
    "TrainingDiverged",
    "EvalServiceFailure",
    "StepStats",
    "response_objective",
    "EXPLORE_MAX_LEN",
    "PretrainReport",
    "FinetuneReport",
    "SelectionResult",
    "explore_indices",
    "train_indices",
    "sampling_seed",
    "subsample_entries",
    "init_train_state",
    "pretrain",
    "silo_step",
    "silo_update",
    "explore_lanes",
    "reinforce_step",
    "reinforce_update",
    "run_finetune",
    "superopt_proportion",
    "select_model",
]

EXPLORE_MAX_LEN = 384  # longer rewrites cost more than any reference already


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; last checkpoint stands."""


class EvalServiceFailure(RuntimeError):
    """Transport-level evaluation failure (timeouts, broken pipe, bad reply)."""


def dataclass_dict(cfg) -> dict:
    import dataclasses
    return dataclasses.asdict(cfg)


@dataclass(frozen=True)
class Replacement:
    entry_id: str
    step: int
    old_cost: float
    new_cost: float
    rewrite: str  # canonical program text, re-verifiable offline

    def to_json(self) -> dict:
        return {"entry_id": self.entry_id, "step": self.step,
                "old_cost": self.old_cost, "new_cost": self.new_cost,
                "rewrite": self.rewrite}

    @classmethod
    def from_json(cls, obj: dict) -> "Replacement":
        return cls(obj["entry_id"], obj["step"], obj["old_cost"],
                   obj["new_cost"], obj["rewrite"])


@dataclass(frozen=True)
class ReinforceConfig:
    lam: float = 50_000.0
    bit_rate: float = 100.0
    clip: float = 100_000.0
    beta: float = 0.01
    schedule_factor: float = 0.01  # appendix big-corpus value; 0.0025 for tiny sets

    def __post_init__(self):
        if min(self.lam, self.bit_rate, self.clip, self.schedule_factor) <= 0:
            raise ValueError("reinforce constants must be positive")
        if self.beta < 0:
            raise ValueError("entropy weight must be non-negative")

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(lam=self.lam, bit_rate=self.bit_rate,
                               clip=self.clip)


class BaselineTracker:
    """Per-program running baseline over the last `capacity` objective values.

    The advantage for a fresh sample is computed against the buffer as it
    stands (the sample itself is recorded afterwards); with fewer than two
    recorded values the advantage is 0 by convention.
    """

    def __init__(self, capacity: int = 256, eps: float = 1e-6):
        self.capacity = capacity
        self.eps = eps
        self._buf: dict[str, collections.deque] = {}

    def advantage(self, entry_id: str, j: float) -> float:
        buf = self._buf.get(entry_id)
        if buf is None or len(buf) < 2:
            return 0.0
        mean = statistics.fmean(buf)
        sd = statistics.pstdev(buf, mu=mean)
        return (j - mean) / max(sd, self.eps)

    def record(self, entry_id: str, j: float) -> None:
        buf = self._buf.setdefault(entry_id,
                                   collections.deque(maxlen=self.capacity))
        buf.append(j)

    def stats(self, entry_id: str) -> tuple[int, float, float]:
        buf = self._buf.get(entry_id)
        if not buf:
            return 0, 0.0, 0.0
        mean = statistics.fmean(buf)
        return len(buf), mean, statistics.pstdev(buf, mu=mean)


# --- deterministic schedules ---------------------------------------------------
#
# These three functions are the shared contract between the sequential loop
# and the actor/learner runtime: both sides derive batches and sampling seeds
# from them, which is what makes the degenerate-concurrency runs agree.


def explore_indices(seed: int, step: int, n: int, k: int) -> list[int]:
    rng = random.Random(f"{seed}:explore:{step}")
    return rng.sample(range(n), min(k, n))


def train_indices(seed: int, step: int, n: int, k: int) -> list[int]:
    rng = random.Random(f"{seed}:train:{step}")
    return rng.sample(range(n), min(k, n))


def sampling_seed(seed: int, step: int, entry_id: str, draw: int = 0) -> int:
    digest = hashlib.blake2b(f"{seed}:{step}:{entry_id}:{draw}".encode(),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little")


def subsample_entries(entries: Sequence[CorpusEntry], n: int,
                      seed: int) -> list[CorpusEntry]:
    """Fixed-seed subsample, drawn once and shared across checkpoints."""
    if n >= len(entries):
        return list(entries)
    rng = random.Random(f"{seed}:subsample")
    return rng.sample(list(entries), n)


# --- train state ------------------------------------------------------------------


@dataclass
class TrainState:
    model: PolicyModel
    opt: AdamState
    sched: ScheduleConfig
    entries: list[CorpusEntry]
    targets: dict[str, tuple[str, float]]  # entry id -> (current text, cost)
    seed: int = 0
    step: int = 0
    replacements: list[Replacement] = field(default_factory=list)
    src_tokens: dict[str, list[int]] = field(default_factory=dict)
    tgt_tokens: dict[str, list[int]] = field(default_factory=dict)

    @property
    def entry_ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def current_cost(self, entry_id: str) -> float:
        return self.targets[entry_id][1]

    def replace_target(self, entry_id: str, text: str, cost: float) -> Replacement:
        old = self.targets[entry_id][1]
        if cost >= old:
            raise ValueError("replacement must strictly decrease cost")
        rec = Replacement(entry_id, self.step, old, cost, text)
        # Both maps updated together so a training batch never sees a
        # half-replaced entry.
        self.targets[entry_id] = (text, cost)
        self.tgt_tokens[entry_id] = tokenize(parse(text))
        self.replacements.append(rec)
        return rec


def init_train_state(model: PolicyModel, entries: Sequence[CorpusEntry], *,
                     seed: int = 0, factor: float = 0.50,
                     warmup: int = 2_000,
                     reset_schedule: bool = True) -> TrainState:
    """Set up fine-tuning state over a corpus.

    Fine-tuning gets a fresh optimizer and, by default, a schedule restarted
    from step 0 (the warmup is re-run at the fine-tune factor).
    """
    if not entries:
        raise ValueError("corpus is empty")
    if reset_schedule:
        model.step = 0
    sched = ScheduleConfig(warmup=warmup, factor=factor,
                           model_dim=model.config.model_dim)
    state = TrainState(model=model, opt=AdamState(), sched=sched,
                       entries=list(entries), targets={}, seed=seed)
    for e in state.entries:
        state.targets[e.id] = (e.f_ref, e.cost_ref)
        state.src_tokens[e.id] = tokenize(parse(e.f_s))
        state.tgt_tokens[e.id] = tokenize(parse(e.f_ref))
    return state


# --- supervised pre-training ---------------------------------------------------------


@dataclass
class PretrainReport:
    steps: int
    final_loss: float
    dev_token_acc: float
    dev_exact: float
    metrics: list[dict]


def _epoch_order(seed: int, epoch: int, n: int) -> list[int]:
    order = list(range(n))
    random.Random(f"{seed}:order:{epoch}").shuffle(order)
    return order


def _batch_for_step(seed: int, step: int, n: int, batch_size: int) -> list[int]:
    per_epoch = max(1, math.ceil(n / batch_size))
    epoch, slot = divmod(step, per_epoch)
    order = _epoch_order(seed, epoch, n)
    return order[slot * batch_size:(slot + 1) * batch_size]


def _supervised_step(model, opt, sched, pairs) -> tuple[float, float]:
    model.train()
    model.zero_grad(set_to_none=True)
    loss, stats = batch_xent(model, pairs)
    loss_val = float(loss.detach())
    if not math.isfinite(loss_val):
        raise TrainingDiverged(f"non-finite loss at optimizer step {model.step}")
    loss.backward()
    grads = {n: p.grad.detach() if p.grad is not None else torch.zeros_like(p)
             for n, p in model.named_parameters()}
    report = adam_step(model, grads, opt, sched)
    if not report.applied:
        raise TrainingDiverged(report.reason)
    return loss_val, stats.accuracy


def _dev_eval(model, pairs, batch_size=32) -> tuple[float, float]:
    """Held-out token accuracy (teacher-forced) and greedy exact-match."""
    model.eval()
    correct = total = exact = 0
    cap = min(model.config.max_len, max(len(t) for _, t in pairs) + 8)
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo:lo + batch_size]
        with torch.no_grad():
            _, stats = batch_xent(model, chunk)
        correct += stats.correct
        total += stats.total
        outs = sample_batch(model, [s for s, _ in chunk], temperature=0.0,
                            seeds=list(range(len(chunk))), max_len=cap)
        exact += sum(out == t for out, (_, t) in zip(outs, chunk))
    return correct / max(total, 1), exact / len(pairs)


class _MetricsFile:
    FIELDS = ["step", "loss", "token_acc", "replacements", "dev_proportion",
              "dev_token_acc", "dev_exact"]

    def __init__(self, path: Path | None):
        self.rows: list[dict] = []
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", newline="")
            self._writer = csv.DictWriter(self._fh, fieldnames=self.FIELDS)
            self._writer.writeheader()

    def write(self, **row):
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow(row)
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def pretrain(model: PolicyModel, entries: Sequence[CorpusEntry], steps: int, *,
             batch_size: int = 32, seed: int = 0,
             dev_entries: Sequence[CorpusEntry] = (),
             eval_every: int = 250, checkpoint_every: int = 1_000,
             run_dir: Path | None = None,
             sched: ScheduleConfig | None = None,
             opt: AdamState | None = None,
             progress: Callable[[str], None] | None = None) -> PretrainReport:
    """Cross-entropy training of f_ref given f_s over shuffled minibatches.

    Batch composition is a pure function of (seed, step), so resuming from a
    checkpoint with the same seed reproduces the remaining trajectory.
    """
    if not entries:
        raise ValueError("corpus is empty")
    pairs = [(tokenize(parse(e.f_s)), tokenize(parse(e.f_ref))) for e in entries]
    dev_pairs = [(tokenize(parse(e.f_s)), tokenize(parse(e.f_ref)))
                 for e in dev_entries]
    opt = opt or AdamState()
    sched = sched or ScheduleConfig(model_dim=model.config.model_dim)
    metrics = _MetricsFile(run_dir / "metrics.csv" if run_dir else None)
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        snapshot = {"phase": "pretrain", "steps": steps, "batch_size": batch_size,
                    "seed": seed, "eval_every": eval_every,
                    "checkpoint_every": checkpoint_every,
                    "schedule": {"warmup": sched.warmup, "factor": sched.factor},
                    "model": dataclass_dict(model.config)}
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))

    def save(tag_step):
        if run_dir is not None:
            save_checkpoint(run_dir / "checkpoints" / f"step-{tag_step:06d}.ckpt",
                            model, opt, extra={"phase": "pretrain",
                                               "train_step": tag_step})

    loss_val = float("nan")
    dev_acc = dev_exact = 0.0
    try:
        for k in range(model.step, steps):
            batch = [pairs[i] for i in _batch_for_step(seed, k, len(pairs),
                                                       batch_size)]
            loss_val, acc = _supervised_step(model, opt, sched, batch)
            row = {"step": k + 1, "loss": round(loss_val, 6),
                   "token_acc": round(acc, 6)}
            if dev_pairs and (k + 1) % eval_every == 0:
                dev_acc, dev_exact = _dev_eval(model, dev_pairs)
                row["dev_token_acc"] = round(dev_acc, 6)
                row["dev_exact"] = round(dev_exact, 6)
                if progress:
                    progress(f"step {k + 1}: loss {loss_val:.4f} "
                             f"dev acc {dev_acc:.3f} exact {dev_exact:.3f}")
            metrics.write(**row)
            if (k + 1) % checkpoint_every == 0:
                save(k + 1)
        if dev_pairs:
            dev_acc, dev_exact = _dev_eval(model, dev_pairs)
        if steps % checkpoint_every != 0:
            save(steps)
    finally:
        metrics.close()
    return PretrainReport(steps=steps, final_loss=loss_val,
                          dev_token_acc=dev_acc, dev_exact=dev_exact,
                          metrics=metrics.rows)


# --- evaluation-service helpers ----------------------------------------------------


def response_objective(resp, ocfg: ObjectiveConfig) -> float:
    """Reshape an evaluation response into j = min(clip, c + lam*v + rate*bits)."""
    if not resp.parse_ok or resp.c_total is None:
        return ocfg.clip
    raw = resp.c_total + ocfg.lam * resp.v + ocfg.bit_rate * (resp.bit_diff or 0.0)
    return min(ocfg.clip, raw)


@dataclass
class StepStats:
    step: int
    loss: float = float("nan")
    token_acc: float = float("nan")
    explored: int = 0
    replaced: list[Replacement] = field(default_factory=list)
    eval_dropped: bool = False
    mean_j: float = float("nan")
    mean_advantage: float = float("nan")
    skipped_update: bool = False


# --- SILO ---------------------------------------------------------------------------


def silo_step(state: TrainState, eval_svc, *, explore_size: int = 16,
              train_size: int = 32, temperature: float = 1.0,
              samples_per_spec: int = 1,
              max_sample_len: int = EXPLORE_MAX_LEN) -> StepStats:
    """One exploration + learning round of dataset-replacement fine-tuning.

    Exploration samples a rewrite per chosen entry and replaces that entry's
    training target when the rewrite verifies equivalent at strictly lower
    cost. Learning then takes one supervised step on the current targets. An
    evaluation-service failure drops the whole exploration batch but the
    learning step still runs.
    """
    s = state.step
    lanes = explore_lanes(state.seed, state.entry_ids, s, explore_size,
                          samples_per_spec)
    dropped = False
    try:
        sampled = sample_batch(
            state.model,
            [state.src_tokens[eid] for eid, _ in lanes],
            temperature=temperature,
            seeds=[sampling_seed(state.seed, s, eid, d) for eid, d in lanes],
            max_len=max_sample_len)
        responses = [eval_svc.evaluate(eid, toks)
                     for (eid, _), toks in zip(lanes, sampled)]
    except EvalServiceFailure:
        # The whole exploration batch is dropped; nothing was applied yet.
        dropped = True
        responses = []
        lanes = []
    stats = silo_update(state, [eid for eid, _ in lanes], responses,
                        train_size=train_size)
    stats.eval_dropped = dropped
    return stats


def silo_update(state: TrainState, entry_ids: list[str], responses,
                *, train_size: int = 32) -> StepStats:
    """Replacement plus one supervised step for pre-evaluated samples.

    Split out of silo_step so the actor/learner runtime can feed it results
    gathered by actors and end up with the same update.
    """
    s = state.step
    stats = StepStats(step=s + 1)
    silo_apply(state, entry_ids, responses, stats)
    silo_learn(state, train_size, stats)
    state.step = s + 1
    return stats


def explore_lanes(seed: int, entry_ids: Sequence[str], step: int,
                  explore_size: int,
                  samples_per_spec: int = 1) -> list[tuple[str, int]]:
    """The (entry id, draw) lanes explored at a step.

    A pure function of static run data, so runtime actors can recompute the
    lane list for any step without seeing the learner's state.
    """
    chosen = explore_indices(seed, step, len(entry_ids), explore_size)
    return [(entry_ids[i], d)
            for i in chosen for d in range(samples_per_spec)]


def silo_apply(state: TrainState, entry_ids: list[str], responses,
               stats: StepStats) -> None:
    """Apply exploration results in lane order: replace on v=0 and strict '<'."""
    for eid, resp in zip(entry_ids, responses):
        stats.explored += 1
        if not resp.parse_ok or resp.v != 0:
            continue
        if resp.c_total < state.current_cost(eid):
            stats.replaced.append(
                state.replace_target(eid, resp.text, resp.c_total))


def silo_learn(state: TrainState, train_size: int, stats: StepStats) -> None:
    """One supervised step on the current targets (uniform batch over D)."""
    idx = train_indices(state.seed, state.step, len(state.entries), train_size)
    batch = [(state.src_tokens[state.entries[i].id],
              state.tgt_tokens[state.entries[i].id]) for i in idx]
    stats.loss, stats.token_acc = _supervised_step(state.model, state.opt,
                                                   state.sched, batch)


# --- REINFORCE -------------------------------------------------------------------------


def reinforce_step(state: TrainState, eval_svc, cfg: ReinforceConfig,
                   tracker: BaselineTracker, *, batch_size: int = 16,
                   temperature: float = 1.0,
                   max_sample_len: int = EXPLORE_MAX_LEN) -> StepStats:
    """One policy-gradient step on j = c + lam*v (+ bit penalty), with baseline.

    The loss is sum_t log p(a_t) * A - beta * H summed over each sampled
    sequence and averaged over the batch; A is (j - mean)/max(sd, eps) from
    the per-program tracker, which is updated with j only after use. When
    every advantage is zero and beta is zero there is nothing to descend, so
    the parameter update is skipped outright.
    """
    s = state.step
    lanes = explore_lanes(state.seed, state.entry_ids, s, batch_size)
    sampled = sample_batch(
        state.model,
        [state.src_tokens[eid] for eid, _ in lanes],
        temperature=temperature,
        seeds=[sampling_seed(state.seed, s, eid, d) for eid, d in lanes],
        max_len=max_sample_len)
    responses = [eval_svc.evaluate(eid, toks)
                 for (eid, _), toks in zip(lanes, sampled)]
    return reinforce_update(state, cfg, tracker,
                            [eid for eid, _ in lanes], sampled, responses)


def reinforce_update(state: TrainState, cfg: ReinforceConfig,
                     tracker: BaselineTracker, entry_ids: list[str],
                     sampled: list[list[int]], responses) -> StepStats:
    """Baseline, advantage, and descent for pre-evaluated samples.

    Split out of reinforce_step so the actor/learner runtime can feed it
    results gathered by actors and end up with the same update.
    """
    s = state.step
    stats = StepStats(step=s + 1)
    ocfg = cfg.objective_config()
    js, advantages = [], []
    for eid, resp in zip(entry_ids, responses):
        j = response_objective(resp, ocfg)
        advantages.append(tracker.advantage(eid, j))
        tracker.record(eid, j)
        js.append(j)
    stats.explored = len(entry_ids)
    stats.mean_j = statistics.fmean(js) if js else float("nan")
    stats.mean_advantage = statistics.fmean(advantages) if advantages else 0.0

    if all(a == 0.0 for a in advantages) and cfg.beta == 0.0:
        stats.skipped_update = True
        stats.loss = 0.0
        state.step = s + 1
        return stats

    model = state.model
    model.train()
    model.zero_grad(set_to_none=True)
    src, src_pad = pad_batch([state.src_tokens[eid] for eid in entry_ids])
    tgt, _ = pad_batch(sampled)
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    logits = model(src, tgt_in, src_pad)
    logprobs = torch.log_softmax(logits, dim=-1)
    keep = tgt_out.ne(PAD)
    picked = logprobs.gather(-1, tgt_out.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    seq_logp = (picked * keep).sum(dim=1)
    adv = torch.tensor(advantages, dtype=seq_logp.dtype)
    loss = (adv * seq_logp).mean()
    if cfg.beta > 0.0:
        entropy = -(logprobs.exp() * logprobs).sum(dim=-1)
        loss = loss - cfg.beta * (entropy * keep).sum(dim=1).mean()
    loss_val = float(loss.detach())
    if not math.isfinite(loss_val):
        raise TrainingDiverged(f"non-finite policy loss at step {s + 1}")
    loss.backward()
    grads = {n: p.grad.detach() if p.grad is not None else torch.zeros_like(p)
             for n, p in model.named_parameters()}
    report = adam_step(model, grads, state.opt, state.sched)
    if not report.applied:
        raise TrainingDiverged(report.reason)
    stats.loss = loss_val
    state.step = s + 1
    return stats


# --- evaluation / selection -----------------------------------------------------------


def superopt_proportion(model: PolicyModel, entries: Sequence[CorpusEntry],
                        eval_svc, *, width: int = 10,
                        max_len: int | None = None) -> tuple[float, dict]:
    """Best-of-beam superoptimized proportion against ORIGINAL reference costs.

    An entry counts when any of the `width` beam hypotheses verifies (v=0)
    at a cost strictly below the entry's recorded compiler-target cost. The
    comparison never looks at replaced targets, so fine-tuned models cannot
    grade themselves.
    """
    per_entry: dict[str, dict] = {}
    wins = 0
    for entry in entries:
        src = tokenize(parse(entry.f_s))
        hyps = beam_decode(model, src, width=width,
                           max_len=max_len or EXPLORE_MAX_LEN)
        best_cost, best_text = None, None
        for hyp in hyps:
            resp = eval_svc.evaluate(entry.id, list(hyp.tokens))
            if resp.parse_ok and resp.v == 0 and resp.c_total is not None:
                if best_cost is None or resp.c_total < best_cost:
                    best_cost, best_text = resp.c_total, resp.text
        super_opt = best_cost is not None and best_cost < entry.cost_ref
        wins += super_opt
        per_entry[entry.id] = {"best_cost": best_cost, "best_text": best_text,
                               "cost_ref": entry.cost_ref,
                               "superoptimized": super_opt,
                               "candidates": len(hyps)}
    return wins / max(len(entries), 1), per_entry


@dataclass
class SelectionResult:
    best_path: Path
    best_step: int
    best_proportion: float
    series: list[tuple[int, float]]  # (train step, dev proportion)


def select_model(checkpoint_paths: Sequence[Path],
                 dev_entries: Sequence[CorpusEntry], eval_svc, *,
                 subsample: int = 100, seed: int = 0,
                 width: int = 10) -> SelectionResult:
    """Pick the checkpoint with the highest dev superoptimized proportion.

    The dev subsample is drawn once with a fixed seed and shared by every
    checkpoint; ties go to the later training step.
    """
    if not checkpoint_paths:
        raise ValueError("need at least one checkpoint")
    sub = subsample_entries(dev_entries, subsample, seed)
    best = None
    series: list[tuple[int, float]] = []
    scored: list[tuple[int, float, Path]] = []
    for path in checkpoint_paths:
        model, _, extra = load_checkpoint(path)
        step = int(extra.get("train_step", model.step))
        proportion, _ = superopt_proportion(model, sub, eval_svc, width=width)
        scored.append((step, proportion, Path(path)))
    scored.sort(key=lambda t: t[0])
    for step, proportion, path in scored:
        series.append((step, proportion))
        if best is None or proportion >= best[1]:
            best = (step, proportion, path)
    return SelectionResult(best_path=best[2], best_step=best[0],
                           best_proportion=best[1], series=series)


# --- fine-tune driver ---------------------------------------------------------------


@dataclass
class FinetuneReport:
    algo: str
    steps: int
    replacements: int
    dev_series: list[tuple[int, float]]
    final_loss: float
    checkpoints: list[Path]


def run_finetune(state: TrainState, eval_svc, algo: str, steps: int, *,
                 run_dir: Path | None = None,
                 explore_size: int = 16, train_size: int = 32,
                 batch_size: int = 16, temperature: float = 1.0,
                 samples_per_spec: int = 1,
                 dev_entries: Sequence[CorpusEntry] = (),
                 dev_every: int = 250, dev_subsample: int = 100,
                 dev_seed: int = 0, dev_width: int = 10,
                 checkpoint_every: int = 1_000,
                 rcfg: ReinforceConfig | None = None,
                 config_snapshot: dict | None = None,
                 progress: Callable[[str], None] | None = None) -> FinetuneReport:
    """Sequential fine-tuning loop shared by the CLI and the acceptance runs.

    Writes the run directory layout: config.json, checkpoints every
    `checkpoint_every` steps, replacements.jsonl (one JSON object per line),
    metrics.csv, and dev_series.csv with the Fig.-4-style proportion curve.
    """
    if algo not in ("silo", "reinforce"):
        raise ValueError(f"unknown algorithm {algo!r}")
    rcfg = rcfg or ReinforceConfig()
    tracker = BaselineTracker()
    dev_sub = subsample_entries(dev_entries, dev_subsample, dev_seed) \
        if dev_entries else []
    metrics = _MetricsFile(run_dir / "metrics.csv" if run_dir else None)
    repl_fh = None
    checkpoints: list[Path] = []
    dev_series: list[tuple[int, float]] = []
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        snapshot = {"phase": "finetune", "algo": algo, "steps": steps,
                    "seed": state.seed, "explore_size": explore_size,
                    "train_size": train_size, "batch_size": batch_size,
                    "temperature": temperature,
                    "samples_per_spec": samples_per_spec,
                    "dev_every": dev_every, "dev_subsample": dev_subsample,
                    "checkpoint_every": checkpoint_every,
                    "schedule": {"warmup": state.sched.warmup,
                                 "factor": state.sched.factor},
                    "reinforce": dataclass_dict(rcfg) if algo == "reinforce"
                    else None,
                    "model": dataclass_dict(state.model.config)}
        snapshot.update(config_snapshot or {})
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))
        repl_fh = open(run_dir / "replacements.jsonl", "w")

    def save_ckpt(tag_step):
        if run_dir is None:
            return
        path = run_dir / "checkpoints" / f"step-{tag_step:06d}.ckpt"
        save_checkpoint(path, state.model, state.opt,
                        extra={"phase": "finetune", "algo": algo,
                               "train_step": tag_step})
        checkpoints.append(path)

    loss_val = float("nan")
    try:
        while state.step < steps:
            if algo == "silo":
                st = silo_step(state, eval_svc, explore_size=explore_size,
                               train_size=train_size, temperature=temperature,
                               samples_per_spec=samples_per_spec)
                if repl_fh is not None:
                    for rec in st.replaced:
                        repl_fh.write(json.dumps(rec.to_json(),
                                                 sort_keys=True) + "\n")
                    repl_fh.flush()
            else:
                st = reinforce_step(state, eval_svc, rcfg, tracker,
                                    batch_size=batch_size,
                                    temperature=temperature)
            loss_val = st.loss
            row = {"step": st.step, "loss": round(st.loss, 6),
                   "replacements": len(st.replaced)}
            if dev_sub and st.step % dev_every == 0:
                proportion, _ = superopt_proportion(state.model, dev_sub,
                                                    eval_svc, width=dev_width)
                dev_series.append((st.step, proportion))
                row["dev_proportion"] = round(proportion, 6)
                if progress:
                    progress(f"step {st.step}: loss {st.loss:.4f} "
                             f"dev proportion {proportion:.3f} "
                             f"replacements {len(state.replacements)}")
            metrics.write(**row)
            if st.step % checkpoint_every == 0:
                save_ckpt(st.step)
        if steps % checkpoint_every != 0:
            save_ckpt(steps)
        if run_dir is not None and dev_series:
            with open(run_dir / "dev_series.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "proportion"])
                w.writerows(dev_series)
    finally:
        metrics.close()
        if repl_fh is not None:
            repl_fh.close()
    return FinetuneReport(algo=algo, steps=steps,
                          replacements=len(state.replacements),
                          dev_series=dev_series, final_loss=loss_val,
                          checkpoints=checkpoints)
