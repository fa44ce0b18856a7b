"""Evaluation service and actor/learner orchestration.

Exploration decomposes into three roles: actors sample rewrites from
immutable parameter snapshots, an evaluation service scores each rewrite
(verdict plus cost), and a single learner folds the scored results into
parameter and dataset updates. Lane scheduling and sampling randomness are
pure functions of (run seed, step, entry, draw) and sampling is
batch-invariant, so the decomposition is an implementation detail: with a
fresh snapshot required every step the runtime reproduces the sequential
trainer lane for lane, and with a staleness allowance the same code runs
pipelined.

Evaluation responses are pure functions of (corpus entry, rewrite) and are
memoized, so repeated requests return the identical response object. The
optional socket transport speaks line-delimited JSON over a Unix socket; the
schema is documented in docs/wire-protocol.md.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping

import torch

from .cost import LatencyTable, objective
from .isa import AsmError, parse
from .model import ModelConfig, PolicyModel, sample_batch, save_checkpoint
from .tokens import DetokenizeError, tokenize
from .train import (
    EXPLORE_MAX_LEN,
    BaselineTracker,
    EvalServiceFailure,
    ReinforceConfig,
    StepStats,
    TrainState,
    explore_lanes,
    reinforce_update,
    sampling_seed,
    silo_update,
)
from .verify import Verdict, coerce_program

__all__ = [
    "PROTO_VERSION",
    "EvalResponse",
    "EvalService",
    "EvalServer",
    "SocketEvalClient",
    "serve_eval",
    "ActorState",
    "SnapshotBox",
    "ResultMsg",
    "model_snapshot",
    "run_actor",
    "run_learner",
    "run_actor_learner",
    "bench_actors",
]

log = logging.getLogger("silolab.runtime")

PROTO_VERSION = 1


# --- evaluation service ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalResponse:
    """Verdict and cost for one rewrite against one corpus entry.

    Cost fields are None when the rewrite does not parse. `text` echoes the
    canonical rendering of the parsed rewrite so consumers can store it
    without re-detokenizing; it is as pure as the rest of the response.
    """

    parse_ok: bool
    verdict: str
    v: int
    c_all: float | None = None
    c_exe: float | None = None
    c_total: float | None = None
    bit_diff: float | None = None
    wall_ms: float = 0.0
    text: str | None = None
    proto: int = PROTO_VERSION

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalResponse":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: obj[k] for k in fields if k in obj})


class EvalService:
    """Scores rewrites against corpus entries.

    Per-entry context (parsed source, regenerated test suite, observability
    contract, verifier config) is materialized lazily. Responses are memoized
    on the canonical program text, so a repeated request returns the
    identical response object; unparseable candidates are memoized on their
    raw form. Safe to share across threads: the memo is lock-guarded and the
    verification itself runs outside the lock, with first-write-wins on a
    race so purity is preserved.
    """

    def __init__(self, entries, *, lat: LatencyTable | None = None, **verify_overrides):
        self._entries = {e.id: e for e in entries}
        self._lat = lat or LatencyTable.default()
        self._over = dict(verify_overrides)
        self._ctx: dict[str, tuple] = {}
        self._memo: dict[tuple[str, str], EvalResponse] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def _context(self, entry_id: str) -> tuple:
        with self._lock:
            ctx = self._ctx.get(entry_id)
        if ctx is not None:
            return ctx
        e = self._entries[entry_id]
        ctx = (parse(e.f_s), e.suite(), e.live_out, e.verify_config(**self._over))
        with self._lock:
            return self._ctx.setdefault(entry_id, ctx)

    def evaluate(self, entry_id: str, candidate) -> EvalResponse:
        """Score a rewrite given as token ids, program text, or a Program."""
        if entry_id not in self._entries:
            raise EvalServiceFailure(f"unknown entry {entry_id!r}")
        t0 = time.monotonic()
        try:
            prog = coerce_program(candidate)
            key = (entry_id, str(prog))
        except (AsmError, DetokenizeError):
            prog = None
            raw = candidate if isinstance(candidate, str) else \
                " ".join(str(t) for t in candidate)
            key = (entry_id, "\x00raw\x00" + raw)
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        if prog is None:
            resp = EvalResponse(parse_ok=False, verdict=Verdict.UNPARSEABLE.value,
                                v=1, wall_ms=(time.monotonic() - t0) * 1e3)
        else:
            spec, suite, lo, vcfg = self._context(entry_id)
            rep = objective(prog, spec, suite, lo, vcfg, self._lat)
            resp = EvalResponse(parse_ok=True, verdict=rep.verdict.value, v=rep.v,
                                c_all=rep.cost.c_all, c_exe=rep.cost.c_exe,
                                c_total=rep.cost.c_total, bit_diff=rep.mean_bits,
                                wall_ms=(time.monotonic() - t0) * 1e3,
                                text=str(prog))
        with self._lock:
            return self._memo.setdefault(key, resp)


# --- socket transport -----------------------------------------------------------------


def _handle_request(svc: EvalService, obj) -> dict:
    """One request object in, one response object out; errors stay structured."""
    rid = obj.get("id") if isinstance(obj, dict) else None
    fail = lambda msg: {"proto": PROTO_VERSION, "id": rid, "ok": False, "error": msg}
    if not isinstance(obj, dict):
        return fail("request must be a JSON object")
    if obj.get("proto") != PROTO_VERSION:
        return fail(f"unsupported protocol version {obj.get('proto')!r}")
    entry_id = obj.get("entry_id")
    if not isinstance(entry_id, str):
        return fail("missing entry_id")
    if "tokens" in obj:
        cand = obj["tokens"]
        if not isinstance(cand, list) or not all(isinstance(t, int) for t in cand):
            return fail("tokens must be a list of ints")
    elif "text" in obj:
        cand = obj["text"]
        if not isinstance(cand, str):
            return fail("text must be a string")
    else:
        return fail("request needs tokens or text")
    try:
        resp = svc.evaluate(entry_id, cand)
    except EvalServiceFailure as e:
        return fail(str(e))
    except Exception as e:  # noqa: BLE001  defensive: the service must not die
        log.exception("evaluation failed for entry %s", entry_id)
        return fail(f"internal error: {e}")
    return {"proto": PROTO_VERSION, "id": rid, "ok": True, "response": resp.to_json()}


class EvalServer:
    """Unix-socket evaluation server speaking line-delimited JSON.

    Each connection may carry any number of requests; a malformed request
    produces a structured error line and the connection (and server) live on.
    Concurrent evaluation is bounded by `workers`.
    """

    def __init__(self, svc: EvalService, socket_path, *, workers: int = 4):
        self.svc = svc
        self.socket_path = str(socket_path)
        self._sem = threading.BoundedSemaphore(max(1, workers))
        outer = self

        class _Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for line in self.rfile:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line.decode("utf-8"))
                        reply = None
                    except (UnicodeDecodeError, json.JSONDecodeError) as e:
                        reply = {"proto": PROTO_VERSION, "id": None, "ok": False,
                                 "error": f"bad request line: {e}"}
                    if reply is None:
                        with outer._sem:
                            reply = _handle_request(outer.svc, obj)
                    self.wfile.write(json.dumps(reply).encode("utf-8") + b"\n")
                    self.wfile.flush()

        class _Server(socketserver.ThreadingUnixStreamServer):
            daemon_threads = True
            allow_reuse_address = True

        Path(self.socket_path).unlink(missing_ok=True)
        self._server = _Server(self.socket_path, _Handler)
        self._thread: threading.Thread | None = None

    def start(self) -> "EvalServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="eval-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        Path(self.socket_path).unlink(missing_ok=True)

    def evaluate(self, entry_id: str, candidate) -> EvalResponse:
        """In-process shortcut past the socket, for convenience and tests."""
        return self.svc.evaluate(entry_id, candidate)

    def __enter__(self) -> "EvalServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


class SocketEvalClient:
    """Client for EvalServer; raises EvalServiceFailure on any transport or
    server-reported error so callers treat both uniformly."""

    def __init__(self, socket_path, timeout_s: float = 30.0):
        self.socket_path = str(socket_path)
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.settimeout(timeout_s)
        try:
            self._sock.connect(self.socket_path)
        except OSError as e:
            raise EvalServiceFailure(f"cannot connect to {socket_path}: {e}") from e
        self._file = self._sock.makefile("rwb")
        self._next_id = 0
        self._lock = threading.Lock()

    def evaluate(self, entry_id: str, candidate) -> EvalResponse:
        req: dict = {"proto": PROTO_VERSION, "entry_id": entry_id}
        if isinstance(candidate, str):
            req["text"] = candidate
        else:
            req["tokens"] = [int(t) for t in candidate]
        with self._lock:
            self._next_id += 1
            req["id"] = self._next_id
            try:
                self._file.write(json.dumps(req).encode("utf-8") + b"\n")
                self._file.flush()
                line = self._file.readline()
            except OSError as e:
                raise EvalServiceFailure(f"transport error: {e}") from e
            if not line:
                raise EvalServiceFailure("server closed the connection")
            try:
                obj = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise EvalServiceFailure(f"bad reply: {e}") from e
            if obj.get("id") != req["id"]:
                raise EvalServiceFailure("reply id mismatch")
        if not obj.get("ok"):
            raise EvalServiceFailure(obj.get("error", "unspecified server error"))
        return EvalResponse.from_json(obj["response"])

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "SocketEvalClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_eval(entries, *, socket_path=None, workers: int = 4,
               lat: LatencyTable | None = None, **verify_overrides):
    """Build an evaluation-service handle over a corpus.

    Without a socket path the handle is the in-process EvalService itself.
    With one, a threaded Unix-socket server is started and returned; connect
    SocketEvalClient instances to it (one per consumer thread).
    """
    svc = EvalService(entries, lat=lat, **verify_overrides)
    if socket_path is None:
        return svc
    return EvalServer(svc, socket_path, workers=workers).start()


# --- parameter snapshots --------------------------------------------------------------


def model_snapshot(model: PolicyModel) -> dict[str, torch.Tensor]:
    """Detached copy of the parameters (and persistent buffers) of a model."""
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


@dataclass(frozen=True)
class ActorState:
    """What an actor samples from: an immutable parameter snapshot, its
    version (the learner step it was published at), and this actor's stream
    id. Sampling randomness is keyed by (run seed, step, entry, draw), not by
    the stream id; the id selects which lanes the actor owns and labels its
    results for the staleness audit."""

    config: ModelConfig
    snapshot: Mapping[str, torch.Tensor]
    version: int
    stream_id: int = 0


class SnapshotBox:
    """Single-writer, many-reader versioned snapshot exchange.

    The learner publishes after every update; actors either poll for a newer
    version (non-blocking, the default sync-if-available behavior) or block
    until a minimum version exists (how a staleness bound is enforced).
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._version = -1
        self._snapshot: dict[str, torch.Tensor] | None = None

    @property
    def version(self) -> int:
        with self._cond:
            return self._version

    def publish(self, version: int, model: PolicyModel) -> None:
        snap = model_snapshot(model)
        with self._cond:
            if version < self._version:
                raise ValueError("snapshot versions must not go backwards")
            self._version = version
            self._snapshot = snap
            self._cond.notify_all()

    def poll(self, newer_than: int) -> tuple[int, Mapping[str, torch.Tensor]] | None:
        with self._cond:
            if self._snapshot is not None and self._version > newer_than:
                return self._version, self._snapshot
            return None

    def wait(self, min_version: int = 0,
             stop: threading.Event | None = None,
             ) -> tuple[int, Mapping[str, torch.Tensor]] | None:
        """Latest (version, snapshot) once version >= min_version; None if
        stopped while waiting."""
        with self._cond:
            while self._snapshot is None or self._version < min_version:
                if stop is not None and stop.is_set():
                    return None
                self._cond.wait(timeout=0.05)
            return self._version, self._snapshot


# --- actors ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultMsg:
    """One evaluated sample on its way to the learner.

    request_id identifies (step, lane) so retries after an actor restart
    deduplicate; snapshot_version records which parameters produced the
    sample (staleness audit). response is None when evaluation failed and
    the lane was dropped.
    """

    request_id: str
    step: int
    lane: int
    entry_id: str
    tokens: tuple[int, ...]
    response: EvalResponse | None
    snapshot_version: int


def run_actor(actor: ActorState, entries, eval_svc, *, seed: int,
              start_step: int, budget_steps: int, k: int = 1,
              explore_size: int = 16, samples_per_spec: int = 1,
              temperature: float = 1.0, max_sample_len: int = EXPLORE_MAX_LEN,
              box: SnapshotBox | None = None, staleness: int | None = None,
              stop: threading.Event | None = None,
              model: PolicyModel | None = None) -> Iterator[ResultMsg]:
    """Sample, evaluate, and emit results for this actor's lanes.

    For each step in [start_step, start_step + budget_steps) the actor owns
    the lanes with index % k == stream_id. Before sampling a step it blocks
    until the snapshot box holds a version within `staleness` of that step
    (staleness None never blocks), then opportunistically upgrades to the
    newest version available. staleness=0 therefore forces sampling step s
    from exactly the version-s parameters, which is what makes the runtime
    collapse to the sequential trainer.

    An evaluation failure drops that lane (response None) and the actor
    keeps going; any other exception propagates to the caller, which may
    restart from the learner's current progress since lane scheduling is
    stateless.

    Pass a prebuilt `model` when a learner runs concurrently: module
    construction draws from the global torch RNG (inside a fork), and doing
    that from another thread would race with the learner's dropout draws.
    """
    if model is None:
        model = PolicyModel(actor.config)
    model.load_state_dict(actor.snapshot)
    model.eval()
    version = actor.version
    entry_ids = [e.id for e in entries]
    src_tokens = {e.id: tokenize(parse(e.f_s)) for e in entries}

    for step in range(start_step, start_step + budget_steps):
        if stop is not None and stop.is_set():
            return
        if box is not None:
            if staleness is not None and version < step - staleness:
                got = box.wait(min_version=step - staleness, stop=stop)
                if got is None:
                    return
                version, snap = got
                model.load_state_dict(snap)
            else:
                got = box.poll(newer_than=version)
                if got is not None:
                    version, snap = got
                    model.load_state_dict(snap)
        lanes = explore_lanes(seed, entry_ids, step, explore_size,
                              samples_per_spec)
        mine = [(i, lane) for i, lane in enumerate(lanes)
                if i % k == actor.stream_id]
        if not mine:
            continue
        sampled = sample_batch(
            model, [src_tokens[eid] for _, (eid, _) in mine],
            temperature=temperature,
            seeds=[sampling_seed(seed, step, eid, d) for _, (eid, d) in mine],
            max_len=max_sample_len)
        for (lane_idx, (eid, _)), toks in zip(mine, sampled):
            try:
                resp = eval_svc.evaluate(eid, toks)
            except EvalServiceFailure as e:
                log.warning("step %d lane %d dropped: %s", step, lane_idx, e)
                resp = None
            yield ResultMsg(request_id=f"{step}:{lane_idx}", step=step,
                            lane=lane_idx, entry_id=eid, tokens=tuple(toks),
                            response=resp, snapshot_version=version)


# --- learner --------------------------------------------------------------------------


def run_learner(state: TrainState, results: "queue.Queue[ResultMsg | None]", *,
                algo: str = "silo", budget_steps: int,
                explore_size: int = 16, samples_per_spec: int = 1,
                train_size: int = 32, cfg: ReinforceConfig | None = None,
                tracker: BaselineTracker | None = None,
                box: SnapshotBox | None = None,
                out_dir=None, checkpoint_every: int = 1_000,
                on_step: Callable[[StepStats], None] | None = None) -> TrainState:
    """Consume actor results and fold them into updates, one step at a time.

    Results may arrive out of order and duplicated; each (step, lane) is
    applied at most once, lanes are reassembled in lane order, and a step is
    applied only when all its surviving lanes are in. Dropped lanes
    (response None) are excluded from that step's batch. The learner blocks
    while results are missing; a None in the queue means no actor can make
    progress any more and raises. budget_steps <= 0 returns the state
    untouched.
    """
    if algo not in ("silo", "reinforce"):
        raise ValueError(f"unknown algorithm {algo!r}")
    if budget_steps <= 0:
        return state
    if algo == "reinforce":
        cfg = cfg or ReinforceConfig()
        tracker = tracker or BaselineTracker()
    if box is not None and box.version < state.step:
        box.publish(state.step, state.model)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    seen: set[str] = set()
    pending: dict[int, dict[int, ResultMsg]] = {}
    end = state.step + budget_steps
    while state.step < end:
        s = state.step
        lanes = explore_lanes(state.seed, state.entry_ids, s, explore_size,
                              samples_per_spec)
        bucket = pending.setdefault(s, {})
        while len(bucket) < len(lanes):
            msg = results.get()
            if msg is None:
                raise RuntimeError(
                    f"result stream ended at step {s} with {len(bucket)} of "
                    f"{len(lanes)} lanes; no live actors remain")
            if msg.request_id in seen:
                continue
            if msg.step < s or msg.step >= end:
                continue
            seen.add(msg.request_id)
            pending.setdefault(msg.step, {})[msg.lane] = msg
        msgs = [bucket[i] for i in sorted(bucket)]
        if [m.entry_id for m in msgs] != [eid for eid, _ in lanes]:
            raise RuntimeError(f"lane reassembly mismatch at step {s}")
        live = [m for m in msgs if m.response is not None]
        if algo == "silo":
            stats = silo_update(state, [m.entry_id for m in live],
                                [m.response for m in live],
                                train_size=train_size)
        elif not live:
            # Every lane dropped: nothing to score, keep parameters as-is.
            stats = StepStats(step=s + 1, loss=0.0, skipped_update=True)
            state.step = s + 1
        else:
            stats = reinforce_update(state, cfg, tracker,
                                     [m.entry_id for m in live],
                                     [list(m.tokens) for m in live],
                                     [m.response for m in live])
        del pending[s]
        if box is not None:
            box.publish(state.step, state.model)
        if out is not None and (state.step % checkpoint_every == 0
                                or state.step == end):
            save_checkpoint(out / "checkpoints" / f"step-{state.step:06d}.ckpt",
                            state.model, state.opt, extra={"step": state.step})
        if on_step is not None:
            on_step(stats)
    return state


# --- orchestration --------------------------------------------------------------------


_MAX_ACTOR_RESTARTS = 5


def run_actor_learner(state: TrainState, eval_svc, *, algo: str = "silo",
                      k: int = 1, budget_steps: int,
                      staleness: int | None | str = "default",
                      explore_size: int = 16, samples_per_spec: int = 1,
                      train_size: int = 32, temperature: float = 1.0,
                      max_sample_len: int = EXPLORE_MAX_LEN,
                      cfg: ReinforceConfig | None = None,
                      tracker: BaselineTracker | None = None,
                      out_dir=None, checkpoint_every: int = 1_000,
                      on_step: Callable[[StepStats], None] | None = None,
                      ) -> TrainState:
    """Fine-tune with k actor threads feeding one learner (this thread).

    eval_svc is either a shared handle with .evaluate (EvalService,
    EvalServer) or a zero-argument factory returning a per-actor handle
    (how SocketEvalClient is meant to be used); factory-made handles are
    closed when the actor finishes. staleness="default" resolves to
    unbounded for silo (off-policy by construction) and 1 for reinforce;
    use 0 to force every sample onto fresh parameters, which reproduces
    the sequential trainer exactly regardless of k.

    A crashed actor restarts from the learner's published progress (lane
    scheduling is stateless and duplicates deduplicate); after
    _MAX_ACTOR_RESTARTS crashes it stays down, and if all actors are down
    the learner raises instead of blocking forever.
    """
    if staleness == "default":
        staleness = None if algo == "silo" else 1
    box = SnapshotBox()
    box.publish(state.step, state.model)
    results: "queue.Queue[ResultMsg | None]" = queue.Queue()
    stop = threading.Event()
    live_actors = threading.Semaphore(0)
    end = state.step + budget_steps
    entries = state.entries
    factory = eval_svc if callable(eval_svc) else None
    # Built here, not in the threads: construction seeds the global torch RNG
    # inside a fork, which must not interleave with learner RNG draws.
    actor_models = [PolicyModel(state.model.config) for _ in range(max(1, k))]

    def actor_main(idx: int) -> None:
        live_actors.release()
        restarts = 0
        try:
            while not stop.is_set():
                got = box.wait(min_version=0, stop=stop)
                if got is None:
                    return
                version, snap = got
                if version >= end:
                    return
                handle = None
                try:
                    handle = factory() if factory is not None else eval_svc
                    actor = ActorState(config=state.model.config, snapshot=snap,
                                       version=version, stream_id=idx)
                    for msg in run_actor(
                            actor, entries, handle, seed=state.seed,
                            start_step=version, budget_steps=end - version,
                            k=k, explore_size=explore_size,
                            samples_per_spec=samples_per_spec,
                            temperature=temperature,
                            max_sample_len=max_sample_len,
                            box=box, staleness=staleness, stop=stop,
                            model=actor_models[idx]):
                        results.put(msg)
                    return
                except Exception:  # noqa: BLE001  actor crash is recoverable
                    restarts += 1
                    log.exception("actor %d crashed (restart %d/%d)",
                                  idx, restarts, _MAX_ACTOR_RESTARTS)
                    if restarts >= _MAX_ACTOR_RESTARTS:
                        raise
                finally:
                    if factory is not None and handle is not None \
                            and hasattr(handle, "close"):
                        handle.close()
        finally:
            live_actors.acquire()
            # Last actor out wakes a learner that would otherwise starve.
            if not stop.is_set() and not live_actors.acquire(blocking=False):
                results.put(None)
            else:
                live_actors.release()

    threads = [threading.Thread(target=actor_main, args=(i,),
                                name=f"actor-{i}", daemon=True)
               for i in range(max(1, k))]
    for t in threads:
        t.start()
    try:
        return run_learner(state, results, algo=algo, budget_steps=budget_steps,
                           explore_size=explore_size,
                           samples_per_spec=samples_per_spec,
                           train_size=train_size, cfg=cfg, tracker=tracker,
                           box=box, out_dir=out_dir,
                           checkpoint_every=checkpoint_every, on_step=on_step)
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=30)


# --- throughput harness ---------------------------------------------------------------


def bench_actors(state: TrainState, eval_svc, *, k: int, seconds: float = 10.0,
                 explore_size: int = 16, samples_per_spec: int = 1,
                 temperature: float = 1.0,
                 max_sample_len: int = EXPLORE_MAX_LEN) -> dict:
    """Measure evaluated results per wall-second with k actors on a frozen
    snapshot (no learner). Hardware-dependent; not part of the test suite."""
    box = SnapshotBox()
    box.publish(0, state.model)
    stop = threading.Event()
    counts = [0] * max(1, k)
    factory = eval_svc if callable(eval_svc) else None
    actor_models = [PolicyModel(state.model.config) for _ in range(max(1, k))]

    def actor_main(idx: int) -> None:
        handle = factory() if factory is not None else eval_svc
        snap = box.wait(min_version=0, stop=stop)
        if snap is None:
            return
        actor = ActorState(config=state.model.config, snapshot=snap[1],
                           version=0, stream_id=idx)
        try:
            for _ in run_actor(actor, state.entries, handle, seed=state.seed,
                               start_step=0, budget_steps=1 << 30, k=max(1, k),
                               explore_size=explore_size,
                               samples_per_spec=samples_per_spec,
                               temperature=temperature,
                               max_sample_len=max_sample_len,
                               box=None, staleness=None, stop=stop,
                               model=actor_models[idx]):
                counts[idx] += 1
                if stop.is_set():
                    return
        finally:
            if factory is not None and hasattr(handle, "close"):
                handle.close()

    threads = [threading.Thread(target=actor_main, args=(i,), daemon=True)
               for i in range(max(1, k))]
    t0 = time.monotonic()
    for t in threads:
        t.start()
    time.sleep(seconds)
    stop.set()
    for t in threads:
        t.join(timeout=30)
    wall = time.monotonic() - t0
    total = sum(counts)
    return {"k": max(1, k), "results": total, "wall_s": wall,
            "results_per_s": total / wall if wall > 0 else 0.0,
            "per_actor": counts}
