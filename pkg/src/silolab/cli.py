"""Operator entry point: corpus generation, training, evaluation, reporting.

Commands are single-invocation processes. Every command serializes its full
flag set into the output directory (run-config.json) so a run is reproducible
from its artifacts alone; training phases additionally write their own
config.json with the resolved internals.

Exit codes: 0 success, 2 configuration error (bad flags, missing files or
checkpoints), 3 runtime failure (generation exhaustion, divergence,
evaluation-service failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import torch

from .datagen import build_corpus, load_corpus
from .model import ModelConfig, PolicyModel, ScheduleConfig, load_checkpoint
from .runtime import (
    EvalService,
    SocketEvalClient,
    run_actor_learner,
    serve_eval,
)
from .train import (
    BaselineTracker,
    ReinforceConfig,
    dataclass_dict,
    init_train_state,
    pretrain,
    run_finetune,
    subsample_entries,
    superopt_proportion,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    """Bad flags or missing inputs; the run never started."""


def _write_run_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    flags = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in vars(args).items() if k != "func"}
    payload = {"command": command, "flags": flags}
    (out_dir / "run-config.json").write_text(json.dumps(payload, indent=2,
                                                        sort_keys=True) + "\n")


def _load_split(corpus_dir: Path, split: str):
    path = corpus_dir / f"{split}.jsonl"
    if not path.exists():
        raise ConfigError(f"corpus split not found: {path}")
    return load_corpus(corpus_dir, split)


def _load_ckpt(path: Path):
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    model, _, extra = load_checkpoint(path)
    return model, extra


# --- datagen ----------------------------------------------------------------------------


def cmd_datagen(args) -> int:
    out = Path(args.out)
    _write_run_config(out, "datagen", args)

    def progress(split, done, seen):
        print(f"  {split}: {done} admitted / {seen} candidates", flush=True)

    meta = build_corpus(out, n_train=args.train, n_dev=args.dev,
                        n_test=args.test, seed=args.seed,
                        suite_k=args.suite_k,
                        progress=progress if args.verbose else None)
    for split, st in meta["splits"].items():
        discards = ", ".join(f"{k}={v}" for k, v in st["discards"].items()) \
            or "none"
        print(f"{split}: {st['count']} entries from {st['candidates']} "
              f"candidates; discards: {discards}")
        print(f"  families: "
              + ", ".join(f"{k}={v}" for k, v in st["families"].items()))
        print(f"  mean cost: source {st['mean_cost_s']}, "
              f"target {st['mean_cost_ref']}; "
              f"known headroom: {st['headroom']}")
    return EXIT_OK


# --- pretrain ---------------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    run_dir = Path(args.out)
    _write_run_config(run_dir, "pretrain", args)
    corpus = Path(args.corpus)
    train = _load_split(corpus, "train")
    dev = _load_split(corpus, "dev")
    if args.dev_subsample:
        dev = subsample_entries(dev, args.dev_subsample, args.seed)

    torch.manual_seed(args.torch_seed)
    if args.resume:
        if not Path(args.resume).exists():
            raise ConfigError(f"checkpoint not found: {args.resume}")
        # restore_rng resumes the dropout stream, so the remaining steps
        # reproduce an uninterrupted run bit for bit.
        model, opt, _ = load_checkpoint(args.resume, restore_rng=True)
    else:
        cfg = ModelConfig(layers=args.layers, model_dim=args.dim,
                          heads=args.heads, ff_dim=args.ff_dim,
                          dropout=args.dropout)
        model = PolicyModel(cfg, init_seed=args.seed)
        opt = None
    sched = ScheduleConfig(warmup=args.warmup, factor=args.factor,
                           model_dim=model.config.model_dim)
    report = pretrain(model, train, args.steps, batch_size=args.batch_size,
                      seed=args.seed, dev_entries=dev,
                      eval_every=args.eval_every,
                      checkpoint_every=args.checkpoint_every,
                      run_dir=run_dir, sched=sched, opt=opt,
                      progress=print)
    print(f"pretrain: {report.steps} steps, final loss {report.final_loss:.4f}, "
          f"dev token acc {report.dev_token_acc:.3f}, "
          f"dev exact match {report.dev_exact:.3f}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


# --- finetune ---------------------------------------------------------------------------


def _finetune_concurrent(state, eval_svc, dev_svc, args, run_dir: Path,
                         rcfg: ReinforceConfig, dev_entries) -> None:
    """Actor/learner fine-tuning with the same artifact layout as the
    sequential driver (config.json, metrics.csv, replacements.jsonl,
    dev_series.csv, checkpoint cadence). eval_svc may be a shared handle or
    a per-actor client factory; dev_svc is always a direct handle for the
    learner-side dev evaluations."""
    snapshot = {"phase": "finetune", "algo": args.algo, "steps": args.steps,
                "seed": state.seed, "explore_size": args.explore_size,
                "train_size": args.train_size, "batch_size": args.batch_size,
                "temperature": args.temperature,
                "dev_every": args.dev_every,
                "dev_subsample": args.dev_subsample,
                "checkpoint_every": args.checkpoint_every,
                "actors": args.actors, "staleness": args.staleness,
                "schedule": {"warmup": state.sched.warmup,
                             "factor": state.sched.factor},
                "reinforce": dataclass_dict(rcfg)
                if args.algo == "reinforce" else None,
                "model": dataclass_dict(state.model.config)}
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))
    dev_sub = subsample_entries(dev_entries, args.dev_subsample, args.seed) \
        if dev_entries else []
    dev_series: list[tuple[int, float]] = []
    metrics_fh = open(run_dir / "metrics.csv", "w", newline="")
    metrics = csv.DictWriter(metrics_fh, fieldnames=[
        "step", "loss", "token_acc", "replacements", "dev_proportion",
        "dev_token_acc", "dev_exact"])
    metrics.writeheader()
    repl_fh = open(run_dir / "replacements.jsonl", "w")

    def on_step(st):
        for rec in st.replaced:
            repl_fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        repl_fh.flush()
        row = {"step": st.step, "loss": round(st.loss, 6),
               "replacements": len(st.replaced)}
        if dev_sub and st.step % args.dev_every == 0:
            proportion, _ = superopt_proportion(state.model, dev_sub, dev_svc,
                                                width=args.dev_beam)
            dev_series.append((st.step, proportion))
            row["dev_proportion"] = round(proportion, 6)
            print(f"step {st.step}: loss {st.loss:.4f} "
                  f"dev proportion {proportion:.3f} "
                  f"replacements {len(state.replacements)}")
        metrics.writerow(row)
        metrics_fh.flush()

    try:
        run_actor_learner(state, eval_svc, algo=args.algo, k=args.actors,
                          budget_steps=args.steps, staleness=args.staleness,
                          explore_size=(args.explore_size if args.algo == "silo"
                                        else args.batch_size),
                          train_size=args.train_size,
                          temperature=args.temperature,
                          cfg=rcfg if args.algo == "reinforce" else None,
                          tracker=BaselineTracker()
                          if args.algo == "reinforce" else None,
                          out_dir=run_dir,
                          checkpoint_every=args.checkpoint_every,
                          on_step=on_step)
        if dev_series:
            with open(run_dir / "dev_series.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "proportion"])
                w.writerows(dev_series)
    finally:
        metrics_fh.close()
        repl_fh.close()


def cmd_finetune(args) -> int:
    if args.algo not in ("silo", "reinforce"):
        raise ConfigError(f"unknown algorithm {args.algo!r}")
    run_dir = Path(args.out)
    _write_run_config(run_dir, "finetune", args)
    corpus = Path(args.corpus)
    train = _load_split(corpus, "train")
    dev = _load_split(corpus, "dev")
    model, _ = _load_ckpt(args.ckpt)
    torch.manual_seed(args.torch_seed)
    state = init_train_state(model, train, seed=args.seed,
                             factor=args.factor, warmup=args.warmup)
    rcfg = ReinforceConfig(lam=args.lam, bit_rate=args.bit_rate,
                           clip=args.clip, beta=args.beta,
                           schedule_factor=args.factor)
    # Socket mode runs the full wire protocol: a server owns the corpus and
    # the trainer talks to it through clients like any external actor would.
    server = serve_eval(train + dev, socket_path=args.socket) \
        if args.socket else None
    handle = server if server is not None else EvalService(train + dev)
    client = None
    try:
        if args.actors > 1:
            actor_svc = (lambda: SocketEvalClient(args.socket)) \
                if args.socket else handle
            _finetune_concurrent(state, actor_svc, handle, args, run_dir,
                                 rcfg, dev)
            print(f"finetune[{args.algo}] x{args.actors} actors: "
                  f"{args.steps} steps, "
                  f"{len(state.replacements)} replacements")
        else:
            if args.socket:
                client = SocketEvalClient(args.socket)
            report = run_finetune(
                state, client or handle, args.algo, args.steps,
                run_dir=run_dir,
                explore_size=args.explore_size, train_size=args.train_size,
                batch_size=args.batch_size, temperature=args.temperature,
                dev_entries=dev, dev_every=args.dev_every,
                dev_subsample=args.dev_subsample, dev_seed=args.seed,
                dev_width=args.dev_beam,
                checkpoint_every=args.checkpoint_every, rcfg=rcfg,
                config_snapshot={"corpus": str(corpus)}, progress=print)
            print(f"finetune[{report.algo}]: {report.steps} steps, "
                  f"{report.replacements} replacements, "
                  f"final loss {report.final_loss:.4f}, "
                  f"{len(report.checkpoints)} checkpoints")
    finally:
        if client is not None:
            client.close()
        if server is not None:
            server.stop()
    print(f"artifacts in {run_dir}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------------------


def _parse_models(specs) -> list[tuple[str, Path]]:
    out = []
    for spec in specs:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise ConfigError(f"--model wants LABEL=CHECKPOINT, got {spec!r}")
        out.append((label, Path(path)))
    return out


def cmd_eval(args) -> int:
    models = _parse_models(args.model)
    out = Path(args.out)
    _write_run_config(out, "eval", args)
    corpus = Path(args.corpus)
    entries = _load_split(corpus, args.split)
    if args.subsample:
        entries = subsample_entries(entries, args.subsample, args.seed)
    svc = EvalService(entries)
    rows = []
    for label, ckpt_path in models:
        model, _ = _load_ckpt(ckpt_path)
        proportion, per_entry = superopt_proportion(model, entries, svc,
                                                    width=args.beam)
        slug = "".join(ch if ch.isalnum() else "-" for ch in label.lower())
        with open(out / f"results-{slug}.jsonl", "w") as fh:
            for eid in sorted(per_entry):
                fh.write(json.dumps({"entry_id": eid, **per_entry[eid]},
                                    sort_keys=True) + "\n")
        rows.append((label, proportion))
        print(f"evaluated {label}: {proportion:.4f} "
              f"({sum(r['superoptimized'] for r in per_entry.values())}"
              f"/{len(per_entry)} entries, beam {args.beam})")
    header = ("model", "proportion superoptimized (automatic verification)")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    width = max(len(header[0]), *(len(r[0]) for r in rows))
    print(f"\n{header[0]:<{width}}  {header[1]}")
    for label, proportion in rows:
        print(f"{label:<{width}}  {proportion:.4f}")
    return EXIT_OK


# --- plotdata / report ------------------------------------------------------------------


def _emit_series(run_dirs, out: Path, render: bool) -> int:
    from . import plots

    out.mkdir(parents=True, exist_ok=True)
    named = {}
    written = []
    for rd in run_dirs:
        rd = Path(rd)
        if not rd.is_dir():
            raise ConfigError(f"run directory not found: {rd}")
        prop = plots.proportion_series(rd)
        if prop:
            written.append(plots.write_series_csv(
                out / f"{rd.name}-proportion.csv", ("step", "proportion"),
                prop))
            named[rd.name] = prop
        if plots.load_config(rd).get("algo") == "silo":
            repl = plots.replacement_series(rd)
            written.append(plots.write_series_csv(
                out / f"{rd.name}-replacements.csv", ("step", "replacements"),
                repl))
        if not prop and plots.load_metrics(rd):
            written.append(plots.write_series_csv(
                out / f"{rd.name}-loss.csv", ("step", "loss"),
                [(r["step"], r["loss"]) for r in plots.load_metrics(rd)]))
        if render:
            written.extend(plots.render_run_figures(rd, out))
    if render and len(named) > 1:
        p = plots.render_comparison_figure(named, out / "comparison.png")
        if p:
            written.append(p)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_plotdata(args) -> int:
    return _emit_series(args.run_dirs, Path(args.out), render=False)


def cmd_report(args) -> int:
    return _emit_series(args.run_dirs, Path(args.out), render=True)


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="silolab",
        description="Desk-scale superoptimization laboratory: corpus "
                    "generation, pre-training, fine-tuning, evaluation, "
                    "and reporting.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", help="generate a verified training corpus")
    d.add_argument("--out", required=True, help="corpus directory")
    d.add_argument("--train", type=int, default=2000)
    d.add_argument("--dev", type=int, default=200)
    d.add_argument("--test", type=int, default=300)
    d.add_argument("--seed", type=int, default=7)
    d.add_argument("--suite-k", type=int, default=32,
                   help="test vectors per entry")
    d.add_argument("--verbose", action="store_true")
    d.set_defaults(func=cmd_datagen)

    t = sub.add_parser("pretrain", help="supervised training on "
                                        "(source, compiler target) pairs")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--steps", type=int, default=8000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--torch-seed", type=int, default=0,
                   help="process-wide RNG seed (dropout)")
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--dim", type=int, default=128)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--ff-dim", type=int, default=0, help="0 = 4x dim")
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--warmup", type=int, default=2000)
    t.add_argument("--factor", type=float, default=0.5)
    t.add_argument("--eval-every", type=int, default=250)
    t.add_argument("--checkpoint-every", type=int, default=1000)
    t.add_argument("--dev-subsample", type=int, default=0,
                   help="evaluate on a fixed dev subsample (0 = all)")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="fine-tune a pre-trained model")
    f.add_argument("--corpus", required=True)
    f.add_argument("--ckpt", required=True, help="pre-trained checkpoint")
    f.add_argument("--algo", required=True, choices=["silo", "reinforce"])
    f.add_argument("--out", required=True, help="run directory")
    f.add_argument("--steps", type=int, default=2000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--torch-seed", type=int, default=0)
    f.add_argument("--explore-size", type=int, default=16,
                   help="entries sampled per self-imitation step")
    f.add_argument("--train-size", type=int, default=32,
                   help="supervised batch per self-imitation step")
    f.add_argument("--batch-size", type=int, default=16,
                   help="policy-gradient batch size")
    f.add_argument("--temperature", type=float, default=1.0)
    f.add_argument("--warmup", type=int, default=2000)
    f.add_argument("--factor", type=float, default=0.01,
                   help="schedule factor (also the policy-gradient factor)")
    f.add_argument("--lam", type=float, default=50_000.0,
                   help="correctness penalty weight")
    f.add_argument("--bit-rate", type=float, default=100.0,
                   help="penalty per differing output bit")
    f.add_argument("--clip", type=float, default=100_000.0)
    f.add_argument("--beta", type=float, default=0.01,
                   help="entropy bonus weight")
    f.add_argument("--dev-every", type=int, default=250)
    f.add_argument("--dev-subsample", type=int, default=100)
    f.add_argument("--dev-beam", type=int, default=10)
    f.add_argument("--checkpoint-every", type=int, default=1000)
    f.add_argument("--actors", type=int, default=1,
                   help="sampling actors (1 = sequential driver)")
    f.add_argument("--staleness", default="default",
                   help="max snapshot lag in steps, or 'default'/'none'")
    f.add_argument("--socket", default=None,
                   help="serve evaluation over a unix socket at this path")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="best-of-beam evaluation with "
                                    "automatic verification")
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="test",
                   choices=["train", "dev", "test"])
    e.add_argument("--model", action="append", required=True,
                   metavar="LABEL=CKPT",
                   help="repeatable; e.g. --model Pre-train=run/pre.ckpt")
    e.add_argument("--out", required=True)
    e.add_argument("--beam", type=int, default=10)
    e.add_argument("--subsample", type=int, default=0, help="0 = all")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    pd = sub.add_parser("plotdata", help="emit plot-ready CSV series "
                                         "from run directories")
    pd.add_argument("run_dirs", nargs="+")
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_plotdata)

    r = sub.add_parser("report", help="emit CSV series plus rendered figures")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "staleness", None) not in (None, "default"):
        if args.staleness == "none":
            args.staleness = None
        else:
            try:
                args.staleness = int(args.staleness)
            except ValueError:
                print(f"error: --staleness wants an integer, 'none', or "
                      f"'default', got {args.staleness!r}", file=sys.stderr)
                return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as e:
        # TrainingDiverged, EvalServiceFailure, and generation exhaustion
        # all land here: the configuration was fine, the run was not.
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
