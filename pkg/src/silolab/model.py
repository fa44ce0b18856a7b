"""Rewrite policy: a small encoder-decoder transformer over token ids.

The model maps a verbose function's token sequence to an optimized rewrite's
token sequence. It is deliberately compact so the whole training loop runs on
a CPU: post-layer-norm blocks, sinusoidal positions, a shared token embedding,
and a separate output projection.

Three things here are stricter than a typical training harness:

* Decoding randomness is counter-based. Each sampled token consumes a value
  that is a pure function of (seed, position), so a sequence sampled with a
  given seed is identical no matter how requests were batched or what the
  global RNG did in the meantime.
* The optimizer is written out by hand (Adam + inverse-square-root schedule)
  and its moments live in the checkpoint, so a resumed run continues
  bit-for-bit and a non-finite gradient rejects the whole step.
* Checkpoints are a self-describing container: JSON header plus named
  little-endian float32 blocks. Saving and loading a model yields bit-equal
  log-probabilities.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokens import BOS, EOS, MAX_SEQ_LEN, PAD, VOCAB_SIZE

__all__ = [
    "ModelConfig",
    "ScheduleConfig",
    "PolicyModel",
    "AdamState",
    "StepReport",
    "BeamHypothesis",
    "CheckpointError",
    "pad_batch",
    "batch_xent",
    "forward_logprobs",
    "xent_loss",
    "sample",
    "sample_batch",
    "greedy_decode",
    "beam_decode",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs. The default is the desk-scale preset."""

    layers: int = 2
    model_dim: int = 128
    heads: int = 4
    ff_dim: int = 0  # 0 means 4 * model_dim
    vocab_size: int = VOCAB_SIZE
    max_len: int = MAX_SEQ_LEN
    dropout: float = 0.1

    def __post_init__(self):
        if self.ff_dim == 0:
            object.__setattr__(self, "ff_dim", 4 * self.model_dim)
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls(layers=3, model_dim=512, heads=8)

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """One-layer, 16-wide config for finite-difference gradient checks."""
        return cls(layers=1, model_dim=16, heads=2, ff_dim=32, dropout=0.0)


@dataclass(frozen=True)
class ScheduleConfig:
    """lr(step) = factor * model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5)."""

    warmup: int = 2_000
    factor: float = 0.50
    model_dim: int = 128

    def lr(self, step: int) -> float:
        s = max(1, step)
        scale = self.model_dim ** -0.5
        return self.factor * scale * min(s ** -0.5, s * self.warmup ** -1.5)


def _sinusoid_table(max_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, idx / dim)
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle)
    return table.to(torch.float32)


class _Attention(nn.Module):
    """Multi-head attention with explicit projections.

    Written out instead of nn.MultiheadAttention so incremental decoding is a
    tensor append: callers may pass a cache dict and the new keys/values are
    concatenated onto it in place.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, q_in, kv_in, key_pad=None, causal=False, cache=None,
                cache_key=""):
        q = self._split(self.q(q_in))
        if cache is not None and cache_key + ".k" in cache and kv_in is None:
            # Cross-attention replay: keys/values were computed once up front.
            k, v = cache[cache_key + ".k"], cache[cache_key + ".v"]
        else:
            k = self._split(self.k(kv_in))
            v = self._split(self.v(kv_in))
            if cache is not None:
                if cache_key + ".k" in cache:
                    k = torch.cat([cache[cache_key + ".k"], k], dim=2)
                    v = torch.cat([cache[cache_key + ".v"], v], dim=2)
                cache[cache_key + ".k"] = k
                cache[cache_key + ".v"] = v
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            tq, tk = scores.shape[-2:]
            # Offset handles the cached case where queries start mid-sequence.
            block = torch.ones(tq, tk, dtype=torch.bool, device=scores.device)
            block = torch.triu(block, diagonal=1 + (tk - tq))
            scores = scores.masked_fill(block, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(q_in.shape)
        return self.out(mixed)


class _FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int):
        super().__init__()
        self.up = nn.Linear(dim, ff_dim)
        self.down = nn.Linear(ff_dim, dim)

    def forward(self, x):
        return self.down(F.relu(self.up(x)))


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = _Attention(cfg.model_dim, cfg.heads)
        self.ff = _FeedForward(cfg.model_dim, cfg.ff_dim)
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, src_pad):
        x = self.ln1(x + self.drop(self.attn(x, x, key_pad=src_pad)))
        x = self.ln2(x + self.drop(self.ff(x)))
        return x


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = _Attention(cfg.model_dim, cfg.heads)
        self.cross_attn = _Attention(cfg.model_dim, cfg.heads)
        self.ff = _FeedForward(cfg.model_dim, cfg.ff_dim)
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.ln3 = nn.LayerNorm(cfg.model_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, src_pad, cache=None, idx=0):
        key = f"dec{idx}"
        h = self.self_attn(x, x, causal=True, cache=cache, cache_key=key + ".self")
        x = self.ln1(x + self.drop(h))
        if cache is not None:
            h = self.cross_attn(x, memory if key + ".cross.k" not in cache else None,
                                key_pad=src_pad, cache=cache, cache_key=key + ".cross")
        else:
            h = self.cross_attn(x, memory, key_pad=src_pad)
        x = self.ln2(x + self.drop(h))
        x = self.ln3(x + self.drop(self.ff(x)))
        return x


class PolicyModel(nn.Module):
    """Encoder-decoder over token ids; `step` counts applied optimizer steps."""

    def __init__(self, config: ModelConfig | None = None, *,
                 dtype: torch.dtype = torch.float32, init_seed: int = 0):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        self.step = 0
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(init_seed)
            self.embed = nn.Embedding(cfg.vocab_size, cfg.model_dim, padding_idx=PAD)
            self.enc = nn.ModuleList(_EncoderLayer(cfg) for _ in range(cfg.layers))
            self.dec = nn.ModuleList(_DecoderLayer(cfg) for _ in range(cfg.layers))
            self.out_proj = nn.Linear(cfg.model_dim, cfg.vocab_size)
            self.emb_drop = nn.Dropout(cfg.dropout)
            self._init_weights()
        self.register_buffer("pos", _sinusoid_table(cfg.max_len, cfg.model_dim),
                             persistent=False)
        if dtype is not torch.float32:
            self.to(dtype)

    def _init_weights(self):
        d = self.config.model_dim
        for name, mod in self.named_modules():
            if isinstance(mod, nn.Linear):
                nn.init.xavier_uniform_(mod.weight)
                nn.init.zeros_(mod.bias)
        nn.init.normal_(self.embed.weight, mean=0.0, std=d ** -0.5)
        with torch.no_grad():
            self.embed.weight[PAD].zero_()
        # Start near the uniform distribution over the vocabulary.
        nn.init.normal_(self.out_proj.weight, mean=0.0, std=0.02)
        nn.init.zeros_(self.out_proj.bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.embed.weight.dtype

    def _embed(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        if offset + ids.shape[1] > self.config.max_len:
            raise ValueError(
                f"sequence length {offset + ids.shape[1]} exceeds max_len "
                f"{self.config.max_len}")
        x = self.embed(ids) * math.sqrt(self.config.model_dim)
        x = x + self.pos[offset:offset + ids.shape[1]].to(x.dtype)
        return self.emb_drop(x)

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor | None = None):
        x = self._embed(src)
        for layer in self.enc:
            x = layer(x, src_pad)
        return x

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor,
               src_pad: torch.Tensor | None = None, cache=None, offset: int = 0):
        x = self._embed(tgt_in, offset=offset)
        for i, layer in enumerate(self.dec):
            x = layer(x, memory, src_pad, cache=cache, idx=i)
        return self.out_proj(x)

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor,
                src_pad: torch.Tensor | None = None) -> torch.Tensor:
        """Teacher-forced logits, shape (batch, len(tgt_in), vocab)."""
        memory = self.encode(src, src_pad)
        return self.decode(tgt_in, memory, src_pad)

    def named_param_tensors(self) -> dict[str, torch.Tensor]:
        return dict(self.named_parameters())

    def validate_finite(self) -> None:
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ValueError(f"non-finite parameter block: {name}")


# --- batching helpers ---------------------------------------------------------


def pad_batch(seqs: list[list[int]], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad with PAD; returns (ids, pad_mask) with pad_mask True at padding."""
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD, dtype=torch.long, device=device)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = torch.tensor(s, dtype=torch.long)
    return ids, ids.eq(PAD)


@dataclass
class TokenStats:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def batch_xent(model: PolicyModel,
               pairs: list[tuple[list[int], list[int]]]) -> tuple[torch.Tensor, TokenStats]:
    """Mean negative log-likelihood of the targets, averaged over target tokens.

    Differentiable; respects model.training for dropout. Token sequences carry
    their own BOS/EOS, so the decoder input is tgt[:-1] and the labels tgt[1:].
    """
    src, src_pad = pad_batch([s for s, _ in pairs])
    tgt, _ = pad_batch([t for _, t in pairs])
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    logits = model(src, tgt_in, src_pad)
    loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]),
                           tgt_out.reshape(-1), ignore_index=PAD)
    with torch.no_grad():
        keep = tgt_out.ne(PAD)
        pred = logits.argmax(dim=-1)
        stats = TokenStats(int((pred.eq(tgt_out) & keep).sum()), int(keep.sum()))
    return loss, stats


def forward_logprobs(model: PolicyModel, src: list[int],
                     tgt_prefix: list[int]) -> torch.Tensor:
    """Log-probability table: row i is log P(token | src, tgt_prefix[:i+1]).

    Rows are log-normalized over the vocabulary. Evaluation-mode and no-grad;
    raises ValueError if either sequence exceeds max_len.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            s = torch.tensor([src], dtype=torch.long)
            t = torch.tensor([tgt_prefix], dtype=torch.long)
            logits = model(s, t)
            return F.log_softmax(logits[0], dim=-1)
    finally:
        model.train(was_training)


def xent_loss(model: PolicyModel, src: list[int],
              tgt: list[int]) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss and per-parameter gradients for a single (src, tgt) pair."""
    model.zero_grad(set_to_none=True)
    loss, _ = batch_xent(model, [(src, tgt)])
    loss.backward()
    grads = {name: p.grad.detach().clone() if p.grad is not None
             else torch.zeros_like(p)
             for name, p in model.named_parameters()}
    return float(loss.detach()), grads


# --- counter-based sampling RNG -------------------------------------------------

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _uniform01(seeds: np.ndarray, position: int) -> np.ndarray:
    """One uniform in [0, 1) per seed, a pure function of (seed, position)."""
    with np.errstate(over="ignore"):
        x = seeds.astype(np.uint64) + _GOLD * np.uint64(position + 1)
        x ^= x >> np.uint64(30)
        x *= _MIX1
        x ^= x >> np.uint64(27)
        x *= _MIX2
        x ^= x >> np.uint64(31)
    return (x >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _pick_tokens(logits: torch.Tensor, temperature: float,
                 seeds: np.ndarray, position: int) -> np.ndarray:
    """Inverse-CDF sampling (or argmax at temperature 0) on a (B, V) slice."""
    if temperature <= 0.0:
        return logits.argmax(dim=-1).numpy()
    probs = torch.softmax(logits.to(torch.float64) / temperature, dim=-1).numpy()
    cdf = np.cumsum(probs, axis=1)
    u = _uniform01(seeds, position) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_batch(model: PolicyModel, srcs: list[list[int]],
                 temperature: float = 1.0,
                 seeds: list[int] | None = None,
                 max_len: int | None = None) -> list[list[int]]:
    """Autoregressive sampling, one independent lane per source.

    Each lane's randomness depends only on its own seed and the token
    position, so results are invariant to how lanes are batched together.
    """
    limit = min(max_len or model.config.max_len, model.config.max_len)
    if seeds is None:
        seeds = list(range(len(srcs)))
    if len(seeds) != len(srcs):
        raise ValueError("one seed per source required")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            src, src_pad = pad_batch(srcs)
            memory = model.encode(src, src_pad)
            n = len(srcs)
            seeds_arr = np.asarray(seeds, dtype=np.uint64)
            out: list[list[int]] = [[BOS] for _ in range(n)]
            alive = np.ones(n, dtype=bool)
            cache: dict[str, torch.Tensor] = {}
            step_ids = torch.full((n, 1), BOS, dtype=torch.long)
            for t in range(limit - 1):
                logits = model.decode(step_ids, memory, src_pad,
                                      cache=cache, offset=t)[:, -1, :]
                chosen = _pick_tokens(logits, temperature, seeds_arr, t)
                chosen = np.where(alive, chosen, PAD)
                for i in range(n):
                    if alive[i]:
                        out[i].append(int(chosen[i]))
                alive &= chosen != EOS
                if not alive.any():
                    break
                step_ids = torch.from_numpy(chosen.astype(np.int64)).unsqueeze(1)
            return out
    finally:
        model.train(was_training)


def sample(model: PolicyModel, src: list[int], temperature: float = 1.0,
           seed: int = 0, max_len: int | None = None) -> list[int]:
    """Sample one rewrite; reproducible per seed. Unparseable output is legal."""
    return sample_batch(model, [src], temperature, [seed], max_len)[0]


def greedy_decode(model: PolicyModel, src: list[int],
                  max_len: int | None = None) -> list[int]:
    return sample(model, src, temperature=0.0, seed=0, max_len=max_len)


# --- beam search ---------------------------------------------------------------


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]  # BOS ... EOS inclusive
    logp: float
    score: float  # logp / generated length (length normalization exponent 1.0)


def beam_decode(model: PolicyModel, src: list[int], width: int = 10,
                max_len: int | None = None) -> list[BeamHypothesis]:
    """Length-normalized beam search; deterministic, returns finished hypotheses.

    Pruning uses cumulative log-probability; the final ranking divides by the
    number of generated tokens (BOS excluded, EOS included). Ties in both are
    broken toward the lexicographically smaller token sequence, which makes
    the result independent of iteration order.
    """
    if width < 1:
        raise ValueError("beam width must be positive")
    limit = min(max_len or model.config.max_len, model.config.max_len)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            src_ids, src_pad = pad_batch([src])
            memory0 = model.encode(src_ids, src_pad)
            beams: list[tuple[float, list[int]]] = [(0.0, [BOS])]
            cache: dict[str, torch.Tensor] = {}
            finished: list[tuple[float, list[int]]] = []
            step_ids = torch.tensor([[BOS]], dtype=torch.long)
            memory = memory0
            pad_mask = src_pad
            for t in range(limit - 1):
                logits = model.decode(step_ids, memory, pad_mask,
                                      cache=cache, offset=t)[:, -1, :]
                logprobs = F.log_softmax(logits.to(torch.float64), dim=-1).numpy()
                total = logprobs + np.array([[lp] for lp, _ in beams])
                flat = total.reshape(-1)
                # Stable sort on the flat index makes ties land on the smaller
                # (beam, token) pair, keeping expansion deterministic.
                order = np.argsort(-flat, kind="stable")
                vocab = logprobs.shape[1]
                new_beams: list[tuple[float, list[int]]] = []
                new_src: list[int] = []
                for flat_idx in order:
                    b, tok = divmod(int(flat_idx), vocab)
                    lp = float(flat[flat_idx])
                    if lp == float("-inf"):
                        break
                    seq = beams[b][1] + [tok]
                    if tok == EOS:
                        finished.append((lp, seq))
                    elif len(new_beams) < width:
                        new_beams.append((lp, seq))
                        new_src.append(b)
                    if len(new_beams) == width and tok != EOS:
                        # Later EOS expansions only rank below what we already
                        # kept at this step; still collect them above.
                        pass
                if not new_beams:
                    break
                sel = torch.tensor(new_src, dtype=torch.long)
                for key in cache:
                    cache[key] = cache[key][sel]
                if memory.shape[0] != len(new_beams) or not torch.equal(
                        sel, torch.arange(len(new_beams))):
                    memory = memory0.expand(len(new_beams), -1, -1)
                    pad_mask = src_pad.expand(len(new_beams), -1)
                beams = new_beams
                step_ids = torch.tensor([[b[1][-1]] for b in beams],
                                        dtype=torch.long)
            ranked = sorted(
                ((lp / (len(seq) - 1), lp, seq) for lp, seq in finished),
                key=lambda x: (-x[0], x[2]))
            return [BeamHypothesis(tuple(seq), lp, score)
                    for score, lp, seq in ranked[:width]]
    finally:
        model.train(was_training)


# --- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment tensors, created lazily per parameter block."""

    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@dataclass(frozen=True)
class StepReport:
    applied: bool
    step: int
    lr: float
    grad_norm: float
    reason: str = ""


def adam_step(model: PolicyModel, grads: dict[str, torch.Tensor],
              opt: AdamState, sched: ScheduleConfig) -> StepReport:
    """Apply one Adam update with the inverse-square-root learning rate.

    A non-finite gradient in any block rejects the whole step: parameters,
    moments, and the step counter are left untouched and the report carries
    the offending block's name.
    """
    params = dict(model.named_parameters())
    if set(grads) != set(params):
        raise ValueError("gradient keys do not match model parameters")
    sq_sum = 0.0
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            return StepReport(False, model.step, 0.0, float("nan"),
                              f"non-finite gradient in {name}")
        sq_sum += float(g.detach().to(torch.float64).pow(2).sum())
    step = model.step + 1
    lr = sched.lr(step)
    b1, b2 = opt.beta1, opt.beta2
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in opt.m:
                opt.m[name] = torch.zeros_like(p)
                opt.v[name] = torch.zeros_like(p)
            m = opt.m[name].mul_(b1).add_(g, alpha=1 - b1)
            v = opt.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = m / (1 - b1 ** step)
            v_hat = v / (1 - b2 ** step)
            p.addcdiv_(m_hat, v_hat.sqrt().add_(opt.eps), value=-lr)
    model.step = step
    return StepReport(True, step, lr, math.sqrt(sq_sum))


# --- checkpoint container ---------------------------------------------------------

_MAGIC = b"SLABCKP1"


class CheckpointError(ValueError):
    pass


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str, list[int]]:
    if t.dtype is torch.uint8:
        arr = t.detach().cpu().numpy().astype("<u1")
        return arr.tobytes(), "u1", list(arr.shape)
    arr = t.detach().cpu().to(torch.float32).numpy().astype("<f4")
    return arr.tobytes(), "f4", list(arr.shape)


def save_checkpoint(path, model: PolicyModel, opt: AdamState | None = None,
                    extra: dict | None = None, include_rng: bool = True) -> None:
    """Write config, parameters, optimizer moments, and RNG state to one file."""
    model.validate_finite()
    blocks: list[tuple[str, torch.Tensor]] = []
    for name, p in sorted(model.named_parameters()):
        blocks.append(("param." + name, p))
    if opt is not None:
        for name in sorted(opt.m):
            blocks.append(("adam.m." + name, opt.m[name]))
            blocks.append(("adam.v." + name, opt.v[name]))
    if include_rng:
        blocks.append(("rng.torch", torch.get_rng_state()))
    manifest = []
    payload = bytearray()
    for name, t in blocks:
        raw, dtype, shape = _tensor_bytes(t)
        manifest.append({"name": name, "dtype": dtype, "shape": shape})
        payload.extend(raw)
    header = {
        "format": 1,
        "config": dataclasses.asdict(model.config),
        "step": model.step,
        "adam": None if opt is None else
            {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "blocks": manifest,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(bytes(payload))


def load_checkpoint(path, dtype: torch.dtype = torch.float32,
                    restore_rng: bool = False
                    ) -> tuple[PolicyModel, AdamState | None, dict]:
    """Rebuild (model, optimizer state, extra) from a checkpoint file."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        tensors: dict[str, torch.Tensor] = {}
        for spec in header["blocks"]:
            count = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
            np_dtype = {"f4": "<f4", "u1": "<u1"}[spec["dtype"]]
            raw = fh.read(count * np.dtype(np_dtype).itemsize)
            if len(raw) != count * np.dtype(np_dtype).itemsize:
                raise CheckpointError("truncated checkpoint payload")
            arr = np.frombuffer(raw, dtype=np_dtype).reshape(spec["shape"]).copy()
            tensors[spec["name"]] = torch.from_numpy(arr)
    cfg = ModelConfig(**header["config"])
    model = PolicyModel(cfg, dtype=dtype)
    model.step = int(header["step"])
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = "param." + name
            if key not in tensors:
                raise CheckpointError(f"missing parameter block: {key}")
            p.copy_(tensors[key].to(dtype))
    opt = None
    if header.get("adam") is not None:
        a = header["adam"]
        opt = AdamState(beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
        for name in dict(model.named_parameters()):
            mk, vk = "adam.m." + name, "adam.v." + name
            if mk in tensors:
                opt.m[name] = tensors[mk].to(dtype)
                opt.v[name] = tensors[vk].to(dtype)
    if restore_rng and "rng.torch" in tensors:
        torch.set_rng_state(tensors["rng.torch"].to(torch.uint8))
    return model, opt, header.get("extra", {})
