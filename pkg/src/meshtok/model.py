"""Decoder-only next-coordinate predictor.

One embedding table serves every coordinate value regardless of axis slot
(the neural coordinate field); positions use a learned table. Conditioning
is a per-class block of learned prefix embeddings prepended before position
indexing. Blocks are pre-LN with a final LayerNorm when the stack is
non-empty, so a zero-layer model reduces to
``logits = head(token_embedding + position_embedding)``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import TokenSequence
from .errors import CheckpointError, NonFiniteLossError, SequenceError
from .rng import philox_stream

CHECKPOINT_MAGIC = b"MXCK"
CHECKPOINT_VERSION = 1
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 256
    d_ffn: int = 1024
    n_layers: int = 4
    n_heads: int = 4
    context_length: int = 1024
    prefix_length: int = 32
    n_classes: int = 0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.vocab_size < 2 or self.context_length < 2:
            raise ValueError("vocab_size and context_length must be >= 2")
        if self.prefix_length < 0 or self.n_classes < 0:
            raise ValueError("prefix_length and n_classes must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 16
    peak_lr: float = 1e-4
    final_lr: float = 1e-6
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    target_nll: float | None = None  # early stop once the running loss dips below


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d_model // config.n_heads
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x, past=None):
        b, t, c = x.shape
        q, k, v = self.qkv(x).split(c, dim=2)
        q = q.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        if past is not None:
            pk, pv = past
            k = torch.cat([pk, k], dim=2)
            v = torch.cat([pv, v], dim=2)
        s = k.shape[2]
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        # query at global position s - t + i attends keys <= that position
        mask = torch.ones(t, s, dtype=torch.bool, device=x.device).tril(diagonal=s - t)
        att = att.masked_fill(~mask, float("-inf"))
        att = F.softmax(att, dim=-1)
        att = self.drop(att)
        y = (att @ v).transpose(1, 2).contiguous().view(b, t, c)
        return self.drop(self.proj(y)), (k, v)


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(config.d_model, config.d_ffn),
            nn.GELU(),
            nn.Linear(config.d_ffn, config.d_model),
            nn.Dropout(config.dropout),
        )

    def forward(self, x, past=None):
        a, kv = self.attn(self.ln1(x), past)
        x = x + a
        x = x + self.mlp(self.ln2(x))
        return x, kv


class CoordinateLM(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.d_model)
        self.pos_emb = nn.Embedding(config.context_length, config.d_model)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_model) if config.n_layers > 0 else None
        self.head = nn.Linear(config.d_model, config.vocab_size)
        if config.n_classes > 0 and config.prefix_length > 0:
            self.class_prefix = nn.Parameter(
                torch.empty(config.n_classes, config.prefix_length, config.d_model)
            )
        else:
            self.class_prefix = None
        self._init_weights(config.seed)

    @property
    def coordinate_embedding_table(self) -> torch.Tensor:
        """The single (V, d_model) table shared across the x/y/z axis slots."""
        return self.tok_emb.weight

    def _init_weights(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                module.weight.data.normal_(0.0, INIT_STD, generator=gen)
                module.bias.data.zero_()
            elif isinstance(module, nn.Embedding):
                module.weight.data.normal_(0.0, INIT_STD, generator=gen)
        if self.class_prefix is not None:
            self.class_prefix.data.normal_(0.0, INIT_STD, generator=gen)

    def _prefix_len(self, class_ids) -> int:
        return self.config.prefix_length if class_ids is not None and self.class_prefix is not None else 0

    def _embed(self, tokens: torch.Tensor, class_ids) -> torch.Tensor:
        b, t = tokens.shape
        h = self.tok_emb(tokens)
        if class_ids is not None:
            if self.config.n_classes == 0:
                raise ValueError("model was built without classes")
            class_ids = torch.as_tensor(class_ids, dtype=torch.long)
            if class_ids.ndim == 0:
                class_ids = class_ids.expand(b)
            if int(class_ids.max()) >= self.config.n_classes or int(class_ids.min()) < 0:
                raise ValueError(f"class id out of range [0, {self.config.n_classes})")
            if self.class_prefix is not None:  # prefix_length == 0 degrades to unconditional
                h = torch.cat([self.class_prefix[class_ids], h], dim=1)
        total = h.shape[1]
        if total > self.config.context_length:
            raise ValueError(
                f"{total} positions exceed context_length {self.config.context_length}"
            )
        pos = torch.arange(total, device=tokens.device)
        return self.drop(h + self.pos_emb(pos))

    def forward(self, tokens: torch.Tensor, class_ids=None) -> torch.Tensor:
        """Logits (batch, token positions, V); prefix positions are stripped."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        h = self._embed(tokens, class_ids)
        for block in self.blocks:
            h, _ = block(h)
        if self.ln_f is not None:
            h = self.ln_f(h)
        logits = self.head(h)
        return logits[:, self._prefix_len(class_ids) :, :]

    @torch.no_grad()
    def prefill(self, tokens, class_id=None):
        """Run the whole prompt once; returns (last logits, kv cache, next position)."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)[None, :]
        class_ids = None if class_id is None else torch.tensor([class_id])
        h = self._embed(tokens, class_ids)
        next_position = h.shape[1]
        cache = []
        for block in self.blocks:
            h, kv = block(h)
            cache.append(kv)
        if self.ln_f is not None:
            h = self.ln_f(h)
        logits = self.head(h[:, -1, :])
        return logits[0], cache, next_position

    @torch.no_grad()
    def step(self, token: int, position: int, cache):
        """Extend the cache by one token at the given global position."""
        tokens = torch.tensor([[token]], dtype=torch.long)
        h = self.tok_emb(tokens) + self.pos_emb(torch.tensor([[position]]))
        new_cache = []
        for block, past in zip(self.blocks, cache):
            h, kv = block(h, past)
            new_cache.append(kv)
        if self.ln_f is not None:
            h = self.ln_f(h)
        return self.head(h[0, -1, :]), new_cache


def nll_from_logits(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor):
    """Summed negative log-likelihood (f64 nats) and target count under a mask."""
    logp = F.log_softmax(logits.to(torch.float64), dim=-1)
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    total = -(picked * mask.to(torch.float64)).sum()
    return total, int(mask.sum())


def batch_tokens(sequences, pad_id: int):
    """Right-pad sequences into a (B, Tmax) LongTensor plus a length vector."""
    arrays = [s.tokens if isinstance(s, TokenSequence) else np.asarray(s) for s in sequences]
    lengths = torch.tensor([len(a) for a in arrays], dtype=torch.long)
    out = torch.full((len(arrays), int(lengths.max())), pad_id, dtype=torch.long)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = torch.as_tensor(np.asarray(a, dtype=np.int64))
    return out, lengths


def _check_framing(sequences, vocab, strict: bool):
    for i, seq in enumerate(sequences):
        tokens = seq.tokens if isinstance(seq, TokenSequence) else np.asarray(seq)
        if len(tokens) < 2 or tokens[0] != vocab.bos:
            raise SequenceError(f"sequence {i} does not start with BOS")
        if strict and tokens[-1] != vocab.eos:
            raise SequenceError(f"sequence {i} does not end with EOS (strict mode)")


def _nll_sum(model: CoordinateLM, sequences, vocab, class_ids=None):
    batch, lengths = batch_tokens(sequences, vocab.pad)
    inputs, targets = batch[:, :-1], batch[:, 1:]
    mask = torch.arange(inputs.shape[1])[None, :] < (lengths - 1)[:, None]
    mask &= targets != vocab.pad  # PAD is never a prediction target
    logits = model(inputs, class_ids=class_ids)
    return nll_from_logits(logits, targets, mask)


def mean_nll(model: CoordinateLM, sequences, vocab, class_ids=None, strict: bool = True):
    """Token-mean NLL over the batch; BOS conditions but is never a target."""
    _check_framing(sequences, vocab, strict)
    total, count = _nll_sum(model, sequences, vocab, class_ids=class_ids)
    return total / count


def loss(model: CoordinateLM, sequences, vocab, strict: bool = True) -> torch.Tensor:
    """Mean next-token negative log-likelihood per token, in nats."""
    return mean_nll(model, sequences, vocab, class_ids=None, strict=strict)


def conditional_loss(model: CoordinateLM, sequences, vocab, class_ids, strict: bool = True) -> torch.Tensor:
    """Same objective conditioned on the learned class prefix (no prefix loss terms)."""
    if class_ids is None:
        raise ValueError("conditional_loss requires class ids")
    return mean_nll(model, sequences, vocab, class_ids=class_ids, strict=strict)


def perplexity(model: CoordinateLM, sequences, vocab, class_ids=None, batch_size: int = 16) -> float:
    """exp of the token-weighted mean NLL over the whole set."""
    if len(sequences) == 0:
        raise ValueError("perplexity over an empty set")
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for i in range(0, len(sequences), batch_size):
            chunk = sequences[i : i + batch_size]
            ids = None if class_ids is None else class_ids[i : i + batch_size]
            _check_framing(chunk, vocab, strict=True)
            part, n = _nll_sum(model, chunk, vocab, class_ids=ids)
            total += float(part)
            count += n
    return math.exp(total / count)


def cosine_lr(step: int, config: TrainConfig) -> float:
    """Peak-to-final cosine decay across total_steps."""
    if config.total_steps <= 1:
        return config.peak_lr
    frac = min(max(step, 0), config.total_steps) / config.total_steps
    return config.final_lr + 0.5 * (config.peak_lr - config.final_lr) * (1.0 + math.cos(math.pi * frac))


class Trainer:
    """Owns the optimizer loop: cosine schedule, global-norm clip, decoupled decay."""

    def __init__(self, model: CoordinateLM, config: TrainConfig, vocab, step: int = 0):
        self.model = model
        self.config = config
        self.vocab = vocab
        self.step = step
        decay, no_decay = [], []
        for param in model.parameters():
            (decay if param.ndim >= 2 else no_decay).append(param)
        self.optimizer = torch.optim.AdamW(
            [
                {"params": decay, "weight_decay": config.weight_decay},
                {"params": no_decay, "weight_decay": 0.0},
            ],
            lr=config.peak_lr,
            betas=(config.beta1, config.beta2),
            eps=1e-8,
        )

    def draw_batch(self, dataset_size: int) -> np.ndarray:
        """Deterministic batch indices for the current step (resume-stable)."""
        if dataset_size <= self.config.batch_size:
            return np.arange(dataset_size)
        rng = philox_stream(self.config.seed, self.step)
        return rng.integers(0, dataset_size, size=self.config.batch_size)

    def train_step(self, sequences, class_ids=None) -> float:
        """One update; aborts without touching weights if the loss is not finite."""
        lr = cosine_lr(self.step, self.config)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        value = mean_nll(self.model, sequences, self.vocab, class_ids=class_ids)
        if not torch.isfinite(value):
            raise NonFiniteLossError(f"non-finite loss at step {self.step}: {float(value.detach())}")
        self.optimizer.zero_grad(set_to_none=True)
        value.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step += 1
        return float(value.detach())


# --- checkpoint format -------------------------------------------------------
#
#   magic "MXCK" | u32 version | u64 header_len | header JSON (utf-8) | blobs
#
# The header carries the model config, step counter, and a tensor manifest
# (name, shape, byte offset into the blob region). Blobs are row-major
# little-endian float32.

_CKPT_HEAD = struct.Struct("<4sIQ")


def save_checkpoint(path, model: CoordinateLM, step: int = 0, extra: dict | None = None) -> None:
    tensors = {name: t.detach().cpu().numpy().astype("<f4") for name, t in model.state_dict().items()}
    manifest = []
    offset = 0
    for name, arr in tensors.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": int(step),
        "config": asdict(model.config),
        "tensors": manifest,
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in tensors.values():
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[CoordinateLM, int, dict]:
    """Rebuild the model from a checkpoint, validating every tensor shape."""
    with open(path, "rb") as fh:
        head = fh.read(_CKPT_HEAD.size)
        if len(head) < _CKPT_HEAD.size:
            raise CheckpointError(f"{path}: truncated checkpoint")
        magic, version, header_len = _CKPT_HEAD.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None
        payload = fh.read()

    config = ModelConfig(**header["config"])
    model = CoordinateLM(config)
    reference = model.state_dict()
    state = {}
    for entry in header["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in reference:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        expected = tuple(reference[name].shape)
        if shape != expected:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {shape}, config implies {expected}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
    missing = set(reference) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    model.load_state_dict(state)
    return model, int(header["step"]), header.get("extra", {})
