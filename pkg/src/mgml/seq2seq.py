"""Encoder-decoder sequence model over the unified vocabulary.

A small pre-norm transformer trained with teacher forcing: the loss is the
cross-entropy of each target token given the input sequence and the preceding
target tokens, with padding positions masked out. Generation is greedy by
default (temperature/top-k sampling available) and stops at the end token or
the output-token limit. The output head starts at zero, so an untrained model
predicts the exact uniform distribution.

Checkpoint format: magic ``MGS1``, version, named float32 parameter blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from random import Random

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import block_str, read_blocks, scalar, str_block, write_blocks
from .errors import DataFormatError, Diagnostic, SchemaError
from .tasks import PromptPair
from .vocab import UnifiedVocabulary

log = logging.getLogger(__name__)

LM_MAGIC = b"MGS1"


@dataclass(frozen=True)
class Seq2SeqConfig:
    vocab_size: int
    width: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_mult: int = 4
    max_input: int = 1024
    max_output: int = 512
    dropout: float = 0.0

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")


class _Attention(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(width, width)
        self.v = nn.Linear(width, width)
        self.out = nn.Linear(width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, queries, keys_values, mask=None):
        b, lq, _ = queries.shape
        lk = keys_values.shape[1]
        shape = (b, -1, self.heads, self.head_dim)
        q = self.q(queries).view(b, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(keys_values).view(*shape).transpose(1, 2)
        v = self.v(keys_values).view(*shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
        att = self.drop(torch.softmax(scores, dim=-1))
        merged = (att @ v).transpose(1, 2).reshape(b, lq, -1)
        return self.out(merged)


def _ffn(width: int, mult: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(width, width * mult), nn.GELU(),
        nn.Linear(width * mult, width), nn.Dropout(dropout),
    )


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: Seq2SeqConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.width)
        self.attn = _Attention(cfg.width, cfg.heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.width)
        self.ffn = _ffn(cfg.width, cfg.ffn_mult, cfg.dropout)

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.ln2(x))


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: Seq2SeqConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.width)
        self.self_attn = _Attention(cfg.width, cfg.heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.width)
        self.cross_attn = _Attention(cfg.width, cfg.heads, cfg.dropout)
        self.ln3 = nn.LayerNorm(cfg.width)
        self.ffn = _ffn(cfg.width, cfg.ffn_mult, cfg.dropout)

    def forward(self, x, memory, causal_mask, memory_mask):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, causal_mask)
        x = x + self.cross_attn(self.ln2(x), memory, memory_mask)
        return x + self.ffn(self.ln3(x))


class Seq2SeqModel(nn.Module):
    """Transformer encoder-decoder bound to a unified vocabulary."""

    def __init__(self, config: Seq2SeqConfig, vocab: UnifiedVocabulary,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if config.vocab_size != len(vocab):
            raise ValueError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}"
            )
        self.config = config
        self.vocab = vocab
        w = config.width
        self.tok_emb = nn.Embedding(config.vocab_size, w)
        self.pos_enc = nn.Embedding(config.max_input, w)
        self.pos_dec = nn.Embedding(config.max_output + 1, w)
        self.enc_layers = nn.ModuleList(_EncoderLayer(config) for _ in range(config.enc_layers))
        self.dec_layers = nn.ModuleList(_DecoderLayer(config) for _ in range(config.dec_layers))
        self.ln_enc = nn.LayerNorm(w)
        self.ln_dec = nn.LayerNorm(w)
        self.lm_head = nn.Linear(w, config.vocab_size, bias=False)
        self.apply(self._init)
        # Zero output head: the untrained model is exactly uniform over V.
        nn.init.zeros_(self.lm_head.weight)
        if dtype != torch.float32:
            self.to(dtype)

    @staticmethod
    def _init(module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def encode(self, src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        pos = torch.arange(src.shape[1], device=src.device)
        x = self.tok_emb(src) + self.pos_enc(pos)[None]
        attn_mask = src_mask[:, None, None, :]
        for layer in self.enc_layers:
            x = layer(x, attn_mask)
        return self.ln_enc(x)

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor,
               src_mask: torch.Tensor) -> torch.Tensor:
        length = tgt_in.shape[1]
        pos = torch.arange(length, device=tgt_in.device)
        x = self.tok_emb(tgt_in) + self.pos_dec(pos)[None]
        causal = torch.ones(length, length, dtype=torch.bool, device=tgt_in.device)
        causal = torch.tril(causal)[None, None]
        memory_mask = src_mask[:, None, None, :]
        for layer in self.dec_layers:
            x = layer(x, memory, causal, memory_mask)
        return self.lm_head(self.ln_dec(x))

    def forward(self, src, src_mask, tgt_in):
        return self.decode(tgt_in, self.encode(src, src_mask), src_mask)

    def freeze(self) -> "Seq2SeqModel":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def encode_pair(model: Seq2SeqModel, pair: PromptPair) -> tuple[list[int], list[int]]:
    """Tokenize a prompt pair; the target gets the end token appended.

    Over-limit inputs are truncated from the middle (scripts sit there),
    over-limit targets from the tail, both with a warning, never silently.
    """
    cfg = model.config
    vocab = model.vocab
    src = vocab.encode(pair.input_text)
    tgt = vocab.encode(pair.target_text)
    if not tgt:
        raise SchemaError(f"{pair.task} on {pair.motion_id}: target tokenizes to nothing")
    if len(src) > cfg.max_input:
        keep = cfg.max_input // 2
        log.warning(
            "input of %d tokens truncated from the middle to %d (%s on %s)",
            len(src), cfg.max_input, pair.task, pair.motion_id,
        )
        src = src[:keep] + src[len(src) - (cfg.max_input - keep):]
    if len(tgt) > cfg.max_output - 1:
        log.warning(
            "target of %d tokens truncated to %d (%s on %s)",
            len(tgt), cfg.max_output - 1, pair.task, pair.motion_id,
        )
        tgt = tgt[:cfg.max_output - 1]
    return src, tgt + [vocab.eos_id]


def make_batch(model: Seq2SeqModel, pairs: list[PromptPair]):
    """Pad a batch of pairs into (src, src_mask, tgt_in, labels) tensors.

    The decoder starts from the padding token; labels are padded with the
    padding id, which the loss ignores.
    """
    vocab = model.vocab
    encoded = [encode_pair(model, p) for p in pairs]
    max_src = max(len(s) for s, _ in encoded)
    max_tgt = max(len(t) for _, t in encoded)
    pad = vocab.pad_id
    src = torch.full((len(pairs), max_src), pad, dtype=torch.long)
    labels = torch.full((len(pairs), max_tgt), pad, dtype=torch.long)
    for i, (s, t) in enumerate(encoded):
        src[i, :len(s)] = torch.tensor(s)
        labels[i, :len(t)] = torch.tensor(t)
    src_mask = src.ne(pad)
    tgt_in = torch.cat(
        [torch.full((len(pairs), 1), pad, dtype=torch.long), labels[:, :-1]], dim=1
    )
    return src, src_mask, tgt_in, labels


def sequence_loss(model: Seq2SeqModel, src, src_mask, tgt_in, labels) -> torch.Tensor:
    """Mean per-token negative log-likelihood; padding masked out of the sum."""
    logits = model(src, src_mask, tgt_in)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1),
        ignore_index=model.vocab.pad_id,
    )


def train_step(model: Seq2SeqModel, optimizer: torch.optim.Optimizer,
               pairs: list[PromptPair]) -> float:
    """One teacher-forced optimizer step on a batch of prompt pairs."""
    model.train()
    loss = sequence_loss(model, *make_batch(model, pairs))
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def eval_loss(model: Seq2SeqModel, pairs: list[PromptPair], batch_size: int = 16) -> float:
    """Mean per-token NLL over pairs; no parameter mutation, deterministic."""
    if not pairs:
        raise ValueError("eval_loss needs a nonempty pair list")
    model.eval()
    total, count = 0.0, 0
    pad = model.vocab.pad_id
    with torch.no_grad():
        for i in range(0, len(pairs), batch_size):
            src, src_mask, tgt_in, labels = make_batch(model, pairs[i:i + batch_size])
            logits = model(src, src_mask, tgt_in)
            nll = F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), labels.reshape(-1),
                ignore_index=pad, reduction="sum",
            )
            total += float(nll)
            count += int(labels.ne(pad).sum())
    return total / count


@dataclass(frozen=True)
class GenerationResult:
    """Raw generated ids plus the parsed views downstream consumers need."""

    token_ids: tuple[int, ...]
    text: str
    truncated: bool
    motion_spans: tuple[tuple[int, ...], ...]
    diagnostics: tuple[Diagnostic, ...]


def generate(
    model: Seq2SeqModel,
    input_text: str,
    max_new_tokens: int | None = None,
    temperature: float | None = None,
    top_k: int | None = None,
    seed: int = 0,
) -> GenerationResult:
    """Autoregressive decoding until the end token or the output limit.

    Greedy by default; pass ``temperature`` (optionally with ``top_k``) for
    sampling. The result carries the raw ids, the detokenized text, and the
    extracted motion spans with any recovery diagnostics.
    """
    vocab = model.vocab
    cfg = model.config
    limit = cfg.max_output if max_new_tokens is None else min(max_new_tokens, cfg.max_output)
    model.eval()
    src_ids = vocab.encode(input_text)
    if len(src_ids) > cfg.max_input:
        keep = cfg.max_input // 2
        src_ids = src_ids[:keep] + src_ids[len(src_ids) - (cfg.max_input - keep):]
    src = torch.tensor(src_ids, dtype=torch.long)[None]
    src_mask = torch.ones_like(src, dtype=torch.bool)
    rng = torch.Generator().manual_seed(seed)
    out: list[int] = []
    truncated = True
    with torch.no_grad():
        memory = model.encode(src, src_mask)
        for _ in range(limit):
            tgt_in = torch.tensor([vocab.pad_id] + out, dtype=torch.long)[None]
            logits = model.decode(tgt_in, memory, src_mask)[0, -1]
            if temperature is None:
                next_id = int(torch.argmax(logits))
            else:
                scaled = logits / max(temperature, 1e-6)
                if top_k is not None:
                    kth = torch.topk(scaled, min(top_k, scaled.shape[-1])).values[-1]
                    scaled = scaled.masked_fill(scaled < kth, torch.finfo(scaled.dtype).min)
                probs = torch.softmax(scaled.to(torch.float32), dim=-1)
                next_id = int(torch.multinomial(probs, 1, generator=rng))
            if next_id == vocab.eos_id:
                truncated = False
                break
            out.append(next_id)
    extract = vocab.extract_motion_spans(out)
    return GenerationResult(
        token_ids=tuple(out),
        text=vocab.decode(out),
        truncated=truncated,
        motion_spans=extract.spans,
        diagnostics=extract.diagnostics,
    )


def save_lm(path, model: Seq2SeqModel, config_hash: str = "", parent_hash: str = "") -> None:
    cfg = model.config
    blocks: dict[str, np.ndarray] = {
        f"cfg/{name}": np.float32(value)
        for name, value in (
            ("vocab_size", cfg.vocab_size), ("width", cfg.width), ("heads", cfg.heads),
            ("enc_layers", cfg.enc_layers), ("dec_layers", cfg.dec_layers),
            ("ffn_mult", cfg.ffn_mult), ("max_input", cfg.max_input),
            ("max_output", cfg.max_output),
            ("n_text", model.vocab.n_text), ("n_motion", model.vocab.n_motion),
        )
    }
    if config_hash:
        blocks["meta/config_hash"] = str_block(config_hash)
    if parent_hash:
        blocks["meta/parent_hash"] = str_block(parent_hash)
    for name, tensor in model.state_dict().items():
        blocks[f"param/{name}"] = tensor.detach().to(torch.float32).numpy()
    write_blocks(path, LM_MAGIC, blocks)


def load_lm(path, vocab: UnifiedVocabulary) -> tuple[Seq2SeqModel, dict[str, str]]:
    """Load a checkpoint against a vocabulary; returns (model, metadata)."""
    _, blocks = read_blocks(path, LM_MAGIC)
    n_text = int(scalar(blocks["cfg/n_text"]))
    n_motion = int(scalar(blocks["cfg/n_motion"]))
    if n_text != vocab.n_text or n_motion != vocab.n_motion:
        raise DataFormatError(
            f"checkpoint {path} was trained with a different vocabulary "
            f"({n_text} text / {n_motion} motion tokens)"
        )
    cfg = Seq2SeqConfig(
        vocab_size=int(scalar(blocks["cfg/vocab_size"])),
        width=int(scalar(blocks["cfg/width"])),
        heads=int(scalar(blocks["cfg/heads"])),
        enc_layers=int(scalar(blocks["cfg/enc_layers"])),
        dec_layers=int(scalar(blocks["cfg/dec_layers"])),
        ffn_mult=int(scalar(blocks["cfg/ffn_mult"])),
        max_input=int(scalar(blocks["cfg/max_input"])),
        max_output=int(scalar(blocks["cfg/max_output"])),
    )
    model = Seq2SeqModel(cfg, vocab)
    state = {
        name[len("param/"):]: torch.from_numpy(arr.copy())
        for name, arr in blocks.items() if name.startswith("param/")
    }
    model.load_state_dict(state)
    meta = {
        key[len("meta/"):]: block_str(arr)
        for key, arr in blocks.items() if key.startswith("meta/")
    }
    return model, meta
