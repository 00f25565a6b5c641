"""Pluggable text/motion embedding oracles for the evaluation metrics.

The metric suite needs a pair of maps into one shared space: motion -> R^e and
text -> R^e. A pretrained evaluator network cannot be shipped, so three
stand-ins are provided:

* :class:`EventSequenceEmbedder` - handcrafted and deterministic. It decodes
  the synthetic generator's per-channel ramps back into ordered
  (channel, direction) events and embeds the same event sequence whether it
  came from frames, a motion script, or a caption, so matched pairs of
  ground-truth data land on identical vectors.
* :class:`StatsHashEmbedder` - handcrafted fallback for arbitrary feature
  dimensions: per-channel moments for motion, hashed bags of words for text.
* :class:`ContrastiveEmbedder` - a small trainable two-tower model with an
  in-batch contrastive loss, for end-to-end runs that want a learned space.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from random import Random
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .motion import MotionSequence, frames_per_snippet
from .script import SEP, parse_script
from .synth import DEFAULT_CHANNELS, Channel

Event = tuple[int, int]  # (channel index, direction)


class EmbeddingOracle(Protocol):
    dim: int
    descriptor: str

    def motion_embed(self, motion: MotionSequence) -> np.ndarray: ...

    def text_embed(self, text: str) -> np.ndarray: ...


@dataclass
class EventSequenceEmbedder:
    """Embed ordered body-part events, from frames or from text.

    A channel is active in a snippet when its net change exceeds
    ``threshold``; consecutive snippets with the same active movement collapse
    into one event. Text is parsed against the channel layout's statement and
    caption phrases. Slot ``2 * channel + (0 if up else 1)`` accumulates
    ``decay ** ordinal``.
    """

    channels: tuple[Channel, ...] = DEFAULT_CHANNELS
    snippet_seconds: float = 0.5
    threshold: float = 0.2
    decay: float = 0.75
    descriptor: str = "handcrafted"

    @property
    def dim(self) -> int:
        return 2 * len(self.channels)

    def _embed_events(self, events: list[Event]) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        for ordinal, (channel, direction) in enumerate(events):
            slot = 2 * channel + (0 if direction > 0 else 1)
            out[slot] += self.decay ** ordinal
        return out.astype(np.float32)

    def motion_events(self, motion: MotionSequence) -> list[Event]:
        per = frames_per_snippet(motion.fps, self.snippet_seconds)
        frames = np.asarray(motion.frames)
        n_channels = min(motion.dim, len(self.channels))
        events: list[Event] = []
        prev: Event | None = None
        for start in range(0, motion.n_frames, per):
            chunk = frames[start:min(start + per, motion.n_frames)]
            deltas = chunk[-1, :n_channels] - chunk[0, :n_channels]
            top = int(np.argmax(np.abs(deltas)))
            if abs(deltas[top]) >= self.threshold:
                current = (top, 1 if deltas[top] > 0 else -1)
            else:
                current = None
            if current is not None and current != prev:
                events.append(current)
            prev = current
        return events

    def motion_embed(self, motion: MotionSequence) -> np.ndarray:
        return self._embed_events(self.motion_events(motion))

    def _phrase_table(self) -> list[tuple[str, Event]]:
        table = []
        for idx, channel in enumerate(self.channels):
            for direction, stmt, clause in (
                (1, channel.statements[0], channel.caption_clauses[0]),
                (-1, channel.statements[1], channel.caption_clauses[1]),
            ):
                table.append((stmt, (idx, direction)))
                table.append((clause, (idx, direction)))
        return table

    def text_events(self, text: str) -> list[Event]:
        if SEP in text:
            script, _ = parse_script(text, self.snippet_seconds)
            statements = list(script.snippets)
        else:
            statements = [text]
        hits: list[tuple[int, Event]] = []
        offset = 0
        for statement in statements:
            for phrase, event in self._phrase_table():
                start = 0
                while True:
                    pos = statement.find(phrase, start)
                    if pos < 0:
                        break
                    hits.append((offset + pos, event))
                    start = pos + len(phrase)
            offset += len(statement) + 1
        hits.sort()
        events: list[Event] = []
        prev: Event | None = None
        for _, event in hits:
            if event != prev:
                events.append(event)
            prev = event
        return events

    def text_embed(self, text: str) -> np.ndarray:
        return self._embed_events(self.text_events(text))


@dataclass
class StatsHashEmbedder:
    """Generic handcrafted oracle for arbitrary feature dimensions.

    Motion: per-channel mean / standard deviation / mean absolute velocity,
    projected to ``dim`` with a seeded fixed matrix. Text: words hashed into
    ``dim`` signed buckets. Both sides L2-normalized.
    """

    dim: int = 16
    seed: int = 0
    descriptor: str = "handcrafted"

    def motion_embed(self, motion: MotionSequence) -> np.ndarray:
        frames = np.asarray(motion.frames, dtype=np.float64)
        velocity = np.abs(np.diff(frames, axis=0)).mean(axis=0) if frames.shape[0] > 1 \
            else np.zeros(frames.shape[1])
        feats = np.concatenate([frames.mean(0), frames.std(0), velocity])
        rng = np.random.default_rng((self.seed, feats.size))
        projection = rng.standard_normal((self.dim, feats.size)) / np.sqrt(feats.size)
        out = projection @ feats
        norm = np.linalg.norm(out)
        return (out / norm if norm > 0 else out).astype(np.float32)

    def text_embed(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        for word in text.split():
            h = zlib.crc32(word.encode("utf-8"))
            out[h % self.dim] += 1.0 if (h >> 17) & 1 else -1.0
        norm = np.linalg.norm(out)
        return (out / norm if norm > 0 else out).astype(np.float32)


class ContrastiveEmbedder(nn.Module):
    """Two-tower text/motion embedder trained with in-batch contrastive loss."""

    descriptor = "trained-contrastive"

    def __init__(self, motion_dim: int, dim: int = 16, width: int = 32,
                 n_buckets: int = 512):
        super().__init__()
        self.dim = dim
        self.n_buckets = n_buckets
        self.motion_net = nn.Sequential(
            nn.Conv1d(motion_dim, width, 4, 2, 1), nn.ReLU(),
            nn.Conv1d(width, width, 4, 2, 1), nn.ReLU(),
        )
        self.motion_out = nn.Linear(width, dim)
        self.text_emb = nn.EmbeddingBag(n_buckets, width, mode="mean")
        self.text_out = nn.Linear(width, dim)

    def _buckets(self, text: str) -> list[int]:
        ids = [zlib.crc32(w.encode("utf-8")) % self.n_buckets for w in text.split()]
        return ids or [0]

    def motion_forward(self, frames: torch.Tensor) -> torch.Tensor:
        h = self.motion_net(frames.transpose(1, 2)).mean(dim=2)
        return F.normalize(self.motion_out(h), dim=-1)

    def text_forward(self, texts: list[str]) -> torch.Tensor:
        flat, offsets = [], []
        for text in texts:
            offsets.append(len(flat))
            flat.extend(self._buckets(text))
        h = self.text_emb(torch.tensor(flat), torch.tensor(offsets))
        return F.normalize(self.text_out(h), dim=-1)

    @torch.no_grad()
    def motion_embed(self, motion: MotionSequence) -> np.ndarray:
        self.eval()
        frames = torch.from_numpy(np.asarray(motion.frames).copy())[None]
        return self.motion_forward(frames)[0].numpy()

    @torch.no_grad()
    def text_embed(self, text: str) -> np.ndarray:
        self.eval()
        return self.text_forward([text])[0].numpy()


def train_contrastive(
    pairs: list[tuple[str, MotionSequence]],
    dim: int = 16,
    steps: int = 300,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
    temperature: float = 0.1,
) -> ContrastiveEmbedder:
    """Fit a contrastive embedder on (caption, motion) pairs."""
    if len(pairs) < 2:
        raise ValueError("contrastive training needs at least two pairs")
    torch.manual_seed(seed)
    rng = Random(seed)
    motion_dim = pairs[0][1].dim
    model = ContrastiveEmbedder(motion_dim, dim=dim)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    max_t = max(p[1].n_frames for p in pairs)
    model.train()
    for _ in range(steps):
        batch = [pairs[rng.randrange(len(pairs))] for _ in range(min(batch_size, len(pairs)))]
        frames = torch.zeros(len(batch), max_t, motion_dim)
        for i, (_, motion) in enumerate(batch):
            t = motion.n_frames
            frames[i, :t] = torch.from_numpy(np.asarray(motion.frames).copy())
            frames[i, t:] = frames[i, t - 1]
        text_vecs = model.text_forward([c for c, _ in batch])
        motion_vecs = model.motion_forward(frames)
        logits = text_vecs @ motion_vecs.t() / temperature
        labels = torch.arange(len(batch))
        loss = F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
    model.eval()
    return model


def embed_motions(oracle: EmbeddingOracle, motions: list[MotionSequence]) -> np.ndarray:
    return np.stack([oracle.motion_embed(m) for m in motions])


def embed_texts(oracle: EmbeddingOracle, texts: list[str]) -> np.ndarray:
    return np.stack([oracle.text_embed(t) for t in texts])
