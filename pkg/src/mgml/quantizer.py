"""Motion tokenizer: a small VQ-VAE with a temporal-downsampling encoder.

The encoder maps ``T x d`` frames to ``T/l x d_c`` latents through stride-2
convolutions, each latent snaps to its nearest codebook row (lowest index on
ties), and the decoder upsamples the looked-up rows back to frames. Training
minimizes reconstruction + embedding + beta * commitment, all as mean squared
errors, with a straight-through gradient across the codebook lookup. Once
trained the tokenizer is frozen and everything downstream consumes its token
ids.

Checkpoint format: magic ``MGQ1``, version, named float32 parameter blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from random import Random

import numpy as np
import torch
from torch import nn

from .checkpoint import read_blocks, scalar, write_blocks
from .errors import InvalidTokenError, NumericError, TrainingError
from .motion import MotionSequence

log = logging.getLogger(__name__)

QUANTIZER_MAGIC = b"MGQ1"


@dataclass(frozen=True)
class QuantizerConfig:
    input_dim: int
    codebook_size: int = 64
    code_dim: int = 8
    width: int = 64
    downsample: int = 4  # temporal rate l; power of two
    beta: float = 0.25

    def __post_init__(self):
        if self.codebook_size < 1 or self.code_dim < 1 or self.input_dim < 1:
            raise ValueError("codebook_size, code_dim and input_dim must be >= 1")
        if self.downsample < 1 or self.downsample & (self.downsample - 1):
            raise ValueError(f"downsample must be a power of two, got {self.downsample}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


class MotionQuantizer(nn.Module):
    def __init__(self, config: QuantizerConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        d, w, c = config.input_dim, config.width, config.code_dim
        stages = int(math.log2(config.downsample))
        enc: list[nn.Module] = [nn.Conv1d(d, w, 3, 1, 1), nn.ReLU()]
        for _ in range(stages):
            enc += [nn.Conv1d(w, w, 4, 2, 1), nn.ReLU(), nn.Conv1d(w, w, 3, 1, 1), nn.ReLU()]
        enc.append(nn.Conv1d(w, c, 3, 1, 1))
        self.encoder = nn.Sequential(*enc)
        dec: list[nn.Module] = [nn.Conv1d(c, w, 3, 1, 1), nn.ReLU()]
        for _ in range(stages):
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv1d(w, w, 3, 1, 1), nn.ReLU(),
            ]
        dec.append(nn.Conv1d(w, d, 3, 1, 1))
        self.decoder = nn.Sequential(*dec)
        self.codebook = nn.Parameter(
            torch.empty(config.codebook_size, c).uniform_(-1.0 / config.codebook_size,
                                                          1.0 / config.codebook_size)
        )
        if dtype != torch.float32:
            self.to(dtype)

    def encode_latents(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, d) frames -> (B, T/l, d_c) latents; T must be a multiple of l."""
        return self.encoder(frames.transpose(1, 2)).transpose(1, 2)

    def decode_latents(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, T', d_c) latents -> (B, T' * l, d) frames."""
        return self.decoder(latents.transpose(1, 2)).transpose(1, 2)

    def nearest_codes(self, flat_latents: torch.Tensor) -> torch.Tensor:
        d2 = (
            flat_latents.pow(2).sum(1, keepdim=True)
            - 2 * flat_latents @ self.codebook.t()
            + self.codebook.pow(2).sum(1)
        )
        return torch.argmin(d2, dim=1)

    def loss_terms(self, frames: torch.Tensor) -> dict[str, torch.Tensor]:
        """Reconstruction / embedding / commitment MSE terms plus their total.

        The decoder input is ``z + sg(z_q - z)`` so reconstruction gradients
        reach the encoder through the lookup while the codebook trains only
        from the embedding term.
        """
        z = self.encode_latents(frames)
        if not torch.isfinite(z).all():
            raise NumericError("encoder produced non-finite latents")
        flat = z.reshape(-1, z.shape[-1])
        ids = self.nearest_codes(flat.detach())
        z_q = self.codebook[ids].reshape(z.shape)
        decoded = self.decode_latents(z + (z_q - z).detach())
        if not torch.isfinite(decoded).all():
            raise NumericError("decoder produced non-finite frames")
        recon = (frames - decoded).pow(2).mean()
        embed = (z.detach() - z_q).pow(2).mean()
        commit = (z - z_q.detach()).pow(2).mean()
        total = recon + embed + self.config.beta * commit
        if not torch.isfinite(total):
            raise NumericError("loss is non-finite")
        return {"recon": recon, "embed": embed, "commit": commit, "total": total, "ids": ids}

    def freeze(self) -> "MotionQuantizer":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def quantize(latents: np.ndarray, codebook: np.ndarray) -> list[int]:
    """Nearest-codebook-row index per latent (L2); ties break to the lowest index."""
    z = np.asarray(latents, dtype=np.float64)
    book = np.asarray(codebook, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or book.ndim != 2 or z.shape[1] != book.shape[1]:
        raise ValueError(
            f"latent dim {z.shape} does not match codebook dim {book.shape}"
        )
    if not (np.isfinite(z).all() and np.isfinite(book).all()):
        raise ValueError("latents and codebook must be finite")
    d2 = ((z[:, None, :] - book[None, :, :]) ** 2).sum(axis=2)
    return [int(i) for i in np.argmin(d2, axis=1)]


def pad_to_multiple(frames: np.ndarray, multiple: int) -> np.ndarray:
    """Right-pad by repeating the last frame until T divides ``multiple``."""
    t = frames.shape[0]
    remainder = t % multiple
    if remainder == 0:
        return frames
    pad = np.repeat(frames[-1:], multiple - remainder, axis=0)
    return np.concatenate([frames, pad], axis=0)


def encode_motion(motion: MotionSequence, model: MotionQuantizer) -> list[int]:
    """Tokenize a motion; the token count is always ceil(T / l)."""
    if motion.n_frames < 1:
        raise ValueError("cannot encode an empty motion")
    l = model.config.downsample
    frames = pad_to_multiple(np.asarray(motion.frames), l)
    dtype = model.codebook.dtype
    with torch.no_grad():
        latents = model.encode_latents(torch.from_numpy(frames.copy()).to(dtype)[None])
    return quantize(latents[0].numpy(), model.codebook.detach().numpy())


def reconstruct(
    tokens: list[int], model: MotionQuantizer, n_frames: int, fps: int = 20
) -> MotionSequence:
    """Decode token ids back to frames, trimmed or last-frame-padded to ``n_frames``."""
    k = model.config.codebook_size
    for t in tokens:
        if not 0 <= t < k:
            raise InvalidTokenError(f"token id {t} outside codebook of size {k}")
    if not tokens:
        raise ValueError("cannot reconstruct from an empty token sequence")
    ids = torch.tensor(tokens, dtype=torch.long)
    with torch.no_grad():
        frames = model.decode_latents(model.codebook[ids][None])[0].numpy()
    if frames.shape[0] < n_frames:
        pad = np.repeat(frames[-1:], n_frames - frames.shape[0], axis=0)
        frames = np.concatenate([frames, pad], axis=0)
    return MotionSequence(frames[:n_frames].astype(np.float32), fps)


def vqvae_loss(motion: MotionSequence, model: MotionQuantizer) -> tuple[float, dict[str, np.ndarray]]:
    """Total training loss on one motion plus gradients for every parameter.

    Works on frozen models too (gradients are enabled for the call only).
    """
    l = model.config.downsample
    frames = pad_to_multiple(np.asarray(motion.frames), l)
    x = torch.from_numpy(frames.copy()).to(model.codebook.dtype)[None]
    frozen = [p for p in model.parameters() if not p.requires_grad]
    for p in frozen:
        p.requires_grad_(True)
    try:
        model.zero_grad(set_to_none=True)
        terms = model.loss_terms(x)
        terms["total"].backward()
        grads = {
            name: p.grad.detach().numpy().copy()
            for name, p in model.named_parameters()
            if p.grad is not None
        }
    finally:
        model.zero_grad(set_to_none=True)
        for p in frozen:
            p.requires_grad_(False)
    return float(terms["total"].detach()), grads


@dataclass
class TrainSchedule:
    steps: int = 4000
    batch_size: int = 32
    window_frames: int = 40
    lr: float = 2e-4
    seed: int = 0
    log_every: int = 100
    code_reset_interval: int | None = 256  # None disables dead-code resets


def _sample_window(frames: np.ndarray, window: int, rng: Random) -> np.ndarray:
    t = frames.shape[0]
    if t >= window:
        start = rng.randrange(t - window + 1)
        return frames[start:start + window]
    return pad_to_multiple(frames, window)[:window]


def train_vqvae(
    motions: list[MotionSequence], model: MotionQuantizer, schedule: TrainSchedule
) -> list[tuple[int, float, float, float, float]]:
    """Train on random fixed-length windows and freeze the model.

    Returns the loss curve as (step, recon, embed, commit, total) rows.
    Dead codebook entries (unused for ``code_reset_interval`` steps) are
    re-seeded from current encoder outputs.
    """
    if not motions:
        raise ValueError("training needs a nonempty dataset")
    if model.config.beta == 0:
        log.warning("commitment loss disabled (beta=0); training continues without it")
    window = schedule.window_frames - schedule.window_frames % model.config.downsample
    window = max(window, model.config.downsample)
    rng = Random(schedule.seed)
    torch.manual_seed(schedule.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=schedule.lr, betas=(0.9, 0.99), weight_decay=0.0
    )
    k = model.config.codebook_size
    idle = np.zeros(k, dtype=np.int64)
    curve = []
    model.train()
    for step in range(1, schedule.steps + 1):
        batch = np.stack([
            _sample_window(np.asarray(rng.choice(motions).frames), window, rng)
            for _ in range(schedule.batch_size)
        ])
        x = torch.from_numpy(batch)
        terms = model.loss_terms(x)
        loss = terms["total"]
        if not torch.isfinite(loss):
            raise TrainingError(f"loss diverged (non-finite) at step {step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        if schedule.code_reset_interval:
            idle += 1
            idle[np.unique(terms["ids"].numpy())] = 0
            dead = np.flatnonzero(idle >= schedule.code_reset_interval)
            if dead.size:
                with torch.no_grad():
                    flat = model.encode_latents(x).reshape(-1, model.config.code_dim)
                    pick = [rng.randrange(flat.shape[0]) for _ in range(dead.size)]
                    model.codebook[dead] = flat[pick]
                idle[dead] = 0

        if step % schedule.log_every == 0 or step == schedule.steps:
            curve.append((
                step, float(terms["recon"].detach()), float(terms["embed"].detach()),
                float(terms["commit"].detach()), float(loss.detach()),
            ))
    model.freeze()
    return curve


def write_loss_curve(path, curve) -> None:
    lines = ["step,recon,embed,commit,total"]
    lines += [f"{s},{r:.8g},{e:.8g},{c:.8g},{t:.8g}" for s, r, e, c, t in curve]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_quantizer(path, model: MotionQuantizer) -> None:
    cfg = model.config
    blocks: dict[str, np.ndarray] = {
        f"cfg/{name}": np.float32(value)
        for name, value in (
            ("input_dim", cfg.input_dim), ("codebook_size", cfg.codebook_size),
            ("code_dim", cfg.code_dim), ("width", cfg.width),
            ("downsample", cfg.downsample), ("beta", cfg.beta),
        )
    }
    for name, tensor in model.state_dict().items():
        blocks[f"param/{name}"] = tensor.detach().to(torch.float32).numpy()
    write_blocks(path, QUANTIZER_MAGIC, blocks)


def load_quantizer(path) -> MotionQuantizer:
    _, blocks = read_blocks(path, QUANTIZER_MAGIC)
    cfg = QuantizerConfig(
        input_dim=int(scalar(blocks["cfg/input_dim"])),
        codebook_size=int(scalar(blocks["cfg/codebook_size"])),
        code_dim=int(scalar(blocks["cfg/code_dim"])),
        width=int(scalar(blocks["cfg/width"])),
        downsample=int(scalar(blocks["cfg/downsample"])),
        beta=scalar(blocks["cfg/beta"]),
    )
    model = MotionQuantizer(cfg)
    state = {
        name[len("param/"):]: torch.from_numpy(arr.copy())
        for name, arr in blocks.items() if name.startswith("param/")
    }
    model.load_state_dict(state)
    return model.freeze()
