"""Transformer autoencoder shared by all diffusion models.

Input is four feature streams over a fixed window of N frames (three noisy
signal groups plus the conditioning group). Each stream runs through its
own causal 1-D convolution along time, the four outputs are concatenated
and linearly fused, a sinusoidal embedding of the diffusion step is summed
into every token, and sinusoidal positional encoding is added last before
the first transformer block. Encoder and decoder are identical stacks of
pre-norm causal self-attention blocks (token i attends to j <= i only),
followed by a linear head.

Causality is end to end: convolutions pad on the left only, so
perturbing frame k can never change outputs at frames < k.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .container import atomic_write_bytes

CHECKPOINT_MAGIC = b"LPCKPT01"

CONV_KERNEL = 3


class CheckpointError(RuntimeError):
    code = "checkpoint_error"


class CheckpointCompatibilityError(CheckpointError):
    code = "checkpoint_incompatible"


@dataclass(frozen=True)
class DenoiserConfig:
    encoder_blocks: int = 4
    decoder_blocks: int = 4
    model_width: int = 256
    attention_heads: int = 4
    window_frames: int = 60
    input_part_widths: tuple = (144, 54, 72, 54)
    condition_width: int = 54
    output_width: int = 270
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.input_part_widths) != 4:
            raise ValueError("input_part_widths must list exactly 4 stream widths")
        if any(w <= 0 for w in self.input_part_widths):
            raise ValueError("part widths must be positive")
        if self.model_width % self.attention_heads != 0:
            raise ValueError("attention_heads must divide model_width")
        if self.window_frames < 2:
            raise ValueError("window_frames must be at least 2")

    @property
    def input_width(self) -> int:
        return sum(self.input_part_widths)


def tiny_config(**overrides) -> DenoiserConfig:
    """Test-scale profile: width 16, one encoder and one decoder block."""
    base = dict(
        encoder_blocks=1,
        decoder_blocks=1,
        model_width=16,
        attention_heads=2,
        window_frames=8,
        input_part_widths=(4, 3, 2, 3),
        condition_width=3,
        output_width=9,
        dropout=0.0,
    )
    base.update(overrides)
    return DenoiserConfig(**base)


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos embedding; positions (...,) -> (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = positions.to(torch.float64)[..., None] * freqs
    emb = torch.cat((torch.sin(args), torch.cos(args)), dim=-1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


class CausalConv1d(nn.Module):
    """Conv along time with left-only padding (no future leakage)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = CONV_KERNEL):
        super().__init__()
        self.kernel = kernel
        self.conv = nn.Conv1d(in_ch, out_ch, kernel)

    def forward(self, x):  # x: (B, N, C)
        x = x.transpose(1, 2)
        x = F.pad(x, (self.kernel - 1, 0))
        return self.conv(x).transpose(1, 2)


class TransformerBlock(nn.Module):
    """Pre-norm causal self-attention + feed-forward, both residual."""

    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.ff1 = nn.Linear(width, 4 * width)
        self.ff2 = nn.Linear(4 * width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):  # x: (B, N, C); mask: (N, N) bool, True = blocked
        b, n, c = x.shape
        h = self.heads
        y = self.norm1(x)
        q, k, v = self.qkv(y).chunk(3, dim=-1)
        q = q.view(b, n, h, c // h).transpose(1, 2)
        k = k.view(b, n, h, c // h).transpose(1, 2)
        v = v.view(b, n, h, c // h).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(c // h)
        att = att.masked_fill(mask, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, n, c)
        x = x + self.drop(self.proj(y))
        y = self.norm2(x)
        x = x + self.drop(self.ff2(F.gelu(self.ff1(y))))
        return x


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        c = config.model_width
        self.part_convs = nn.ModuleList(
            [CausalConv1d(w, c) for w in config.input_part_widths]
        )
        self.fuse = nn.Linear(4 * c, c)
        self.blocks = nn.ModuleList(
            [
                TransformerBlock(c, config.attention_heads, config.dropout)
                for _ in range(config.encoder_blocks + config.decoder_blocks)
            ]
        )
        self.out_norm = nn.LayerNorm(c)
        self.head = nn.Linear(c, config.output_width)
        mask = torch.triu(torch.ones(config.window_frames, config.window_frames, dtype=torch.bool), diagonal=1)
        self.register_buffer("causal_mask", mask, persistent=False)
        pos = sinusoidal_embedding(torch.arange(config.window_frames), c).to(torch.float32)
        self.register_buffer("pos_encoding", pos, persistent=False)

    def embed(self, parts, t) -> torch.Tensor:
        """Fuse the four feature streams with the step embedding.

        parts: list of 4 tensors (B, N, w_i); t: int or (B,) tensor.
        Returns tokens (B, N, model_width).
        """
        if len(parts) != 4:
            raise ValueError("expected 4 input streams")
        for part, w in zip(parts, self.config.input_part_widths):
            if part.shape[-1] != w:
                raise ValueError(
                    f"stream width mismatch: got {tuple(p.shape[-1] for p in parts)}, "
                    f"configured {self.config.input_part_widths}"
                )
        n = parts[0].shape[1]
        feats = torch.cat([conv(p) for conv, p in zip(self.part_convs, parts)], dim=-1)
        tokens = self.fuse(feats)
        if not torch.is_tensor(t):
            t = torch.tensor([t])
        t_emb = sinusoidal_embedding(t.reshape(-1), self.config.model_width).to(tokens.dtype)
        tokens = tokens + t_emb.view(-1, 1, self.config.model_width)
        tokens = tokens + self.pos_encoding[:n].to(tokens.dtype)
        return tokens

    def forward(self, parts, t) -> torch.Tensor:
        tokens = self.embed(parts, t)
        n = tokens.shape[1]
        mask = self.causal_mask[:n, :n]
        for block in self.blocks:
            tokens = block(tokens, mask)
        return self.head(self.out_norm(tokens))


def parameter_count(config: DenoiserConfig) -> int:
    """Closed-form parameter count of ``Denoiser(config)``.

    part convs:   sum_i (w_i * C * K + C)
    fusion:       4C * C + C
    per block:    2 * 2C (norms) + C*3C + 3C (qkv) + C*C + C (proj)
                  + C*4C + 4C + 4C*C + C (feed-forward)
    output:       2C (norm) + C * out + out
    """
    c = config.model_width
    k = CONV_KERNEL
    total = sum(w * c * k + c for w in config.input_part_widths)
    total += 4 * c * c + c
    per_block = 2 * (2 * c) + (c * 3 * c + 3 * c) + (c * c + c) + (c * 4 * c + 4 * c) + (4 * c * c + c)
    total += (config.encoder_blocks + config.decoder_blocks) * per_block
    total += 2 * c + c * config.output_width + config.output_width
    return total


def save_checkpoint(path: str, model: Denoiser, metadata: dict, extra_tensors: dict | None = None):
    """Serialize config + named float32 tensors into the versioned format.

    Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON
    header, then the raw little-endian float32 tensor data in header
    order. See docs/formats.md.
    """
    tensors = {f"model.{name}": p.detach().to(torch.float32) for name, p in model.state_dict().items()}
    for name, t in (extra_tensors or {}).items():
        tensors[name] = t.detach().to(torch.float32)

    header = {
        "config": asdict(model.config),
        "metadata": metadata,
        "tensors": [],
    }
    payloads = []
    offset = 0
    for name, t in tensors.items():
        raw = t.contiguous().numpy().astype("<f4").tobytes(order="C")
        header["tensors"].append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)

    header_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += len(header_blob).to_bytes(8, "little")
    out += header_blob
    for raw in payloads:
        out += raw
    atomic_write_bytes(path, bytes(out))


def load_checkpoint(path: str):
    """Returns (model in eval mode, metadata dict, extra tensor dict)."""
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint at {path}")
    blob = open(path, "rb").read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointCompatibilityError("bad magic; not a checkpoint of this format")
    hlen = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    data = blob[16 + hlen :]

    cfg = header["config"]
    cfg["input_part_widths"] = tuple(cfg["input_part_widths"])
    config = DenoiserConfig(**cfg)
    model = Denoiser(config)

    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(data):
            raise CheckpointError("truncated checkpoint payload")
        arr = np.frombuffer(data[start : start + n], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())

    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    extra = {k: v for k, v in tensors.items() if not k.startswith("model.")}
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointCompatibilityError(str(e)) from e
    model.eval()
    return model, header["metadata"], extra
