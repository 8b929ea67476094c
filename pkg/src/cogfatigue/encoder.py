"""Spatio-temporal encoder: per-timepoint 2D CNN, LSTM, attention pooling.

Each timepoint's 3D volume enters the CNN as a multi-channel 2D image
(slices become input channels).  Three stride-2 conv/batch-norm/ReLU blocks
and global average pooling yield one feature vector per timepoint; an LSTM
models the sequence; a learned attention vector pools the hidden states;
a linear head projects to the unit-norm contrastive embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError, ValidationError
from .seeding import derive_seed


@dataclass(frozen=True)
class EncoderConfig:
    conv_channels: tuple[int, int, int] = (64, 128, 256)
    kernel: int = 3
    stride: int = 2
    lstm_hidden: int = 256
    lstm_layers: int = 1
    embed_dim: int = 128
    input_depth: int = 32
    input_hw: tuple[int, int] = (64, 64)
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if len(self.conv_channels) != 3 or any(c < 1 for c in self.conv_channels):
            raise ValidationError(f"conv_channels must be 3 positive ints, got {self.conv_channels}")
        if self.embed_dim < 2:
            raise ValidationError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kernel < 1 or self.stride < 1 or self.lstm_hidden < 1 or self.lstm_layers < 1:
            raise ValidationError("kernel, stride, lstm_hidden and lstm_layers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "conv_channels": list(self.conv_channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "embed_dim": self.embed_dim,
            "input_depth": self.input_depth,
            "input_hw": list(self.input_hw),
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["input_hw"] = tuple(d["input_hw"])
        return cls(**d)


class FatigueEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.conv_channels
        pad = cfg.kernel // 2
        self.conv1 = nn.Conv2d(cfg.input_depth, c1, cfg.kernel, stride=cfg.stride, padding=pad)
        self.bn1 = nn.BatchNorm2d(c1)
        self.conv2 = nn.Conv2d(c1, c2, cfg.kernel, stride=cfg.stride, padding=pad)
        self.bn2 = nn.BatchNorm2d(c2)
        self.conv3 = nn.Conv2d(c2, c3, cfg.kernel, stride=cfg.stride, padding=pad)
        self.bn3 = nn.BatchNorm2d(c3)
        self.lstm = nn.LSTM(c3, cfg.lstm_hidden, num_layers=cfg.lstm_layers, batch_first=True)
        self.attn_vector = nn.Parameter(torch.zeros(cfg.lstm_hidden))
        self.proj = nn.Linear(cfg.lstm_hidden, cfg.embed_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def _check_batch(self, x: torch.Tensor) -> None:
        if x.ndim != 5:
            raise ShapeError(f"expected (B, n, Z, Y, X) batch, got ndim={x.ndim}")
        b, n, z, y, xdim = x.shape
        if n < 1:
            raise ShapeError("need at least one timepoint")
        if z != self.cfg.input_depth or (y, xdim) != tuple(self.cfg.input_hw):
            raise ShapeError(
                f"volume dims ({z}, {y}, {xdim}) do not match config "
                f"({self.cfg.input_depth}, {self.cfg.input_hw[0]}, {self.cfg.input_hw[1]})"
            )

    def timepoint_features(self, x: torch.Tensor) -> torch.Tensor:
        """CNN features per timepoint: (B, n, Z, Y, X) -> (B, n, C3)."""
        self._check_batch(x)
        b, n = x.shape[:2]
        v = x.reshape(b * n, *x.shape[2:])
        v = F.relu(self.bn1(self.conv1(v)))
        v = F.relu(self.bn2(self.conv2(v)))
        v = F.relu(self.bn3(self.conv3(v)))
        v = v.mean(dim=(2, 3))
        return self.dropout(v.reshape(b, n, -1))

    def sequence_parts(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Hidden states (B, n, H), attention weights (B, n), pooled (B, H)."""
        feats = self.timepoint_features(x)
        hidden, _ = self.lstm(feats)
        scores = hidden @ self.attn_vector
        alpha = torch.softmax(scores, dim=1)
        pooled = (alpha.unsqueeze(-1) * hidden).sum(dim=1)
        return hidden, alpha, pooled

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        return self.sequence_parts(x)[2]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Unit-norm contrastive embedding, (B, embed_dim)."""
        return F.normalize(self.proj(self.pooled(x)), dim=1)


def init_encoder(cfg: EncoderConfig, seed: int) -> FatigueEncoder:
    """Build an encoder with fan-in-scaled uniform weights, seeded.

    Batch-norm starts at gain 1 / bias 0 with zero-mean unit-var running
    stats; everything else draws U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a
    private generator, so equal seeds give identical tensors.
    """
    torch.manual_seed(derive_seed(seed, "encoder-scaffold") % (2**63))  # pins ctor draws
    enc = FatigueEncoder(cfg)
    gen = torch.Generator().manual_seed(derive_seed(seed, "encoder-init") % (2**63))
    with torch.no_grad():
        fan_ins = {}
        for name, param in enc.named_parameters():
            parent = name.rsplit(".", 1)[0] if "." in name else name
            if parent in ("bn1", "bn2", "bn3"):
                param.fill_(1.0 if name.endswith("weight") else 0.0)
                continue
            if name.endswith(".weight") and param.ndim > 1:
                fan_ins[parent] = int(np.prod(param.shape[1:]))
            if name.startswith("lstm."):
                bound = 1.0 / math.sqrt(cfg.lstm_hidden)
            elif name == "attn_vector":
                bound = 1.0 / math.sqrt(cfg.lstm_hidden)
            else:
                bound = 1.0 / math.sqrt(fan_ins[parent])
            param.uniform_(-bound, bound, generator=gen)
    return enc


def _as_batch_tensor(batch: np.ndarray | torch.Tensor) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch.float()
    return torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))


def encode(encoder: FatigueEncoder, batch: np.ndarray | torch.Tensor) -> np.ndarray:
    """Unit-norm embeddings for a (B, n, Z, Y, X) batch, as float32 numpy."""
    with torch.no_grad():
        return encoder(_as_batch_tensor(batch)).numpy()


def pooled_features(encoder: FatigueEncoder, batch: np.ndarray | torch.Tensor) -> np.ndarray:
    """Attention-pooled LSTM state before projection (the classifier input)."""
    with torch.no_grad():
        return encoder.pooled(_as_batch_tensor(batch)).numpy()


def attention_weights(encoder: FatigueEncoder, batch: np.ndarray | torch.Tensor) -> np.ndarray:
    """Per-timepoint softmax attention weights, rows summing to 1."""
    with torch.no_grad():
        return encoder.sequence_parts(_as_batch_tensor(batch))[1].numpy()


def parameter_count(encoder: FatigueEncoder) -> int:
    return sum(p.numel() for p in encoder.parameters())
