"""Frame-interval encoding and feature conditioning.

The time between two frames is encoded as the raw interval plus a bank of
sinusoids at octave-spaced frequencies:

    PE(dt) = [dt, sin(w_0 dt), ..., sin(w_{K-1} dt), cos(w_0 dt), ..., cos(w_{K-1} dt)]

with w_i = pi * 2**i. A conditioning layer maps the encoding to per-channel
scale and shift and applies them feature-wise:

    out = (1 + alpha) * feat + beta

Both linear maps start at zero, so conditioning is the identity at
initialization and training only bends features away from identity where
the interval actually matters.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

DEFAULT_K_PE = 8


def frequency_bank(k_pe: int) -> np.ndarray:
    """The octave ladder w_i = pi * 2**i for i in [0, k_pe)."""
    if k_pe < 1:
        raise ValueError(f"k_pe must be at least 1, got {k_pe}")
    return np.pi * np.exp2(np.arange(k_pe, dtype=np.float64))


def encode_time(delta_t: float, k_pe: int = DEFAULT_K_PE) -> np.ndarray:
    """Encode a frame interval (seconds) as a (1 + 2*k_pe,) float64 vector."""
    if not np.isfinite(delta_t) or delta_t <= 0:
        raise ValueError(f"delta_t must be positive and finite, got {delta_t}")
    ang = frequency_bank(k_pe) * float(delta_t)
    return np.concatenate([[float(delta_t)], np.sin(ang), np.cos(ang)])


def encode_time_batch(delta_ts, k_pe: int = DEFAULT_K_PE) -> torch.Tensor:
    """Stack `encode_time` over a batch; returns float32 (B, 1 + 2*k_pe)."""
    rows = [encode_time(float(dt), k_pe) for dt in np.asarray(delta_ts).reshape(-1)]
    return torch.from_numpy(np.stack(rows)).float()


def condition_features(feat: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Apply (1 + alpha) * feat + beta channel-wise to an (H, W, C) map.

    The reference (numpy, channel-last) form of the conditioning math; the
    torch layer below computes the same thing on (B, C, H, W) tensors with
    learned alpha/beta.
    """
    feat = np.asarray(feat, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if feat.shape[-1] != alpha.shape[0] or feat.shape[-1] != beta.shape[0]:
        raise ValueError(
            f"channel mismatch: feat has {feat.shape[-1]} channels, "
            f"alpha {alpha.shape[0]}, beta {beta.shape[0]}"
        )
    return (1.0 + alpha) * feat + beta


class TimeConditionLayer(nn.Module):
    """Feature-wise affine conditioning on the encoded frame interval.

    Applies (1 + alpha) * feat + beta channel-wise to a (B, C, H, W) map,
    where alpha and beta are linear in the time encoding. Zero-initialized:
    the layer is exactly the identity until trained.
    """

    def __init__(self, channels: int, k_pe: int = DEFAULT_K_PE):
        super().__init__()
        self.channels = channels
        self.k_pe = k_pe
        dim = 1 + 2 * k_pe
        self.scale = nn.Linear(dim, channels)
        self.shift = nn.Linear(dim, channels)
        nn.init.zeros_(self.scale.weight)
        nn.init.zeros_(self.scale.bias)
        nn.init.zeros_(self.shift.weight)
        nn.init.zeros_(self.shift.bias)

    def forward(self, feat: torch.Tensor, encoding: torch.Tensor) -> torch.Tensor:
        if feat.dim() != 4 or feat.shape[1] != self.channels:
            raise ValueError(
                f"expected (B, {self.channels}, H, W) features, got {tuple(feat.shape)}"
            )
        if encoding.dim() != 2 or encoding.shape[0] != feat.shape[0]:
            raise ValueError(
                f"encoding batch {tuple(encoding.shape)} does not match features "
                f"{tuple(feat.shape)}"
            )
        alpha = self.scale(encoding)[:, :, None, None]
        beta = self.shift(encoding)[:, :, None, None]
        return (1.0 + alpha) * feat + beta
