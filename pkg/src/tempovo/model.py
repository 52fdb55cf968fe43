"""Two-frame egomotion network with time-conditioned flow features.

Three stages, mirroring the data available to a calibrated odometer:

* flow stream — a pluggable provider yields dense 2D flow plus a
  correlation-style feature map. The ``oracle`` provider reads the exact
  generator flow (standing in for a frozen pretrained flow model) and
  learns only a shallow conv extractor over it; the ``learned`` provider
  is a small conv encoder over the stacked frame pair. Flow features are
  modulated by the time-gap conditioning layer, attended over, and fused
  with attended tokens of the differentiable 2D-guided 3D flow to give the
  time-aware flow feature F_TA.
* geometry stream — per-pixel tokens [r, M, D]: the intrinsic ray field
  r(u,v) = [(u-cu)/fu, (v-cv)/fv, 1], its depth modulation M = D * r
  (identical to back-projection, which the tests pin down), and the depth
  itself; patch-embedded and attended into the context feature F_GA.
* decoder — MLP heads on [F_TA, F_GA]: nine numbers reshaped to the
  rotation Fisher parameter (whose mode is the rotation estimate) and a
  metric translation vector.

Token sequences end *without* a final LayerNorm: feature magnitude is the
carrier of the time-gap signal, and normalizing it away would collapse
rate extrapolation. All blocks are pre-LN; pooling is token mean.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import geometry as geo
from .fisher import fisher_mode
from .flow3d import scene_flow_torch
from .geometry import CameraIntrinsics, PoseSE3
from .synth import FramePair
from .temporal import DEFAULT_K_PE, TimeConditionLayer, encode_time_batch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; sizes derived so token grids are 4x4
    (except the geometry patch, which the token-size ablation varies)."""

    size: int = 64
    k_pe: int = DEFAULT_K_PE
    token_width: int = 64
    n_heads: int = 4
    feat_channels: int = 32
    mlp_ratio: int = 2
    provider: str = "oracle"  # or "learned"
    time_conditioning: bool = True
    geo_patch: int | None = None

    def __post_init__(self):
        if self.size < 16 or self.size % 16 != 0:
            raise ValueError(f"size must be a positive multiple of 16, got {self.size}")
        if self.provider not in ("oracle", "learned"):
            raise ValueError(f"unknown flow provider {self.provider!r}")
        if self.token_width % self.n_heads != 0:
            raise ValueError("token_width must be divisible by n_heads")
        gp = self.geo_patch_size
        if self.size % gp != 0:
            raise ValueError(f"geo_patch {gp} must divide size {self.size}")

    @property
    def feat_grid(self) -> int:
        return self.size // 4

    @property
    def geo_patch_size(self) -> int:
        return self.geo_patch if self.geo_patch is not None else self.size // 4

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class AttentionBlock(nn.Module):
    """Pre-LN self-attention + MLP with residuals."""

    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class PatchTokens(nn.Module):
    """Non-overlapping patch embedding plus learned positional embedding."""

    def __init__(self, in_ch: int, width: int, patch: int, grid: int):
        super().__init__()
        self.proj = nn.Conv2d(in_ch, width, kernel_size=patch, stride=patch)
        self.pos = nn.Parameter(0.02 * torch.randn(1, grid * grid, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = self.proj(x).flatten(2).transpose(1, 2)  # (B, N, width)
        return t + self.pos


class OracleFlowProvider(nn.Module):
    """Exact generator flow + a learned conv feature extractor over it."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.extract = nn.Sequential(
            nn.Conv2d(2, cfg.feat_channels, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(cfg.feat_channels, cfg.feat_channels, 3, stride=2, padding=1),
        )

    def forward(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        flow = batch["flow_gt"]
        return flow, self.extract(flow)


class LearnedFlowProvider(nn.Module):
    """Small conv encoder over the stacked frame pair: flow + features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.feat_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(6, c, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(c, c, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(c, c, 3, padding=1),
        )
        self.flow_head = nn.Conv2d(c, 2, 3, padding=1)

    def forward(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        i1, i2 = batch["image1"], batch["image2"]
        if i1.shape != i2.shape:
            raise ValueError(f"frame shapes differ: {tuple(i1.shape)} vs {tuple(i2.shape)}")
        feat = self.encoder(torch.cat([i1, i2], dim=1))
        coarse = self.flow_head(feat)
        flow = 4.0 * nn.functional.interpolate(
            coarse, scale_factor=4, mode="bilinear", align_corners=False
        )
        return flow, feat


class TimeAwareFlowEncoder(nn.Module):
    """Conditioned flow features and 3D-flow tokens, attended and fused."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.token_width
        self.condition = (
            TimeConditionLayer(cfg.feat_channels, cfg.k_pe)
            if cfg.time_conditioning else None
        )
        self.flow_tokens = PatchTokens(cfg.feat_channels, w, cfg.feat_grid // 4, 4)
        self.flow_blocks = nn.ModuleList(
            AttentionBlock(w, cfg.n_heads, cfg.mlp_ratio) for _ in range(4)
        )
        self.scene_tokens = PatchTokens(3, w, cfg.size // 4, 4)
        self.scene_blocks = nn.ModuleList(
            AttentionBlock(w, cfg.n_heads, cfg.mlp_ratio) for _ in range(4)
        )
        self.fuse = nn.Linear(2 * w, w)

    def forward(self, feat, encoding, scene_flow) -> torch.Tensor:
        if self.condition is not None:
            feat = self.condition(feat, encoding)
        x = self.flow_tokens(feat)
        for blk in self.flow_blocks:
            x = blk(x)
        s = self.scene_tokens(scene_flow)
        for blk in self.scene_blocks:
            s = blk(s)
        fused = self.fuse(torch.cat([x, s], dim=-1))
        return fused.mean(dim=1)


def geometry_tokens(K: CameraIntrinsics, depth: np.ndarray):
    """Per-pixel [r, M, D] in float64: rays, depth-modulated rays, depth.

    M(u,v) = D(u,v) * r(u,v) coincides with back-projecting each pixel at
    its depth — the tokenizer and the geometry module must agree exactly.
    """
    if depth.shape != (K.height, K.width):
        raise ValueError(
            f"depth shape {depth.shape} does not match intrinsics "
            f"{(K.height, K.width)}"
        )
    r = geo.ray_field(K)
    M = depth[..., None] * r
    return r, M, depth


class GeometryContextEncoder(nn.Module):
    """Attention over [r, M, D] tokens -> fixed-width context feature."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.token_width
        patch = cfg.geo_patch_size
        self.tokens = PatchTokens(7, w, patch, cfg.size // patch)
        self.blocks = nn.ModuleList(
            AttentionBlock(w, cfg.n_heads, cfg.mlp_ratio) for _ in range(8)
        )

    def forward(self, rays: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
        d = depth.unsqueeze(1)
        x = self.tokens(torch.cat([rays, rays * d, d], dim=1))
        for blk in self.blocks:
            x = blk(x)
        return x.mean(dim=1)


class EgomotionDecoder(nn.Module):
    """[F_TA, F_GA] -> rotation Fisher parameter (9) and translation (3)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = 2 * cfg.token_width
        self.rot_head = nn.Sequential(nn.Linear(w, w), nn.GELU(), nn.Linear(w, 9))
        self.trans_head = nn.Sequential(nn.Linear(w, w), nn.GELU(), nn.Linear(w, 3))

    def forward(self, f_ta, f_ga) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.cat([f_ta, f_ga], dim=-1)
        return self.rot_head(h).view(-1, 3, 3), self.trans_head(h)


class EgomotionNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        self.provider = (
            OracleFlowProvider(cfg) if cfg.provider == "oracle"
            else LearnedFlowProvider(cfg)
        )
        self.flow_encoder = TimeAwareFlowEncoder(cfg)
        self.geometry_encoder = GeometryContextEncoder(cfg)
        self.decoder = EgomotionDecoder(cfg)

    def forward(self, batch: dict) -> dict:
        flow, feat = self.provider(batch)
        scene, mask = scene_flow_torch(
            batch["depth1"], batch["depth2"],
            flow.permute(0, 2, 3, 1), batch["intrinsics"],
        )
        scene = scene.float().permute(0, 3, 1, 2)
        encoding = encode_time_batch(batch["delta_t"], self.config.k_pe)
        f_ta = self.flow_encoder(feat, encoding, scene)
        f_ga = self.geometry_encoder(batch["rays"], batch["depth1"])
        fisher, t = self.decoder(f_ta, f_ga)
        return {
            "fisher": fisher, "t": t, "flow": flow, "scene_flow": scene,
            "mask": mask, "f_ta": f_ta, "f_ga": f_ga,
        }


@dataclass(frozen=True)
class EgomotionPrediction:
    """One pair's estimate: Fisher parameter, its mode rotation, translation."""

    f_fisher: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if geo.rotation_drift(self.rotation) > 1e-6 or np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation does not satisfy SO(3) invariants")

    def pose(self) -> PoseSE3:
        return PoseSE3(geo.nearest_rotation(self.rotation), self.translation)


def make_batch(pairs: list[FramePair], device: str = "cpu") -> dict:
    """Collate frame pairs into the tensor dict the network consumes.

    Rays are computed in float64 from each pair's intrinsics and cast to
    float32; depths/flow stay exact in their float32 casts at desk scale.
    Ground-truth pose tensors ride along for loss computation.
    """
    if not pairs:
        raise ValueError("empty batch")
    shape = pairs[0].image1.shape
    for p in pairs:
        if p.image1.shape != shape or p.image2.shape != shape:
            raise ValueError("all pairs in a batch must share resolution")

    def stack(arrs, dtype=np.float32):
        return torch.from_numpy(np.stack(arrs).astype(dtype)).to(device)

    return {
        "image1": stack([p.image1.transpose(2, 0, 1) for p in pairs]),
        "image2": stack([p.image2.transpose(2, 0, 1) for p in pairs]),
        "flow_gt": stack([p.flow.transpose(2, 0, 1) for p in pairs]),
        "depth1": stack([p.depth1 for p in pairs]),
        "depth2": stack([p.depth2 for p in pairs]),
        "rays": stack([geo.ray_field(p.intrinsics).transpose(2, 0, 1) for p in pairs]),
        "delta_t": np.array([p.delta_t for p in pairs]),
        "intrinsics": [p.intrinsics for p in pairs],
        "rot_gt": stack([p.pose.rotation for p in pairs]),
        "t_gt": stack([p.pose.translation for p in pairs]),
    }


def predict_pairs(net: EgomotionNet, pairs: list[FramePair],
                  batch_size: int = 16) -> list[EgomotionPrediction]:
    """Run inference over pairs and extract per-pair predictions."""
    net.eval()
    preds = []
    with torch.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            out = net(make_batch(chunk))
            for j in range(len(chunk)):
                F = out["fisher"][j].double().numpy()
                preds.append(EgomotionPrediction(
                    f_fisher=F,
                    rotation=fisher_mode(F),
                    translation=out["t"][j].double().numpy(),
                ))
    return preds


def save_checkpoint(path, net: EgomotionNet, extra: dict | None = None) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "config": net.config.to_dict(),
        "state_dict": net.state_dict(),
        "extra": extra or {},
    }, path)


def load_checkpoint(path) -> tuple[EgomotionNet, dict]:
    """Restore a network; a format version mismatch is a hard error."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint format version {version!r} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    net = EgomotionNet(ModelConfig(**payload["config"]))
    net.load_state_dict(payload["state_dict"])
    return net, payload.get("extra", {})
