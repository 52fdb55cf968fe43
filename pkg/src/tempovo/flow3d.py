"""Differentiable 2D-guided 3D scene flow.

Given two depth maps, a dense 2D flow field and pinhole intrinsics, each
pixel of frame 1 is lifted to 3D, its flow-warped location samples frame-2
depth bilinearly, the warped pixel is lifted at that depth, and the 3D
displacement between the two lifts is emitted:

    P1(u, v)  = D1(u, v) * ray(u, v)
    (u', v')  = (u + Fx, v + Fy)
    D2~(u,v)  = bilinear(D2, u', v')
    P2(u, v)  = D2~(u, v) * ray(u', v')
    S         = m * (P2 - P1)

The validity mask m requires all four bilinear neighbors of (u', v') to lie
inside the image and both D1 and the sampled D2~ to be positive. The mask
is treated as a constant in the backward pass (no gradient flows through
the indicator).

The reference implementation is float64 numpy with a hand-derived analytic
backward; `scene_flow_torch` wraps the same code as a torch autograd
function so networks can train through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import CameraIntrinsics


@dataclass
class Flow3DResult:
    """Forward products of the scene-flow op.

    scene_flow:   (H, W, 3) masked 3D displacement S, meters.
    mask:         (H, W) bool validity mask m.
    points1:      (H, W, 3) frame-1 back-projection (unmasked).
    points2:      (H, W, 3) warped-pixel back-projection (partial/zero
                  outside the mask, where the stencil is clipped).
    warped_depth: (H, W) bilinearly sampled frame-2 depth (likewise).
    """

    scene_flow: np.ndarray
    mask: np.ndarray
    points1: np.ndarray
    points2: np.ndarray
    warped_depth: np.ndarray


@dataclass
class Flow3DGrads:
    d_depth1: np.ndarray
    d_depth2: np.ndarray
    d_flow: np.ndarray


def _as_hw(arr, name, shape):
    a = np.asarray(arr, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


def warp_grid(flow: np.ndarray) -> np.ndarray:
    """Sub-pixel sampling grid (u + Fx, v + Fy), shape (H, W, 2), unclamped."""
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("flow contains non-finite values")
    H, W = f.shape[:2]
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    return np.stack([u + f[..., 0], v + f[..., 1]], axis=-1)


def _stencil(grid: np.ndarray, W: int, H: int):
    """Bilinear stencil pieces: floor cell, fractional offsets, full-stencil flag."""
    up = grid[..., 0]
    vp = grid[..., 1]
    u0 = np.floor(up).astype(np.int64)
    v0 = np.floor(vp).astype(np.int64)
    full = (u0 >= 0) & (u0 + 1 <= W - 1) & (v0 >= 0) & (v0 + 1 <= H - 1)
    return u0, v0, up - u0, vp - v0, full


def bilinear_sample(depth: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Bilinearly sample a depth map at sub-pixel grid coordinates.

    Weights are w = [(1-g)(1-p), (1-g)p; g(1-p), gp] over the four
    neighbors of each target, with g/p the fractional offsets along u/v.
    Out-of-bounds neighbors contribute zero (partial sums at the border);
    masking such pixels is the caller's job.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {d.shape}")
    H, W = d.shape
    g = np.asarray(grid, dtype=np.float64)
    if g.shape != (H, W, 2):
        raise ValueError(f"grid shape {g.shape} does not match depth {H}x{W}")
    u0, v0, gamma, psi, _ = _stencil(g, W, H)

    out = np.zeros((H, W))
    # d_ij = depth at (u_i, v_j); i indexes the u axis.
    for du, dv, w in (
        (0, 0, (1 - gamma) * (1 - psi)),
        (0, 1, (1 - gamma) * psi),
        (1, 0, gamma * (1 - psi)),
        (1, 1, gamma * psi),
    ):
        ui = u0 + du
        vi = v0 + dv
        ok = (ui >= 0) & (ui <= W - 1) & (vi >= 0) & (vi <= H - 1)
        out += np.where(ok, w * d[np.clip(vi, 0, H - 1), np.clip(ui, 0, W - 1)], 0.0)
    return out


def compute_scene_flow(
    depth1: np.ndarray,
    depth2: np.ndarray,
    flow: np.ndarray,
    K: CameraIntrinsics,
) -> Flow3DResult:
    """Forward pass; see the module docstring for the exact definition."""
    H, W = K.height, K.width
    d1 = _as_hw(depth1, "depth1", (H, W))
    d2 = _as_hw(depth2, "depth2", (H, W))
    f = np.asarray(flow, dtype=np.float64)
    if f.shape != (H, W, 2):
        raise ValueError(f"flow must have shape {(H, W, 2)}, got {f.shape}")

    grid = warp_grid(f)
    up = grid[..., 0]
    vp = grid[..., 1]
    _, _, _, _, full = _stencil(grid, W, H)
    d2s = bilinear_sample(d2, grid)

    # Validity needs the complete interpolation stencil, not just the warped
    # coordinate inside [0, W-1] x [0, H-1]: partial sums at the exact
    # border (at most 1 px wide) are excluded.
    mask = full & (d1 > 0) & (d2s > 0)

    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    rx1 = (u - K.cu) / K.fu
    ry1 = (v - K.cv) / K.fv
    p1 = np.stack([rx1 * d1, ry1 * d1, d1], axis=-1)
    rx2 = (up - K.cu) / K.fu
    ry2 = (vp - K.cv) / K.fv
    p2 = np.stack([rx2 * d2s, ry2 * d2s, d2s], axis=-1)

    scene_flow = np.where(mask[..., None], p2 - p1, 0.0)
    return Flow3DResult(scene_flow, mask, p1, p2, d2s)


class Flow3DLayer:
    """Stateful forward/backward pair around `compute_scene_flow`.

    forward() caches the intermediates the analytic backward needs;
    backward() consumes them. Calling backward without a preceding forward
    is a state error.
    """

    def __init__(self):
        self._cache = None

    def forward(
        self,
        depth1: np.ndarray,
        depth2: np.ndarray,
        flow: np.ndarray,
        K: CameraIntrinsics,
    ) -> Flow3DResult:
        res = compute_scene_flow(depth1, depth2, flow, K)
        H, W = K.height, K.width
        v, u = np.mgrid[0:H, 0:W].astype(np.float64)
        f = np.asarray(flow, dtype=np.float64)
        up = u + f[..., 0]
        vp = v + f[..., 1]
        u0 = np.floor(up).astype(np.int64)
        v0 = np.floor(vp).astype(np.int64)
        self._cache = dict(
            K=K, u=u, v=v, up=up, vp=vp,
            u0=np.clip(u0, 0, W - 2), v0=np.clip(v0, 0, H - 2),
            gamma=up - u0, psi=vp - v0,
            d2=np.asarray(depth2, dtype=np.float64),
            d2s=res.warped_depth, mask=res.mask,
        )
        return res

    def backward(self, grad_scene_flow: np.ndarray) -> Flow3DGrads:
        """Analytic gradients of L w.r.t. (D1, D2, flow) given dL/dS.

        The mask is constant: every gradient is zero at masked-out pixels,
        and D2 cells only receive contributions from valid warps that
        sample them.
        """
        if self._cache is None:
            raise RuntimeError("Flow3DLayer.backward called before forward")
        c = self._cache
        K: CameraIntrinsics = c["K"]
        g = np.asarray(grad_scene_flow, dtype=np.float64)
        m = c["mask"]
        if g.shape != m.shape + (3,):
            raise ValueError(f"grad must have shape {m.shape + (3,)}, got {g.shape}")

        a = np.where(m, g[..., 0], 0.0)
        b = np.where(m, g[..., 1], 0.0)
        cc = np.where(m, g[..., 2], 0.0)

        rx1 = (c["u"] - K.cu) / K.fu
        ry1 = (c["v"] - K.cv) / K.fv
        d_depth1 = -(a * rx1 + b * ry1 + cc)

        rx2 = (c["up"] - K.cu) / K.fu
        ry2 = (c["vp"] - K.cv) / K.fv
        d_sampled = a * rx2 + b * ry2 + cc

        gamma, psi = c["gamma"], c["psi"]
        u0, v0 = c["u0"], c["v0"]
        d2 = c["d2"]
        d00 = d2[v0, u0]
        d10 = d2[v0, u0 + 1]
        d01 = d2[v0 + 1, u0]
        d11 = d2[v0 + 1, u0 + 1]
        # Bilinear interpolant derivatives w.r.t. the warped coordinates.
        dDdu = (1 - psi) * (d10 - d00) + psi * (d11 - d01)
        dDdv = (1 - gamma) * (d01 - d00) + gamma * (d11 - d10)

        d_fx = a * c["d2s"] / K.fu + d_sampled * dDdu
        d_fy = b * c["d2s"] / K.fv + d_sampled * dDdv
        d_flow = np.stack([d_fx, d_fy], axis=-1)

        d_depth2 = np.zeros_like(d2)
        w00 = (1 - gamma) * (1 - psi) * d_sampled
        w01 = (1 - gamma) * psi * d_sampled
        w10 = gamma * (1 - psi) * d_sampled
        w11 = gamma * psi * d_sampled
        np.add.at(d_depth2, (v0, u0), w00)
        np.add.at(d_depth2, (v0 + 1, u0), w01)
        np.add.at(d_depth2, (v0, u0 + 1), w10)
        np.add.at(d_depth2, (v0 + 1, u0 + 1), w11)

        return Flow3DGrads(d_depth1, d_depth2, d_flow)


class _SceneFlowFunction(torch.autograd.Function):
    """Torch bridge: runs the float64 numpy kernel per batch element."""

    @staticmethod
    def forward(ctx, depth1, depth2, flow, intrinsics):
        layers = []
        outs, masks = [], []
        for i in range(depth1.shape[0]):
            layer = Flow3DLayer()
            res = layer.forward(
                depth1[i].detach().cpu().numpy(),
                depth2[i].detach().cpu().numpy(),
                flow[i].detach().cpu().numpy(),
                intrinsics[i],
            )
            layers.append(layer)
            outs.append(res.scene_flow)
            masks.append(res.mask)
        ctx.layers = layers
        scene = torch.from_numpy(np.stack(outs)).to(depth1.dtype)
        mask = torch.from_numpy(np.stack(masks))
        ctx.mark_non_differentiable(mask)
        return scene, mask

    @staticmethod
    def backward(ctx, grad_scene, grad_mask):
        d1s, d2s, dfs = [], [], []
        for i, layer in enumerate(ctx.layers):
            grads = layer.backward(grad_scene[i].detach().cpu().numpy())
            d1s.append(grads.d_depth1)
            d2s.append(grads.d_depth2)
            dfs.append(grads.d_flow)
        to = lambda arrs: torch.from_numpy(np.stack(arrs)).to(grad_scene.dtype)
        return to(d1s), to(d2s), to(dfs), None


def scene_flow_torch(
    depth1: torch.Tensor,
    depth2: torch.Tensor,
    flow: torch.Tensor,
    intrinsics: CameraIntrinsics | list[CameraIntrinsics],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched scene flow for training: (B,H,W), (B,H,W), (B,H,W,2) -> (B,H,W,3).

    Returns (scene_flow, mask); the mask is non-differentiable. Intrinsics
    may be shared or given per batch element.
    """
    if isinstance(intrinsics, CameraIntrinsics):
        intrinsics = [intrinsics] * depth1.shape[0]
    if len(intrinsics) != depth1.shape[0]:
        raise ValueError(f"{len(intrinsics)} intrinsics for batch of {depth1.shape[0]}")
    return _SceneFlowFunction.apply(depth1, depth2, flow, intrinsics)
