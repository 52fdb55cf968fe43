"""Central finite-difference harness for the scene-flow backward.

Shared by the unit tests and the acceptance suite. The loss is a scalar
surrogate L = sum(W * S) with fixed random weights W, so dL/dS = W and the
analytic layer gradients can be compared against central differences.

L is exactly linear in both depth maps (the bilinear weights depend only on
the flow), so depth gradients are FD-checked at every pixel. Flow gradients
are only FD-valid away from bilinear cell boundaries and the image border,
so they are compared at "eligible" pixels: mask on, warp target at least
`frac_margin` from every integer coordinate, and at least one pixel inside
the sampling border.
"""

import numpy as np

from tempovo.flow3d import Flow3DLayer, compute_scene_flow


def surrogate_loss(depth1, depth2, flow, K, weights):
    res = compute_scene_flow(depth1, depth2, flow, K)
    return float(np.sum(weights * res.scene_flow))


def eligible_pixels(depth1, depth2, flow, K, frac_margin=0.05, border_margin=1.0):
    """Pixels where flow FD is trustworthy; returns a bool (H, W) mask."""
    res = compute_scene_flow(depth1, depth2, flow, K)
    H, W = K.height, K.width
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    up = u + np.asarray(flow)[..., 0]
    vp = v + np.asarray(flow)[..., 1]
    fu_frac = up - np.floor(up)
    fv_frac = vp - np.floor(vp)
    away = (
        (fu_frac >= frac_margin) & (fu_frac <= 1 - frac_margin)
        & (fv_frac >= frac_margin) & (fv_frac <= 1 - frac_margin)
    )
    inside = (
        (up >= border_margin) & (up <= W - 1 - border_margin)
        & (vp >= border_margin) & (vp <= H - 1 - border_margin)
    )
    return res.mask & away & inside


def relative_error(fd, an, floor=1e-6):
    return np.abs(fd - an) / np.maximum(np.maximum(np.abs(fd), np.abs(an)), floor)


def run_fd_instance(rng, K, h_depth=1e-4, h_flow=1e-3):
    """Build one random instance, return max relative errors per input.

    Flow fractional parts are drawn in [0.1, 0.9] so most warp targets are
    FD-eligible by construction; border and mask effects still occur.
    """
    H, W = K.height, K.width
    depth1 = rng.uniform(2.0, 10.0, size=(H, W))
    depth2 = rng.uniform(2.0, 10.0, size=(H, W))
    base = rng.integers(-2, 3, size=(H, W, 2)).astype(np.float64)
    frac = rng.uniform(0.1, 0.9, size=(H, W, 2))
    flow = base + frac
    weights = rng.normal(size=(H, W, 3))

    layer = Flow3DLayer()
    layer.forward(depth1, depth2, flow, K)
    grads = layer.backward(weights)

    def loss(d1, d2, f):
        return surrogate_loss(d1, d2, f, K, weights)

    fd_d1 = np.zeros((H, W))
    fd_d2 = np.zeros((H, W))
    fd_flow = np.zeros((H, W, 2))
    for i in range(H):
        for j in range(W):
            dp = depth1.copy(); dp[i, j] += h_depth
            dm = depth1.copy(); dm[i, j] -= h_depth
            fd_d1[i, j] = (loss(dp, depth2, flow) - loss(dm, depth2, flow)) / (2 * h_depth)
            dp = depth2.copy(); dp[i, j] += h_depth
            dm = depth2.copy(); dm[i, j] -= h_depth
            fd_d2[i, j] = (loss(depth1, dp, flow) - loss(depth1, dm, flow)) / (2 * h_depth)
            for k in range(2):
                fp = flow.copy(); fp[i, j, k] += h_flow
                fm = flow.copy(); fm[i, j, k] -= h_flow
                fd_flow[i, j, k] = (loss(depth1, depth2, fp) - loss(depth1, depth2, fm)) / (2 * h_flow)

    elig = eligible_pixels(depth1, depth2, flow, K)
    err_d1 = relative_error(fd_d1, grads.d_depth1).max()
    err_d2 = relative_error(fd_d2, grads.d_depth2).max()
    if elig.any():
        err_flow = relative_error(fd_flow, grads.d_flow)[elig].max()
    else:
        err_flow = 0.0
    return {"d_depth1": err_d1, "d_depth2": err_d2, "d_flow": err_flow,
            "n_eligible": int(elig.sum())}
