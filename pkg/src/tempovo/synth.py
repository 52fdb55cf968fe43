"""Procedural synthetic scenes with exact ground truth.

Everything downstream trusts these generators as oracles: depth, 2D flow,
intrinsics, and relative poses are computed analytically from known
geometry, never estimated. Two scene types cover two different needs:

* ``sprites`` — a field of isolated 3D points, each rendered as a
  single-pixel depth anchor in frame 1 and a 3x3 constant-depth footprint
  in frame 2. Anchors are snapped so back-projection, warping, and
  bilinear depth sampling reproduce the analytic 3D displacement to
  float64 round-off: the exactness oracle for the scene-flow layer.
* ``plane_boxes`` — a textured ground plane plus boxes, ray-cast per pixel
  with z-buffering: dense, occlusion-bearing data for training. Pixels
  carry the geometric reprojection flow whether or not the target is
  visible; a separate visibility mask is emitted for analyses.

The camera follows car-like planar motion (bounded yaw-rate random walk,
roughly constant speed, speed-proportional pitch/roll jitter) at a base
frame rate; lower rates come from `resample_frequency`, which skips frames
and recomputes labels from the composed geometry.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import CameraIntrinsics, PoseSE3, Trajectory

_MIN_RAY_T = 0.1  # ignore surface hits closer than this (meters)


def default_intrinsics(size: int = 64) -> CameraIntrinsics:
    """Square desk-scale camera, ~66 degree horizontal field of view."""
    return CameraIntrinsics(
        fu=0.75 * size, fv=0.75 * size, cu=(size - 1) / 2, cv=(size - 1) / 2,
        width=size, height=size,
    )


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic sequence.

    speed_range / yaw_rate_range bound the trajectory's forward speed (m/s)
    and yaw rate (rad/s); tilt_noise adds pitch/roll jitter proportional to
    distance traveled (rad per meter), so a stationary camera stays exactly
    still. The base frame rate f0 fixes the native pair interval 1/f0.
    """

    seed: int = 0
    scene: str = "plane_boxes"  # or "sprites"
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    speed_range: tuple[float, float] = (8.0, 14.0)
    yaw_rate_range: float = 0.25
    duration: float = 5.0
    base_rate: float = 12.0
    cam_height: float = 1.5
    tilt_noise: float = 0.002
    n_boxes: int = 10
    n_sprites: int = 300

    def __post_init__(self):
        lo, hi = self.speed_range
        if not (np.isfinite(lo) and np.isfinite(hi) and 0 <= lo <= hi):
            raise ValueError(f"bad speed range {self.speed_range}")
        if not (np.isfinite(self.yaw_rate_range) and self.yaw_rate_range >= 0):
            raise ValueError(f"bad yaw-rate bound {self.yaw_rate_range}")
        if self.base_rate <= 0:
            raise ValueError(f"base rate must be positive, got {self.base_rate}")
        if self.scene not in ("plane_boxes", "sprites"):
            raise ValueError(f"unknown scene type {self.scene!r}")

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.intrinsics.height, self.intrinsics.width)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["intrinsics"] = self.intrinsics.to_dict()
        d["speed_range"] = list(self.speed_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["intrinsics"] = CameraIntrinsics.from_dict(d["intrinsics"])
        d["speed_range"] = tuple(d["speed_range"])
        return cls(**d)


@dataclass
class FramePair:
    """Two consecutive observations plus exact ground truth.

    pose is the camera motion from frame 1 to frame 2 (the pose of camera 2
    in camera-1 coordinates; see the geometry module). scene_flow_gt holds
    the analytic 3D displacement of each frame-1 surface point in camera-1
    coordinates, zero where depth1 is invalid.
    """

    image1: np.ndarray
    image2: np.ndarray
    depth1: np.ndarray
    depth2: np.ndarray
    flow: np.ndarray
    intrinsics: CameraIntrinsics
    pose: PoseSE3
    delta_t: float
    frame_rate: float
    scene_flow_gt: np.ndarray | None = None
    visibility: np.ndarray | None = None

    def __post_init__(self):
        H, W = self.intrinsics.height, self.intrinsics.width
        for name in ("image1", "image2"):
            img = getattr(self, name)
            if img.shape != (H, W, 3):
                raise ValueError(f"{name} shape {img.shape}, expected {(H, W, 3)}")
        for name in ("depth1", "depth2"):
            d = getattr(self, name)
            if d.shape != (H, W):
                raise ValueError(f"{name} shape {d.shape}, expected {(H, W)}")
            if np.any(d < 0) or not np.all(np.isfinite(d)):
                raise ValueError(f"{name} must be finite and non-negative")
        if self.flow.shape != (H, W, 2):
            raise ValueError(f"flow shape {self.flow.shape}, expected {(H, W, 2)}")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow must be finite")
        if not (self.delta_t > 0 and self.frame_rate > 0):
            raise ValueError("delta_t and frame_rate must be positive")


# ---------------------------------------------------------------------------
# trajectory


def _generate_motion(spec: SceneSpec, rng: np.random.Generator) -> Trajectory:
    """Car-like planar trajectory in the x-z plane (y down, yaw about y)."""
    dt = 1.0 / spec.base_rate
    n_steps = int(round(spec.duration * spec.base_rate))
    if n_steps < 1:
        raise ValueError(
            f"duration {spec.duration}s at {spec.base_rate}Hz yields no frame pairs"
        )
    speed = rng.uniform(*spec.speed_range)
    yaw_bound = spec.yaw_rate_range
    yaw_rate = rng.uniform(-0.5 * yaw_bound, 0.5 * yaw_bound) if yaw_bound > 0 else 0.0

    poses = [PoseSE3.identity()]
    yaw, pitch, roll = 0.0, 0.0, 0.0
    pos = np.zeros(3)
    for _ in range(n_steps):
        step = speed * (1.0 + 0.02 * rng.standard_normal()) * dt
        heading = geo.rot_y(yaw)
        pos = pos + heading @ np.array([0.0, 0.0, step])
        yaw += yaw_rate * dt
        yaw_rate = float(np.clip(yaw_rate + 0.2 * yaw_bound * rng.standard_normal(),
                                 -yaw_bound, yaw_bound)) if yaw_bound > 0 else 0.0
        # Body tilt scales with distance traveled: a parked camera is still.
        tilt = spec.tilt_noise * abs(step)
        pitch = 0.9 * pitch + tilt * rng.standard_normal()
        roll = 0.9 * roll + tilt * rng.standard_normal()
        R = geo.rot_y(yaw) @ geo.rot_x(pitch) @ geo.rot_z(roll)
        poses.append(PoseSE3(geo.nearest_rotation(R), pos))
    timestamps = np.arange(len(poses)) * dt
    return Trajectory(poses, timestamps)


# ---------------------------------------------------------------------------
# plane + boxes scene

@dataclass
class _BoxWorld:
    plane_y: float
    centers: np.ndarray  # (n, 3)
    halves: np.ndarray  # (n, 3)
    colors: np.ndarray  # (n, 3)
    plane_colors: np.ndarray  # (2, 3)
    bg: np.ndarray  # (2, 3) top/bottom gradient


def _make_box_world(spec: SceneSpec, rng: np.random.Generator,
                    traj: Trajectory) -> _BoxWorld:
    centers, halves, colors = [], [], []
    n_frames = len(traj)
    for _ in range(spec.n_boxes):
        i = int(rng.integers(0, n_frames))
        pose = traj[i]
        ahead = rng.uniform(4.0, 30.0)
        lateral = rng.uniform(2.5, 12.0) * (1 if rng.random() < 0.5 else -1)
        half = rng.uniform(0.4, 2.5, size=3)
        local = np.array([lateral, 0.0, ahead])
        center = pose.rotation @ local + pose.translation
        center[1] = spec.cam_height - half[1]  # resting on the ground plane
        centers.append(center)
        halves.append(half)
        colors.append(rng.uniform(0.25, 0.95, size=3))
    return _BoxWorld(
        plane_y=spec.cam_height,
        centers=np.array(centers).reshape(-1, 3),
        halves=np.array(halves).reshape(-1, 3),
        colors=np.array(colors).reshape(-1, 3),
        plane_colors=rng.uniform(0.2, 0.8, size=(2, 3)),
        bg=rng.uniform(0.05, 0.35, size=(2, 3)),
    )


def _render_boxes(world: _BoxWorld, K: CameraIntrinsics,
                  pose: PoseSE3) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one frame: returns (RGB float32, depth float64).

    Rays are parameterized so the parameter t equals camera-frame z, hence
    the z-buffer is directly the metric depth map.
    """
    H, W = K.height, K.width
    rays = geo.ray_field(K).reshape(-1, 3)
    d = rays @ pose.rotation.T  # world-frame directions, unit camera z
    o = pose.translation

    depth = np.full(H * W, np.inf)
    hit_point = np.zeros((H * W, 3))
    surf = np.full(H * W, -1, dtype=np.int64)  # -1 none, 0 plane, 1+i box i

    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (world.plane_y - o[1]) / d[:, 1]
        ok = np.isfinite(t_plane) & (t_plane > _MIN_RAY_T)
        depth = np.where(ok, t_plane, depth)
        surf = np.where(ok, 0, surf)

        for i in range(len(world.centers)):
            lo = (world.centers[i] - world.halves[i] - o) / d
            hi = (world.centers[i] + world.halves[i] - o) / d
            tn = np.minimum(lo, hi).max(axis=1)
            tf = np.maximum(lo, hi).min(axis=1)
            ok = (tf >= tn) & (tn > _MIN_RAY_T) & (tn < depth)
            depth = np.where(ok, tn, depth)
            surf = np.where(ok, i + 1, surf)

    hit = surf >= 0
    hit_point[hit] = o + depth[hit, None] * d[hit]

    img = np.empty((H * W, 3))
    # Sky/background: vertical gradient over the ray's y slope.
    g = np.clip(0.5 + rays[:, 1], 0.0, 1.0)[:, None]
    img[:] = (1 - g) * world.bg[0] + g * world.bg[1]
    if np.any(surf == 0):
        p = hit_point[surf == 0]
        checker = ((np.floor(p[:, 0]) + np.floor(p[:, 2])) % 2).astype(int)
        base = world.plane_colors[checker]
        wave = 0.08 * np.sin(1.7 * p[:, 0]) * np.sin(2.3 * p[:, 2])
        img[surf == 0] = np.clip(base + wave[:, None], 0, 1)
    for i in range(len(world.centers)):
        m = surf == i + 1
        if not np.any(m):
            continue
        p = hit_point[m] - world.centers[i]
        stripes = 0.75 + 0.25 * np.sin(3.1 * p[:, 0] + 4.3 * p[:, 1] + 2.9 * p[:, 2])
        img[m] = np.clip(world.colors[i] * stripes[:, None], 0, 1)

    depth = np.where(hit, depth, 0.0)
    return img.reshape(H, W, 3).astype(np.float32), depth.reshape(H, W)


# ---------------------------------------------------------------------------
# shared label math


def geometric_flow(depth1: np.ndarray, K: CameraIntrinsics,
                   pose: PoseSE3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact reprojection labels from frame-1 depth and the relative pose.

    Returns (flow, scene_flow, projectable): per-pixel 2D displacement into
    frame 2, 3D displacement in camera-1 coordinates, and the mask of
    pixels whose transferred point lies in front of camera 2. Pixels with
    invalid depth (or behind-camera transfers) carry zeros.
    """
    H, W = K.height, K.width
    grid = geo.pixel_grid(K)
    flow = np.zeros((H, W, 2))
    scene = np.zeros((H, W, 3))
    projectable = np.zeros((H, W), dtype=bool)

    valid = depth1 > 0
    if not np.any(valid):
        return flow, scene, projectable
    X = geo.back_project(grid[valid], depth1[valid], K)
    inv = pose.inverse()
    Xp = X @ inv.rotation.T + inv.translation  # frame-1 point in frame-2 coords
    z = Xp[:, 2]
    ok = z > 1e-6
    u = K.fu * Xp[ok, 0] / z[ok] + K.cu
    v = K.fv * Xp[ok, 1] / z[ok] + K.cv

    idx = np.argwhere(valid)
    sel = idx[ok]
    flow[sel[:, 0], sel[:, 1], 0] = u - grid[valid][ok][:, 0]
    flow[sel[:, 0], sel[:, 1], 1] = v - grid[valid][ok][:, 1]
    scene[sel[:, 0], sel[:, 1]] = Xp[ok] - X[ok]
    projectable[sel[:, 0], sel[:, 1]] = True
    return flow, scene, projectable


# ---------------------------------------------------------------------------
# sprite scene

_ANCHOR_SEP = 2.0  # min Chebyshev distance between frame-1 anchors (px)
_TARGET_SEP = 4.0  # min Chebyshev distance between frame-2 landings (px)


def _make_sprites(spec: SceneSpec, rng: np.random.Generator,
                  traj: Trajectory) -> np.ndarray:
    """Static world points scattered through the cameras' view frusta."""
    K = spec.intrinsics
    n_frames = len(traj)
    frames = rng.integers(0, n_frames, size=spec.n_sprites)
    u = rng.uniform(1.0, K.width - 2.0, size=spec.n_sprites)
    v = rng.uniform(1.0, K.height - 2.0, size=spec.n_sprites)
    z = rng.uniform(4.0, 28.0, size=spec.n_sprites)
    local = geo.back_project(np.stack([u, v], axis=-1), z, K)
    pts = np.empty((spec.n_sprites, 3))
    for i in range(spec.n_sprites):
        pts[i] = traj[int(frames[i])].apply(local[i])
    return pts


def _select_separated(order: np.ndarray, coords: np.ndarray, sep: float) -> np.ndarray:
    """Greedy keep-nearest-first subject to a Chebyshev separation radius."""
    kept: list[int] = []
    for i in order:
        c = coords[i]
        if all(np.abs(c - coords[j]).max() >= sep for j in kept):
            kept.append(i)
    return np.array(kept, dtype=np.int64)


def _render_sprite_images(K, colors, positions, depths):
    """Soft dots on a dark background; cosmetic only, labels never read it."""
    H, W = K.height, K.width
    img = np.full((H, W, 3), 0.04, dtype=np.float64)
    for (u, v), z, col in zip(positions, depths, colors):
        cu, cv = int(round(u)), int(round(v))
        for dv in range(-2, 3):
            for du in range(-2, 3):
                x, y = cu + du, cv + dv
                if 0 <= x < W and 0 <= y < H:
                    r2 = (x - u) ** 2 + (y - v) ** 2
                    img[y, x] += np.exp(-r2 / 2.0) * col / (0.5 + 0.05 * z)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _render_sprite_pair(points, colors, K, pose_a, pose_b, dt, rate) -> FramePair:
    """One pair with bit-exact scene-flow ground truth.

    Each surviving sprite is snapped to its integer frame-1 pixel at its
    own depth, so the frame-1 depth anchor back-projects to exactly the
    snapped point. Its frame-2 depth is painted as a 3x3 constant-depth
    footprint around the (sub-pixel) landing point, so bilinear sampling
    returns that depth exactly wherever the full stencil is in bounds.
    Sprites whose anchors or landings would interfere are dropped from the
    pair entirely.
    """
    H, W = K.height, K.width
    rel = geo.relative(pose_a, pose_b)

    Xa = (points - pose_a.translation) @ pose_a.rotation  # world -> cam a
    front = Xa[:, 2] > 0.5
    Xa = Xa[front]
    cols = colors[front]
    uvd = np.empty((len(Xa), 3))
    uvd[:, 0] = K.fu * Xa[:, 0] / Xa[:, 2] + K.cu
    uvd[:, 1] = K.fv * Xa[:, 1] / Xa[:, 2] + K.cv
    uvd[:, 2] = Xa[:, 2]
    anchors = np.round(uvd[:, :2])
    in_img = (
        (anchors[:, 0] >= 0) & (anchors[:, 0] <= W - 1)
        & (anchors[:, 1] >= 0) & (anchors[:, 1] <= H - 1)
    )
    Xa, cols, uvd, anchors = Xa[in_img], cols[in_img], uvd[in_img], anchors[in_img]

    # Snap: same depth, ray through the anchor pixel center. The anchor
    # back-projects to exactly this point.
    snapped = geo.back_project(anchors, uvd[:, 2], K) if len(Xa) else np.zeros((0, 3))
    inv = rel.inverse()
    Xb = snapped @ inv.rotation.T + inv.translation
    ahead = Xb[:, 2] > 0.5
    Xa, cols, uvd, anchors, snapped, Xb = (
        a[ahead] for a in (Xa, cols, uvd, anchors, snapped, Xb)
    )
    land = np.empty((len(Xb), 2))
    if len(Xb):
        land[:, 0] = K.fu * Xb[:, 0] / Xb[:, 2] + K.cu
        land[:, 1] = K.fv * Xb[:, 1] / Xb[:, 2] + K.cv

    # Mutually exclusive placement: nearest sprite wins each contested region.
    order = np.argsort(uvd[:, 2], kind="stable")
    keep = _select_separated(order, anchors, _ANCHOR_SEP)
    if len(keep):
        keep = keep[_select_separated(np.arange(len(keep)), land[keep], _TARGET_SEP)]

    d1 = np.zeros((H, W))
    d2 = np.zeros((H, W))
    flow = np.zeros((H, W, 2))
    scene = np.zeros((H, W, 3))
    vis = np.zeros((H, W), dtype=bool)
    for i in keep:
        au, av = int(anchors[i, 0]), int(anchors[i, 1])
        d1[av, au] = uvd[i, 2]
        flow[av, au] = land[i] - anchors[i]
        scene[av, au] = Xb[i] - snapped[i]
        ru, rv = int(round(land[i, 0])), int(round(land[i, 1]))
        u_lo, u_hi = max(ru - 1, 0), min(ru + 1, W - 1)
        v_lo, v_hi = max(rv - 1, 0), min(rv + 1, H - 1)
        if u_lo <= u_hi and v_lo <= v_hi:
            d2[v_lo:v_hi + 1, u_lo:u_hi + 1] = Xb[i, 2]
            vis[av, au] = True

    img1 = _render_sprite_images(K, cols[keep], uvd[keep][:, :2], uvd[keep][:, 2])
    img2 = _render_sprite_images(K, cols[keep], land[keep], Xb[keep][:, 2])
    return FramePair(
        image1=img1, image2=img2, depth1=d1, depth2=d2, flow=flow,
        intrinsics=K, pose=rel, delta_t=dt, frame_rate=rate,
        scene_flow_gt=scene, visibility=vis,
    )


# ---------------------------------------------------------------------------
# public API


def generate_sequence(spec: SceneSpec) -> tuple[list[FramePair], Trajectory]:
    """Render one sequence: (n_frames - 1) consecutive pairs plus the
    ground-truth trajectory. Deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    traj = _generate_motion(spec, rng)
    K = spec.intrinsics
    dt = 1.0 / spec.base_rate

    pairs = []
    if spec.scene == "plane_boxes":
        world = _make_box_world(spec, rng, traj)
        frames = [_render_boxes(world, K, traj[i]) for i in range(len(traj))]
        for i in range(len(traj) - 1):
            img1, d1 = frames[i]
            img2, d2 = frames[i + 1]
            rel = geo.relative(traj[i], traj[i + 1])
            flow, scene, projectable = geometric_flow(d1, K, rel)
            grid = geo.pixel_grid(K)
            q = np.round(grid + flow).astype(np.int64)
            inb = (
                (q[..., 0] >= 0) & (q[..., 0] < K.width)
                & (q[..., 1] >= 0) & (q[..., 1] < K.height)
            )
            cand = projectable & inb
            vis = np.zeros((K.height, K.width), dtype=bool)
            if np.any(cand):
                z_land = d2[q[cand][:, 1], q[cand][:, 0]]
                z_expect = d1[cand] + scene[cand][:, 2]
                tol = np.maximum(0.05 * np.abs(z_expect), 0.1)
                vis[cand] = (z_land > 0) & (np.abs(z_land - z_expect) < tol)
            pairs.append(FramePair(
                image1=img1, image2=img2, depth1=d1, depth2=d2, flow=flow,
                intrinsics=K, pose=rel, delta_t=dt, frame_rate=spec.base_rate,
                scene_flow_gt=scene, visibility=vis,
            ))
    else:
        points = _make_sprites(spec, rng, traj)
        colors = rng.uniform(0.3, 1.0, size=(spec.n_sprites, 3))
        for i in range(len(traj) - 1):
            pairs.append(_render_sprite_pair(
                points, colors, K, traj[i], traj[i + 1], dt, spec.base_rate
            ))
    return pairs, traj


def resample_frequency(pairs: list[FramePair], k: int) -> list[FramePair]:
    """Skip frames by an integer factor: pairs at rate f0/k.

    Keeps frames 0, k, 2k, ...; each new pair composes the k intermediate
    relative poses and recomputes flow and 3D displacement from the first
    frame's depth and the composed pose (the frame-skip semantics of
    multi-rate training). The endpoint depth/image are reused as-is;
    visibility is not recomputed.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"skip factor must be a positive integer, got {k!r}")
    if k == 1:
        return list(pairs)
    if k > len(pairs):
        raise ValueError(f"skip factor {k} exceeds sequence length ({len(pairs)} pairs)")

    rate = pairs[0].frame_rate
    K = pairs[0].intrinsics
    out = []
    for j in range(len(pairs) // k):
        seg = pairs[j * k:(j + 1) * k]
        pose = seg[0].pose
        for p in seg[1:]:
            pose = geo.compose(pose, p.pose)
        d1 = seg[0].depth1
        flow, scene, _ = geometric_flow(d1, K, pose)
        out.append(FramePair(
            image1=seg[0].image1, image2=seg[-1].image2,
            depth1=d1, depth2=seg[-1].depth2, flow=flow,
            intrinsics=K, pose=pose,
            delta_t=k / rate, frame_rate=rate / k,
            scene_flow_gt=scene, visibility=None,
        ))
    return out


def perturb_priors(pair: FramePair, depth_noise: float, intrinsics_noise: float,
                   rng: np.random.Generator) -> FramePair:
    """Simulate estimated (rather than exact) depth and calibration.

    Depth gets per-pixel multiplicative log-normal noise; focal lengths get
    multiplicative Gaussian noise, redrawn while non-positive. Labels
    (flow, pose, 3D displacement) stay clean.
    """
    if depth_noise < 0 or intrinsics_noise < 0:
        raise ValueError("noise levels must be non-negative")
    if depth_noise == 0 and intrinsics_noise == 0:
        return pair

    d1, d2 = pair.depth1, pair.depth2
    if depth_noise > 0:
        d1 = d1 * np.exp(depth_noise * rng.standard_normal(d1.shape))
        d2 = d2 * np.exp(depth_noise * rng.standard_normal(d2.shape))
    K = pair.intrinsics
    if intrinsics_noise > 0:
        fu = 0.0
        while fu <= 0:
            fu = K.fu * (1.0 + intrinsics_noise * rng.standard_normal())
        fv = 0.0
        while fv <= 0:
            fv = K.fv * (1.0 + intrinsics_noise * rng.standard_normal())
        K = CameraIntrinsics(fu=fu, fv=fv, cu=K.cu, cv=K.cv,
                             width=K.width, height=K.height)
    return dataclasses.replace(pair, depth1=d1, depth2=d2, intrinsics=K)


def hflip_pair(pair: FramePair) -> FramePair:
    """Mirror a pair left-right with exactly transformed labels.

    Flipping the image grid maps u -> (W-1) - u, which conjugates the
    camera frame by diag(-1, 1, 1): the flow's x component negates, the
    principal point reflects, and the pose transforms as R -> MRM, t -> Mt
    (still a proper rotation: two sign flips cancel in the determinant).
    """
    M = np.diag([-1.0, 1.0, 1.0])
    K = pair.intrinsics
    Kf = CameraIntrinsics(fu=K.fu, fv=K.fv, cu=(K.width - 1) - K.cu, cv=K.cv,
                          width=K.width, height=K.height)
    flow = pair.flow[:, ::-1].copy()
    flow[..., 0] = -flow[..., 0]
    scene = None
    if pair.scene_flow_gt is not None:
        scene = pair.scene_flow_gt[:, ::-1] @ M
    return FramePair(
        image1=np.ascontiguousarray(pair.image1[:, ::-1]),
        image2=np.ascontiguousarray(pair.image2[:, ::-1]),
        depth1=np.ascontiguousarray(pair.depth1[:, ::-1]),
        depth2=np.ascontiguousarray(pair.depth2[:, ::-1]),
        flow=flow,
        intrinsics=Kf,
        pose=PoseSE3(M @ pair.pose.rotation @ M, M @ pair.pose.translation),
        delta_t=pair.delta_t,
        frame_rate=pair.frame_rate,
        scene_flow_gt=scene,
        visibility=None if pair.visibility is None
        else np.ascontiguousarray(pair.visibility[:, ::-1]),
    )
