"""Trajectory evaluation: alignment, ATE, KITTI-style drift, scale error.

Four metrics summarize a predicted trajectory against ground truth:

* ``ate`` — RMS positional difference after least-squares rigid alignment
  (rotation + translation; no scale, since the estimator claims metric
  scale — a similarity-aligned variant exists behind a flag for
  diagnostics).
* ``t_err`` / ``r_err`` — average translational drift (percent) and
  rotational drift (degrees per 100 m) over all subsequences of fixed
  ground-truth path lengths, following the KITTI odometry protocol with
  desk-scale default lengths {10, 20, 30, 40} m. A subsequence's endpoint
  is the first frame where the ground-truth path length reaches (>=) the
  target length, so on a path whose cumulative length hits the target
  exactly the span length equals the target.
* ``s_err`` — mean discrepancy between predicted and ground-truth per-step
  translation magnitudes, relative by default (guarded by eps = 1e-6 m
  against stationary steps), absolute under a flag.

All functions are pure.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import PoseSE3, Trajectory

DEFAULT_LENGTHS = (10.0, 20.0, 30.0, 40.0)
_SCALE_EPS = 1e-6


@dataclass(frozen=True)
class AlignmentTransform:
    """Similarity map p -> scale * R @ p + t (scale = 1 for rigid)."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return self.scale * positions @ self.rotation.T + self.translation

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def identity(cls) -> "AlignmentTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)


def _check_pair(pred: Trajectory, gt: Trajectory, min_len: int = 2) -> None:
    if len(pred) != len(gt):
        raise ValueError(
            f"trajectory length mismatch: pred has {len(pred)} poses, gt has {len(gt)}"
        )
    if len(pred) < min_len:
        raise ValueError(f"need at least {min_len} poses, got {len(pred)}")
    if not np.allclose(pred.timestamps, gt.timestamps, rtol=1e-9, atol=1e-9):
        raise ValueError("trajectory timestamps do not match")


def align_trajectories(
    pred: Trajectory, gt: Trajectory, with_scale: bool = False
) -> tuple[AlignmentTransform, Trajectory]:
    """Least-squares alignment of predicted positions onto ground truth.

    Solves min over (R, t[, s]) of sum ||s R p_i + t - g_i||^2 (Umeyama /
    Kabsch). Returns the transform and the transformed trajectory (applied
    to positions and left-composed onto orientations). Degenerate inputs
    where both position sets are a single repeated point give the identity
    transform; if only the predictions are degenerate, the rotation is
    identity and the translation matches the centroids.
    """
    _check_pair(pred, gt)
    P = pred.positions()
    G = gt.positions()
    mu_p = P.mean(axis=0)
    mu_g = G.mean(axis=0)
    Pc = P - mu_p
    Gc = G - mu_g
    var_p = float((Pc ** 2).sum(axis=1).mean())
    var_g = float((Gc ** 2).sum(axis=1).mean())

    if var_p == 0.0 and var_g == 0.0:
        transform = AlignmentTransform.identity()
    elif var_p == 0.0 or var_g == 0.0:
        # No shape to match a rotation against: only centroids align.
        transform = AlignmentTransform(np.eye(3), mu_g - mu_p, 1.0)
    else:
        H = Pc.T @ Gc / len(P)
        U, D, Vt = np.linalg.svd(H)
        sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
        flip = np.ones(3)
        flip[2] = sign if sign != 0 else 1.0
        R = Vt.T @ np.diag(flip) @ U.T
        s = float((D * flip).sum() / var_p) if with_scale else 1.0
        transform = AlignmentTransform(R, mu_g - s * R @ mu_p, s)

    aligned_positions = transform.apply(P)
    poses = [
        PoseSE3(
            geo.nearest_rotation(transform.rotation @ pose.rotation),
            aligned_positions[i],
        )
        for i, pose in enumerate(pred.poses)
    ]
    return transform, Trajectory(poses, pred.timestamps.copy())


def ate(pred: Trajectory, gt: Trajectory, with_scale: bool = False) -> float:
    """RMS positional difference after alignment (meters)."""
    _, aligned = align_trajectories(pred, gt, with_scale=with_scale)
    diff = aligned.positions() - gt.positions()
    return float(np.sqrt((diff ** 2).sum(axis=1).mean()))


def path_length(traj: Trajectory) -> float:
    steps = np.diff(traj.positions(), axis=0)
    return float(np.linalg.norm(steps, axis=1).sum())


def _cumulative_distance(gt: Trajectory) -> np.ndarray:
    steps = np.linalg.norm(np.diff(gt.positions(), axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def subsequence_errors(
    pred: Trajectory, gt: Trajectory, lengths=DEFAULT_LENGTHS
) -> list[dict]:
    """Per-subsequence drift records for the KITTI protocol.

    For every start frame and target length L, the end frame is the first
    one whose ground-truth path distance from the start reaches L. The
    error pose E = inv(rel_gt) o rel_pred compares the two relative
    motions over that span; drift is E's translation norm (as % of L) and
    rotation angle (degrees per 100 m).
    """
    _check_pair(pred, gt)
    dist = _cumulative_distance(gt)
    records = []
    for L in lengths:
        if L <= 0:
            raise ValueError(f"subsequence length must be positive, got {L}")
        ends = np.searchsorted(dist, dist[:-1] + L)  # first index with span >= L
        for start, end in enumerate(ends):
            if end >= len(dist):
                continue
            rel_pred = geo.relative(pred[start], pred[int(end)])
            rel_gt = geo.relative(gt[start], gt[int(end)])
            err = geo.compose(rel_gt.inverse(), rel_pred)
            records.append({
                "start": int(start),
                "end": int(end),
                "length": float(L),
                "t_err": float(np.linalg.norm(err.translation) / L * 100.0),
                "r_err": float(np.degrees(geo.rotation_angle(err.rotation)) / L * 100.0),
            })
    if not records:
        total = path_length(gt)
        raise ValueError(
            f"no subsequence fits: requested lengths {tuple(lengths)} m but the "
            f"ground-truth path is only {total:.3f} m; usable lengths: "
            f"{[L for L in lengths if L <= total] or 'none'}"
        )
    return records


def kitti_relative_errors(
    pred: Trajectory, gt: Trajectory, lengths=DEFAULT_LENGTHS
) -> tuple[float, float]:
    """(t_err %, r_err deg/100m) averaged over all fitting subsequences."""
    records = subsequence_errors(pred, gt, lengths)
    t = float(np.mean([r["t_err"] for r in records]))
    r = float(np.mean([r["r_err"] for r in records]))
    return t, r


def scale_error(
    pred_rel: list[PoseSE3], gt_rel: list[PoseSE3], relative: bool = True
) -> float:
    """Mean discrepancy between per-step translation magnitudes.

    Relative mode divides each |norm difference| by max(gt norm, 1e-6 m);
    absolute mode returns the raw mean difference in meters.
    """
    if len(pred_rel) != len(gt_rel):
        raise ValueError(
            f"relative-pose count mismatch: {len(pred_rel)} vs {len(gt_rel)}"
        )
    if len(pred_rel) < 1:
        raise ValueError("need at least one relative pose")
    pn = np.array([np.linalg.norm(p.translation) for p in pred_rel])
    gn = np.array([np.linalg.norm(g.translation) for g in gt_rel])
    diff = np.abs(pn - gn)
    if relative:
        diff = diff / np.maximum(gn, _SCALE_EPS)
    return float(diff.mean())


@dataclass
class EvalReport:
    """The four summary metrics plus the per-subsequence drift table."""

    t_err: float
    r_err: float
    ate: float
    s_err: float
    breakdown: list[dict] = field(default_factory=list)
    lengths: tuple = DEFAULT_LENGTHS
    alignment: str = "rigid"
    s_err_mode: str = "relative"

    def __post_init__(self):
        for name in ("t_err", "r_err", "ate", "s_err"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"lengths": list(self.lengths)}

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["lengths"] = tuple(d.get("lengths", DEFAULT_LENGTHS))
        return cls(**d)

    def table(self) -> str:
        lines = [
            f"{'metric':<10}{'value':>12}",
            f"{'t_err %':<10}{self.t_err:>12.4f}",
            f"{'r_err d/hm':<10}{self.r_err:>12.4f}",
            f"{'ATE m':<10}{self.ate:>12.4f}",
            f"{'s_err':<10}{self.s_err:>12.4f}",
        ]
        if self.breakdown:
            lines.append("")
            lines.append(f"{'start':>6}{'end':>6}{'len m':>8}{'t_err %':>10}{'r_err':>10}")
            for r in self.breakdown:
                lines.append(
                    f"{r['start']:>6}{r['end']:>6}{r['length']:>8.1f}"
                    f"{r['t_err']:>10.4f}{r['r_err']:>10.4f}"
                )
        return "\n".join(lines)


def evaluate(
    pred: Trajectory,
    gt: Trajectory,
    lengths=DEFAULT_LENGTHS,
    s_err_mode: str = "relative",
    alignment: str = "rigid",
) -> EvalReport:
    """Full four-metric report for one trajectory pair."""
    if alignment not in ("rigid", "sim3"):
        raise ValueError(f"alignment must be 'rigid' or 'sim3', got {alignment!r}")
    if s_err_mode not in ("relative", "absolute"):
        raise ValueError(
            f"s_err_mode must be 'relative' or 'absolute', got {s_err_mode!r}"
        )
    records = subsequence_errors(pred, gt, lengths)
    return EvalReport(
        t_err=float(np.mean([r["t_err"] for r in records])),
        r_err=float(np.mean([r["r_err"] for r in records])),
        ate=ate(pred, gt, with_scale=(alignment == "sim3")),
        s_err=scale_error(
            pred.relatives(), gt.relatives(), relative=(s_err_mode == "relative")
        ),
        breakdown=records,
        lengths=tuple(lengths),
        alignment=alignment,
        s_err_mode=s_err_mode,
    )
