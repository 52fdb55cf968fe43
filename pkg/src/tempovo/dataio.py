"""File formats: KITTI trajectory text, binary arrays, dataset archives.

Trajectories interchange as KITTI odometry text — one pose per line, the
row-major top 3 rows of the 4x4 world-from-camera matrix as 12 decimals —
with an optional ``<stem>.times.txt`` sidecar of per-pose timestamps
(seconds). Values are written with 16 significant digits, so write/read
round trips are lossless well below 1e-12.

Datasets are directories written atomically (tempdir + rename): a
``manifest.json``, an optional ground-truth trajectory, and one
subdirectory per frame pair holding PNG images, raw float64 arrays
(depth/flow, one-line JSON header + C-order bytes), and a ``meta.json``
with intrinsics, relative pose, and timing. Serialization is
deterministic: re-saving a loaded dataset reproduces it byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, PoseSE3, Trajectory, rotation_drift
from .synth import FramePair

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_RELOAD_TOL = 1e-9  # drift above this is re-orthonormalized (with a warning)
_HARD_TOL = 1e-6  # drift above this is a corrupt file


def _times_path(path: Path) -> Path:
    return path.with_name(path.stem + ".times.txt")


def write_trajectory(traj: Trajectory, path, timestamps: bool = True) -> None:
    """Write KITTI 12-number lines (+ timestamps sidecar unless disabled)."""
    path = Path(path)
    lines = []
    for pose in traj.poses:
        row = pose.matrix[:3, :].reshape(-1)
        lines.append(" ".join(f"{v:.16e}" for v in row))
    path.write_text("\n".join(lines) + "\n")
    if timestamps:
        _times_path(path).write_text(
            "\n".join(f"{t:.16e}" for t in traj.timestamps) + "\n"
        )


def read_trajectory(path, rate: float = 12.0) -> Trajectory:
    """Parse a KITTI trajectory file.

    Rotations with orthonormality drift in (1e-9, 1e-6] are snapped back to
    SO(3) with a warning; beyond 1e-6 (or any reflection) the file is
    rejected. Without a timestamps sidecar, poses get uniform timestamps at
    the declared rate.
    """
    path = Path(path)
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    poses = []
    from . import geometry as geo

    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 12:
            raise ValueError(
                f"{path}:{lineno}: expected 12 fields, got {len(fields)}"
            )
        try:
            vals = np.array([float(f) for f in fields])
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
        m = vals.reshape(3, 4)
        R, t = m[:, :3], m[:, 3]
        drift = rotation_drift(R)
        if drift > _HARD_TOL or np.linalg.det(R) < 0:
            raise ValueError(
                f"{path}:{lineno}: rotation block is not orthonormal "
                f"(drift {drift:.3e}, det {np.linalg.det(R):.3f})"
            )
        if drift > _RELOAD_TOL:
            logger.warning(
                "%s:%d: re-orthonormalizing rotation (drift %.3e)",
                path, lineno, drift,
            )
            R = geo.nearest_rotation(R)
        poses.append(PoseSE3(R, t))
    if not poses:
        raise ValueError(f"{path}: empty trajectory file")

    tp = _times_path(path)
    if tp.exists():
        times = np.array([float(x) for x in tp.read_text().split()])
        if len(times) != len(poses):
            raise ValueError(
                f"{tp}: {len(times)} timestamps for {len(poses)} poses"
            )
    else:
        times = np.arange(len(poses)) / rate
    return Trajectory(poses, times)


# ---------------------------------------------------------------------------
# binary arrays


def save_array(path, arr: np.ndarray) -> None:
    """One JSON header line (dtype/shape), then raw C-order bytes."""
    arr = np.ascontiguousarray(arr)
    header = json.dumps(
        {"dtype": arr.dtype.str, "shape": list(arr.shape)}, sort_keys=True
    )
    with open(path, "wb") as f:
        f.write(header.encode() + b"\n")
        f.write(arr.tobytes())


def load_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        data = f.read()
    arr = np.frombuffer(data, dtype=np.dtype(header["dtype"]))
    expected = int(np.prod(header["shape"]))
    if arr.size != expected:
        raise ValueError(
            f"{path}: payload holds {arr.size} values, header says {expected}"
        )
    return arr.reshape(header["shape"]).copy()


def _save_image(path, img: np.ndarray) -> None:
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG")


def _load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        u8 = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (u8 / np.float32(255.0)).astype(np.float32)


def _dump_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# dataset archives


def _pose_to_row(pose: PoseSE3) -> list:
    return [float(v) for v in pose.matrix[:3, :].reshape(-1)]


def _pose_from_row(row) -> PoseSE3:
    m = np.array(row, dtype=np.float64).reshape(3, 4)
    return PoseSE3(m[:, :3], m[:, 3])


def save_dataset(out_dir, pairs: list[FramePair], trajectory: Trajectory | None = None,
                 generator: dict | None = None) -> None:
    """Atomically write a dataset directory (fails if out_dir exists)."""
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise FileExistsError(f"refusing to overwrite existing {out_dir}")
    if not pairs:
        raise ValueError("dataset must contain at least one frame pair")
    out_dir.parent.mkdir(parents=True, exist_ok=True)

    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        K = pairs[0].intrinsics
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": "frame-pair-dataset",
            "n_pairs": len(pairs),
            "frame_rate": pairs[0].frame_rate,
            "intrinsics": K.to_dict(),
            "generator": generator,
            "has_trajectory": trajectory is not None,
        }
        _dump_json(tmp / "manifest.json", manifest)
        if trajectory is not None:
            write_trajectory(trajectory, tmp / "poses_gt.txt")
        for i, p in enumerate(pairs):
            d = tmp / "pairs" / f"pair_{i:05d}"
            d.mkdir(parents=True)
            _save_image(d / "image1.png", p.image1)
            _save_image(d / "image2.png", p.image2)
            save_array(d / "depth1.bin", p.depth1)
            save_array(d / "depth2.bin", p.depth2)
            save_array(d / "flow.bin", p.flow)
            if p.scene_flow_gt is not None:
                save_array(d / "scene_flow.bin", p.scene_flow_gt)
            if p.visibility is not None:
                save_array(d / "visibility.bin", p.visibility)
            _dump_json(d / "meta.json", {
                "intrinsics": p.intrinsics.to_dict(),
                "pose": _pose_to_row(p.pose),
                "delta_t": p.delta_t,
                "frame_rate": p.frame_rate,
            })
        os.rename(tmp, out_dir)
    except BaseException:
        import shutil

        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_dataset(path) -> tuple[list[FramePair], Trajectory | None, dict]:
    """Read a dataset directory back: (pairs, trajectory or None, manifest)."""
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise FileNotFoundError(f"{path} is not a dataset (no manifest.json)")
    manifest = json.loads(mf.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"{path}: unsupported schema_version {manifest.get('schema_version')!r}, "
            f"expected {SCHEMA_VERSION}"
        )
    if manifest.get("kind") != "frame-pair-dataset":
        raise ValueError(f"{path}: unknown dataset kind {manifest.get('kind')!r}")

    pairs = []
    for i in range(manifest["n_pairs"]):
        d = path / "pairs" / f"pair_{i:05d}"
        if not d.is_dir():
            raise ValueError(f"{path}: missing pair directory {d.name}")
        meta = json.loads((d / "meta.json").read_text())
        K = CameraIntrinsics.from_dict(meta["intrinsics"])
        sf = d / "scene_flow.bin"
        vis = d / "visibility.bin"
        pairs.append(FramePair(
            image1=_load_image(d / "image1.png"),
            image2=_load_image(d / "image2.png"),
            depth1=load_array(d / "depth1.bin"),
            depth2=load_array(d / "depth2.bin"),
            flow=load_array(d / "flow.bin"),
            intrinsics=K,
            pose=_pose_from_row(meta["pose"]),
            delta_t=meta["delta_t"],
            frame_rate=meta["frame_rate"],
            scene_flow_gt=load_array(sf) if sf.exists() else None,
            visibility=load_array(vis) if vis.exists() else None,
        ))
    trajectory = None
    if manifest.get("has_trajectory"):
        trajectory = read_trajectory(path / "poses_gt.txt",
                                     rate=manifest["frame_rate"])
    return pairs, trajectory, manifest
