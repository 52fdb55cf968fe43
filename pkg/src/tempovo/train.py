"""Multi-rate training: loss, frequency-mixing loop, ablation harness.

Each iteration samples one observation frequency uniformly from the
configured set, draws a batch of frame pairs resampled to that frequency
(frame-skip factor k = base_rate / frequency), and takes one clipped
optimizer step on

    loss = lambda_rot * L_rot(F_fisher, R_gt) + lambda_trans * ||t - t_gt||^2

where L_rot is the matrix-Fisher negative log-likelihood (quadrature
normalizer) or, under the ``surrogate`` flag, the cheap trace surrogate.
The loop asserts two contracts every step: the time gap fed to the
encoder equals k / base_rate exactly, and the post-clip global gradient
norm is within the configured bound. Runs are deterministic in the seed
(per-iteration RNG streams are derived from (seed, iteration)).

The ablation harness retrains or re-evaluates grid cells under identical
seeds and data and reports t_err / r_err / ATE / s_err per cell.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import geometry as geo
from . import metrics as metrics_mod
from .fisher import fisher_nll, trace_surrogate
from .geometry import PoseSE3, Trajectory
from .model import (
    EgomotionNet,
    EgomotionPrediction,
    ModelConfig,
    make_batch,
    predict_pairs,
)
from .synth import FramePair, hflip_pair, perturb_priors, resample_frequency

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. Every frequency must divide the base rate
    by an integer skip factor k."""

    frequency_set: tuple = (12.0, 6.0, 4.0)
    base_rate: float = 12.0
    k_pe: int = 8
    batch_size: int = 8
    iterations: int = 10000
    lr: float = 3e-4
    grad_clip: float = 1.0
    seed: int = 0
    lambda_rot: float = 1.0
    lambda_trans: float = 1.0
    provider: str = "oracle"
    time_conditioning: bool = True
    rot_loss: str = "nll"  # or "surrogate"
    depth_noise: float = 0.0
    intrinsics_noise: float = 0.0
    size: int = 64
    geo_patch: int | None = None
    val_interval: int = 500

    def __post_init__(self):
        if not self.frequency_set:
            raise ValueError("frequency set must be non-empty")
        for f in self.frequency_set:
            if f <= 0:
                raise ValueError(f"frequency must be positive, got {f}")
            k = self.base_rate / f
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                raise ValueError(
                    f"frequency {f} Hz does not divide base rate "
                    f"{self.base_rate} Hz by an integer skip factor"
                )
        for name in ("batch_size", "lr", "grad_clip", "base_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.lambda_rot < 0 or self.lambda_trans < 0:
            raise ValueError("loss weights must be non-negative")
        if self.rot_loss not in ("nll", "surrogate"):
            raise ValueError(f"rot_loss must be 'nll' or 'surrogate', got {self.rot_loss!r}")
        if self.depth_noise < 0 or self.intrinsics_noise < 0:
            raise ValueError("noise levels must be non-negative")

    def skip_factors(self) -> dict:
        return {f: int(round(self.base_rate / f)) for f in self.frequency_set}

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            size=self.size, k_pe=self.k_pe, provider=self.provider,
            time_conditioning=self.time_conditioning, geo_patch=self.geo_patch,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["frequency_set"] = list(self.frequency_set)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(
                f"config schema_version {version!r} unsupported "
                f"(expected {CONFIG_SCHEMA_VERSION})"
            )
        d["frequency_set"] = tuple(d["frequency_set"])
        return cls(**d)


def pose_loss_batch(
    fisher: torch.Tensor,
    t: torch.Tensor,
    rot_gt: torch.Tensor,
    t_gt: torch.Tensor,
    lambda_rot: float = 1.0,
    lambda_trans: float = 1.0,
    rot_loss: str = "nll",
) -> tuple[torch.Tensor, dict]:
    """Weighted rotation + translation loss, components reported separately."""
    F = fisher.double()
    R = rot_gt.double()
    if rot_loss == "nll":
        rot = fisher_nll(F, R).mean()
    elif rot_loss == "surrogate":
        rot = trace_surrogate(F, R).mean()
    else:
        raise ValueError(f"unknown rot_loss {rot_loss!r}")
    trans = ((t.double() - t_gt.double()) ** 2).sum(dim=-1).mean()
    total = lambda_rot * rot + lambda_trans * trans
    return total, {"rot": float(rot.detach()), "trans": float(trans.detach())}


def pose_loss(pred: EgomotionPrediction, gt: PoseSE3,
              lambda_rot: float = 1.0, lambda_trans: float = 1.0,
              rot_loss: str = "nll") -> tuple[float, dict]:
    """Single-prediction convenience wrapper around pose_loss_batch."""
    total, comps = pose_loss_batch(
        torch.from_numpy(np.asarray(pred.f_fisher, dtype=np.float64)).view(1, 3, 3),
        torch.from_numpy(np.asarray(pred.translation, dtype=np.float64)).view(1, 3),
        torch.from_numpy(gt.rotation).view(1, 3, 3),
        torch.from_numpy(gt.translation).view(1, 3),
        lambda_rot, lambda_trans, rot_loss,
    )
    return float(total), comps


@dataclass
class TrainResult:
    net: EgomotionNet
    config: TrainConfig
    records: list = field(default_factory=list)
    val_records: list = field(default_factory=list)

    def log_lines(self) -> list[str]:
        lines = [
            "iter={iteration} freq={frequency:g} loss={loss:.6e} "
            "rot={rot:.6e} trans={trans:.6e} grad_norm={grad_norm:.6e}".format(**r)
            for r in self.records
        ]
        for v in self.val_records:
            lines.append(
                "val iter={iteration} trans_err={trans_err:.6e} "
                "rot_err_deg={rot_err_deg:.6e}".format(**v)
            )
        return lines


def _build_pools(config: TrainConfig, sequences: list[list[FramePair]]) -> dict:
    """Resample every sequence to every configured frequency."""
    pools = {}
    for f, k in config.skip_factors().items():
        pool = []
        for seq in sequences:
            if len(seq) >= k:
                pool.extend(resample_frequency(seq, k))
        if not pool:
            raise ValueError(
                f"dataset does not cover {f:g} Hz (skip factor {k}): "
                f"no sequence has at least {k} pairs"
            )
        pools[f] = pool
    return pools


def _validation_record(net: EgomotionNet, val_pairs: list[FramePair],
                       iteration: int) -> dict:
    preds = predict_pairs(net, val_pairs)
    net.train()
    terr = float(np.mean([
        np.linalg.norm(p.translation - q.pose.translation)
        for p, q in zip(preds, val_pairs)
    ]))
    rerr = float(np.mean([
        np.degrees(geo.geodesic_angle(p.rotation, q.pose.rotation))
        for p, q in zip(preds, val_pairs)
    ]))
    return {"iteration": iteration, "trans_err": terr, "rot_err_deg": rerr}


def train(config: TrainConfig, sequences: list[list[FramePair]],
          val_sequences: list[list[FramePair]] | None = None) -> TrainResult:
    """Run the frequency-mixing training loop.

    Deterministic in config.seed. Aborts with a diagnostic RuntimeError on
    a non-finite loss. With zero iterations the returned network is the
    (seeded) initialization, untouched.
    """
    pools = _build_pools(config, sequences)
    freqs = list(config.frequency_set)
    skips = config.skip_factors()
    val_pairs = None
    if val_sequences:
        val_pairs = [p for seq in val_sequences for p in seq][:64]

    torch.manual_seed(config.seed)
    net = EgomotionNet(config.model_config())
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    result = TrainResult(net=net, config=config)

    net.train()
    for it in range(config.iterations):
        rng = np.random.default_rng((config.seed, it))
        f = freqs[int(rng.integers(len(freqs)))]
        pool = pools[f]
        idx = rng.integers(len(pool), size=config.batch_size)
        pairs = [pool[int(i)] for i in idx]
        if config.depth_noise > 0 or config.intrinsics_noise > 0:
            pairs = [
                perturb_priors(p, config.depth_noise, config.intrinsics_noise, rng)
                for p in pairs
            ]
        if config.provider == "learned":
            # Geometric augmentation stays out of oracle mode, where it
            # would break the exact flow/pose consistency of the labels;
            # the flip transforms labels (pose, flow, intrinsics) exactly.
            pairs = [hflip_pair(p) if rng.random() < 0.5 else p for p in pairs]

        # Conditioning contract: the encoder's time gap is exactly k/f0.
        expected_dt = skips[f] / config.base_rate
        for p in pairs:
            if p.delta_t != expected_dt:
                raise RuntimeError(
                    f"iteration {it}: pair delta_t {p.delta_t!r} != k/f0 "
                    f"{expected_dt!r} for {f:g} Hz"
                )

        batch = make_batch(pairs)
        out = net(batch)
        if not (torch.isfinite(out["fisher"]).all() and torch.isfinite(out["t"]).all()):
            raise RuntimeError(
                "non-finite network output; diagnostic dump: "
                f"iteration={it} batch_seed={(config.seed, it)} "
                f"frequency={f:g} "
                f"fisher_finite={bool(torch.isfinite(out['fisher']).all())} "
                f"t_finite={bool(torch.isfinite(out['t']).all())}"
            )
        loss, comps = pose_loss_batch(
            out["fisher"], out["t"], batch["rot_gt"], batch["t_gt"],
            config.lambda_rot, config.lambda_trans, config.rot_loss,
        )
        if not torch.isfinite(loss):
            raise RuntimeError(
                "non-finite loss; diagnostic dump: "
                f"iteration={it} batch_seed={(config.seed, it)} "
                f"frequency={f:g} components={comps}"
            )

        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
        post = torch.sqrt(sum(
            (p.grad.detach() ** 2).sum() for p in net.parameters()
            if p.grad is not None
        ))
        if float(post) > config.grad_clip * (1 + 1e-5):
            raise RuntimeError(
                f"iteration {it}: post-clip gradient norm {float(post):.6e} "
                f"exceeds bound {config.grad_clip}"
            )
        opt.step()

        result.records.append({
            "iteration": it, "frequency": f, "loss": float(loss.detach()),
            "rot": comps["rot"], "trans": comps["trans"],
            "grad_norm": float(post),
        })
        if val_pairs and config.val_interval > 0 and (it + 1) % config.val_interval == 0:
            result.val_records.append(_validation_record(net, val_pairs, it))
            logger.info("validation %s", result.val_records[-1])

    last_val = result.val_records[-1]["iteration"] if result.val_records else -1
    if val_pairs and config.iterations > 0 and last_val != config.iterations - 1:
        result.val_records.append(
            _validation_record(net, val_pairs, config.iterations - 1)
        )
    net.eval()
    return result


# ---------------------------------------------------------------------------
# evaluation of a trained model on held-out sequences


def predicted_trajectory(net: EgomotionNet, pairs: list[FramePair]) -> Trajectory:
    """Accumulate per-pair predictions into a world trajectory."""
    preds = predict_pairs(net, pairs)
    rels = [p.pose() for p in preds]
    times = np.concatenate([[0.0], np.cumsum([p.delta_t for p in pairs])])
    return geo.accumulate(rels, timestamps=times)


def ground_truth_trajectory(pairs: list[FramePair]) -> Trajectory:
    times = np.concatenate([[0.0], np.cumsum([p.delta_t for p in pairs])])
    return geo.accumulate([p.pose for p in pairs], timestamps=times)


def evaluate_model(net: EgomotionNet, sequences: list[list[FramePair]],
                   k: int = 1, lengths=metrics_mod.DEFAULT_LENGTHS) -> dict:
    """Mean t_err / r_err / ATE / s_err across sequences at skip factor k."""
    rows = []
    for seq in sequences:
        pairs = resample_frequency(seq, k)
        pred = predicted_trajectory(net, pairs)
        gt = ground_truth_trajectory(pairs)
        rep = metrics_mod.evaluate(pred, gt, lengths=lengths)
        rows.append({"t_err": rep.t_err, "r_err": rep.r_err,
                     "ate": rep.ate, "s_err": rep.s_err})
    return {key: float(np.mean([r[key] for r in rows]))
            for key in ("t_err", "r_err", "ate", "s_err")}


# ---------------------------------------------------------------------------
# ablation harness

ABLATIONS = ("token_size", "freq_set", "inference_rate", "no_time_layers")


@dataclass
class AblationReport:
    name: str
    rows: list

    def table(self) -> str:
        header = f"{'cell':<24}{'t_err %':>10}{'r_err':>10}{'ATE m':>10}{'s_err':>10}"
        lines = [header]
        for r in self.rows:
            lines.append(
                f"{r['cell']:<24}{r['t_err']:>10.4f}{r['r_err']:>10.4f}"
                f"{r['ate']:>10.4f}{r['s_err']:>10.4f}"
            )
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "rows": self.rows}, indent=2)


def run_ablation(name: str, grid, base_config: TrainConfig,
                 sequences: list[list[FramePair]],
                 val_sequences: list[list[FramePair]],
                 lengths=metrics_mod.DEFAULT_LENGTHS) -> AblationReport:
    """Train/evaluate one configuration axis under identical seed and data.

    token_size: grid of geometry patch sizes (one model per cell).
    freq_set: grid of training frequency sets (one model per cell).
    no_time_layers: grid of booleans for time conditioning (one per cell).
    inference_rate: grid of skip factors k; trains ONE base model and
    evaluates the same checkpoint at every k.
    """
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
    rows = []
    if name == "inference_rate":
        result = train(base_config, sequences, val_sequences)
        for k in grid:
            row = evaluate_model(result.net, val_sequences, k=int(k), lengths=lengths)
            rows.append({"cell": f"k={int(k)}"} | row)
    else:
        for cell in grid:
            if name == "token_size":
                cfg = dataclasses.replace(base_config, geo_patch=int(cell))
                label = f"token_size={int(cell)}"
            elif name == "freq_set":
                cfg = dataclasses.replace(base_config, frequency_set=tuple(cell))
                label = "freq_set={" + ",".join(f"{f:g}" for f in cell) + "}"
            else:  # no_time_layers
                cfg = dataclasses.replace(base_config, time_conditioning=not cell)
                label = f"no_time_layers={bool(cell)}"
            result = train(cfg, sequences, val_sequences)
            row = evaluate_model(result.net, val_sequences, k=1, lengths=lengths)
            rows.append({"cell": label} | row)
    return AblationReport(name=name, rows=rows)
