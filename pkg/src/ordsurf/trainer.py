"""Adam with two learning-rate groups, plateau schedule and the patch training loop."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, fields, replace

import numpy as np

from . import ordinal
from .discretize import DiscretizationScheme, encode
from .inference import grid_patches, predict_heights
from .metrics import MetricReport, evaluate_batch
from .net import Checkpoint, Head, NetConfig, OrdinalNet, config_from_mapping, parse_kv_text
from .prng import SplitMix64
from .raster import ImageTile, RasterGrid, localize_patch, plan_grid, random_crop_pair

log = logging.getLogger(__name__)

BACKBONE, HEAD = "backbone", "head"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    lr_head: float = 1e-3
    lr_backbone: float = 0.0        # 0 means lr_head / 10
    weight_decay: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 20
    patches_per_epoch: int = 2000
    plateau_patience: int = 2
    plateau_factor: float = 0.1
    plateau_max_firings: int = 2

    def __post_init__(self):
        if self.lr_backbone == 0.0:
            object.__setattr__(self, "lr_backbone", self.lr_head / 10.0)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.lr_head <= 0 or self.lr_backbone <= 0:
            raise ValueError("learning rates must be positive")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("weight decay must be >= 0 and eps > 0")
        if self.batch_size < 1 or self.epochs < 1 or self.patches_per_epoch < 1:
            raise ValueError("batch size, epochs and patches per epoch must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau factor must lie in (0, 1)")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.patches_per_epoch // self.batch_size)


def load_train_config(text: str, net: NetConfig | None = None, optim: OptimConfig | None = None):
    """Split ``key = value`` text between NetConfig and OptimConfig fields."""
    values = parse_kv_text(text)
    net_keys = {f.name for f in fields(NetConfig)}
    opt_keys = {f.name for f in fields(OptimConfig)}
    unknown = set(values) - net_keys - opt_keys
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    net = config_from_mapping(NetConfig, {k: v for k, v in values.items() if k in net_keys}, net)
    optim = config_from_mapping(OptimConfig, {k: v for k, v in values.items() if k in opt_keys}, optim)
    if "lr_head" in values and "lr_backbone" not in values:
        optim = replace(optim, lr_backbone=optim.lr_head / 10.0)
    return net, optim


def param_group(name: str) -> str:
    if name.startswith("head."):
        return HEAD
    if name.startswith("backbone."):
        return BACKBONE
    raise ValueError(f"parameter {name!r} belongs to no learning-rate group")


class Adam:
    """Adam with per-group learning rates and coupled L2 weight decay."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.groups = {name: param_group(name) for name in params}
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, group_lrs: dict[str, float]) -> None:
        grads = {}
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {k}")
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {k}; step rejected")
            grads[k] = g
        self.t += 1
        for k, p in self.params.items():
            p.data, self.m[k], self.v[k] = adam_update(
                p.data, grads[k], self.m[k], self.v[k], self.t, group_lrs[self.groups[k]],
                self.beta1, self.beta2, self.eps, self.weight_decay)


def adam_update(param, grad, m, v, t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8, weight_decay: float = 0.0):
    """One Adam step for one array; returns (param, m, v)."""
    dtype = param.dtype
    if weight_decay:
        grad = grad + weight_decay * param
    m = (beta1 * m + (1.0 - beta1) * grad).astype(dtype)
    v = (beta2 * v + (1.0 - beta2) * grad * grad).astype(dtype)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param = (param - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(dtype)
    return param, m, v


class PlateauSchedule:
    """Multiply the LR scale by ``factor`` once the epoch loss has failed to
    strictly improve for ``patience`` consecutive epochs (at most ``max_firings``)."""

    def __init__(self, patience: int = 2, factor: float = 0.1, max_firings: int = 2):
        self.patience, self.factor, self.max_firings = patience, factor, max_firings
        self.best = math.inf
        self.bad_epochs = 0
        self.firings = 0
        self.scale = 1.0

    def update(self, loss: float) -> bool:
        """Record one epoch loss; returns True when the LR was just reduced."""
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience and self.firings < self.max_firings:
            self.scale *= self.factor
            self.firings += 1
            self.bad_epochs = 0
            return True
        return False


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    lr_head: float
    lr_backbone: float
    val_rmse: float
    val_rel: float


LOG_FIELDS = ["epoch", "mean_loss", "lr_head", "lr_backbone", "val_rmse", "val_rel"]


def write_epoch_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r.epoch] + [repr(float(getattr(r, f))) for f in LOG_FIELDS[1:]])


def read_epoch_log(path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        return [EpochLog(int(r["epoch"]), *(float(r[f]) for f in LOG_FIELDS[1:])) for r in csv.DictReader(fh)]


def head_loss_and_grad(outputs: np.ndarray, heights: np.ndarray, head: Head, scheme: DiscretizationScheme):
    """Loss and d loss / d outputs for a batch of localized height targets (N, H, W)."""
    if head is Head.MSE:
        pred = outputs[:, 0]
        g = np.zeros(outputs.shape, dtype=np.float64)
        g[:, 0] = ordinal.mse_grad(pred, heights)
        return ordinal.mse_loss(pred, heights), g
    classes = encode(heights, scheme)
    if head is Head.ORDINAL:
        return ordinal.ordinal_nll_from_logits(outputs, classes), ordinal.ordinal_nll_grad(outputs, classes)
    return ordinal.mcc_loss(outputs, classes), ordinal.mcc_grad(outputs, classes)


@dataclass
class ValidationSet:
    images: np.ndarray      # (M, 3, P, P)
    heights: np.ndarray     # (M, P, P) localized

    @classmethod
    def from_pairs(cls, pairs, patch_size: int, overlap: int = 2) -> "ValidationSet":
        imgs, hts = [], []
        for image, dsm in pairs:
            layout = plan_grid(dsm.width, dsm.height, patch_size, overlap)
            imgs.append(grid_patches(image, layout))
            for _, _, x0, y0, s in layout.rects:
                hts.append(localize_patch(dsm, x0, y0, s)[0].data)
        return cls(np.concatenate(imgs).astype(np.float32), np.stack(hts).astype(np.float64))

    def baseline_rmse(self) -> float:
        """RMSE of the best constant predictor (the mean height)."""
        return float(np.sqrt(np.mean((self.heights - self.heights.mean()) ** 2)))

    def evaluate(self, model: OrdinalNet, scheme: DiscretizationScheme, batch_size: int = 16) -> MetricReport:
        pred = predict_heights(model, scheme, self.images, batch_size)
        return evaluate_batch([(pred, self.heights)], allow_empty=True)


@dataclass
class TrainResult:
    model: OrdinalNet
    checkpoint: Checkpoint
    history: list[EpochLog]
    val_report: MetricReport | None


def sample_batch(pairs, size: int, count: int, rng: SplitMix64):
    images = np.empty((count, 3, size, size), dtype=np.float32)
    heights = np.empty((count, size, size), dtype=np.float64)
    for i in range(count):
        image, dsm = pairs[rng.randbelow(len(pairs))]
        crop, local, _ = random_crop_pair(image, dsm, size, rng)
        images[i] = crop.to_chw()
        heights[i] = local.data
    return images, heights


def train(train_pairs: list[tuple[ImageTile, RasterGrid]], net_config: NetConfig, optim: OptimConfig,
          scheme: DiscretizationScheme, seed: int = 0,
          val_pairs: list[tuple[ImageTile, RasterGrid]] | None = None,
          head: Head | str | None = None, on_epoch=None) -> TrainResult:
    """Train a fresh network on random crops; deterministic for a given seed."""
    if not train_pairs:
        raise TrainingError("training set is empty")
    if head is not None:
        net_config = replace(net_config, head=Head(head))
    if net_config.head is not Head.MSE and net_config.K != scheme.K:
        raise TrainingError(f"network K={net_config.K} but scheme K={scheme.K}")

    root = SplitMix64(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = OrdinalNet(net_config, seed=root.split(0).next_u64())
    crop_rng = root.split(1)
    opt = Adam(model.params, optim.betas, optim.eps, optim.weight_decay)
    schedule = PlateauSchedule(optim.plateau_patience, optim.plateau_factor, optim.plateau_max_firings)
    val = ValidationSet.from_pairs(val_pairs, net_config.patch_size) if val_pairs else None

    history: list[EpochLog] = []
    report = None
    for epoch in range(optim.epochs):
        lrs = {HEAD: optim.lr_head * schedule.scale, BACKBONE: optim.lr_backbone * schedule.scale}
        losses = []
        for step in range(optim.steps_per_epoch):
            images, heights = sample_batch(train_pairs, net_config.patch_size, optim.batch_size, crop_rng)
            out = model.forward(images)
            loss, grad = head_loss_and_grad(out.data, heights, net_config.head, scheme)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {loss}")
            model.zero_grad()
            out.backward(grad)
            opt.step(lrs)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        if val is not None:
            report = val.evaluate(model, scheme)
            val_rmse, val_rel = report.rmse, report.rel
        else:
            val_rmse = val_rel = math.nan
        row = EpochLog(epoch, mean_loss, lrs[HEAD], lrs[BACKBONE], val_rmse, val_rel)
        history.append(row)
        log.info("epoch %d loss %.4f val_rmse %.3f val_rel %.3f", epoch, mean_loss, val_rmse, val_rel)
        if on_epoch is not None:
            on_epoch(row)
        if schedule.update(mean_loss):
            log.info("plateau: learning rates scaled to %g", schedule.scale)

    return TrainResult(model, Checkpoint.from_model(model, scheme), history, report)


def first_batch_loss(train_pairs, net_config: NetConfig, scheme: DiscretizationScheme, optim: OptimConfig,
                     seed: int = 0) -> float:
    """Loss of the freshly initialized network on the first training batch."""
    root = SplitMix64(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = OrdinalNet(net_config, seed=root.split(0).next_u64())
    images, heights = sample_batch(train_pairs, net_config.patch_size, optim.batch_size, root.split(1))
    loss, _ = head_loss_and_grad(model.forward(images).data, heights, net_config.head, scheme)
    return loss
