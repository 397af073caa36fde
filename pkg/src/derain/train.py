"""Training protocol: patch sampling, minibatch ADAM with a step LR
schedule, periodic checkpointing and held-out evaluation.

Desk-scale defaults (2000 iterations, drops at 1200/1700, batch 16) keep
the published schedule's proportions while staying CPU-feasible; the
full-scale values (drops at 15000/17500, batch 64) remain selectable.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, no_grad
from .optim import Adam, NonFiniteGradient
from .model import Rescan, stage_loss, config_to_dict
from .metrics import evaluate_pairs, MetricReport
from .checkpoint import save_checkpoint, save_config_kv

__all__ = ["TrainConfig", "TrainLog", "TrainingDiverged",
           "lr_at", "sample_patches", "train", "evaluate",
           "images_to_batch", "batch_to_image"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    patch_size: int = 64
    patches_per_image: int = 100
    batch_size: int = 16
    iterations: int = 2000
    lr: float = 5e-3
    lr_drops: tuple = (1200, 1700)
    drop_factor: float = 10.0
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 500

    def validate(self):
        drops = list(self.lr_drops)
        if drops != sorted(drops) or len(set(drops)) != len(drops):
            raise ValueError(f"lr_drops must be strictly increasing: {drops}")
        if drops and self.iterations and drops[-1] > self.iterations:
            raise ValueError(
                f"lr_drops {drops} exceed total iterations {self.iterations}")
        if self.batch_size < 1 or self.patches_per_image < 1:
            raise ValueError("batch_size and patches_per_image must be >= 1")


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    evals: list = field(default_factory=list)   # (iteration, psnr, ssim)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["iteration", "loss", "lr"])
            for i, (loss, lr) in enumerate(zip(self.losses, self.lrs)):
                wr.writerow([i, f"{loss:.8f}", f"{lr:g}"])


def lr_at(iteration, config: TrainConfig):
    """Right-continuous step schedule: lr / factor at each drop point."""
    lr = config.lr
    for drop in config.lr_drops:
        if iteration >= drop:
            lr /= config.drop_factor
    return lr


def images_to_batch(images, dtype=np.float32):
    """list of (H, W, 3) -> (N, 3, H, W) array."""
    arr = np.stack([np.transpose(im, (2, 0, 1)) for im in images])
    return np.ascontiguousarray(arr, dtype=dtype)


def batch_to_image(batch):
    """(1, 3, H, W) or (3, H, W) -> (H, W, 3)."""
    a = np.asarray(batch)
    if a.ndim == 4:
        a = a[0]
    return np.transpose(a, (1, 2, 0))


def sample_patches(pairs, config: TrainConfig, seed):
    """Aligned (rainy, residual, clean) crops, NCHW float32.

    Each image contributes patches_per_image crops at uniform random
    offsets; undersized images are skipped with a warning.
    """
    ps = config.patch_size
    rain_out, res_out, clean_out = [], [], []
    for idx, (rainy, clean, residual) in enumerate(pairs):
        h, w = rainy.shape[:2]
        if h < ps or w < ps:
            warnings.warn(f"image {idx} ({h}x{w}) smaller than patch size "
                          f"{ps}, skipped")
            continue
        rng = np.random.default_rng(np.random.SeedSequence((seed, idx)))
        ys = rng.integers(0, h - ps + 1, config.patches_per_image)
        xs = rng.integers(0, w - ps + 1, config.patches_per_image)
        for y, x in zip(ys, xs):
            rain_out.append(rainy[y:y + ps, x:x + ps])
            res_out.append(residual[y:y + ps, x:x + ps])
            clean_out.append(clean[y:y + ps, x:x + ps])
    if not rain_out:
        raise ValueError("no image was large enough to sample patches from")
    return (images_to_batch(rain_out), images_to_batch(res_out),
            images_to_batch(clean_out))


def train(model: Rescan, train_pairs, config: TrainConfig, test_pairs=None,
          out_dir=None):
    """Run the optimization loop; returns (final state dict, TrainLog)."""
    config.validate()
    log = TrainLog()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if config.iterations == 0:
        state = {k: v.copy() for k, v in model.state_dict().items()}
        if out is not None:
            _save(model, out / "checkpoint_final.bin")
        return state, log

    rain, res, _ = sample_patches(train_pairs, config, config.seed)
    pool = rain.shape[0]
    if config.batch_size > pool:
        raise ValueError(f"batch size {config.batch_size} exceeds patch "
                         f"pool {pool}")
    framework = model.config.framework
    opt = Adam(model.named_parameters())
    order = np.empty(0, dtype=np.int64)
    epoch = 0
    cursor = 0
    last_good = {k: v.copy() for k, v in model.state_dict().items()}

    for it in range(config.iterations):
        if cursor + config.batch_size > order.size:
            erng = np.random.default_rng(
                np.random.SeedSequence((config.seed, 7919, epoch)))
            order = erng.permutation(pool)
            epoch += 1
            cursor = 0
        idx = np.sort(order[cursor:cursor + config.batch_size])
        cursor += config.batch_size

        o = Tensor(rain[idx], dtype=model.dtype)
        r_true = Tensor(res[idx], dtype=model.dtype)
        result = model.forward(o)
        loss = stage_loss(framework, result.stage_streaks, r_true)
        loss_val = loss.item()
        lr = lr_at(it, config)
        log.losses.append(loss_val)
        log.lrs.append(lr)
        if not math.isfinite(loss_val):
            if out is not None:
                save_checkpoint(out / "checkpoint_lastgood.bin", last_good)
            raise TrainingDiverged(
                f"non-finite loss {loss_val} at iteration {it}")
        opt.zero_grad()
        loss.backward()
        try:
            opt.step(lr)
        except NonFiniteGradient:
            if out is not None:
                save_checkpoint(out / "checkpoint_lastgood.bin", last_good)
            raise

        done = it + 1
        if done % config.checkpoint_every == 0 or done == config.iterations:
            last_good = {k: v.copy() for k, v in model.state_dict().items()}
            if out is not None:
                _save(model, out / f"checkpoint_{done:06d}.bin")
        if test_pairs and (done % config.eval_every == 0
                           or done == config.iterations):
            report, _ = evaluate(model, test_pairs)
            log.evals.append((done, report.mean_psnr, report.mean_ssim))

    state = {k: v.copy() for k, v in model.state_dict().items()}
    if out is not None:
        _save(model, out / "checkpoint_final.bin")
        log.to_csv(out / "train_log.csv")
    return state, log


def _save(model, path):
    save_checkpoint(path, model.state_dict())
    save_config_kv(Path(path).with_suffix(".cfg"),
                   config_to_dict(model.config))


def derain_image(model, rainy_image):
    """Full-image inference; returns (clamped background, raw result)."""
    o = Tensor(images_to_batch([rainy_image], dtype=model.dtype))
    result = model.derain(o)
    background = batch_to_image(result.background)
    return np.clip(background, 0.0, 1.0), result


def evaluate(model, pairs, names=None):
    """Full-image metrics of the derained output against the clean image.

    Returns (report, baseline) where baseline scores the untouched rainy
    input against the clean image.
    """
    if names is None:
        names = [f"image{ix}" for ix in range(len(pairs))]
    derained_rows = []
    baseline_rows = []
    for name, (rainy, clean, _res) in zip(names, pairs):
        background, _ = derain_image(model, rainy)
        derained_rows.append((name, background, clean))
        baseline_rows.append((name, rainy, clean))
    return evaluate_pairs(derained_rows), evaluate_pairs(baseline_rows)
