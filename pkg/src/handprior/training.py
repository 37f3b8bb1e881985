"""Losses and the optimization loop.

The generator is trained with a mean L1 regression loss on hand angles
(standardized space), weighted by `l1_weight`, plus a non-saturating GAN
loss on temporal deltas applied every `adversarial_period`-th epoch
(1-indexed: epochs 3, 6, 9, ... at the default period of 3). On those epochs
the discriminator is updated first, then the generator; on all other epochs
the discriminator is untouched.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import NormalizationStats, WindowedSample, fit_normalization
from .model import DeltaDiscriminator, HandGenerator, save_checkpoint, temporal_deltas


@dataclass
class TrainingConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    epochs: int = 200
    l1_weight: float = 50.0        # weight of the L1 term in the full objective
    adversarial_period: int = 3    # GAN loss on every n-th epoch (1-indexed)
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.l1_weight <= 0:
            raise ValueError(f"l1_weight must be positive, got {self.l1_weight}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.adversarial_period < 1:
            raise ValueError(f"adversarial_period must be >= 1, got {self.adversarial_period}")


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value config file -> dict of raw string values."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


@dataclass
class EpochStats:
    epoch: int
    train_l1: float
    gan_loss: float | None
    disc_loss: float | None
    val_l1: float | None
    seconds: float


@dataclass
class TrainLog:
    rows: list[EpochStats] = field(default_factory=list)

    def format(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.6f}"

        lines = ["# epoch train_l1 gan_loss disc_loss val_l1 seconds"]
        for r in self.rows:
            lines.append(
                f"{r.epoch} {r.train_l1:.6f} {fmt(r.gan_loss)} {fmt(r.disc_loss)} "
                f"{fmt(r.val_l1)} {r.seconds:.3f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.format())


class TrainingDiverged(RuntimeError):
    pass


def l1_loss(pred, target):
    """Mean absolute difference over all entries (mean keeps the loss scale
    independent of batch and window size)."""
    if not torch.is_tensor(pred):
        pred = torch.as_tensor(np.asarray(pred))
    if not torch.is_tensor(target):
        target = torch.as_tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def discriminator_loss(disc: DeltaDiscriminator, real_h, fake_h):
    """BCE with real deltas labeled 1 and fake deltas labeled 0.

    The fake branch is detached, so this loss never reaches the generator.
    """
    real_logit = disc(temporal_deltas(real_h))
    fake_logit = disc(temporal_deltas(fake_h.detach() if torch.is_tensor(fake_h) else fake_h))
    loss_real = F.binary_cross_entropy_with_logits(real_logit, torch.ones_like(real_logit))
    loss_fake = F.binary_cross_entropy_with_logits(fake_logit, torch.zeros_like(fake_logit))
    return 0.5 * (loss_real + loss_fake)


def generator_gan_loss(disc: DeltaDiscriminator, fake_h):
    """Non-saturating generator loss: -E[log D(deltas(fake))]."""
    fake_logit = disc(temporal_deltas(fake_h))
    return F.binary_cross_entropy_with_logits(fake_logit, torch.ones_like(fake_logit))


def gan_losses(disc: DeltaDiscriminator, real_h, fake_h):
    """(discriminator loss, generator loss) for a pair of real/fake hand batches."""
    if not torch.is_tensor(fake_h):
        fake_h = torch.as_tensor(np.asarray(fake_h))
    if not torch.is_tensor(real_h):
        real_h = torch.as_tensor(np.asarray(real_h), dtype=fake_h.dtype)
    if real_h.shape[-2] < 2 or fake_h.shape[-2] < 2:
        raise ValueError("GAN losses need at least 2 frames per sequence")
    return discriminator_loss(disc, real_h, fake_h), generator_gan_loss(disc, fake_h)


def total_generator_loss(gan_loss, l1, l1_weight: float, adversarial_epoch: bool):
    """Full generator objective: gan + weight*l1 on adversarial epochs, weight*l1 otherwise."""
    if l1_weight <= 0:
        raise ValueError(f"l1_weight must be positive, got {l1_weight}")
    if adversarial_epoch:
        if gan_loss is None:
            raise ValueError("adversarial epoch requires a GAN loss term")
        return gan_loss + l1_weight * l1
    return l1_weight * l1


def _stack_windows(windows: list[WindowedSample], stats: NormalizationStats, with_feats: bool):
    body = torch.as_tensor(
        np.stack([stats.apply_body(w.body) for w in windows]), dtype=torch.float32
    )
    hands = torch.as_tensor(
        np.stack([stats.apply_hands(w.hands) for w in windows]), dtype=torch.float32
    )
    feats = None
    if with_feats:
        missing = [w.source_id for w in windows if w.image_feats is None]
        if missing:
            raise ValueError(f"windows without image features: {sorted(set(missing))}")
        feats = torch.as_tensor(
            np.stack([stats.apply_feats(w.image_feats) for w in windows]), dtype=torch.float32
        )
    return body, hands, feats


def _validation_l1(model, body, hands, feats, batch_size):
    if body.shape[0] == 0:
        return None
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for i in range(0, body.shape[0], batch_size):
            b = body[i : i + batch_size]
            f = None if feats is None else feats[i : i + batch_size]
            pred = model(b, f)
            total += float(l1_loss(pred, hands[i : i + batch_size])) * b.shape[0]
            n += b.shape[0]
    model.train()
    return total / n


def train(
    model: HandGenerator,
    disc: DeltaDiscriminator | None,
    train_windows: list[WindowedSample],
    val_windows: list[WindowedSample],
    config: TrainingConfig,
):
    """Optimize the generator (and discriminator on adversarial epochs).

    Fits normalization on the training windows, stores it on the model, and
    runs `config.epochs` epochs of Adam updates. Deterministic given
    `config.seed`. Returns (model, disc, TrainLog); writes final/best
    checkpoints when `config.checkpoint_dir` is set.
    """
    if not train_windows:
        raise ValueError("no training windows")
    with_feats = model.config.has_image_pathway
    stats = fit_normalization(train_windows)
    if with_feats and stats.feat_mean is None:
        raise ValueError("model has an image pathway but training windows carry no image features")
    model.stats = stats

    body, hands, feats = _stack_windows(train_windows, stats, with_feats)
    vbody, vhands, vfeats = (
        _stack_windows(val_windows, stats, with_feats)
        if val_windows
        else (torch.zeros(0), torch.zeros(0), None)
    )

    g_opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2))
    d_opt = (
        torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2))
        if disc is not None
        else None
    )

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_val = None

    log = TrainLog()
    n = body.shape[0]
    model.train()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        adversarial = disc is not None and epoch % config.adversarial_period == 0
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        epoch_l1, epoch_gan, epoch_d, batches = 0.0, 0.0, 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = order[i : i + config.batch_size]
            b = body[idx]
            h = hands[idx]
            f = None if feats is None else feats[idx]

            fake = model(b, f)
            l1 = l1_loss(fake, h)
            if adversarial:
                d_loss = discriminator_loss(disc, h, fake)
                d_opt.zero_grad()
                d_loss.backward()
                d_opt.step()
                g_gan = generator_gan_loss(disc, fake)
                loss = total_generator_loss(g_gan, l1, config.l1_weight, True)
                epoch_gan += float(g_gan.detach())
                epoch_d += float(d_loss.detach())
            else:
                loss = total_generator_loss(None, l1, config.l1_weight, False)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite generator loss at epoch {epoch}, batch {batches} "
                    f"(l1={float(l1):.4g})"
                )
            g_opt.zero_grad()
            loss.backward()
            g_opt.step()
            epoch_l1 += float(l1.detach())
            batches += 1

        val_l1 = _validation_l1(model, vbody, vhands, vfeats, config.batch_size)
        log.rows.append(
            EpochStats(
                epoch=epoch,
                train_l1=epoch_l1 / batches,
                gan_loss=epoch_gan / batches if adversarial else None,
                disc_loss=epoch_d / batches if adversarial else None,
                val_l1=val_l1,
                seconds=time.perf_counter() - t0,
            )
        )
        if ckpt_dir and val_l1 is not None and (best_val is None or val_l1 < best_val):
            best_val = val_l1
            save_checkpoint(ckpt_dir / "best.ckpt", model, disc)

    if ckpt_dir:
        save_checkpoint(ckpt_dir / "final.ckpt", model, disc)
        if best_val is None:
            warnings.warn("no validation windows; only the final checkpoint was written", stacklevel=2)
    return model, disc, log
