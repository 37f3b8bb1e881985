"""Hand-gesture generator and temporal-delta discriminator.

The generator maps an arm-pose sequence (T, 18) to a hand-pose sequence
(T, 126): a body encoder learns inter-joint structure, a temporal UNet pools
dynamics through a bottleneck (with skip connections for high-frequency
motion), and a hand decoder regresses the hand angles. An optional image
pathway projects precomputed per-frame appearance features and concatenates
them with the body embedding ahead of the UNet.

Networks operate in standardized-angle space; `generate` wraps the forward
pass with (de)standardization and canonicalization so the public contract
stays in physical units.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import NormalizationStats
from .kinematics import BODY_DIM, HAND_DIM, canonicalize

CHECKPOINT_VERSION = 1
_SLOPE = 0.2  # LeakyReLU negative slope


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture hyperparameters.

    window: training window length T (must be divisible by 2**unet_depth;
    the bottleneck temporal length is window / 2**unet_depth).
    feat_dim = 0 disables the image pathway.
    """

    window: int = 64
    body_dim: int = BODY_DIM
    hand_dim: int = HAND_DIM
    feat_dim: int = 0
    body_embed: int = 256   # body embedding width per frame
    dyn_embed: int = 256    # UNet / dynamics width per frame
    image_embed: int = 256  # image embedding width per frame
    unet_depth: int = 4
    kernel_size: int = 3

    def __post_init__(self):
        if self.window % (2 ** self.unet_depth) != 0:
            raise ValueError(
                f"window {self.window} must be divisible by 2^depth = {2 ** self.unet_depth}"
            )
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def bottleneck_len(self) -> int:
        return self.window // (2 ** self.unet_depth)

    @property
    def has_image_pathway(self) -> bool:
        return self.feat_dim > 0


def _as_batched(x, dim, what):
    """Accept (T, C) or (N, T, C); return (tensor (N, T, C), had_batch flag)."""
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x))
    if x.ndim == 2:
        x = x.unsqueeze(0)
        had_batch = False
    elif x.ndim == 3:
        had_batch = True
    else:
        raise ValueError(f"{what} must be (T, {dim}) or (N, T, {dim}), got {tuple(x.shape)}")
    if x.shape[-1] != dim:
        raise ValueError(f"{what} must have {dim} channels, got {x.shape[-1]}")
    return x, had_batch


def _conv(c_in, c_out, k, stride=1):
    # replicate padding keeps the stack shift-consistent: constant input stays
    # exactly constant through every layer, so stitched windows agree
    return nn.Conv1d(c_in, c_out, k, stride=stride, padding=k // 2, padding_mode="replicate")


class TemporalUNet(nn.Module):
    """1D UNet over time: stride-2 convs down, nearest upsample + conv up,
    additive skip connections, constant channel width.

    The bottleneck block also injects a global-average-pooled context vector
    so every output frame sees the whole sequence regardless of depth.
    """

    def __init__(self, in_channels: int, width: int, depth: int, kernel_size: int):
        super().__init__()
        self.depth = depth
        self.in_proj = _conv(in_channels, width, kernel_size)
        self.down = nn.ModuleList(_conv(width, width, kernel_size, stride=2) for _ in range(depth))
        self.mid = _conv(width, width, kernel_size)
        self.context = nn.Linear(width, width)
        self.up = nn.ModuleList(_conv(width, width, kernel_size) for _ in range(depth))

    def forward(self, x, zero_bottleneck: bool = False):
        # x: (N, C, T)
        t = x.shape[-1]
        if t % (2 ** self.depth) != 0:
            raise ValueError(f"temporal length {t} not divisible by 2^depth = {2 ** self.depth}")
        x = F.leaky_relu(self.in_proj(x), _SLOPE)
        skips = []
        for down in self.down:
            skips.append(x)
            x = F.leaky_relu(down(x), _SLOPE)
        x = F.leaky_relu(self.mid(x), _SLOPE)
        g = self.context(x.mean(dim=-1))
        x = F.leaky_relu(x + g.unsqueeze(-1), _SLOPE)
        if zero_bottleneck:
            x = torch.zeros_like(x)
        for up in reversed(self.up):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.leaky_relu(up(x) + skips.pop(), _SLOPE)
        return x


class HandGenerator(nn.Module):
    """Body encoder -> (optional image concat) -> temporal UNet -> hand decoder."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        k = config.kernel_size
        self.body_encoder = nn.Sequential(
            _conv(config.body_dim, config.body_embed, k),
            nn.LeakyReLU(_SLOPE),
            _conv(config.body_embed, config.body_embed, k),
            nn.LeakyReLU(_SLOPE),
        )
        self.image_proj = (
            nn.Linear(config.feat_dim, config.image_embed) if config.has_image_pathway else None
        )
        unet_in = config.body_embed + (config.image_embed if config.has_image_pathway else 0)
        self.unet = TemporalUNet(unet_in, config.dyn_embed, config.unet_depth, k)
        self.hand_decoder = nn.Sequential(
            _conv(config.dyn_embed, config.dyn_embed, k),
            nn.LeakyReLU(_SLOPE),
            _conv(config.dyn_embed, config.dyn_embed, k),
            nn.LeakyReLU(_SLOPE),
            nn.Conv1d(config.dyn_embed, config.hand_dim, 1),
        )
        # physical-unit <-> network-unit mapping; replaced when training fits stats
        self.stats = NormalizationStats.identity(config.feat_dim)

    def _dtype(self):
        return next(self.parameters()).dtype

    def encode_body(self, body):
        """(T, 18) or (N, T, 18) standardized body angles -> per-frame body embedding."""
        x, batched = _as_batched(body, self.config.body_dim, "body")
        x = x.to(self._dtype())
        out = self.body_encoder(x.transpose(1, 2)).transpose(1, 2)
        return out if batched else out.squeeze(0)

    def project_image(self, feats):
        """(T, F) or (N, T, F) standardized image features -> per-frame image embedding."""
        if self.image_proj is None:
            raise ValueError("this model has no image pathway (feat_dim = 0)")
        x, batched = _as_batched(feats, self.config.feat_dim, "image features")
        out = self.image_proj(x.to(self._dtype()))
        return out if batched else out.squeeze(0)

    def unet_forward(self, phi, zero_bottleneck: bool = False):
        """Per-frame embedding (T, C) / (N, T, C) -> dynamics embedding of the same length."""
        unet_in = self.unet.in_proj.in_channels
        x, batched = _as_batched(phi, unet_in, "unet input")
        out = self.unet(x.to(self._dtype()).transpose(1, 2), zero_bottleneck=zero_bottleneck)
        out = out.transpose(1, 2)
        return out if batched else out.squeeze(0)

    def decode_hands(self, dyn):
        """Dynamics embedding (T, D) / (N, T, D) -> standardized hand angles (…, 126)."""
        x, batched = _as_batched(dyn, self.config.dyn_embed, "dynamics embedding")
        out = self.hand_decoder(x.to(self._dtype()).transpose(1, 2)).transpose(1, 2)
        return out if batched else out.squeeze(0)

    def forward(self, body, feats=None):
        """Full composition in standardized space; shapes (…, T, 18)[+ (…, T, F)] -> (…, T, 126)."""
        phi = self.encode_body(body)
        if self.config.has_image_pathway:
            if feats is None:
                raise ValueError("this model's image pathway requires image features")
            phi_i = self.project_image(feats)
            phi = torch.cat([phi, phi_i], dim=-1)
        elif feats is not None:
            raise ValueError("image features passed to a body-only model")
        return self.decode_hands(self.unet_forward(phi))


class DeltaDiscriminator(nn.Module):
    """Temporal convolutional classifier over hand-pose delta sequences.

    Input (T-1, 126) or (N, T-1, 126); output one logit per sequence.
    """

    def __init__(self, hand_dim: int = HAND_DIM, width: int = 64, kernel_size: int = 3):
        super().__init__()
        self.hand_dim = hand_dim
        self.body = nn.Sequential(
            _conv(hand_dim, width, kernel_size, stride=2),
            nn.LeakyReLU(_SLOPE),
            _conv(width, width, kernel_size, stride=2),
            nn.LeakyReLU(_SLOPE),
            _conv(width, width, kernel_size, stride=2),
            nn.LeakyReLU(_SLOPE),
        )
        self.head = nn.Linear(width, 1)
        self.width = width
        self.kernel_size = kernel_size

    def forward(self, deltas):
        x, batched = _as_batched(deltas, self.hand_dim, "deltas")
        x = x.to(next(self.parameters()).dtype)
        h = self.body(x.transpose(1, 2)).mean(dim=-1)
        logit = self.head(h).squeeze(-1)
        return logit if batched else logit.squeeze(0)


def temporal_deltas(h):
    """Frame-to-frame differences: (…, T, C) -> (…, T-1, C). Needs T >= 2."""
    t = h.shape[-2]
    if t < 2:
        raise ValueError(f"temporal deltas need at least 2 frames, got {t}")
    return h[..., 1:, :] - h[..., :-1, :]


def discriminate(disc: DeltaDiscriminator, deltas):
    """Scalar realism logit for one delta sequence."""
    logit = disc(deltas)
    if logit.ndim != 0:
        raise ValueError("discriminate expects a single (T-1, 126) delta sequence")
    return logit


def generate(model: HandGenerator, body: np.ndarray, feats: np.ndarray | None = None) -> np.ndarray:
    """Predict hand angles (T, 126) from body angles (T, 18) in physical units.

    T must be divisible by 2**unet_depth. Standardization, de-standardization,
    and canonicalization are applied internally.
    """
    body = np.asarray(body, dtype=np.float64)
    if body.ndim != 2 or body.shape[1] != model.config.body_dim:
        raise ValueError(f"body must be (T, {model.config.body_dim}), got {body.shape}")
    if model.config.has_image_pathway:
        if feats is None:
            raise ValueError("this model's image pathway requires image features")
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape != (body.shape[0], model.config.feat_dim):
            raise ValueError(
                f"image features must be (T={body.shape[0]}, {model.config.feat_dim}), got {feats.shape}"
            )
    elif feats is not None:
        raise ValueError("image features passed to a body-only model")

    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        b = torch.as_tensor(model.stats.apply_body(body), dtype=dtype)
        f_in = None
        if feats is not None:
            f_in = torch.as_tensor(model.stats.apply_feats(feats), dtype=dtype)
        out = model(b, f_in).double().numpy()
    hands = model.stats.invert_hands(out)
    t = hands.shape[0]
    return canonicalize(hands.reshape(t, -1, 3)).reshape(t, model.config.hand_dim)


def synthesize_long(model: HandGenerator, body: np.ndarray, feats: np.ndarray | None = None) -> np.ndarray:
    """Predict hands for a sequence of any length T >= 1.

    Runs the generator on sliding windows (window length from the config,
    50% overlap) and blends overlapping outputs with a linear crossfade.
    Inputs shorter than one window are reflect-padded and the output trimmed.
    """
    body = np.asarray(body, dtype=np.float64)
    if body.ndim != 2 or body.shape[1] != model.config.body_dim:
        raise ValueError(f"body must be (T, {model.config.body_dim}), got {body.shape}")
    t = body.shape[0]
    if t < 1:
        raise ValueError("need at least one frame")
    size = model.config.window
    if model.config.has_image_pathway and feats is None:
        raise ValueError("this model's image pathway requires image features")

    if t < size:
        pad = size - t
        mode = "reflect" if t > 1 else "edge"
        body_p = np.pad(body, ((0, pad), (0, 0)), mode=mode)
        feats_p = None if feats is None else np.pad(np.asarray(feats, dtype=np.float64), ((0, pad), (0, 0)), mode=mode)
        return synthesize_long(model, body_p, feats_p)[:t]

    stride = size // 2
    starts = list(range(0, t - size + 1, stride))
    if starts[-1] + size < t:
        starts.append(t - size)

    # tent weights make the per-frame normalized blend a linear crossfade
    # wherever exactly two windows overlap
    tent = np.minimum(np.arange(1, size + 1), np.arange(size, 0, -1)).astype(np.float64)
    acc = np.zeros((t, model.config.hand_dim))
    weight = np.zeros(t)
    for s in starts:
        f_win = None if feats is None else np.asarray(feats, dtype=np.float64)[s : s + size]
        pred = generate(model, body[s : s + size], f_win)
        acc[s : s + size] += tent[:, None] * pred
        weight[s : s + size] += tent
    hands = acc / weight[:, None]
    return canonicalize(hands.reshape(t, -1, 3)).reshape(t, model.config.hand_dim)


def save_checkpoint(path, model: HandGenerator, disc: DeltaDiscriminator | None = None) -> None:
    """Versioned checkpoint: config, normalization stats, named parameter tensors."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "generator_config": asdict(model.config),
        "stats": {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in model.stats.to_dict().items()},
        "generator_state": model.state_dict(),
    }
    if disc is not None:
        payload["discriminator_arch"] = {
            "hand_dim": disc.hand_dim,
            "width": disc.width,
            "kernel_size": disc.kernel_size,
        }
        payload["discriminator_state"] = disc.state_dict()
    torch.save(payload, path)


def load_checkpoint(path):
    """Load a checkpoint -> (HandGenerator, DeltaDiscriminator | None).

    Rejects unknown versions and config fields before touching parameters;
    parameter shapes are validated by the strict state-dict load.
    """
    payload = torch.load(path, weights_only=True)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")
    cfg_dict = payload["generator_config"]
    known = {f.name for f in fields(GeneratorConfig)}
    unknown = set(cfg_dict) - known
    if unknown:
        raise ValueError(f"checkpoint config has unknown fields: {sorted(unknown)}")
    config = GeneratorConfig(**cfg_dict)
    model = HandGenerator(config)
    model.load_state_dict(payload["generator_state"], strict=True)
    model.stats = NormalizationStats.from_dict({k: v.numpy() for k, v in payload["stats"].items()})
    disc = None
    if "discriminator_state" in payload:
        disc = DeltaDiscriminator(**payload["discriminator_arch"])
        disc.load_state_dict(payload["discriminator_state"], strict=True)
    return model, disc
