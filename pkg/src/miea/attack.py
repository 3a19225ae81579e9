"""Eve's model-inversion attacks on eavesdropped symbol frames.

White box: Eve holds the encoder and searches for the image whose encoding
matches what she heard, with a total-variation prior. Black box: Eve queries
the transmitter with her own images, records the noisy symbols, and fits an
inverse network from symbols back to images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .channel import ChannelSpec, apply_channel
from .codec import (
    SymbolFrame,
    TrainedCodec,
    encode_batch,
    normalize_power_t,
    symbols_t,
    symbols_to_features,
    tv,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)


class AttackDiverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# White box


@dataclass
class InversionConfig:
    iterations: int = 2000
    learning_rate: float = 1e-3
    lam: float = 1.0
    beta: float = 1.0
    init: str = "all_zero"
    # stop an image once its objective improved by less than `tol` over `patience` steps
    tol: float = 1e-6
    patience: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.init not in ("all_zero", "uniform"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class Inversion:
    images: np.ndarray          # (B, H, W, C)
    objective: np.ndarray       # (B,) at the returned images
    initial_objective: np.ndarray
    iterations: np.ndarray      # (B,) steps actually taken per image

    @property
    def image(self) -> np.ndarray:
        return self.images[0]


def white_box_objective(
    codec: TrainedCodec, x: torch.Tensor, target: torch.Tensor, lam: float = 1.0, beta: float = 1.0
) -> torch.Tensor:
    """Per-image ``||target - f(x)||^2 + lam * TV(x)``.

    ``x`` is ``(B, C, H, W)``; ``target`` holds the heard symbols ``(B, N, 2)``.
    """
    y = symbols_t(normalize_power_t(codec.net.features(x)))
    err = ((target - y) ** 2).sum(dim=(1, 2))
    return err + lam * tv(x, beta) if lam else err


def white_box_invert_batch(
    codec: TrainedCodec, frames: Sequence[SymbolFrame], cfg: InversionConfig, rng_seed: int = 0
) -> Inversion:
    """Run the gradient inversion for several frames at once.

    Adam is elementwise and the objective separates over images, so this is
    the same computation as independent runs, just vectorized.
    """
    H, W, C = codec.config.image_shape
    for y in frames:
        if tuple(y.origin_shape) != codec.feature_shape:
            raise ValueError(f"frame shape {y.origin_shape} != encoder output {codec.feature_shape}")
    b = len(frames)
    dtype = codec.dtype
    target = torch.as_tensor(np.stack([y.symbols for y in frames])).to(dtype)
    if cfg.init == "all_zero":
        x = torch.zeros((b, C, H, W), dtype=dtype)
    else:
        gen = torch.Generator().manual_seed(rng_seed)
        x = torch.rand((b, C, H, W), generator=gen, dtype=dtype)
    x.requires_grad_(True)
    opt = torch.optim.Adam([x], lr=cfg.learning_rate)

    with torch.no_grad():
        initial = white_box_objective(codec, x, target, cfg.lam, cfg.beta)
    result_x = x.detach().clone()
    done = torch.zeros(b, dtype=torch.bool)
    steps = torch.zeros(b, dtype=torch.long)
    window = torch.full((cfg.patience + 1, b), float("inf"), dtype=dtype)

    for it in range(cfg.iterations):
        obj = white_box_objective(codec, x, target, cfg.lam, cfg.beta)
        if not torch.isfinite(obj).all():
            raise AttackDiverged(f"non-finite white-box objective at iteration {it}")
        opt.zero_grad()
        obj.sum().backward()
        opt.step()
        with torch.no_grad():
            x.clamp_(0.0, 1.0)
            live = ~done
            steps[live] += 1
            result_x[live] = x[live]
            window = torch.roll(window, -1, dims=0)
            window[-1] = obj.detach()
            if it >= cfg.patience:
                stalled = (window[0] - window[-1]) < cfg.tol
                done |= stalled
                if done.all():
                    break

    with torch.no_grad():
        final = white_box_objective(codec, result_x, target, cfg.lam, cfg.beta)
    return Inversion(
        images=result_x.permute(0, 2, 3, 1).numpy().astype(np.float32),
        objective=final.numpy(),
        initial_objective=initial.numpy(),
        iterations=steps.numpy(),
    )


def white_box_invert(
    codec: TrainedCodec, y_e: SymbolFrame, cfg: InversionConfig, rng_seed: int = 0
) -> Inversion:
    """Reconstruct one image from one eavesdropped frame; see ``Inversion.image``."""
    return white_box_invert_batch(codec, [y_e], cfg, rng_seed)


# --------------------------------------------------------------------------
# Black box


@dataclass
class AttackDataset:
    images: np.ndarray
    frames: list

    def __post_init__(self):
        if len(self.images) == 0:
            raise ValueError("attack dataset is empty")
        if len(self.images) != len(self.frames):
            raise ValueError(f"{len(self.images)} images but {len(self.frames)} frames")

    def __len__(self):
        return len(self.frames)


def eavesdrop(frames: Sequence[SymbolFrame], spec: ChannelSpec) -> list:
    """Pass each frame through its own realization of the eavesdropper channel."""
    return [
        apply_channel(y, ChannelSpec(spec.snr_db, spec.gain, derive_seed(spec.seed, i)))
        for i, y in enumerate(frames)
    ]


def collect_attack_dataset(codec: TrainedCodec, images, eavesdropper_spec: ChannelSpec) -> AttackDataset:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError("need a non-empty (m, H, W, C) image batch")
    return AttackDataset(images, eavesdrop(encode_batch(codec, images), eavesdropper_spec))


@dataclass
class InverseNetConfig:
    feature_shape: tuple
    image_shape: tuple
    hidden: int = 64
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 16

    def __post_init__(self):
        self.feature_shape = tuple(int(d) for d in self.feature_shape)
        self.image_shape = tuple(int(d) for d in self.image_shape)
        fh, fw, _ = self.feature_shape
        h, w, _ = self.image_shape
        if h % fh or w % fw or h // fh != w // fw:
            raise ValueError(f"image {self.image_shape} is not an integer upsampling of {self.feature_shape}")

    @property
    def upsampling(self) -> int:
        return self.image_shape[0] // self.feature_shape[0]

    def to_dict(self):
        return {
            "feature_shape": list(self.feature_shape),
            "image_shape": list(self.image_shape),
            "hidden": self.hidden,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class InverseNetwork(nn.Module):
    """Two 3x3 convolutions on the received feature grid, then a learned upsampling.

    The convolutions run at feature resolution so each output block sees a
    5x5 neighbourhood of received cells; the transposed convolution with
    kernel = stride = upsampling factor maps every cell to its pixel block.
    """

    def __init__(self, cfg: InverseNetConfig):
        super().__init__()
        f = cfg.upsampling
        c_feat = cfg.feature_shape[2]
        c_img = cfg.image_shape[2]
        self.conv1 = nn.Conv2d(c_feat, cfg.hidden, 3, padding=1)
        self.act1 = nn.PReLU(cfg.hidden)
        self.conv2 = nn.Conv2d(cfg.hidden, cfg.hidden, 3, padding=1)
        self.act2 = nn.PReLU(cfg.hidden)
        self.up = nn.ConvTranspose2d(cfg.hidden, c_img, kernel_size=f, stride=f)

    def forward(self, y):
        h = self.act2(self.conv2(self.act1(self.conv1(y))))
        return torch.sigmoid(self.up(h))


@dataclass(eq=False)
class InverseNet:
    module: InverseNetwork
    config: InverseNetConfig
    seed: int = 0
    losses: list = field(default_factory=list)
    initial_loss: float = float("nan")

    def __post_init__(self):
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)


def _frames_to_nchw(frames: Sequence[SymbolFrame], feature_shape) -> torch.Tensor:
    for y in frames:
        if tuple(y.origin_shape) != tuple(feature_shape):
            raise ValueError(f"frame shape {y.origin_shape} != inverse net input {feature_shape}")
    feats = np.stack([symbols_to_features(y) for y in frames]).astype(np.float32)
    return torch.as_tensor(feats).permute(0, 3, 1, 2).contiguous()


def _mean_sse(module, y, x, batch=256) -> float:
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(y), batch):
            total += ((module(y[i : i + batch]) - x[i : i + batch]) ** 2).sum().item()
    return total / len(y)


def train_inverse_network(data: AttackDataset, cfg: InverseNetConfig, rng_seed: int = 0) -> InverseNet:
    """Fit ``g`` minimizing the mean per-sample squared error ``||g(y_i) - x_i||^2``."""
    m = len(data)
    if m == 0:
        raise ValueError("attack dataset is empty")
    if m < cfg.batch_size:
        raise ValueError(f"dataset of {m} samples is smaller than batch size {cfg.batch_size}")
    if tuple(data.images.shape[1:]) != cfg.image_shape:
        raise ValueError(f"images {data.images.shape[1:]} != config {cfg.image_shape}")
    y_all = _frames_to_nchw(data.frames, cfg.feature_shape)
    x_all = torch.as_tensor(np.ascontiguousarray(data.images, dtype=np.float32)).permute(0, 3, 1, 2)

    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        module = InverseNetwork(cfg)
    gen = torch.Generator().manual_seed(rng_seed)
    opt = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate)
    initial = _mean_sse(module, y_all, x_all)
    losses = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(m, generator=gen)
        total = 0.0
        for i in range(0, m, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss = ((module(y_all[idx]) - x_all[idx]) ** 2).sum(dim=(1, 2, 3)).mean()
            if not torch.isfinite(loss):
                raise AttackDiverged(f"non-finite inverse-network loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        losses.append(total / m)
    net = InverseNet(module, cfg, rng_seed, losses, initial)
    log.debug("inverse net: loss %.3f -> %.3f over %d epochs", initial, losses[-1] if losses else initial, cfg.epochs)
    return net


def training_loss(net: InverseNet, data: AttackDataset) -> float:
    """Mean per-sample squared error of ``net`` on ``data``."""
    y = _frames_to_nchw(data.frames, net.config.feature_shape)
    x = torch.as_tensor(np.ascontiguousarray(data.images, dtype=np.float32)).permute(0, 3, 1, 2)
    return _mean_sse(net.module, y, x)


def black_box_invert_batch(net: InverseNet, frames: Sequence[SymbolFrame], batch: int = 256) -> np.ndarray:
    y = _frames_to_nchw(frames, net.config.feature_shape)
    out = []
    with torch.no_grad():
        for i in range(0, len(y), batch):
            out.append(net.module(y[i : i + batch]).clamp(0, 1).permute(0, 2, 3, 1).numpy())
    return np.concatenate(out)


def black_box_invert(net: InverseNet, y_e: SymbolFrame) -> np.ndarray:
    return black_box_invert_batch(net, [y_e])[0]
