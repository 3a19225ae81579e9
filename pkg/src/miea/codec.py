"""Deep JSCC image codec: semantic/channel encoders and decoders, loss, training.

Layout conventions
------------------
* Images crossing the public API are ``float32`` numpy arrays ``(H, W, C)`` in
  ``[0, 1]``. Internally the torch modules work on ``(B, C, H, W)``.
* Transmitted features are ``(h, w, c)`` arrays. Rows (axis 0) are the unit
  the defense permutes and substitutes.
* A feature tensor is flattened in C order; the first half of the flat vector
  becomes the real parts of the ``N = h*w*c/2`` complex symbols and the second
  half the imaginary parts.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

log = logging.getLogger(__name__)

# Frames whose mean complex power is already this close to 1 are left
# untouched, which makes normalization idempotent bit-for-bit.
POWER_TOLERANCE = 1e-7


class TrainingDiverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Loss terms


def tv(x: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Total variation of channel-first images ``(..., C, H, W)``.

    Returns one value per leading index. Differences past the last row or
    column are taken as zero. The zero-gradient point of ``s**(beta/2)`` is
    given a zero subgradient so constant images do not produce NaNs.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    d_row = F.pad(x[..., 1:, :] - x[..., :-1, :], (0, 0, 0, 1))
    d_col = F.pad(x[..., :, 1:] - x[..., :, :-1], (0, 1))
    s = d_row * d_row + d_col * d_col
    positive = s > 0
    safe = torch.where(positive, s, torch.ones_like(s))
    terms = torch.where(positive, safe ** (beta / 2.0), torch.zeros_like(s))
    return terms.sum(dim=(-3, -2, -1))


def total_variation(image: np.ndarray, beta: float = 1.0) -> float:
    """Total variation of a single ``(H, W, C)`` image, summed over channels."""
    x = torch.as_tensor(np.asarray(image, dtype=np.float64)).permute(2, 0, 1)
    return float(tv(x, beta))


def reconstruction_loss(
    x: torch.Tensor, x_hat: torch.Tensor, lam: float = 1.0, beta: float = 1.0
) -> torch.Tensor:
    """Batch loss: mean per-image squared error sum plus ``lam`` times mean TV.

    Both arguments are ``(B, C, H, W)`` tensors.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.ndim != 4 or x.shape[0] < 1:
        raise ValueError("expected a non-empty (B, C, H, W) batch")
    sse = ((x - x_hat) ** 2).sum(dim=(1, 2, 3)).mean()
    if lam == 0:
        return sse
    return sse + lam * tv(x_hat, beta).mean()


# --------------------------------------------------------------------------
# Symbol frames


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """``N x 2`` channel symbols (real, imaginary) plus the feature shape they came from."""

    symbols: np.ndarray
    origin_shape: tuple

    def __post_init__(self):
        h, w, c = self.origin_shape
        if self.symbols.shape != (h * w * c // 2, 2):
            raise ValueError(
                f"symbols {self.symbols.shape} inconsistent with origin shape {self.origin_shape}"
            )

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[0]

    def power(self) -> float:
        s = self.symbols.astype(np.float64)
        return float((s * s).sum() / self.n_symbols)

    def __eq__(self, other):
        if not isinstance(other, SymbolFrame):
            return NotImplemented
        return self.origin_shape == other.origin_shape and np.array_equal(
            self.symbols, other.symbols
        )


def normalize_power(y_f: np.ndarray) -> np.ndarray:
    """Scale a feature tensor to unit mean complex-symbol power."""
    n = y_f.size // 2
    p = float((y_f.astype(np.float64) ** 2).sum() / n) if n else 0.0
    if p == 0.0 or abs(p - 1.0) <= POWER_TOLERANCE:
        return y_f
    return (y_f.astype(np.float64) / math.sqrt(p)).astype(y_f.dtype)


def features_to_symbols(y_f: np.ndarray, normalize: bool = True) -> SymbolFrame:
    y_f = np.asarray(y_f)
    if y_f.ndim != 3:
        raise ValueError(f"features must be (h, w, c), got shape {y_f.shape}")
    if y_f.size % 2:
        raise ValueError(f"feature element count {y_f.size} is odd")
    if normalize:
        y_f = normalize_power(y_f)
    flat = y_f.reshape(-1)
    n = flat.size // 2
    symbols = np.stack([flat[:n], flat[n:]], axis=1)
    return SymbolFrame(symbols, tuple(int(d) for d in y_f.shape))


def symbols_to_features(y: SymbolFrame) -> np.ndarray:
    if y.origin_shape is None:
        raise ValueError("symbol frame has no origin shape")
    flat = np.concatenate([y.symbols[:, 0], y.symbols[:, 1]])
    return flat.reshape(y.origin_shape)


# --------------------------------------------------------------------------
# Model


@dataclass
class CodecConfig:
    image_shape: tuple = (64, 64, 3)
    train_snr_db: float = 10.0
    width: int = 32
    feature_channels: Optional[int] = None
    lam: float = 1.0
    beta: float = 1.0
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 20

    semantic_layers = 4
    channel_layers = 1

    def __post_init__(self):
        self.image_shape = tuple(int(d) for d in self.image_shape)
        h, w, c = self.image_shape
        if min(h, w, c) < 1:
            raise ValueError("image dimensions must be positive")
        if h % 4 or w % 4:
            raise ValueError("image height and width must be multiples of 4")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.feature_channels is None:
            # about 1/6 of the source dimension, a common JSCC bandwidth ratio
            fh, fw = h // 4, w // 4
            fc = max(1, round(h * w * c / 6 / (fh * fw)))
            if (fh * fw * fc) % 2:
                fc += 1
            self.feature_channels = fc

    @property
    def feature_shape(self) -> tuple:
        h, w, _ = self.image_shape
        return (h // 4, w // 4, self.feature_channels)

    @property
    def n_symbols(self) -> int:
        h, w, c = self.feature_shape
        return h * w * c // 2

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "train_snr_db": self.train_snr_db,
            "width": self.width,
            "feature_channels": self.feature_channels,
            "lam": self.lam,
            "beta": self.beta,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def _deconv(cin, cout, stride=1):
    return nn.ConvTranspose2d(
        cin, cout, 3, stride=stride, padding=1, output_padding=stride - 1
    )


class CodecNet(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        w = config.width
        c_img = config.image_shape[2]
        c_feat = config.feature_channels
        self.semantic_encoder = nn.Sequential(
            _conv(c_img, w, 2), nn.PReLU(w),
            _conv(w, w, 2), nn.PReLU(w),
            _conv(w, w), nn.PReLU(w),
            _conv(w, w), nn.PReLU(w),
        )
        self.channel_encoder = _conv(w, c_feat)
        self.channel_decoder = nn.Sequential(_deconv(c_feat, w), nn.PReLU(w))
        self.semantic_decoder = nn.Sequential(
            _deconv(w, w), nn.PReLU(w),
            _deconv(w, w), nn.PReLU(w),
            _deconv(w, w, 2), nn.PReLU(w),
            _deconv(w, c_img, 2), nn.Sigmoid(),
        )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) images -> (B, c, h, w) unnormalized transmitted features."""
        return self.channel_encoder(self.semantic_encoder(x))

    def reconstruct(self, y: torch.Tensor) -> torch.Tensor:
        return self.semantic_decoder(self.channel_decoder(y))


def normalize_power_t(y: torch.Tensor) -> torch.Tensor:
    """Differentiable per-sample unit-power normalization of (B, ...) features."""
    p = 2.0 * (y * y).flatten(1).mean(dim=1)
    return y / torch.sqrt(p).clamp_min(1e-12).view(-1, *([1] * (y.ndim - 1)))


def symbols_t(y: torch.Tensor) -> torch.Tensor:
    """(B, c, h, w) features -> (B, N, 2) symbols in the frame flattening order."""
    flat = y.permute(0, 2, 3, 1).reshape(y.shape[0], -1)
    n = flat.shape[1] // 2
    return torch.stack([flat[:, :n], flat[:, n:]], dim=2)


@dataclass(eq=False)
class TrainedCodec:
    """A frozen codec. Shareable across readers; never trained further."""

    net: CodecNet
    config: CodecConfig
    seed: int = 0

    def __post_init__(self):
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @property
    def train_snr_db(self) -> float:
        return self.config.train_snr_db

    @property
    def feature_shape(self) -> tuple:
        return self.config.feature_shape

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype


@dataclass
class TrainingReport:
    losses: list = field(default_factory=list)
    seconds: float = 0.0
    val_psnr: float = float("nan")
    val_ssim: float = float("nan")


def _check_image(codec: TrainedCodec, x: np.ndarray):
    if tuple(x.shape) != codec.config.image_shape:
        raise ValueError(f"image shape {x.shape} != codec image shape {codec.config.image_shape}")


def _to_nchw(images: np.ndarray, dtype) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(images)).permute(0, 3, 1, 2).to(dtype)


def encode_features(codec: TrainedCodec, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """(B, H, W, C) images -> (B, h, w, c) raw features (before power scaling)."""
    images = np.asarray(images)
    if images.ndim != 4 or tuple(images.shape[1:]) != codec.config.image_shape:
        raise ValueError(f"expected (B, *{codec.config.image_shape}), got {images.shape}")
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            y = codec.net.features(_to_nchw(images[i : i + batch], codec.dtype))
            out.append(y.permute(0, 2, 3, 1).numpy())
    return np.concatenate(out) if out else np.zeros((0, *codec.feature_shape), np.float32)


def decode_features(codec: TrainedCodec, features: np.ndarray, batch: int = 256) -> np.ndarray:
    """(B, h, w, c) received features -> (B, H, W, C) images clamped to [0, 1]."""
    features = np.asarray(features)
    if features.ndim != 4 or tuple(features.shape[1:]) != codec.feature_shape:
        raise ValueError(f"expected (B, *{codec.feature_shape}), got {features.shape}")
    out = []
    with torch.no_grad():
        for i in range(0, len(features), batch):
            y = torch.as_tensor(np.ascontiguousarray(features[i : i + batch]))
            x = codec.net.reconstruct(y.permute(0, 3, 1, 2).to(codec.dtype))
            out.append(x.clamp(0, 1).permute(0, 2, 3, 1).numpy())
    return np.concatenate(out)


def encode_batch(codec: TrainedCodec, images: np.ndarray) -> list:
    return [features_to_symbols(f) for f in encode_features(codec, images)]


def decode_batch(codec: TrainedCodec, frames: Sequence[SymbolFrame]) -> np.ndarray:
    return decode_features(codec, np.stack([_frame_features(codec, y) for y in frames]))


def _frame_features(codec: TrainedCodec, y: SymbolFrame) -> np.ndarray:
    if tuple(y.origin_shape) != codec.feature_shape:
        raise ValueError(f"frame shape {y.origin_shape} != codec feature shape {codec.feature_shape}")
    return symbols_to_features(y)


def encode(codec: TrainedCodec, x: np.ndarray) -> SymbolFrame:
    """Image -> unit-power symbol frame (semantic then channel encoder)."""
    x = np.asarray(x)
    _check_image(codec, x)
    return features_to_symbols(encode_features(codec, x[None])[0])


def decode(codec: TrainedCodec, y: SymbolFrame) -> np.ndarray:
    """Received frame -> image in [0, 1] (channel then semantic decoder)."""
    return decode_features(codec, _frame_features(codec, y)[None])[0]


# --------------------------------------------------------------------------
# Training


def build_codec(config: CodecConfig, seed: int = 0) -> TrainedCodec:
    """A codec with freshly initialized (untrained) parameters."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = CodecNet(config)
    return TrainedCodec(net, config, seed)


def train_codec(
    dataset: np.ndarray,
    config: CodecConfig,
    rng_seed: int = 0,
    validation: Optional[np.ndarray] = None,
) -> tuple:
    """Jointly train all four stages end to end through a simulated AWGN link.

    Returns ``(TrainedCodec, TrainingReport)``.
    """
    from .channel import snr_to_noise_std
    from .metrics import psnr, ssim

    data = np.asarray(dataset, dtype=np.float32)
    if data.ndim != 4 or len(data) == 0:
        raise ValueError("dataset must be a non-empty (M, H, W, C) array")
    if tuple(data.shape[1:]) != config.image_shape:
        raise ValueError(f"dataset images {data.shape[1:]} != config {config.image_shape}")

    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        net = CodecNet(config)
    gen = torch.Generator().manual_seed(rng_seed)
    sigma = snr_to_noise_std(config.train_snr_db)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    x_all = _to_nchw(data, torch.float32)
    m = len(x_all)

    report = TrainingReport()
    start = time.perf_counter()
    net.train()
    for epoch in range(config.epochs):
        order = torch.randperm(m, generator=gen)
        total = 0.0
        for i in range(0, m, config.batch_size):
            xb = x_all[order[i : i + config.batch_size]]
            y = normalize_power_t(net.features(xb))
            if sigma > 0:
                y = y + sigma * torch.randn(y.shape, generator=gen)
            loss = reconstruction_loss(xb, net.reconstruct(y), config.lam, config.beta)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch offset {i}: {loss.item()}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(xb)
        report.losses.append(total / m)
        log.info("codec snr=%s epoch %d loss %.4f", config.train_snr_db, epoch, report.losses[-1])
    report.seconds = time.perf_counter() - start

    codec = TrainedCodec(net, config, rng_seed)
    val = data[:64] if validation is None else np.asarray(validation, dtype=np.float32)
    if len(val):
        from .channel import ChannelSpec, apply_channel

        frames = [
            apply_channel(f, ChannelSpec(config.train_snr_db, seed=rng_seed + 1 + k))
            for k, f in enumerate(encode_batch(codec, val))
        ]
        recon = decode_batch(codec, frames)
        report.val_psnr = float(np.mean([psnr(a, b) for a, b in zip(val, recon)]))
        report.val_ssim = float(np.mean([ssim(a, b) for a, b in zip(val, recon)]))
    return codec, report
