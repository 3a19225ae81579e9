"""AWGN main/eavesdropper channels acting on symbol frames.

Signal power is assumed normalized to one complex-symbol unit, so an SNR of
``s`` dB means total complex noise power ``10**(-s/10)`` split evenly over
the real and imaginary dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .codec import SymbolFrame


class _Noiseless:
    """Sentinel for an infinite-SNR (noise-free) link."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOISELESS"

    def __reduce__(self):
        return (_Noiseless, ())


NOISELESS = _Noiseless()

Snr = Union[float, _Noiseless]


def parse_snr(text: str) -> Snr:
    """Parse ``'10'``, ``'-3.5'`` or ``'inf'``/``'noiseless'`` into an SNR value."""
    t = str(text).strip().lower()
    if t in ("inf", "+inf", "noiseless", "none"):
        return NOISELESS
    value = float(t)
    if not math.isfinite(value):
        raise ValueError(f"SNR must be finite or 'inf', got {text!r}")
    return value


def format_snr(snr: Snr) -> str:
    return "inf" if snr is NOISELESS else f"{float(snr):g}"


def snr_to_noise_std(snr_db: Snr) -> float:
    """Per-real-dimension noise standard deviation for unit signal power."""
    if snr_db is NOISELESS:
        return 0.0
    return math.sqrt(10.0 ** (-float(snr_db) / 10.0) / 2.0)


@dataclass(frozen=True)
class ChannelSpec:
    snr_db: Snr
    gain: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.snr_db is not NOISELESS and not math.isfinite(float(self.snr_db)):
            raise ValueError("snr_db must be finite; use NOISELESS for a noise-free link")
        if self.gain is not None:
            g = np.asarray(self.gain)
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ValueError(f"channel gain must be square, got shape {g.shape}")

    @property
    def noise_std(self) -> float:
        return snr_to_noise_std(self.snr_db)


def channel_noise(n_symbols: int, spec: ChannelSpec) -> np.ndarray:
    """The (n_symbols, 2) noise realization that ``apply_channel`` would draw."""
    std = spec.noise_std
    if std == 0.0:
        return np.zeros((n_symbols, 2), dtype=np.float32)
    rng = np.random.default_rng(spec.seed)
    return (rng.standard_normal((n_symbols, 2)) * std).astype(np.float32)


def apply_channel(
    y: SymbolFrame, spec: ChannelSpec, noise: Optional[np.ndarray] = None
) -> SymbolFrame:
    """Return ``H y + n``.

    ``noise`` overrides the seeded draw; it must already be scaled. The
    defense path uses this to route a fixed realization through a scheme.
    """
    symbols = y.symbols
    n = symbols.shape[0]
    if spec.gain is not None:
        g = np.asarray(spec.gain)
        if g.shape != (n, n):
            raise ValueError(f"gain is {g.shape}, frame has {n} symbols")
        z = g @ (symbols[:, 0].astype(np.complex128) + 1j * symbols[:, 1])
        symbols = np.stack([z.real, z.imag], axis=1).astype(symbols.dtype)
    if noise is None:
        if spec.noise_std == 0.0:
            return SymbolFrame(symbols.copy(), y.origin_shape)
        noise = channel_noise(n, spec)
    elif noise.shape != symbols.shape:
        raise ValueError(f"noise shape {noise.shape} does not match frame {symbols.shape}")
    return SymbolFrame((symbols + noise).astype(symbols.dtype), y.origin_shape)
