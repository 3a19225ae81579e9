"""Procedural face-like image corpus for desk-scale runs without a photo dataset.

Each image is a head-and-shoulders cartoon (hair, face, eyes, brows, nose,
mouth, clothing) over a shaded background, with 1/f texture so local windows
carry natural-image-like variance. Everything is drawn from one seeded
generator per image, so image ``i`` of a corpus does not depend on the count.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .seeding import derive_seed

BACKGROUND_TEXTURE = 0.10
FINE_TEXTURE = 0.03


def _pink_noise(rng, size, alpha=1.0):
    freq = np.fft.fftfreq(size)
    f = np.sqrt(freq[:, None] ** 2 + freq[None, :] ** 2)
    f[0, 0] = 1.0
    spectrum = (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))) / f**alpha
    spectrum[0, 0] = 0
    field = np.fft.ifft2(spectrum).real
    return field / (field.std() + 1e-12)


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0, soft=0.6):
    """Anti-aliased ellipse mask in [0, 1]; `soft` is the edge width in pixels."""
    ca, sa = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = (dx * ca + dy * sa) / rx
    v = (-dx * sa + dy * ca) / ry
    r = np.sqrt(u * u + v * v)
    edge = soft / max(min(rx, ry), 1e-6)
    return np.clip((1.0 - r) / edge + 0.5, 0.0, 1.0)


def _paint(img, mask, color):
    img *= 1.0 - mask[..., None]
    img += mask[..., None] * np.asarray(color)[None, None, :]


def face_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    s = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    bg_a, bg_b = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    theta = rng.uniform(0, 2 * np.pi)
    t = ((xx - size / 2) * np.cos(theta) + (yy - size / 2) * np.sin(theta)) / size + 0.5
    img = bg_a[None, None] * (1 - t[..., None]) + bg_b[None, None] * t[..., None]
    img += BACKGROUND_TEXTURE * _pink_noise(rng, size)[..., None] * rng.uniform(0.5, 1.5, 3)

    cx = size / 2 + rng.uniform(-6, 6) * s
    cy = size / 2 + rng.uniform(-4, 4) * s
    fry, frx = rng.uniform(15, 20) * s, rng.uniform(11, 15) * s
    tilt = rng.uniform(-0.25, 0.25)

    cloth = rng.uniform(0.05, 0.95, 3)
    _paint(img, _ellipse(yy, xx, cy + fry + 14 * s, cx, 14 * s, frx * 2.2), cloth)

    skin = np.array([rng.uniform(0.45, 0.95), 0, 0])
    skin[1] = skin[0] * rng.uniform(0.7, 0.85)
    skin[2] = skin[0] * rng.uniform(0.55, 0.75)
    hair = rng.uniform(0.02, 0.6) * np.array([1.0, rng.uniform(0.6, 0.9), rng.uniform(0.3, 0.7)])
    hair_len = rng.uniform(0.3, 1.1)
    _paint(img, _ellipse(yy, xx, cy - fry * 0.15 + hair_len * 6 * s, cx, fry * (0.95 + 0.3 * hair_len), frx * 1.25, tilt), hair)
    _paint(img, _ellipse(yy, xx, cy + fry * 0.9, cx, fry * 0.35, frx * 0.45), skin * 0.9)  # neck
    face = _ellipse(yy, xx, cy, cx, fry, frx, tilt)
    shade = 1.0 - 0.25 * np.clip((xx - cx) / frx, -1, 1) * rng.choice([-1, 1])
    _paint(img, face, np.zeros(3))
    img += face[..., None] * skin[None, None] * shade[..., None]
    fringe = _ellipse(yy, xx, cy - fry * 0.85, cx, fry * rng.uniform(0.25, 0.45), frx * 1.05, tilt)
    _paint(img, fringe * (yy < cy - fry * 0.4), hair)

    ca, sa = np.cos(tilt), np.sin(tilt)

    def at(dx, dy):
        return cy + dx * sa + dy * ca, cx + dx * ca - dy * sa

    eye_dx = frx * rng.uniform(0.38, 0.5)
    eye_dy = -fry * rng.uniform(0.05, 0.2)
    iris = rng.uniform(0.05, 0.5, 3)
    for side in (-1, 1):
        ey, ex = at(side * eye_dx, eye_dy)
        _paint(img, _ellipse(yy, xx, ey, ex, 2.0 * s, 3.4 * s, tilt), [0.95, 0.95, 0.93])
        _paint(img, _ellipse(yy, xx, ey, ex, 1.7 * s, 1.7 * s), iris)
        by, bx = at(side * eye_dx, eye_dy - 4.5 * s)
        _paint(img, _ellipse(yy, xx, by, bx, 0.9 * s, 3.8 * s, tilt + side * 0.15), hair * 0.8)
    ny, nx = at(0, fry * 0.2)
    _paint(img, _ellipse(yy, xx, ny, nx, 3.5 * s, 1.2 * s, tilt), skin * 0.75)
    my, mx = at(0, fry * rng.uniform(0.45, 0.6))
    lips = np.array([rng.uniform(0.5, 0.85), rng.uniform(0.15, 0.35), rng.uniform(0.2, 0.4)])
    _paint(img, _ellipse(yy, xx, my, mx, rng.uniform(1.2, 2.5) * s, frx * rng.uniform(0.3, 0.5), tilt), lips)

    img += FINE_TEXTURE * _pink_noise(rng, size, alpha=0.8)[..., None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthetic_faces(count: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """``(count, size, size, 3)`` float32 images in [0, 1]."""
    return np.stack([face_image(np.random.default_rng(derive_seed(seed, i)), size) for i in range(count)])


def write_corpus(directory, count: int, size: int = 64, seed: int = 0) -> list:
    """Write ``count`` synthetic faces as 8-bit PNGs; returns the file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = face_image(np.random.default_rng(derive_seed(seed, i)), size)
        path = directory / f"face_{i:05d}.png"
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
        paths.append(path)
    return paths
