"""Random permutation + substitution of transmitted feature rows.

Alice and Bob share secret scheme sets. Before each paired transmission
Alice draws a value tuple selecting one permutation per frame and one common
substitution set, seals it with the shared key, and sends it out of band.
Bob opens it and undoes the transform after the channel.

Convention: ``permute(x, P)[i] == x[P[i]]``.
"""

from __future__ import annotations

import enum
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM


class DefenseMode(str, enum.Enum):
    OFF = "off"
    FULL = "full"
    PERMUTE_ONLY = "permute_only"
    SUBSTITUTE_ONLY = "substitute_only"

    @classmethod
    def parse(cls, text: str) -> "DefenseMode":
        aliases = {"permute": cls.PERMUTE_ONLY, "substitute": cls.SUBSTITUTE_ONLY}
        t = str(text).strip().lower()
        return aliases.get(t) or cls(t)


# --------------------------------------------------------------------------
# Schemes


@dataclass(frozen=True, eq=False)
class PermutationScheme:
    order: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(len(order))):
            raise ValueError(f"not a permutation of range({len(order)}): {order}")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    def __len__(self):
        return len(self.order)

    def __eq__(self, other):
        return isinstance(other, PermutationScheme) and np.array_equal(self.order, other.order)

    @classmethod
    def identity(cls, h: int) -> "PermutationScheme":
        return cls(np.arange(h))

    def inverse(self) -> "PermutationScheme":
        return PermutationScheme(np.argsort(self.order))


def compose(first: PermutationScheme, second: PermutationScheme) -> PermutationScheme:
    """The scheme equal to applying ``first`` and then ``second``."""
    if len(first) != len(second):
        raise ValueError("permutation lengths differ")
    return PermutationScheme(first.order[second.order])


@dataclass(frozen=True, eq=False)
class SubstitutionScheme:
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(idx) and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError(f"substitution indices must be strictly increasing and >= 0: {idx}")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        return isinstance(other, SubstitutionScheme) and np.array_equal(
            self.indices, other.indices
        )

    @classmethod
    def empty(cls) -> "SubstitutionScheme":
        return cls(np.zeros(0, dtype=np.int64))


def permute(y_f: np.ndarray, p: PermutationScheme) -> np.ndarray:
    if y_f.shape[0] != len(p):
        raise ValueError(f"permutation of length {len(p)} applied to {y_f.shape[0]} rows")
    return y_f[p.order]


def inverse_permute(y_p: np.ndarray, p: PermutationScheme) -> np.ndarray:
    if y_p.shape[0] != len(p):
        raise ValueError(f"permutation of length {len(p)} applied to {y_p.shape[0]} rows")
    out = np.empty_like(y_p)
    out[p.order] = y_p
    return out


def substitute_pair(a: np.ndarray, b: np.ndarray, s: SubstitutionScheme) -> tuple:
    """Exchange rows ``s`` between ``a`` and ``b``. Self-inverse."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if len(s) and s.indices[-1] >= a.shape[0]:
        raise ValueError(f"substitution index {s.indices[-1]} out of range for {a.shape[0]} rows")
    a2, b2 = a.copy(), b.copy()
    a2[s.indices] = b[s.indices]
    b2[s.indices] = a[s.indices]
    return a2, b2


def protect_pair(a, b, pa: PermutationScheme, pb: PermutationScheme, s: SubstitutionScheme):
    return substitute_pair(permute(a, pa), permute(b, pb), s)


def recover_pair(a_s, b_s, pa: PermutationScheme, pb: PermutationScheme, s: SubstitutionScheme):
    a_p, b_p = substitute_pair(a_s, b_s, s)
    return inverse_permute(a_p, pa), inverse_permute(b_p, pb)


def noise_features(shape, rng_seed: int) -> np.ndarray:
    """Standard-normal partner tensor for a frame that has no successor."""
    return np.random.default_rng(rng_seed).standard_normal(shape).astype(np.float32)


# --------------------------------------------------------------------------
# Scheme sets and selection


@dataclass(frozen=True)
class SchemeSets:
    permutations: tuple
    substitutions: tuple

    def __post_init__(self):
        if not self.permutations or not self.substitutions:
            raise ValueError("scheme sets must be non-empty")
        object.__setattr__(self, "permutations", tuple(self.permutations))
        object.__setattr__(self, "substitutions", tuple(self.substitutions))

    @property
    def rows(self) -> int:
        return len(self.permutations[0])

    def save(self, path) -> None:
        """Write the secret sets as JSON. Keep this file out of result artifacts."""
        doc = {
            "format": "miea-scheme-sets",
            "version": 1,
            "permutations": [p.order.tolist() for p in self.permutations],
            "substitutions": [s.indices.tolist() for s in self.substitutions],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "SchemeSets":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "miea-scheme-sets" or doc.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 scheme-set file")
        return cls(
            tuple(PermutationScheme(p) for p in doc["permutations"]),
            tuple(SubstitutionScheme(s) for s in doc["substitutions"]),
        )


def generate_scheme_sets(
    h: int, n_permutations: int = 256, n_substitutions: int = 256, rng_seed: int = 0
) -> SchemeSets:
    """Random sets; each row joins a substitution set independently with p=1/2."""
    rng = np.random.default_rng(rng_seed)
    perms = tuple(PermutationScheme(rng.permutation(h)) for _ in range(n_permutations))
    subs = tuple(
        SubstitutionScheme(np.flatnonzero(rng.random(h) < 0.5)) for _ in range(n_substitutions)
    )
    return SchemeSets(perms, subs)


def candidate_count(h: int) -> int:
    """Number of distinct (P, S) choices for one frame of ``h`` rows."""
    return math.factorial(h) * 2**h


@dataclass(frozen=True)
class ValuePair:
    """Indices selecting a scheme for each frame of a pair and their common substitution."""

    p: int
    s: int
    p_partner: int = 0

    def check(self, sets: SchemeSets) -> None:
        n_p, n_s = len(sets.permutations), len(sets.substitutions)
        if not (0 <= self.p < n_p and 0 <= self.p_partner < n_p and 0 <= self.s < n_s):
            raise IndexError(f"{self} out of bounds for sets of size ({n_p}, {n_s})")


@dataclass(frozen=True)
class Selection:
    value: ValuePair
    perm: PermutationScheme
    perm_partner: PermutationScheme
    substitution: SubstitutionScheme


def select_schemes(sets: SchemeSets, rng_seed) -> Selection:
    """Uniform, independent draw of a fresh value tuple for one transmission."""
    if not sets.permutations or not sets.substitutions:
        raise ValueError("scheme sets must be non-empty")
    rng = np.random.default_rng(rng_seed)
    p, q = (int(i) for i in rng.integers(0, len(sets.permutations), size=2))
    s = int(rng.integers(0, len(sets.substitutions)))
    return resolve(sets, ValuePair(p, s, q))


def resolve(sets: SchemeSets, v: ValuePair) -> Selection:
    v.check(sets)
    return Selection(v, sets.permutations[v.p], sets.permutations[v.p_partner], sets.substitutions[v.s])


def restrict(sel: Selection, mode: DefenseMode) -> Selection:
    """Drop the half of a selection that an ablation mode does not use."""
    if mode is DefenseMode.PERMUTE_ONLY:
        return Selection(sel.value, sel.perm, sel.perm_partner, SubstitutionScheme.empty())
    if mode is DefenseMode.SUBSTITUTE_ONLY:
        h = len(sel.perm)
        ident = PermutationScheme.identity(h)
        return Selection(sel.value, ident, ident, sel.substitution)
    if mode is DefenseMode.OFF:
        h = len(sel.perm)
        ident = PermutationScheme.identity(h)
        return Selection(sel.value, ident, ident, SubstitutionScheme.empty())
    return sel


def protect_with(sel: Selection, a, b):
    return protect_pair(a, b, sel.perm, sel.perm_partner, sel.substitution)


def recover_with(sel: Selection, a_s, b_s):
    return recover_pair(a_s, b_s, sel.perm, sel.perm_partner, sel.substitution)


# --------------------------------------------------------------------------
# Sealing the value tuple (AES-256-GCM)


SEAL_VERSION = 1
NONCE_BYTES = 12
TAG_BYTES = 16
_PLAINTEXT = struct.Struct(">HHH")
SEALED_BYTES = 1 + NONCE_BYTES + _PLAINTEXT.size + TAG_BYTES


class SealError(Exception):
    """Base class for value-tuple sealing failures."""


class MalformedSeal(SealError, ValueError):
    """Wrong length or unknown version: the bytes are not a sealed value tuple."""


class AuthenticationFailed(SealError):
    """Wrong key or tampered ciphertext; AES-GCM cannot tell the two apart."""


@dataclass(frozen=True)
class SharedKey:
    key: bytes

    def __post_init__(self):
        if len(self.key) != 32:
            raise ValueError("shared key must be 32 bytes")

    @classmethod
    def generate(cls) -> "SharedKey":
        return cls(os.urandom(32))

    def __repr__(self):
        return "SharedKey(<redacted>)"


@dataclass(frozen=True)
class SealedValuePair:
    """Wire format: ``[version:1][nonce:12][ciphertext:6][tag:16]``."""

    data: bytes

    def __post_init__(self):
        if len(self.data) != SEALED_BYTES:
            raise MalformedSeal(f"sealed value tuple must be {SEALED_BYTES} bytes, got {len(self.data)}")
        if self.data[0] != SEAL_VERSION:
            raise MalformedSeal(f"unknown seal version {self.data[0]}")

    def __bytes__(self):
        return self.data


def seal_value_pair(v: ValuePair, k: SharedKey) -> SealedValuePair:
    """Encrypt and authenticate ``v``. A fresh random nonce is used on every call."""
    header = bytes([SEAL_VERSION])
    nonce = os.urandom(NONCE_BYTES)
    body = AESGCM(k.key).encrypt(nonce, _PLAINTEXT.pack(v.p, v.s, v.p_partner), header)
    return SealedValuePair(header + nonce + body)


def open_value_pair(c, k: SharedKey) -> ValuePair:
    sealed = c if isinstance(c, SealedValuePair) else SealedValuePair(bytes(c))
    data = sealed.data
    header, nonce, body = data[:1], data[1 : 1 + NONCE_BYTES], data[1 + NONCE_BYTES :]
    try:
        plain = AESGCM(k.key).decrypt(nonce, body, header)
    except InvalidTag:
        raise AuthenticationFailed("sealed value tuple failed authentication") from None
    p, s, q = _PLAINTEXT.unpack(plain)
    return ValuePair(p, s, q)


# --------------------------------------------------------------------------
# Streams of frames


@dataclass(frozen=True)
class ProtectedStream:
    """Transmitted features for a stream of frames, grouped in pairs.

    ``frames`` has an even length; if the source stream was odd, the final
    entry is the transmitted version of a noise partner.
    """

    frames: np.ndarray
    selections: tuple
    padded: bool


def pair_up(features: np.ndarray, partner_seed: int) -> tuple:
    """Pair consecutive frames; an odd trailing frame gets a unit-power noise partner."""
    from .codec import normalize_power

    features = np.asarray(features)
    if len(features) % 2 == 0:
        return features, False
    partner = normalize_power(noise_features(features.shape[1:], partner_seed))
    return np.concatenate([features, partner[None].astype(features.dtype)]), True


def protect_stream(
    features: np.ndarray,
    sets: SchemeSets,
    mode: DefenseMode,
    seeds: Sequence,
    partner_seed: int = 0,
) -> ProtectedStream:
    """Protect ``(B, h, w, c)`` features pairwise; ``seeds[k]`` draws pair ``k``'s schemes."""
    frames, padded = pair_up(features, partner_seed)
    out = np.empty_like(frames)
    selections = []
    for k in range(len(frames) // 2):
        sel = restrict(select_schemes(sets, seeds[k]), mode)
        out[2 * k], out[2 * k + 1] = protect_with(sel, frames[2 * k], frames[2 * k + 1])
        selections.append(sel)
    return ProtectedStream(out, tuple(selections), padded)


def apply_selections(frames: np.ndarray, selections: Sequence[Selection]) -> np.ndarray:
    """Apply already-drawn selections pairwise (e.g. to a noise realization)."""
    out = np.empty_like(frames)
    for k, sel in enumerate(selections):
        out[2 * k], out[2 * k + 1] = protect_with(sel, frames[2 * k], frames[2 * k + 1])
    return out


def recover_stream(frames: np.ndarray, selections: Sequence[Selection], n_source: Optional[int] = None):
    out = np.empty_like(frames)
    for k, sel in enumerate(selections):
        out[2 * k], out[2 * k + 1] = recover_with(sel, frames[2 * k], frames[2 * k + 1])
    return out if n_source is None else out[:n_source]
