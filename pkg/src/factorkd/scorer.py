"""Hashed sparse linear scoring with gradient accumulation.

Feature strings are hashed with FNV-1a (64-bit) followed by the splitmix64
finalizer and masked to the configured hash-space width, so ids are stable
across platforms and runs.  Label conditioning XORs a label-salted constant
into the id, which keeps the slot inside the hash space.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_LABEL_SEED = 0x9E3779B97F4A7C15
ROOT_TOKEN = "<root>"
_BOUNDARY = "<pad>"


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_feature(s: str) -> int:
    h = _FNV_OFFSET
    for b in s.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return _splitmix64(h)


@dataclass
class FeatureVec:
    """Hashed feature ids (already masked to the hash space) with weights."""

    ids: np.ndarray
    values: np.ndarray


class FeatureHasher:
    def __init__(self, bits: int = 20):
        if not 1 <= bits <= 30:
            raise ValueError("hash space width must be between 2^1 and 2^30")
        self.bits = bits
        self.mask = (1 << bits) - 1
        self.size = 1 << bits
        self._cache: dict[str, int] = {}

    def feature_id(self, s: str) -> int:
        fid = self._cache.get(s)
        if fid is None:
            fid = hash_feature(s) & self.mask
            self._cache[s] = fid
        return fid

    def label_salts(self, n_labels: int) -> np.ndarray:
        return np.array(
            [_splitmix64(_LABEL_SEED ^ (lab + 1)) & self.mask for lab in range(n_labels)],
            dtype=np.int64,
        )

    def vec(self, strings) -> FeatureVec:
        # duplicate template strings collapse to a single feature
        seen = dict.fromkeys(strings)
        ids = np.fromiter((self.feature_id(s) for s in seen), dtype=np.int64, count=len(seen))
        return FeatureVec(ids, np.ones(len(seen)))


def _token_templates(tokens, i, prefix=""):
    n = len(tokens)
    if not 0 <= i < n:
        raise ValueError(f"position {i} outside sentence of length {n}")
    w = tokens[i]
    feats = [f"{prefix}w={w}", f"{prefix}lo={w.lower()}"]
    for k in (1, 2, 3):
        if len(w) >= k:
            # affix features are unoriented: a length-k prefix and suffix
            # that coincide textually hash to the same id
            feats.append(f"{prefix}afx{k}={w[:k]}")
            feats.append(f"{prefix}afx{k}={w[-k:]}")
    feats.append(f"{prefix}prev={tokens[i - 1] if i > 0 else _BOUNDARY}")
    feats.append(f"{prefix}next={tokens[i + 1] if i + 1 < n else _BOUNDARY}")
    return feats


def _distance_bucket(d: int) -> str:
    sign = "-" if d < 0 else "+"
    a = abs(d)
    for cap in (1, 2, 3, 5, 8):
        if a <= cap:
            return f"{sign}{cap}"
    return f"{sign}inf"


def featurize_token(hasher: FeatureHasher, tokens, i) -> FeatureVec:
    """Features of token i: identity, lowercase, affixes <= 3, neighbors."""
    return hasher.vec(_token_templates(tokens, i))


def featurize_arc(hasher: FeatureHasher, tokens, dep, head) -> FeatureVec:
    """Features of the arc head -> dep; head index is 1-based with 0 = root."""
    n = len(tokens)
    if not (0 <= dep < n and 0 <= head <= n):
        raise ValueError(f"arc descriptor ({dep},{head}) outside sentence of length {n}")
    head_tok = ROOT_TOKEN if head == 0 else tokens[head - 1]
    feats = _token_templates(tokens, dep, prefix="d.")
    feats.append(f"h.w={head_tok}")
    feats.append(f"h.lo={head_tok.lower()}")
    feats.append(f"hd={head_tok}|{tokens[dep]}")
    feats.append(f"dist={_distance_bucket(0 if head == 0 else head - 1 - dep)}")
    if head == 0:
        feats.append("root")
    return hasher.vec(feats)


def featurize_span(hasher: FeatureHasher, tokens, start, end) -> FeatureVec:
    """Features of the 0-based inclusive span [start, end]: boundary tokens,
    interior tokens, outside neighbors, and a length bucket."""
    n = len(tokens)
    if not 0 <= start <= end < n:
        raise ValueError(f"span descriptor ({start},{end}) outside sentence of length {n}")
    a, b = tokens[start], tokens[end]
    feats = [
        f"sb.w={a}",
        f"sb.lo={a.lower()}",
        f"se.w={b}",
        f"se.lo={b.lower()}",
        f"s.out<={tokens[start - 1] if start > 0 else _BOUNDARY}",
        f"s.out>={tokens[end + 1] if end + 1 < n else _BOUNDARY}",
        f"s.len={_distance_bucket(end - start + 1)}",
    ]
    for k in (1, 2):
        if len(a) >= k:
            feats.append(f"sb.afx{k}={a[:k]}")
            feats.append(f"sb.afx{k}={a[-k:]}")
    for p in range(start + 1, end):
        feats.append(f"s.in={tokens[p]}")
    return hasher.vec(feats)


@dataclass
class SparseParams:
    """Flat hashed weight vector plus one bias per output label."""

    weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, hasher: FeatureHasher, n_labels: int):
        return cls(np.zeros(hasher.size), np.zeros(n_labels))

    def zeros_like(self):
        return SparseParams(np.zeros_like(self.weights), np.zeros_like(self.bias))

    def copy(self):
        return SparseParams(self.weights.copy(), self.bias.copy())

    def add_scaled(self, other: "SparseParams", scale: float):
        self.weights += scale * other.weights
        self.bias += scale * other.bias

    def fill(self, value: float):
        self.weights.fill(value)
        self.bias.fill(value)


def score(params: SparseParams, hasher: FeatureHasher, f: FeatureVec, label: int) -> float:
    if not 0 <= label < len(params.bias):
        raise ValueError(f"label id {label} outside 0..{len(params.bias) - 1}")
    salt = _splitmix64(_LABEL_SEED ^ (label + 1)) & hasher.mask
    return float(params.weights[f.ids ^ salt] @ f.values + params.bias[label])


def accumulate_grad(
    grad: SparseParams, hasher: FeatureHasher, f: FeatureVec, label: int, coefficient: float
):
    """grad[slot] += coefficient * value for every feature slot of (f, label)."""
    salt = _splitmix64(_LABEL_SEED ^ (label + 1)) & hasher.mask
    np.add.at(grad.weights, f.ids ^ salt, coefficient * f.values)
    grad.bias[label] += coefficient


# ---------------------------------------------------------------------------
# Prepared (vectorized) feature blocks


@dataclass
class SlotBlock:
    """Padded feature slots for a batch of sites sharing a label space.

    slots has shape sites x labels x max_features; vals is sites x
    max_features with zero padding, so padded slots contribute nothing to
    scores or gradients.
    """

    slots: np.ndarray
    vals: np.ndarray

    def scores(self, params: SparseParams) -> np.ndarray:
        w = params.weights[self.slots]
        return np.einsum("slf,sf->sl", w, self.vals) + params.bias

    def scatter(self, grad: SparseParams, coef: np.ndarray):
        """Accumulate d(loss)/d(score) given per (site, label) into grad."""
        np.add.at(grad.weights, self.slots, coef[:, :, None] * self.vals[:, None, :])
        grad.bias += coef.sum(axis=0)


def build_slot_block(hasher: FeatureHasher, fvecs, n_labels: int) -> SlotBlock:
    salts = hasher.label_salts(n_labels)
    fmax = max(len(f.ids) for f in fvecs)
    n = len(fvecs)
    ids = np.zeros((n, fmax), dtype=np.int64)
    vals = np.zeros((n, fmax))
    for k, f in enumerate(fvecs):
        ids[k, : len(f.ids)] = f.ids
        vals[k, : len(f.ids)] = f.values
    slots = ids[:, None, :] ^ salts[None, :, None]
    return SlotBlock(slots, vals)


# ---------------------------------------------------------------------------
# Model serialization: one JSON document per model


TEMPLATE_VERSION = "tmpl-v1"


def encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s: str, shape=None) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8").copy()
    return a.reshape(shape) if shape is not None else a
