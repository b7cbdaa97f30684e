"""Exact inference for linear-chain CRFs.

A lattice holds per-position emission scores, per-transition scores, and
explicit start/stop boundary vectors:

    score(y) = start[y_1] + sum_i em[i][y_i]
             + sum_{i>1} tr[i-1][y_{i-1}, y_i] + stop[y_n]

The pairwise substructure at position i absorbs the emission of its right
label, so pair (a, b) ending at position i scores tr + em[i][b]; position 1
is the degenerate pair (BOS, y_1) with score start + em[1].  The forward
pass computes alpha, the backward pass beta, and marginals follow the
classical product alpha * edge * beta / Z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LabelAlphabet, TagSequence, BioesCodec
from .numerics import NEG_INF, log_sum_exp, logsumexp_last, softmax_last
from .scorer import (
    FeatureHasher,
    SlotBlock,
    SparseParams,
    build_slot_block,
    decode_array,
    encode_array,
    featurize_token,
)


@dataclass
class ChainLattice:
    emissions: np.ndarray  # (n, L)
    transitions: np.ndarray  # (n-1, L, L)
    start: np.ndarray  # (L,)
    stop: np.ndarray  # (L,)

    @property
    def n(self):
        return self.emissions.shape[0]

    @property
    def n_labels(self):
        return self.emissions.shape[1]

    def scaled(self, scale: float) -> "ChainLattice":
        return ChainLattice(
            self.emissions * scale,
            self.transitions * scale,
            self.start * scale,
            self.stop * scale,
        )


@dataclass
class ChainMarginals:
    """Chain marginal table: one distribution per pairwise slice plus one
    per position.  Slice i covers the label pair at positions (i, i+1)."""

    pairwise: np.ndarray  # (n-1, L, L), each slice sums to 1
    unary: np.ndarray  # (n, L), each row sums to 1

    @property
    def n(self):
        return self.unary.shape[0]

    @property
    def n_labels(self):
        return self.unary.shape[1]


@dataclass
class LatticeGrad:
    emissions: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    stop: np.ndarray


def _forward(lat: ChainLattice) -> np.ndarray:
    n, L = lat.emissions.shape
    alpha = np.empty((n, L))
    alpha[0] = lat.start + lat.emissions[0]
    for i in range(1, n):
        steps = alpha[i - 1][:, None] + lat.transitions[i - 1]  # [a, b]
        alpha[i] = lat.emissions[i] + logsumexp_last(steps.T)
    return alpha


def _backward(lat: ChainLattice) -> np.ndarray:
    n, L = lat.emissions.shape
    beta = np.empty((n, L))
    beta[n - 1] = lat.stop
    for i in range(n - 2, -1, -1):
        steps = lat.transitions[i] + (lat.emissions[i + 1] + beta[i + 1])[None, :]
        beta[i] = logsumexp_last(steps)
    return beta


def log_partition(lat: ChainLattice) -> float:
    alpha = _forward(lat)
    return log_sum_exp(alpha[-1] + lat.stop)


def pairwise_marginals(lat: ChainLattice) -> ChainMarginals:
    """Forward-backward marginals; unary rows equal the pair-slice sums."""
    n, L = lat.emissions.shape
    alpha = _forward(lat)
    beta = _backward(lat)
    log_z = log_sum_exp(alpha[-1] + lat.stop)
    unary = np.exp(alpha + beta - log_z)
    pairwise = np.empty((n - 1, L, L))
    for i in range(n - 1):
        edge = (
            alpha[i][:, None]
            + lat.transitions[i]
            + (lat.emissions[i + 1] + beta[i + 1])[None, :]
        )
        pairwise[i] = np.exp(edge - log_z)
    return ChainMarginals(pairwise, unary)


def unary_marginals(lat: ChainLattice) -> np.ndarray:
    alpha = _forward(lat)
    beta = _backward(lat)
    log_z = log_sum_exp(alpha[-1] + lat.stop)
    return np.exp(alpha + beta - log_z)


def viterbi(lat: ChainLattice) -> TagSequence:
    """Highest-scoring sequence; backpointer ties break toward the lowest
    label id (np.argmax keeps the first maximum)."""
    n, L = lat.emissions.shape
    delta = lat.start + lat.emissions[0]
    back = np.empty((n - 1, L), dtype=np.int64)
    for i in range(1, n):
        steps = delta[:, None] + lat.transitions[i - 1]  # [a, b]
        back[i - 1] = np.argmax(steps, axis=0)
        delta = lat.emissions[i] + np.max(steps, axis=0)
    tags = [int(np.argmax(delta + lat.stop))]
    for i in range(n - 2, -1, -1):
        tags.append(int(back[i][tags[-1]]))
    return TagSequence(tuple(reversed(tags)))


def sequence_score(lat: ChainLattice, tags) -> float:
    n = lat.n
    s = lat.start[tags[0]] + lat.emissions[0][tags[0]] + lat.stop[tags[n - 1]]
    for i in range(1, n):
        s += lat.transitions[i - 1][tags[i - 1], tags[i]] + lat.emissions[i][tags[i]]
    return float(s)


def nll_and_grad(lat: ChainLattice, gold: TagSequence):
    """Negative log-likelihood of the gold sequence and its gradient with
    respect to every lattice score (marginal minus gold indicator)."""
    n, L = lat.emissions.shape
    tags = tuple(gold)
    if len(tags) != n:
        raise ValueError(f"gold length {len(tags)} != lattice length {n}")
    if any(not 0 <= t < L for t in tags):
        raise ValueError("gold tag id outside the label space")
    marg = pairwise_marginals(lat)
    log_z = log_partition(lat)
    loss = log_z - sequence_score(lat, tags)

    d_em = marg.unary.copy()
    d_tr = marg.pairwise.copy()
    d_start = marg.unary[0].copy()
    d_stop = marg.unary[n - 1].copy()
    for i, t in enumerate(tags):
        d_em[i, t] -= 1.0
    for i in range(n - 1):
        d_tr[i, tags[i], tags[i + 1]] -= 1.0
    d_start[tags[0]] -= 1.0
    d_stop[tags[n - 1]] -= 1.0
    return float(loss), LatticeGrad(d_em, d_tr, d_start, d_stop)


def sample_tags(lat: ChainLattice, rng) -> tuple:
    """Exact posterior draw by forward filtering, backward sampling
    (equivalently: sample y_1 from its filtered marginal, then each next
    label from the conditional given the prefix)."""
    n, L = lat.emissions.shape
    beta = _backward(lat)
    p0 = softmax_last(lat.start + lat.emissions[0] + beta[0])
    tags = [int(rng.choice(L, p=p0))]
    for i in range(1, n):
        logits = lat.transitions[i - 1][tags[-1]] + lat.emissions[i] + beta[i]
        tags.append(int(rng.choice(L, p=softmax_last(logits))))
    return tuple(tags)


# ---------------------------------------------------------------------------
# BIOES transition masking (optional, off by default)


def bioes_masks(codec: BioesCodec):
    """(-inf/0) masks forbidding label pairs that no valid BIOES sequence
    contains, plus start/stop masks for dangling B/I/E prefixes."""
    L = len(codec.tags)
    trans = np.zeros((L, L))
    start = np.zeros(L)
    stop = np.zeros(L)
    for a in range(L):
        pa, ta = codec.split(a)
        if pa in ("I", "E"):
            start[a] = NEG_INF
        if pa in ("B", "I"):
            stop[a] = NEG_INF
        for b in range(L):
            pb, tb = codec.split(b)
            inside_next = pb in ("I", "E") and ta == tb
            if pa in ("B", "I"):
                if not inside_next:
                    trans[a, b] = NEG_INF
            elif pb in ("I", "E"):
                trans[a, b] = NEG_INF
    return trans, start, stop


# ---------------------------------------------------------------------------
# Hashed linear CRF tagger


@dataclass
class ChainGrads:
    params: SparseParams
    trans: np.ndarray
    start: np.ndarray
    stop: np.ndarray

    def fill(self, v=0.0):
        self.params.fill(v)
        self.trans.fill(v)
        self.start.fill(v)
        self.stop.fill(v)


class ChainCrfTagger:
    """Linear-chain CRF with hashed emission features and dense transition,
    start, and stop parameters."""

    family = "ner-crf"

    def __init__(self, tags: LabelAlphabet, bits: int = 20, constrain_bioes: bool = False):
        self.tags = tags
        self.hasher = FeatureHasher(bits)
        L = len(tags)
        self.params = SparseParams.zeros(self.hasher, L)
        self.trans = np.zeros((L, L))
        self.start = np.zeros(L)
        self.stop = np.zeros(L)
        self.constrain_bioes = constrain_bioes
        self._masks = None
        if constrain_bioes:
            from .corpus import bioes_codec_from_tags

            codec = bioes_codec_from_tags(tags)
            tm, sm, pm = bioes_masks(codec)
            # reorder masks from codec tag order into this alphabet's order
            perm = np.array([codec.tags.index(lab) for lab in tags])
            self._masks = (tm[np.ix_(perm, perm)], sm[perm], pm[perm])

    def prepare(self, tokens) -> SlotBlock:
        fvecs = [featurize_token(self.hasher, tokens, i) for i in range(len(tokens))]
        return build_slot_block(self.hasher, fvecs, len(self.tags))

    def lattice(self, prep: SlotBlock, scale: float = 1.0) -> ChainLattice:
        n = prep.vals.shape[0]
        L = len(self.tags)
        em = prep.scores(self.params) * scale
        tr = np.broadcast_to(self.trans * scale, (max(n - 1, 0), L, L)).copy()
        start = self.start * scale
        stop = self.stop * scale
        if self._masks is not None:
            tr += self._masks[0]
            start = start + self._masks[1]
            stop = stop + self._masks[2]
        return ChainLattice(em, tr, start, stop)

    def new_grads(self) -> ChainGrads:
        L = len(self.tags)
        return ChainGrads(self.params.zeros_like(), np.zeros((L, L)), np.zeros(L), np.zeros(L))

    def scatter_lattice_grad(self, prep: SlotBlock, g: LatticeGrad, out: ChainGrads, coef=1.0):
        prep.scatter(out.params, coef * g.emissions)
        out.trans += coef * g.transitions.sum(axis=0)
        out.start += coef * g.start
        out.stop += coef * g.stop

    def sgd_step(self, grads: ChainGrads, lr: float):
        self.params.add_scaled(grads.params, -lr)
        self.trans -= lr * grads.trans
        self.start -= lr * grads.start
        self.stop -= lr * grads.stop

    def decode(self, prep: SlotBlock) -> TagSequence:
        return viterbi(self.lattice(prep))

    def snapshot(self):
        return (self.params.copy(), self.trans.copy(), self.start.copy(), self.stop.copy())

    def restore(self, snap):
        self.params, self.trans, self.start, self.stop = (
            snap[0].copy(),
            snap[1].copy(),
            snap[2].copy(),
            snap[3].copy(),
        )

    def to_payload(self):
        return {
            "family": self.family,
            "hash_bits": self.hasher.bits,
            "templates": "tmpl-v1",
            "constrain_bioes": self.constrain_bioes,
            "alphabets": {"tags": self.tags.to_dict()},
            "blocks": {
                "weights": encode_array(self.params.weights),
                "bias": encode_array(self.params.bias),
                "trans": encode_array(self.trans),
                "start": encode_array(self.start),
                "stop": encode_array(self.stop),
            },
        }

    @classmethod
    def from_payload(cls, p):
        tags = LabelAlphabet.from_dict(p["alphabets"]["tags"])
        model = cls(tags, bits=p["hash_bits"], constrain_bioes=p.get("constrain_bioes", False))
        L = len(tags)
        model.params = SparseParams(
            decode_array(p["blocks"]["weights"]), decode_array(p["blocks"]["bias"])
        )
        model.trans = decode_array(p["blocks"]["trans"], (L, L))
        model.start = decode_array(p["blocks"]["start"])
        model.stop = decode_array(p["blocks"]["stop"])
        return model
