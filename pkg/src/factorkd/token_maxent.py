"""Token-wise locally normalized classifier (MaxEnt).

Each position gets an independent softmax over labels; the model is both a
student (distilled from chain or span teachers) and a teacher (whose pair
marginals are products of its token rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_crf import ChainMarginals
from .corpus import LabelAlphabet, TagSequence
from .numerics import log_softmax
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
class TokenDistributions:
    rows: np.ndarray  # (n, L), each row sums to 1

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def n_labels(self):
        return self.rows.shape[1]


class MaxEntTagger:
    family = "ner-maxent"

    def __init__(self, tags: LabelAlphabet, bits: int = 20):
        self.tags = tags
        self.hasher = FeatureHasher(bits)
        self.params = SparseParams.zeros(self.hasher, len(tags))

    def prepare(self, tokens) -> SlotBlock:
        fvecs = [featurize_token(self.hasher, tokens, i) for i in range(len(tokens))]
        return build_slot_block(self.hasher, fvecs, len(self.tags))

    def logits(self, prep: SlotBlock, scale: float = 1.0) -> np.ndarray:
        return prep.scores(self.params) * scale

    def token_distributions(self, prep: SlotBlock, scale: float = 1.0) -> TokenDistributions:
        return TokenDistributions(np.exp(log_softmax(self.logits(prep, scale))))

    def nll_and_grad(self, prep: SlotBlock, gold: TagSequence, out: SparseParams, coef=1.0):
        """Sum of per-position cross-entropies against the gold one-hots;
        accumulates coef * gradient into out and returns the loss."""
        tags = tuple(gold)
        logp = log_softmax(self.logits(prep))
        if any(not 0 <= t < logp.shape[1] for t in tags):
            raise ValueError("gold tag id outside the label space")
        idx = np.arange(len(tags))
        loss = -float(logp[idx, tags].sum())
        d = np.exp(logp)
        d[idx, tags] -= 1.0
        prep.scatter(out, coef * d)
        return loss

    def new_grads(self) -> SparseParams:
        return self.params.zeros_like()

    def sgd_step(self, grads: SparseParams, lr: float):
        self.params.add_scaled(grads, -lr)

    def decode(self, prep: SlotBlock) -> TagSequence:
        return TagSequence(tuple(int(t) for t in np.argmax(self.logits(prep), axis=1)))

    def snapshot(self):
        return self.params.copy()

    def restore(self, snap):
        self.params = snap.copy()

    def to_payload(self):
        return {
            "family": self.family,
            "hash_bits": self.hasher.bits,
            "templates": "tmpl-v1",
            "alphabets": {"tags": self.tags.to_dict()},
            "blocks": {
                "weights": encode_array(self.params.weights),
                "bias": encode_array(self.params.bias),
            },
        }

    @classmethod
    def from_payload(cls, p):
        model = cls(LabelAlphabet.from_dict(p["alphabets"]["tags"]), bits=p["hash_bits"])
        model.params = SparseParams(
            decode_array(p["blocks"]["weights"]), decode_array(p["blocks"]["bias"])
        )
        return model


def pair_marginals_from_tokens(d: TokenDistributions) -> ChainMarginals:
    """Chain marginal table implied by independent token rows: each pair
    slice is the outer product of the two adjacent rows."""
    rows = d.rows
    n, L = rows.shape
    pairwise = rows[:-1, :, None] * rows[1:, None, :]
    return ChainMarginals(pairwise, rows.copy())
