"""Knowledge distillation between structured models via teacher marginals.

Teacher marginals are always taken over the *student's* substructure space:
pairwise label tables for CRF students, per-token label rows for MaxEnt
students, per-token arc distributions for head-selection students, and
BIOES rows for the span-teacher case.  Globally normalized students pay
their own log-partition term; locally normalized students reduce to a sum
of per-site cross-entropies.

Temperature is applied to the teacher only (a student-side divisor exists
behind ``student_temp`` but defaults to 1): global mode divides every score
entering the teacher's marginalization by T, local mode computes marginals
at T = 1 and then re-normalizes each substructure's own distribution after
dividing its log by T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import chain_crf
from .chain_crf import ChainCrfTagger, ChainLattice, ChainMarginals, LatticeGrad
from .corpus import PSEUDO_LABELED, SentenceRecord, TagSequence
from .head_parser import ArcDistributions, FirstOrderParser, SecondOrderParser, decode_heads
from .numerics import log_softmax, masked_inner
from .span_ner import BioesMarginals, SpanNerModel, bioes_marginals, decode_spans
from .token_maxent import MaxEntTagger, TokenDistributions, pair_marginals_from_tokens


@dataclass(frozen=True)
class KdCase:
    tag: str
    teacher_family: str
    student_family: str
    table_kind: str  # chain | token | arc | bioes
    normalization: str  # global | local (of the student)


CASES = {
    "1a": KdCase("1a", "ner-crf", "ner-crf", "chain", "global"),
    "1b": KdCase("1b", "dep-1st", "dep-1st", "arc", "local"),
    "2a": KdCase("2a", "ner-crf", "ner-maxent", "token", "local"),
    "2b": KdCase("2b", "dep-2nd", "dep-1st", "arc", "local"),
    "3": KdCase("3", "ner-maxent", "ner-crf", "chain", "global"),
    "4": KdCase("4", "ner-span", "ner-maxent", "bioes", "local"),
}


@dataclass
class TemperatureConfig:
    temperature: float = 1.0
    mode: str = "local"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.mode not in ("local", "global"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")


@dataclass
class AnnealConfig:
    rate: float = 1.0
    total_steps: int = 1

    def __post_init__(self):
        if self.rate <= 0 or self.total_steps < 1:
            raise ValueError("anneal rate must be > 0 and total_steps >= 1")


def lambda_schedule(step: int, cfg: AnnealConfig) -> float:
    """Interpolation weight of the KD loss: 1 at step 0, decreasing
    linearly at the configured rate and clamped to [0, 1]."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return float(min(1.0, max(0.0, 1.0 - cfg.rate * step / cfg.total_steps)))


# ---------------------------------------------------------------------------
# Local (per-substructure) temperature


def temper_rows(rows: np.ndarray, temperature: float) -> np.ndarray:
    """p -> p^(1/T) renormalized per row; exact zeros stay exact zeros."""
    if temperature == 1.0:
        return rows.copy()
    with np.errstate(divide="ignore"):
        logits = np.log(rows) / temperature
    return np.exp(log_softmax(logits))


def apply_temperature(table, temperature: float, mode: str = "local"):
    """Temper an already-computed marginal table (local mode), or scale raw
    scores for global mode when handed a lattice/score table."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if mode == "global":
        if hasattr(table, "scaled"):
            return table.scaled(1.0 / temperature)
        raise ValueError("global temperature applies to raw scores, not marginal tables")
    if mode != "local":
        raise ValueError(f"unknown temperature mode {mode!r}")
    if isinstance(table, ChainMarginals):
        n, L = table.unary.shape
        flat = table.pairwise.reshape(max(n - 1, 0), L * L)
        return ChainMarginals(
            temper_rows(flat, temperature).reshape(max(n - 1, 0), L, L),
            temper_rows(table.unary, temperature),
        )
    if isinstance(table, TokenDistributions):
        return TokenDistributions(temper_rows(table.rows, temperature))
    if isinstance(table, BioesMarginals):
        return BioesMarginals(temper_rows(table.rows, temperature))
    if isinstance(table, ArcDistributions):
        return ArcDistributions(
            temper_rows(table.head_rows, temperature),
            temper_rows(table.rel_rows, temperature),
        )
    raise TypeError(f"cannot temper {type(table).__name__}")


# ---------------------------------------------------------------------------
# Teacher marginal extraction


def _check_family(case: KdCase, teacher):
    if teacher.family != case.teacher_family:
        raise ValueError(
            f"case {case.tag} expects a {case.teacher_family} teacher, got {teacher.family}"
        )


def teacher_marginal_table(case, teacher, tokens, temp: TemperatureConfig):
    """Marginals of the teacher over the student substructure space for one
    sentence, with temperature already applied."""
    case = CASES[case] if isinstance(case, str) else case
    _check_family(case, teacher)
    t = temp.temperature
    scale = 1.0 / t if temp.mode == "global" else 1.0
    prep = teacher.prepare(tokens)

    if case.tag in ("1a", "2a"):
        marg = chain_crf.pairwise_marginals(teacher.lattice(prep, scale))
        if case.tag == "2a":
            rows = TokenDistributions(marg.unary)
            return apply_temperature(rows, t) if temp.mode == "local" else rows
        return apply_temperature(marg, t) if temp.mode == "local" else marg

    if case.tag == "3":
        rows = teacher.token_distributions(prep, scale)
        table = pair_marginals_from_tokens(rows)
        return apply_temperature(table, t) if temp.mode == "local" else table

    if case.tag in ("1b", "2b"):
        dist = teacher.distributions(prep, scale)
        return apply_temperature(dist, t) if temp.mode == "local" else dist

    if case.tag == "4":
        table = bioes_marginals(teacher.score_table(prep, scale))
        return apply_temperature(table, t) if temp.mode == "local" else table

    raise ValueError(f"unknown case {case.tag}")


# ---------------------------------------------------------------------------
# Factorized KD losses


def _rows_cross_entropy(q: np.ndarray, logits: np.ndarray, student_temp: float):
    lp = log_softmax(logits / student_temp)
    loss = -masked_inner(q, lp)
    d_logits = (np.exp(lp) - q) / student_temp
    return loss, d_logits


def kd_loss_local(table, student_logits, student_temp: float = 1.0):
    """Sum over substructure sites of the cross-entropy between the teacher
    row and the student's local softmax.

    For token/BIOES tables pass the (n, L) student logit matrix; for arc
    tables pass (arc_logits, rel_logits).  Returns (loss, gradient) with the
    gradient matching the logits' shape(s).
    """
    if isinstance(table, (TokenDistributions, BioesMarginals)):
        q = table.rows
        if q.shape != student_logits.shape:
            raise ValueError(f"teacher table {q.shape} != student logits {student_logits.shape}")
        return _rows_cross_entropy(q, student_logits, student_temp)
    if isinstance(table, ArcDistributions):
        arc_logits, rel_logits = student_logits
        if table.head_rows.shape != arc_logits.shape or table.rel_rows.shape != rel_logits.shape:
            raise ValueError("teacher arc table does not match student logit shapes")
        loss_h, d_arc = _rows_cross_entropy(table.head_rows, arc_logits, student_temp)
        loss_r, d_rel = _rows_cross_entropy(table.rel_rows, rel_logits, student_temp)
        return loss_h + loss_r, (d_arc, d_rel)
    raise TypeError(f"kd_loss_local cannot consume {type(table).__name__}")


def kd_loss_global(table: ChainMarginals, lat: ChainLattice, student_temp: float = 1.0):
    """Factorized KD loss against a globally normalized chain student:
    minus the teacher-expected student score plus the student log-partition.

    The emission at position 1 and the start vector couple to the teacher's
    first unary row (the degenerate BOS pair), emissions at later positions
    couple to the incoming pair slice, and the stop vector couples to the
    last unary row.  The gradient per lattice score is the student marginal
    minus the teacher marginal.
    """
    if not isinstance(table, ChainMarginals):
        raise TypeError(f"kd_loss_global needs a chain table, got {type(table).__name__}")
    n, L = lat.emissions.shape
    if table.unary.shape != (n, L):
        raise ValueError(f"teacher table {table.unary.shape} != student lattice ({n}, {L})")
    slat = lat if student_temp == 1.0 else lat.scaled(1.0 / student_temp)
    marg = chain_crf.pairwise_marginals(slat)
    log_z = chain_crf.log_partition(slat)

    q_first = table.unary[0]
    q_last = table.unary[n - 1]
    expected = masked_inner(q_first, slat.start + slat.emissions[0]) + masked_inner(
        q_last, slat.stop
    )
    for i in range(n - 1):
        expected += masked_inner(
            table.pairwise[i], slat.transitions[i] + slat.emissions[i + 1][None, :]
        )
    loss = log_z - expected

    d_em = marg.unary.copy()
    d_em[0] -= q_first
    if n > 1:
        d_em[1:] -= table.pairwise.sum(axis=1)
    d_tr = marg.pairwise - table.pairwise
    d_start = marg.unary[0] - q_first
    d_stop = marg.unary[n - 1] - q_last
    g = LatticeGrad(d_em, d_tr, d_start, d_stop)
    if student_temp != 1.0:
        s = 1.0 / student_temp
        g = LatticeGrad(g.emissions * s, g.transitions * s, g.start * s, g.stop * s)
    return float(loss), g


# ---------------------------------------------------------------------------
# Decoding helpers


def decode_from_marginals(table):
    """Per-site argmax of a marginal table (ties toward the lowest id);
    used for teacher-quality analysis, not for training."""
    if isinstance(table, ChainMarginals):
        return TagSequence(tuple(int(t) for t in np.argmax(table.unary, axis=1)))
    if isinstance(table, (TokenDistributions, BioesMarginals)):
        return TagSequence(tuple(int(t) for t in np.argmax(table.rows, axis=1)))
    if isinstance(table, ArcDistributions):
        return decode_heads(table)
    raise TypeError(f"cannot decode {type(table).__name__}")


def pseudo_label(teacher, sentence) -> SentenceRecord:
    """Teacher's Top-1 decode of a sentence, packaged as pseudo gold."""
    tokens = sentence.tokens if isinstance(sentence, SentenceRecord) else list(sentence)
    prep = teacher.prepare(tokens)
    if isinstance(teacher, ChainCrfTagger):
        gold = chain_crf.viterbi(teacher.lattice(prep))
    elif isinstance(teacher, MaxEntTagger):
        gold = teacher.decode(prep)
    elif isinstance(teacher, (FirstOrderParser, SecondOrderParser)):
        gold = decode_heads(teacher.distributions(prep))
    elif isinstance(teacher, SpanNerModel):
        spans = decode_spans(teacher.score_table(prep))
        gold = teacher.codec.spans_to_bioes(spans, len(tokens))
    else:
        raise TypeError(f"cannot pseudo-label with {type(teacher).__name__}")
    return SentenceRecord(list(tokens), gold, provenance=PSEUDO_LABELED)
