"""Brute-force enumeration ground truth for small instances.

Everything here is deliberately independent of the dynamic programs it
validates: scores are re-derived with per-structure Python loops and sums
are accumulated with math.fsum in enumeration order rather than with the
package's vectorized log-sum-exp.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_STRUCTURES = 10**6


@dataclass
class StructureEnumeration:
    task: str  # chain | heads | spans
    n: int
    structures: list
    log_weights: np.ndarray  # unnormalized log scores, enumeration order


def _fsum_logsumexp(values) -> float:
    m = max(values)
    if m == float("-inf"):
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def log_partition(e: StructureEnumeration) -> float:
    return _fsum_logsumexp(list(e.log_weights))


def probabilities(e: StructureEnumeration) -> np.ndarray:
    log_z = log_partition(e)
    return np.array([math.exp(w - log_z) for w in e.log_weights])


def entropy(e: StructureEnumeration) -> float:
    log_z = log_partition(e)
    return -math.fsum(
        math.exp(w - log_z) * (w - log_z) for w in e.log_weights if w != float("-inf")
    )


def cross_entropy(e_teacher: StructureEnumeration, student_log_probs) -> float:
    """-sum_y P_t(y) log P_s(y) over the teacher's enumeration order."""
    if len(student_log_probs) != len(e_teacher.structures):
        raise ValueError("student log-probs must align with the teacher enumeration")
    p = probabilities(e_teacher)
    return -math.fsum(float(pi) * float(lp) for pi, lp in zip(p, student_log_probs))


# ---------------------------------------------------------------------------
# Chains


def chain_sequence_score(lattice, tags) -> float:
    parts = [float(lattice.start[tags[0]]), float(lattice.emissions[0][tags[0]])]
    for i in range(1, len(tags)):
        parts.append(float(lattice.transitions[i - 1][tags[i - 1], tags[i]]))
        parts.append(float(lattice.emissions[i][tags[i]]))
    parts.append(float(lattice.stop[tags[-1]]))
    return math.fsum(parts)


def enumerate_chain(lattice) -> StructureEnumeration:
    n, L = lattice.emissions.shape
    count = L**n
    if count > MAX_STRUCTURES:
        raise ValueError(f"chain enumeration would visit {count} structures")
    structures = list(itertools.product(range(L), repeat=n))
    lw = np.array([chain_sequence_score(lattice, y) for y in structures])
    return StructureEnumeration("chain", n, structures, lw)


def chain_marginals(e: StructureEnumeration, L: int):
    """(pairwise, unary) tables accumulated structure by structure."""
    n = e.n
    p = probabilities(e)
    unary = np.zeros((n, L))
    pairwise = np.zeros((max(n - 1, 0), L, L))
    for y, pi in zip(e.structures, p):
        for i, t in enumerate(y):
            unary[i, t] += pi
        for i in range(n - 1):
            pairwise[i, y[i], y[i + 1]] += pi
    return pairwise, unary


def chain_mode(e: StructureEnumeration):
    best = int(np.argmax(e.log_weights))
    return e.structures[best]


# ---------------------------------------------------------------------------
# Head selection


def head_candidates(n: int, token: int):
    """Valid heads of 1-based `token`: 0 (root) and every other token."""
    return [j for j in range(n + 1) if j != token]


def enumerate_heads(n: int, n_rels: int, arc_logits, rel_logits) -> StructureEnumeration:
    """All head/relation assignments, log-weighted by summed raw logits.

    arc_logits is (n, n+1) (self column ignored), rel_logits is (n, R).
    """
    count = (n * n_rels) ** n
    if count > MAX_STRUCTURES:
        raise ValueError(f"head enumeration would visit {count} structures")
    per_token = []
    for i in range(1, n + 1):
        per_token.append(
            [(j, r) for j in head_candidates(n, i) for r in range(n_rels)]
        )
    structures = []
    lws = []
    for combo in itertools.product(*per_token):
        heads = tuple(j for j, _ in combo)
        rels = tuple(r for _, r in combo)
        lws.append(
            math.fsum(
                [float(arc_logits[i][combo[i][0]]) for i in range(n)]
                + [float(rel_logits[i][combo[i][1]]) for i in range(n)]
            )
        )
        structures.append((heads, rels))
    return StructureEnumeration("heads", n, structures, np.array(lws))


def head_marginals(e: StructureEnumeration, n_rels: int):
    """(head table (n, n+1), rel table (n, R)) from the enumeration."""
    n = e.n
    p = probabilities(e)
    head = np.zeros((n, n + 1))
    rel = np.zeros((n, n_rels))
    for (heads, rels), pi in zip(e.structures, p):
        for i in range(n):
            head[i, heads[i]] += pi
            rel[i, rels[i]] += pi
    return head, rel


# ---------------------------------------------------------------------------
# Span sets


@lru_cache(maxsize=None)
def span_skeletons(n: int, n_types: int) -> tuple:
    """Every set of non-overlapping labeled spans over n positions, as
    sorted tuples of 1-based (start, end, type)."""

    @lru_cache(maxsize=None)
    def suffix(i):  # structures over positions i..n
        if i > n:
            return ((),)
        out = list(suffix(i + 1))  # position i uncovered
        for j in range(i, n + 1):
            for rest in suffix(j + 1):
                for l in range(n_types):
                    out.append(((i, j, l),) + rest)
        return tuple(out)

    count = span_structure_count(n, n_types)
    if count > MAX_STRUCTURES:
        raise ValueError(f"span enumeration would visit {count} structures")
    return suffix(1)


def span_structure_count(n: int, n_types: int) -> int:
    """c(n) = c(n-1) + T * sum_{k<=n} c(k-1), c(0) = 1."""
    c = [1]
    for m in range(1, n + 1):
        c.append(c[m - 1] + n_types * sum(c[k - 1] for k in range(1, m + 1)))
    return c[n]


def enumerate_spans(table) -> StructureEnumeration:
    """table is a SpanScoreTable-like object with .scores (n, n, T)."""
    scores = table.scores
    n, _, T = scores.shape
    structures = [frozenset(sk) for sk in span_skeletons(n, T)]
    lws = np.array(
        [
            math.fsum(float(scores[s - 1, e - 1, l]) for s, e, l in sk)
            for sk in span_skeletons(n, T)
        ]
    )
    return StructureEnumeration("spans", n, structures, lws)


def _bioes_tags(structure, n: int, n_types: int):
    """Tag ids in the canonical layout: O, then B/I/E/S per type."""
    tags = [0] * n
    for s, e, l in structure:
        col = 1 + 4 * l
        if s == e:
            tags[s - 1] = col + 3  # S
        else:
            tags[s - 1] = col  # B
            for p in range(s + 1, e):
                tags[p - 1] = col + 1  # I
            tags[e - 1] = col + 2  # E
    return tags


def span_bioes_rows(e: StructureEnumeration, n_types: int) -> np.ndarray:
    p = probabilities(e)
    rows = np.zeros((e.n, 1 + 4 * n_types))
    for structure, pi in zip(e.structures, p):
        for i, t in enumerate(_bioes_tags(structure, e.n, n_types)):
            rows[i, t] += pi
    return rows


def span_presence(e: StructureEnumeration, n_types: int) -> np.ndarray:
    p = probabilities(e)
    out = np.zeros((e.n, e.n, n_types))
    for structure, pi in zip(e.structures, p):
        for s, ee, l in structure:
            out[s - 1, ee - 1, l] += pi
    return out


def span_argmax(e: StructureEnumeration):
    """Best structure; ties prefer fewer spans, then the lexicographically
    smallest sorted span tuple."""
    def key(idx):
        sk = tuple(sorted(e.structures[idx]))
        return (-e.log_weights[idx], len(sk), sk)

    return e.structures[min(range(len(e.structures)), key=key)]


# ---------------------------------------------------------------------------
# Student log-probabilities per structure (for KD cross-entropies)


def chain_log_probs(e: StructureEnumeration, student_lattice) -> np.ndarray:
    scores = np.array([chain_sequence_score(student_lattice, y) for y in e.structures])
    return scores - _fsum_logsumexp(list(scores))


def rows_log_probs_chain(e: StructureEnumeration, rows: np.ndarray) -> np.ndarray:
    """Independent-token student: log P(y) = sum_i log rows[i, y_i]."""
    with np.errstate(divide="ignore"):
        lr = np.log(rows)
    return np.array([math.fsum(float(lr[i, t]) for i, t in enumerate(y)) for y in e.structures])


def heads_log_probs(e: StructureEnumeration, head_rows, rel_rows) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lh, lr = np.log(head_rows), np.log(rel_rows)
    out = []
    for heads, rels in e.structures:
        out.append(
            math.fsum(
                [float(lh[i, heads[i]]) for i in range(e.n)]
                + [float(lr[i, rels[i]]) for i in range(e.n)]
            )
        )
    return np.array(out)


def span_bioes_log_probs(e: StructureEnumeration, rows: np.ndarray, n_types: int) -> np.ndarray:
    """BIOES MaxEnt student evaluated on each span structure's tag image."""
    with np.errstate(divide="ignore"):
        lr = np.log(rows)
    out = []
    for structure in e.structures:
        tags = _bioes_tags(structure, e.n, n_types)
        out.append(math.fsum(float(lr[i, t]) for i, t in enumerate(tags)))
    return np.array(out)
