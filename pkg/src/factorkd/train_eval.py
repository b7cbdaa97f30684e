"""Training loops (plain mini-batch SGD) and evaluation metrics.

Models start from zero parameters, so a run is fully determined by its
seed (which only drives sentence shuffling) and config.  When distilling,
each sentence contributes lambda * KD + (1 - lambda) * target, with lambda
annealed per optimizer step; both parts share one forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import chain_crf
from .chain_crf import ChainCrfTagger
from .corpus import (
    HeadAssignment,
    SpanSet,
    TagSequence,
    bioes_codec_from_tags,
)
from .distill import (
    CASES,
    AnnealConfig,
    TemperatureConfig,
    lambda_schedule,
    pseudo_label,
    teacher_marginal_table,
)
from .head_parser import FirstOrderParser, SecondOrderParser
from .numerics import log_softmax, masked_inner
from .span_ner import SpanNerModel
from .token_maxent import MaxEntTagger

FIXED_SEEDS = (1, 2, 3, 4, 5)
TEMPERATURE_GRID = (1.0, 2.0, 3.0, 4.0, 5.0)
ANNEAL_RATE_GRID = (0.5, 1.0, 1.5)


# ---------------------------------------------------------------------------
# Metrics


def _span_counts(pred: SpanSet, gold: SpanSet):
    p, g = set(pred.spans), set(gold.spans)
    return len(p & g), len(p), len(g)


def entity_f1(preds, golds, codec=None):
    """Micro-averaged exact span-and-type (precision, recall, F1).

    Accepts SpanSet or TagSequence items (single or sequence); tag
    sequences are decoded through the codec's repair rule first.
    """
    if isinstance(preds, (SpanSet, TagSequence)):
        preds, golds = [preds], [golds]
    tp = n_pred = n_gold = 0
    for pred, gold in zip(preds, golds, strict=True):
        if isinstance(pred, TagSequence):
            pred = codec.bioes_to_spans(pred)
        if isinstance(gold, TagSequence):
            gold = codec.bioes_to_spans(gold)
        a, b, c = _span_counts(pred, gold)
        tp, n_pred, n_gold = tp + a, n_pred + b, n_gold + c
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def uas_las(preds, golds):
    """(unlabeled, labeled) attachment scores over a corpus; punctuation is
    not excluded."""
    if isinstance(preds, HeadAssignment):
        preds, golds = [preds], [golds]
    total = heads_ok = both_ok = 0
    for pred, gold in zip(preds, golds, strict=True):
        if len(pred) != len(gold):
            raise ValueError(f"length mismatch: {len(pred)} vs {len(gold)}")
        for h, r, gh, gr in zip(pred.heads, pred.rels, gold.heads, gold.rels):
            total += 1
            if h == gh:
                heads_ok += 1
                if r == gr:
                    both_ok += 1
    return (heads_ok / total if total else 0.0, both_ok / total if total else 0.0)


def token_accuracy(preds, golds):
    ok = total = 0
    for pred, gold in zip(preds, golds, strict=True):
        for a, b in zip(pred.tags, gold.tags):
            total += 1
            ok += a == b
    return ok / total if total else 0.0


# ---------------------------------------------------------------------------
# Config and manifest


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.1
    batch_size: int = 32
    seed: int = 0


@dataclass
class DistillConfig:
    case: str
    temperature: float = 1.0
    temp_mode: str = "local"
    anneal_rate: float = 1.0
    student_temp: float = 1.0

    def temp(self) -> TemperatureConfig:
        return TemperatureConfig(self.temperature, self.temp_mode)


@dataclass
class RunManifest:
    family: str
    config: dict
    seed: int
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev: float = 0.0
    dev_metrics: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "family": self.family,
            "config": self.config,
            "seed": self.seed,
            "history": self.history,
            "best_epoch": self.best_epoch,
            "best_dev": self.best_dev,
            "dev_metrics": self.dev_metrics,
        }

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,dev_metric"]
        for row in self.history:
            lines.append(f"{row['epoch']},{row['train_loss']:.6f},{row['dev_metric']:.6f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Per-family training steps (one forward pass serves target and KD losses)


def _check_gold(model, gold):
    if isinstance(model, (ChainCrfTagger, MaxEntTagger)):
        want = TagSequence
    elif isinstance(model, (FirstOrderParser, SecondOrderParser)):
        want = HeadAssignment
    else:
        want = SpanSet
    if not isinstance(gold, want):
        raise ValueError(
            f"{type(model).__name__} trains on {want.__name__} gold, got {type(gold).__name__}"
        )


def _step_maxent(model, prep, gold, table, lam, grads, coef):
    logp = log_softmax(model.logits(prep))
    p = np.exp(logp)
    idx = np.arange(len(gold))
    tags = np.array(gold.tags)
    loss_t = -float(logp[idx, tags].sum())
    d = p.copy()
    d[idx, tags] -= 1.0
    loss = (1.0 - lam) * loss_t
    d *= 1.0 - lam
    if lam > 0.0:
        q = table.rows
        loss -= lam * masked_inner(q, logp)
        d += lam * (p - q)
    prep.scatter(grads, coef * d)
    return loss


def _step_crf(model, prep, gold, table, lam, grads, coef):
    lat = model.lattice(prep)
    marg = chain_crf.pairwise_marginals(lat)
    log_z = chain_crf.log_partition(lat)
    n = lat.n
    tags = tuple(gold)

    loss = log_z - (1.0 - lam) * chain_crf.sequence_score(lat, tags)
    target_u = np.zeros_like(marg.unary)
    target_p = np.zeros_like(marg.pairwise)
    target_u[np.arange(n), tags] = 1.0 - lam
    for i in range(n - 1):
        target_p[i, tags[i], tags[i + 1]] = 1.0 - lam
    if lam > 0.0:
        q_first, q_last = table.unary[0], table.unary[n - 1]
        expected = masked_inner(q_first, lat.start + lat.emissions[0]) + masked_inner(
            q_last, lat.stop
        )
        for i in range(n - 1):
            expected += masked_inner(
                table.pairwise[i], lat.transitions[i] + lat.emissions[i + 1][None, :]
            )
        loss -= lam * expected
        target_u += lam * table.unary
        target_p += lam * table.pairwise

    d_em = marg.unary.copy()
    d_em[0] -= target_u[0]
    if n > 1:
        d_em[1:] -= target_p.sum(axis=1)
    g = chain_crf.LatticeGrad(
        d_em, marg.pairwise - target_p, marg.unary[0] - target_u[0], marg.unary[-1] - target_u[-1]
    )
    model.scatter_lattice_grad(prep, g, grads, coef)
    return float(loss)


def _step_parser(model, prep, gold, table, lam, grads, coef):
    arc_lp = log_softmax(model.arc_logits(prep))
    rel_lp = log_softmax(model.rel_logits(prep))
    idx = np.arange(prep.n)
    heads, rels = np.array(gold.heads), np.array(gold.rels)
    loss_t = -float(arc_lp[idx, heads].sum() + rel_lp[idx, rels].sum())
    d_arc = np.exp(arc_lp)
    d_arc[idx, heads] -= 1.0
    d_rel = np.exp(rel_lp)
    d_rel[idx, rels] -= 1.0
    loss = (1.0 - lam) * loss_t
    d_arc *= 1.0 - lam
    d_rel *= 1.0 - lam
    if lam > 0.0:
        qh, qr = table.head_rows, table.rel_rows
        loss -= lam * (masked_inner(qh, arc_lp) + masked_inner(qr, rel_lp))
        d_arc += lam * (np.exp(arc_lp) - qh)
        d_rel += lam * (np.exp(rel_lp) - qr)
    model.scatter_arc_grad(prep, d_arc, grads, coef)
    model.scatter_rel_grad(prep, d_rel, grads, coef)
    return loss


def _step_split(model, prep, gold, table, lam, grads, coef, student_temp):
    """KD and target parts composed from the standalone losses; only used
    when the (default-off) student-side temperature divisor is active."""
    from .distill import kd_loss_global, kd_loss_local

    if isinstance(model, MaxEntTagger):
        kd, d = kd_loss_local(table, model.logits(prep), student_temp)
        prep.scatter(grads, coef * lam * d)
        nll = model.nll_and_grad(prep, gold, grads, coef * (1.0 - lam))
        return lam * kd + (1.0 - lam) * nll
    if isinstance(model, ChainCrfTagger):
        lat = model.lattice(prep)
        kd, g = kd_loss_global(table, lat, student_temp)
        model.scatter_lattice_grad(prep, g, grads, coef * lam)
        nll, g2 = chain_crf.nll_and_grad(lat, gold)
        model.scatter_lattice_grad(prep, g2, grads, coef * (1.0 - lam))
        return lam * kd + (1.0 - lam) * nll
    if isinstance(model, FirstOrderParser) and not isinstance(model, SecondOrderParser):
        kd, (d_arc, d_rel) = kd_loss_local(
            table, (model.arc_logits(prep), model.rel_logits(prep)), student_temp
        )
        model.scatter_arc_grad(prep, d_arc, grads, coef * lam)
        model.scatter_rel_grad(prep, d_rel, grads, coef * lam)
        nll = model.nll_and_grad(prep, gold, grads, coef * (1.0 - lam))
        return lam * kd + (1.0 - lam) * nll
    raise TypeError(f"{type(model).__name__} is not a KD student family")


def sentence_step(model, prep, gold, table, lam, grads, coef, student_temp=1.0):
    if student_temp != 1.0 and lam > 0.0:
        return _step_split(model, prep, gold, table, lam, grads, coef, student_temp)
    if isinstance(model, MaxEntTagger):
        return _step_maxent(model, prep, gold, table, lam, grads, coef)
    if isinstance(model, ChainCrfTagger):
        return _step_crf(model, prep, gold, table, lam, grads, coef)
    if isinstance(model, SecondOrderParser):
        if lam > 0.0:
            raise ValueError("the second-order parser is a teacher family, not a KD student")
        return model.nll_and_grad(prep, gold, grads, coef)
    if isinstance(model, FirstOrderParser):
        return _step_parser(model, prep, gold, table, lam, grads, coef)
    if isinstance(model, SpanNerModel):
        if lam > 0.0:
            raise ValueError("the span NER model is a teacher family, not a KD student")
        return model.nll_and_grad(prep, gold, grads, coef)
    raise TypeError(f"cannot train {type(model).__name__}")


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(model, records, prepared=None):
    """(primary metric, metric dict) for a model on gold-bearing records."""
    if prepared is None:
        prepared = [model.prepare(r.tokens) for r in records]
    preds = [model.decode(p) for p in prepared]
    golds = [r.gold for r in records]
    if isinstance(model, (ChainCrfTagger, MaxEntTagger)):
        codec = bioes_codec_from_tags(model.tags)
        if len(codec.types) == 0:
            acc = token_accuracy(preds, golds)
            return acc, {"token_accuracy": acc}
        tag_strings = [model.tags.label(i) for i in range(len(model.tags))]
        # tags that do not parse as BIOES count as O for span extraction
        remap = np.array([codec.tags.index(s) if s in codec.tags else 0 for s in tag_strings])
        preds = [codec.bioes_to_spans(TagSequence(tuple(remap[list(t.tags)]))) for t in preds]
        golds = [codec.bioes_to_spans(TagSequence(tuple(remap[list(g.tags)]))) for g in golds]
        p, r, f1 = entity_f1(preds, golds)
        return f1, {"precision": p, "recall": r, "f1": f1}
    if isinstance(model, (FirstOrderParser, SecondOrderParser)):
        u, l = uas_las(preds, golds)
        return l, {"uas": u, "las": l}
    if isinstance(model, SpanNerModel):
        p, r, f1 = entity_f1(preds, golds)
        return f1, {"precision": p, "recall": r, "f1": f1}
    raise TypeError(f"cannot evaluate {type(model).__name__}")


# ---------------------------------------------------------------------------
# Trainer


def pseudo_label_records(teacher, records):
    return [pseudo_label(teacher, r) for r in records]


def train(
    model,
    train_records,
    dev_records,
    cfg: TrainConfig,
    distill_cfg: DistillConfig | None = None,
    teacher=None,
    prepared=None,
    dev_prepared=None,
    teacher_tables=None,
):
    """Mini-batch SGD with best-dev-checkpoint selection.

    Returns (model, manifest); the model carries the best checkpoint's
    parameters.  `prepared`/`teacher_tables` may be passed to share work
    across runs (they must align with train_records).
    """
    if not train_records:
        raise ValueError("training set is empty")
    if (distill_cfg is None) != (teacher is None):
        raise ValueError("distillation needs both a case config and a teacher")
    if distill_cfg is not None:
        case = CASES[distill_cfg.case]
        if model.family != case.student_family:
            raise ValueError(
                f"case {case.tag} expects a {case.student_family} student, got {model.family}"
            )
    for rec in train_records:
        _check_gold(model, rec.gold)

    if prepared is None:
        prepared = [model.prepare(r.tokens) for r in train_records]
    if dev_prepared is None:
        dev_prepared = [model.prepare(r.tokens) for r in dev_records]
    if distill_cfg is not None and teacher_tables is None:
        temp = distill_cfg.temp()
        teacher_tables = [
            teacher_marginal_table(distill_cfg.case, teacher, r.tokens, temp)
            for r in train_records
        ]

    n = len(train_records)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    anneal = None
    if distill_cfg is not None:
        anneal = AnnealConfig(
            distill_cfg.anneal_rate, max(cfg.epochs * batches_per_epoch, 1)
        )

    manifest = RunManifest(
        family=model.family,
        config={
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "distill": None
            if distill_cfg is None
            else {
                "case": distill_cfg.case,
                "temperature": distill_cfg.temperature,
                "temp_mode": distill_cfg.temp_mode,
                "anneal_rate": distill_cfg.anneal_rate,
                "student_temp": distill_cfg.student_temp,
            },
        },
        seed=cfg.seed,
    )

    best_metric, best_snap, best_epoch = -1.0, model.snapshot(), 0
    if dev_records:
        best_metric, _ = evaluate(model, dev_records, dev_prepared)

    rng = np.random.default_rng(cfg.seed)
    grads = model.new_grads()
    order = np.arange(n)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        rng.shuffle(order)
        epoch_loss = 0.0
        for b in range(batches_per_epoch):
            batch = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            lam = lambda_schedule(step, anneal) if anneal is not None else 0.0
            grads.fill(0.0)
            coef = 1.0 / len(batch)
            for i in batch:
                table = teacher_tables[i] if teacher_tables is not None else None
                epoch_loss += sentence_step(
                    model, prepared[i], train_records[i].gold, table, lam, grads, coef,
                    student_temp=distill_cfg.student_temp if distill_cfg else 1.0,
                )
            model.sgd_step(grads, cfg.lr)
            step += 1
        metric = best_metric
        if dev_records:
            metric, _ = evaluate(model, dev_records, dev_prepared)
            if metric > best_metric:
                best_metric, best_snap, best_epoch = metric, model.snapshot(), epoch
        manifest.history.append(
            {"epoch": epoch, "train_loss": epoch_loss / n, "dev_metric": metric}
        )

    model.restore(best_snap)
    manifest.best_epoch = best_epoch
    manifest.best_dev = max(best_metric, 0.0)
    if dev_records:
        _, manifest.dev_metrics = evaluate(model, dev_records, dev_prepared)
    return model, manifest


# ---------------------------------------------------------------------------
# Grid search over temperature and anneal rate


@dataclass
class GridResult:
    rows: list
    best: dict

    def best_config(self) -> DistillConfig:
        return DistillConfig(
            case=self.best["case"],
            temperature=self.best["temperature"],
            temp_mode=self.best["temp_mode"],
            anneal_rate=self.best["anneal_rate"],
        )


def distill_grid_search(
    case: str,
    teacher,
    model_factory,
    train_records,
    dev_records,
    cfg: TrainConfig,
    temperatures=TEMPERATURE_GRID,
    rates=ANNEAL_RATE_GRID,
    seeds=FIXED_SEEDS,
    mode: str = "local",
    unlabeled=None,
) -> GridResult:
    """Mean dev metric over seeds for every (temperature, anneal rate);
    teacher tables and student feature preparation are shared across runs."""
    records = list(train_records)
    if unlabeled:
        records.extend(pseudo_label_records(teacher, unlabeled))
    probe = model_factory()
    prepared = [probe.prepare(r.tokens) for r in records]
    dev_prepared = [probe.prepare(r.tokens) for r in dev_records]

    rows = []
    for t in temperatures:
        temp = TemperatureConfig(t, mode)
        tables = [teacher_marginal_table(case, teacher, r.tokens, temp) for r in records]
        for rate in rates:
            devs = []
            for seed in seeds:
                run_cfg = TrainConfig(cfg.epochs, cfg.lr, cfg.batch_size, seed)
                dcfg = DistillConfig(case, t, mode, rate)
                model = model_factory()
                _, manifest = train(
                    model,
                    records,
                    dev_records,
                    run_cfg,
                    distill_cfg=dcfg,
                    teacher=teacher,
                    prepared=prepared,
                    dev_prepared=dev_prepared,
                    teacher_tables=tables,
                )
                devs.append(manifest.best_dev)
            rows.append(
                {
                    "case": case,
                    "temperature": t,
                    "temp_mode": mode,
                    "anneal_rate": rate,
                    "mean_dev": float(np.mean(devs)),
                    "devs": devs,
                }
            )
    best = max(rows, key=lambda r: r["mean_dev"])
    return GridResult(rows, best)
