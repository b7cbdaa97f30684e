import numpy as np
import pytest

from factorkd import chain_crf, corpus, models
from factorkd.corpus import HeadAssignment, LabelAlphabet, SpanSet, TagSequence, BioesCodec
from factorkd.distill import TemperatureConfig, kd_loss_global, kd_loss_local, teacher_marginal_table
from factorkd.train_eval import (
    DistillConfig,
    TrainConfig,
    distill_grid_search,
    entity_f1,
    evaluate,
    pseudo_label_records,
    sentence_step,
    train,
    uas_las,
)
from factorkd.verify import rand_model, rand_tokens


def _codec():
    return BioesCodec(LabelAlphabet("entity-types", ["PER", "LOC"]).freeze())


# ---------------------------------------------------------------------------
# Metrics


def test_f1_perfect_match():
    s = SpanSet(frozenset({(1, 2, 0)}))
    assert entity_f1(s, s) == (1.0, 1.0, 1.0)


def test_f1_empty_prediction_convention():
    pred = SpanSet(frozenset())
    gold = SpanSet(frozenset({(1, 1, 0)}))
    assert entity_f1(pred, gold) == (0.0, 0.0, 0.0)


def test_f1_half_and_half():
    pred = SpanSet(frozenset({(1, 2, 0), (4, 4, 1)}))
    gold = SpanSet(frozenset({(1, 2, 0), (3, 3, 0)}))
    p, r, f1 = entity_f1(pred, gold)
    assert (p, r, f1) == (0.5, 0.5, 0.5)


def test_f1_harmonic_mean_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        spans_a = frozenset({(1, 1, int(rng.integers(2)))})
        spans_b = frozenset({(1, 1, int(rng.integers(2))), (3, 4, 0)})
        p, r, f1 = entity_f1(SpanSet(spans_a), SpanSet(spans_b))
        if p > 0 and r > 0:
            assert f1 == pytest.approx(2 * p * r / (p + r), abs=1e-12)


def test_f1_accepts_tag_sequences():
    codec = _codec()
    gold = SpanSet(frozenset({(1, 2, 0)}))
    tags = codec.spans_to_bioes(gold, 3)
    assert entity_f1(tags, tags, codec) == (1.0, 1.0, 1.0)


def test_uas_las_perfect():
    h = HeadAssignment((0, 1), (0, 1))
    assert uas_las(h, h) == (1.0, 1.0)


def test_uas_las_wrong_relations():
    pred = HeadAssignment((0, 1), (1, 0))
    gold = HeadAssignment((0, 1), (0, 1))
    assert uas_las(pred, gold) == (1.0, 0.0)


def test_uas_las_half():
    pred = HeadAssignment((2, 1), (0, 0))
    gold = HeadAssignment((0, 1), (0, 0))
    assert uas_las(pred, gold) == (0.5, 0.5)


def test_las_never_exceeds_uas():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = int(rng.integers(1, 6))
        def draw():
            heads = tuple(int(rng.choice([j for j in range(n + 1) if j != i])) for i in range(1, n + 1))
            rels = tuple(int(r) for r in rng.integers(3, size=n))
            return HeadAssignment(heads, rels)
        u, l = uas_las(draw(), draw())
        assert l <= u + 1e-12


def test_uas_las_length_mismatch():
    with pytest.raises(ValueError):
        uas_las(HeadAssignment((0,), (0,)), HeadAssignment((0, 1), (0, 0)))


# ---------------------------------------------------------------------------
# Mixed objective consistency: the trainer's fused step must equal
# lam * KD + (1 - lam) * NLL computed through the standalone operations.


def test_maxent_step_equals_mixed_losses():
    rng = np.random.default_rng(2)
    teacher = rand_model("ner-crf", rng)
    student = rand_model("ner-maxent", rng)
    tokens = rand_tokens(rng, 5)
    table = teacher_marginal_table("2a", teacher, tokens, TemperatureConfig(2.0, "local"))
    prep = student.prepare(tokens)
    gold = TagSequence(tuple(int(t) for t in rng.integers(3, size=5)))
    lam = 0.6
    fused = sentence_step(student, prep, gold, table, lam, student.new_grads(), 1.0)
    nll = student.nll_and_grad(prep, gold, student.new_grads())
    kd, _ = kd_loss_local(table, student.logits(prep))
    assert fused == pytest.approx(lam * kd + (1 - lam) * nll, abs=1e-12)


def test_crf_step_equals_mixed_losses():
    rng = np.random.default_rng(3)
    teacher = rand_model("ner-crf", rng)
    student = rand_model("ner-crf", rng)
    tokens = rand_tokens(rng, 4)
    table = teacher_marginal_table("1a", teacher, tokens, TemperatureConfig(1.0, "local"))
    prep = student.prepare(tokens)
    gold = TagSequence(tuple(int(t) for t in rng.integers(3, size=4)))
    lam = 0.3
    fused = sentence_step(student, prep, gold, table, lam, student.new_grads(), 1.0)
    lat = student.lattice(prep)
    nll, _ = chain_crf.nll_and_grad(lat, gold)
    kd, _ = kd_loss_global(table, lat)
    assert fused == pytest.approx(lam * kd + (1 - lam) * nll, abs=1e-12)


def test_student_temperature_flag_changes_training():
    rng = np.random.default_rng(9)
    teacher = rand_model("ner-crf", rng)
    tokens = rand_tokens(rng, 5)
    table = teacher_marginal_table("2a", teacher, tokens, TemperatureConfig(1.0, "local"))
    gold = TagSequence(tuple(int(t) for t in rng.integers(3, size=5)))
    lam = 0.5
    losses = {}
    for ts in (1.0, 2.0):
        student = rand_model("ner-maxent", np.random.default_rng(9))
        prep = student.prepare(tokens)
        losses[ts] = sentence_step(
            student, prep, gold, table, lam, student.new_grads(), 1.0, student_temp=ts
        )
        # the split path must agree with the standalone losses
        nll = student.nll_and_grad(prep, gold, student.new_grads())
        kd, _ = kd_loss_local(table, student.logits(prep), ts)
        assert losses[ts] == pytest.approx(lam * kd + (1 - lam) * nll, abs=1e-12)
    assert abs(losses[1.0] - losses[2.0]) > 1e-6


def test_kd_local_student_temp_gradient_fd():
    rng = np.random.default_rng(10)
    rows = np.exp(np.log([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]]))
    logits = rng.uniform(-2, 2, (3, 2))
    from factorkd.token_maxent import TokenDistributions

    table = TokenDistributions(rows)
    _, grad = kd_loss_local(table, logits, student_temp=2.0)
    eps = 1e-6
    for i in range(3):
        for j in range(2):
            logits[i, j] += eps
            up, _ = kd_loss_local(table, logits, student_temp=2.0)
            logits[i, j] -= 2 * eps
            down, _ = kd_loss_local(table, logits, student_temp=2.0)
            logits[i, j] += eps
            fd = (up - down) / (2 * eps)
            assert fd == pytest.approx(grad[i, j], rel=1e-4, abs=1e-9)


def test_parser_step_equals_mixed_losses():
    rng = np.random.default_rng(4)
    teacher = rand_model("dep-1st", rng)
    student = rand_model("dep-1st", rng)
    tokens = rand_tokens(rng, 4)
    table = teacher_marginal_table("1b", teacher, tokens, TemperatureConfig(3.0, "local"))
    prep = student.prepare(tokens)
    gold = HeadAssignment((2, 0, 4, 0), (1, 0, 2, 1))
    lam = 0.8
    fused = sentence_step(student, prep, gold, table, lam, student.new_grads(), 1.0)
    nll = student.nll_and_grad(prep, gold, student.new_grads())
    kd, _ = kd_loss_local(table, (student.arc_logits(prep), student.rel_logits(prep)))
    assert fused == pytest.approx(lam * kd + (1 - lam) * nll, abs=1e-12)


# ---------------------------------------------------------------------------
# Trainer behavior


def _tiny_chain(n_train=12, n_dev=6, seeds=(31, 32)):
    tr, tags = corpus.synth_generate("chain", n_train, max_len=6, min_len=3, seed=seeds[0])
    dv, _ = corpus.synth_generate("chain", n_dev, max_len=6, min_len=3, seed=seeds[1])
    return tr, dv, tags


def test_zero_epochs_returns_initial_model():
    tr, dv, tags = _tiny_chain()
    model = models.new_model("ner-maxent", tags, bits=10)
    model, manifest = train(model, tr, dv, TrainConfig(epochs=0, seed=1))
    assert not model.params.weights.any()
    assert manifest.history == [] and manifest.best_epoch == 0


def test_same_seed_identical_manifests():
    tr, dv, tags = _tiny_chain()
    runs = []
    for _ in range(2):
        model = models.new_model("ner-maxent", tags, bits=10)
        _, manifest = train(model, tr, dv, TrainConfig(epochs=3, seed=7))
        runs.append(manifest.to_json_dict())
    assert runs[0] == runs[1]


def test_different_seed_changes_shuffling():
    tr, dv, tags = _tiny_chain(n_train=40)
    hists = []
    for seed in (1, 2):
        model = models.new_model("ner-maxent", tags, bits=10)
        _, manifest = train(model, tr, dv, TrainConfig(epochs=2, batch_size=8, seed=seed))
        hists.append(manifest.history)
    assert hists[0] != hists[1]


def test_training_loss_monotone_at_small_lr():
    tr, dv, tags = _tiny_chain(n_train=10, n_dev=2)
    model = models.new_model("ner-maxent", tags, bits=12)
    _, manifest = train(model, tr, dv, TrainConfig(epochs=6, lr=0.01, batch_size=10, seed=1))
    losses = [h["train_loss"] for h in manifest.history]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_empty_training_set_rejected():
    _, dv, tags = _tiny_chain()
    model = models.new_model("ner-maxent", tags, bits=10)
    with pytest.raises(ValueError):
        train(model, [], dv, TrainConfig(epochs=1))


def test_gold_type_checked_against_family():
    tr, dv, tags = _tiny_chain()
    parser = models.new_model("dep-1st", LabelAlphabet("deprel", ["root"]).freeze(), bits=10)
    with pytest.raises(ValueError):
        train(parser, tr, dv, TrainConfig(epochs=1))


def test_distill_requires_matching_student_family():
    tr, dv, tags = _tiny_chain()
    teacher = models.new_model("ner-crf", tags, bits=10)
    student = models.new_model("ner-crf", tags, bits=10)
    with pytest.raises(ValueError):
        train(
            student, tr, dv, TrainConfig(epochs=1),
            distill_cfg=DistillConfig("2a"), teacher=teacher,
        )


def test_distill_end_to_end_tiny():
    tr, dv, tags = _tiny_chain(n_train=20)
    teacher = models.new_model("ner-crf", tags, bits=10)
    teacher, _ = train(teacher, tr, dv, TrainConfig(epochs=2, seed=1))
    student = models.new_model("ner-maxent", tags, bits=10)
    student, manifest = train(
        student, tr, dv, TrainConfig(epochs=2, seed=1),
        distill_cfg=DistillConfig("2a", temperature=2.0, anneal_rate=1.0), teacher=teacher,
    )
    assert manifest.config["distill"]["case"] == "2a"
    assert len(manifest.history) == 2


def test_pseudo_label_records_marks_provenance():
    tr, dv, tags = _tiny_chain()
    teacher = models.new_model("ner-crf", tags, bits=10)
    unlabeled = [corpus.SentenceRecord(r.tokens) for r in dv]
    labeled = pseudo_label_records(teacher, unlabeled)
    assert all(r.provenance == "pseudo-labeled" for r in labeled)
    assert all(isinstance(r.gold, TagSequence) for r in labeled)


def test_grid_search_shapes_and_best():
    tr, dv, tags = _tiny_chain(n_train=16)
    teacher = models.new_model("ner-crf", tags, bits=10)
    teacher, _ = train(teacher, tr, dv, TrainConfig(epochs=1, seed=1))
    res = distill_grid_search(
        "2a", teacher, lambda: models.new_model("ner-maxent", tags, bits=10),
        tr, dv, TrainConfig(epochs=1),
        temperatures=(1.0, 2.0), rates=(1.0,), seeds=(1, 2),
    )
    assert len(res.rows) == 2
    assert res.best in res.rows
    assert res.best_config().case == "2a"


def test_evaluate_span_model():
    recs, types = corpus.synth_generate("spans", 12, max_len=6, seed=3)
    model = models.new_model("ner-span", types, bits=10)
    metric, detail = evaluate(model, recs)
    assert 0.0 <= metric <= 1.0 and "f1" in detail


def test_manifest_csv_shape():
    tr, dv, tags = _tiny_chain()
    model = models.new_model("ner-maxent", tags, bits=10)
    _, manifest = train(model, tr, dv, TrainConfig(epochs=2, seed=1))
    lines = manifest.history_csv().strip().split("\n")
    assert lines[0] == "epoch,train_loss,dev_metric"
    assert len(lines) == 3
