from dataclasses import replace

import numpy as np
import pytest

from certainty_ssl import ccl, trainer
from certainty_ssl.ccl import ConsistencyWeights, FilterConfig, TemperatureConfig
from certainty_ssl.data import gen_two_moons, split_semi_supervised
from certainty_ssl.nn import MLP, SGD, Perturbation, backward, forward, init_mlp
from certainty_ssl.oracles import ema_closed_form
from certainty_ssl.trainer import (
    Batch, TrainerConfig, build_circle, ema_update, epoch_batches, evaluate, stream, train,
    train_step,
)


def small_cfg(**kw):
    base = dict(epochs=3, batch_size=16, labeled_per_batch=4, hidden=(8, 8), mc_passes=4,
                weights=ConsistencyWeights(5.0, 2), seed=3)
    base.update(kw)
    return TrainerConfig(**base)


@pytest.fixture(scope="module")
def moons():
    return split_semi_supervised(gen_two_moons(80, 0.1, seed=1, n_test=40), 6, seed=2)


def params_of(model):
    return [p.copy() for p in model.params()]


def assert_same_params(a, b):
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


# EMA

def test_ema_zero_decay_copies_student():
    rng = np.random.default_rng(0)
    t, s = init_mlp((2, 3, 2), 0.0, rng), init_mlp((2, 3, 2), 0.0, rng)
    ema_update(t, s, 0.0)
    assert_same_params(t.params(), s.params())


def test_ema_single_value():
    t = MLP([np.ones((1, 1))], [np.zeros(1)], [0.0])
    s = MLP([np.zeros((1, 1))], [np.zeros(1)], [0.0])
    ema_update(t, s, 0.99)
    assert t.weights[0][0, 0] == pytest.approx(0.99, abs=1e-15)


def test_ema_repeated_against_fixed_student():
    t = MLP([np.full((1, 1), 2.0)], [np.zeros(1)], [0.0])
    s = MLP([np.full((1, 1), -1.0)], [np.zeros(1)], [0.0])
    for _ in range(25):
        ema_update(t, s, 0.9)
    expected = 0.9 ** 25 * 2.0 + (1 - 0.9 ** 25) * -1.0
    assert abs(t.weights[0][0, 0] - expected) < 1e-12


def test_ema_architecture_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="architecture mismatch"):
        ema_update(init_mlp((2, 3, 2), 0.0, rng), init_mlp((2, 4, 2), 0.0, rng), 0.5)


def test_ema_matches_closed_form_over_training_history(moons):
    cfg = small_cfg(epochs=1, ema_decay=0.8)
    sizes = (2, 8, 8, 2)
    circle = build_circle(1, sizes, cfg.seed, cfg.dropout, cfg.lr, cfg.momentum)
    pair = circle.pairs[0]
    w0 = params_of(pair.teacher)
    history = []
    labels = moons.visible_labels()
    lab = np.flatnonzero(moons.labeled)
    unl = np.setdiff1d(moons.train_idx, lab)
    for idx, n_lab in epoch_batches(lab, unl, 16, 4, np.random.default_rng(0)):
        train_step(circle, Batch(moons.features[idx], labels[idx], np.arange(16) < n_lab), 1, cfg)
        history.append(params_of(pair.student))
    for j, p in enumerate(pair.teacher.params()):
        expected = ema_closed_form(w0[j], [h[j] for h in history], 0.8)
        assert np.max(np.abs(p - expected)) < 1e-12


# circle

def test_circle_wiring():
    sizes = (2, 4, 2)
    assert build_circle(1, sizes, 0).wiring == [0]
    assert build_circle(2, sizes, 0).wiring == [1, 0]
    # 1-based: students 1..3 learn from teachers 3, 1, 2
    assert [s + 1 for s in build_circle(3, sizes, 0).wiring] == [3, 1, 2]
    with pytest.raises(ValueError):
        build_circle(0, sizes, 0)


def test_pairs_are_independently_initialized():
    circle = build_circle(2, (2, 4, 2), seed=0)
    a, b = circle.pairs
    assert not np.array_equal(a.student.weights[0], b.student.weights[0])
    assert_same_params(a.student.params(), a.teacher.params())


def test_circle_never_self_teaches_for_n_above_one():
    for n in (2, 3, 5):
        circle = build_circle(n, (2, 4, 2), 0)
        assert all(circle.source(i) != i for i in range(n))
        assert sorted(circle.wiring) == list(range(n))


# evaluate

def test_evaluate_constant_prediction():
    model = MLP([np.zeros((2, 3))], [np.array([0.0, 1.0, 0.0])], [0.0])
    assert evaluate(model, np.random.default_rng(0).normal(size=(7, 2)), np.ones(7, int)) == 1.0


def test_evaluate_empty():
    model = MLP([np.zeros((2, 3))], [np.zeros(3)], [0.0])
    with pytest.raises(ValueError, match="empty evaluation set"):
        evaluate(model, np.zeros((0, 2)), np.zeros(0, int))


def test_evaluate_matches_loop_and_breaks_ties_low():
    rng = np.random.default_rng(1)
    model = init_mlp((2, 5, 3), 0.5, rng)
    x, y = rng.normal(size=(50, 2)), rng.integers(0, 3, 50)
    logits, _ = forward(model, x)
    correct = 0
    for row, label in zip(logits, y):
        best = 0
        for c in range(1, 3):
            if row[c] > row[best]:
                best = c
        correct += best == label
    assert evaluate(model, x, y) == correct / 50
    tie = MLP([np.zeros((2, 3))], [np.array([1.0, 1.0, 0.0])], [0.0])
    assert evaluate(tie, np.zeros((1, 2)), np.array([0])) == 1.0


# batching

def test_epoch_batches_composition():
    lab, unl = np.arange(6), np.arange(6, 106)
    batches = list(epoch_batches(lab, unl, 16, 4, np.random.default_rng(0)))
    assert len(batches) == 100 // 12
    seen = np.concatenate([b[4:] for b, _ in batches])
    assert len(set(seen.tolist())) == seen.size and set(seen.tolist()) <= set(unl.tolist())
    for b, n_lab in batches:
        assert n_lab == 4 and len(b) == 16 and set(b[:4].tolist()) <= set(lab.tolist())


def test_epoch_batches_scarce_labels_resampled():
    batches = list(epoch_batches(np.arange(2), np.arange(2, 50), 16, 6, np.random.default_rng(0)))
    assert all(set(b[:6].tolist()) <= {0, 1} for b, _ in batches)


# train_step and train

def test_empty_batch_rejected():
    circle = build_circle(1, (2, 4, 2), 0)
    with pytest.raises(ValueError, match="empty batch"):
        train_step(circle, Batch(np.zeros((0, 2)), np.zeros(0, int), np.zeros(0, bool)), 1, small_cfg())


def test_zero_epochs(moons):
    h = train(small_cfg(epochs=0), moons)
    assert len(h) == 0
    fresh = build_circle(1, (2, 8, 8, 2), 3, 0.2)
    assert_same_params(h.circle.pairs[0].student.params(), fresh.pairs[0].student.params())


def test_history_shape(moons):
    h = train(small_cfg(epochs=4, n_pairs=2), moons)
    assert len(h) == 4
    for rec in h.records:
        assert len(rec.pairs) == 2
        for p in rec.pairs:
            assert 0 <= p.student_test_acc <= 1 and 0 <= p.teacher_test_acc <= 1


def test_invalid_config_raises_before_training(moons):
    with pytest.raises(ValueError, match="labeled_per_batch"):
        train(small_cfg(labeled_per_batch=32), moons)
    with pytest.raises(ValueError, match="ema_decay"):
        train(small_cfg(ema_decay=1.0), moons)


def test_missing_class_label_rejected(moons):
    ds = moons.replace(labeled=moons.labeled & (moons.labels == 0))
    with pytest.raises(ValueError, match="no labeled training sample"):
        train(small_cfg(), ds)


def test_reproducible(moons):
    cfg = small_cfg(n_pairs=2)
    a, b = train(cfg, moons), train(cfg, moons)
    assert [r.pairs for r in a.records] == [r.pairs for r in b.records]
    assert_same_params(a.circle.pairs[1].teacher.params(), b.circle.pairs[1].teacher.params())


def test_teacher_changes_only_through_ema(moons, monkeypatch):
    calls = []
    real = trainer.ema_update

    def spy(t, s, d):
        calls.append(1)
        return real(t, s, d)

    monkeypatch.setattr(trainer, "ema_update", spy)
    cfg = small_cfg(epochs=1, n_pairs=2, ema_decay=0.0)
    h = train(cfg, moons)
    assert len(calls) == 2 * len(h.records[0].pairs[0].kept_counts)
    # decay 0 means teacher == own student after every step
    for pair in h.circle.pairs:
        assert_same_params(pair.teacher.params(), pair.student.params())


def test_hidden_labels_never_reach_the_loss(moons):
    cfg = small_cfg()
    poisoned = moons.labels.copy()
    unl = ~moons.labeled
    poisoned[unl] = (poisoned[unl] + 1) % 2
    ds2 = moons.replace(labels=poisoned, clean_labels=moons.labels.copy())
    a, b = train(cfg, moons), train(cfg, ds2)
    for ra, rb in zip(a.records, b.records):
        for pa, pb in zip(ra.pairs, rb.pairs):
            assert pa.supervised_loss == pb.supervised_loss
            assert pa.consistency_loss == pb.consistency_loss
    assert_same_params(a.circle.pairs[0].student.params(), b.circle.pairs[0].student.params())


def test_all_masked_step_equals_supervised_step(moons, monkeypatch):
    cfg = small_cfg(filter=FilterConfig(mode="hard"))
    x = moons.features[:16]
    labels = np.where(np.arange(16) < 4, moons.labels[:16], -1)
    batch = Batch(x, labels, np.arange(16) < 4)
    monkeypatch.setattr(trainer, "consistency_plan",
                        lambda ranks, n, e, c, rng: (np.zeros(n, bool), 1.0))
    circle = build_circle(1, (2, 8, 8, 2), 0, cfg.dropout)
    ref = build_circle(1, (2, 8, 8, 2), 0, cfg.dropout)
    train_step(circle, batch, 1, cfg)
    # the supervised-only counterpart: same student noise stream, CE only
    pair = ref.pairs[0]
    logits, cache = forward(pair.student, x, Perturbation(cfg.input_noise, True, pair.rngs[trainer.STUDENT_NOISE]))
    _, grad = ccl.supervised_loss(logits, labels, np.arange(16) < 4)
    pair.optimizer.step(pair.student, backward(pair.student, cache, grad))
    assert_same_params(circle.pairs[0].student.params(), pair.student.params())


def test_hard_filter_kept_counts_follow_ramp(moons):
    cfg = small_cfg(epochs=6, filter=FilterConfig(beta=3.0, mode="hard"),
                    weights=ConsistencyWeights(1.0, 1), temperature=TemperatureConfig(enabled=False))
    h = train(cfg, moons)
    for rec in h.records:
        for p in rec.pairs:
            assert p.kept_counts == [min(b, int(np.ceil(3.0 * rec.epoch))) for b in p.batch_sizes]


def test_independent_batches_differ(moons):
    h = train(small_cfg(epochs=1, n_pairs=2, independent_batches=True), moons)
    a, b = h.records[0].pairs
    assert a.supervised_loss != b.supervised_loss


def test_stream_is_stable():
    # frozen: guards the seed-derivation scheme against silent changes
    assert stream(0, 1, 2).integers(0, 2**31) == stream(0, 1, 2).integers(0, 2**31)
    assert stream(0, 1, 2).random() != stream(0, 2, 1).random()
