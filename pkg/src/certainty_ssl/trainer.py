"""Student/teacher training with EMA teachers and the decoupled teacher circle.

With ``n_pairs == 1`` the single student learns from its own EMA teacher
(Mean Teacher wiring). With ``n > 1`` student ``i`` learns from teacher
``i - 1 (mod n)`` while every teacher keeps averaging its own student.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ccl
from .ccl import ConsistencyWeights, FilterConfig, TemperatureConfig
from .data import Dataset
from .nn import DETERMINISTIC, MLP, SGD, Perturbation, backward, forward, init_mlp
from .uncertainty import estimate_uncertainty

log = logging.getLogger(__name__)

# spawn keys for the per-pair random streams
INIT, STUDENT_NOISE, TARGET_NOISE, MC_NOISE, MASKS, PAIR_BATCHES = range(6)
SHARED_BATCHES = 1_000_003


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; stable across numpy versions."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(keys)))


@dataclass
class TrainerConfig:
    epochs: int = 50
    batch_size: int = 64
    labeled_per_batch: int = 16
    ema_decay: float = 0.99
    n_pairs: int = 1
    seed: int = 0
    lr: float = 0.05
    momentum: float = 0.9
    hidden: tuple[int, ...] = (64, 64)
    dropout: float = 0.2
    input_noise: float = 0.1
    mc_passes: int = 10
    filter: FilterConfig = field(default_factory=FilterConfig)
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)
    weights: ConsistencyWeights = field(default_factory=ConsistencyWeights)
    independent_batches: bool = False

    def validate(self) -> None:
        checks = [
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (1 <= self.labeled_per_batch <= self.batch_size, "labeled_per_batch must be in [1, batch_size]"),
            (0.0 <= self.ema_decay < 1.0, "ema_decay must be in [0, 1)"),
            (self.n_pairs >= 1, "n_pairs must be >= 1"),
            (self.lr >= 0, "lr must be >= 0"),
            (0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)"),
            (all(h >= 1 for h in self.hidden), "hidden sizes must be >= 1"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (self.input_noise >= 0, "input_noise must be >= 0"),
            (self.mc_passes >= 2, "mc_passes must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def uses_uncertainty(self) -> bool:
        return self.filter.mode != "none" or self.temperature.enabled


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray   # visible labels, -1 for unlabeled rows
    labeled: np.ndarray  # bool

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class StudentTeacherPair:
    student: MLP
    teacher: MLP
    optimizer: SGD
    rngs: dict[int, np.random.Generator]


@dataclass
class TeacherCircle:
    pairs: list[StudentTeacherPair]

    def __len__(self) -> int:
        return len(self.pairs)

    def source(self, i: int) -> int:
        """Index of the teacher that supplies targets to student ``i``."""
        return (i - 1) % len(self.pairs)

    @property
    def wiring(self) -> list[int]:
        return [self.source(i) for i in range(len(self.pairs))]


def ema_update(teacher: MLP, student: MLP, decay: float) -> MLP:
    """In place: ``teacher <- decay * teacher + (1 - decay) * student``."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("ema decay must be in [0, 1)")
    if not teacher.same_architecture(student):
        raise ValueError(f"architecture mismatch: teacher {teacher.sizes} vs student {student.sizes}")
    for t, s in zip(teacher.params(), student.params()):
        t *= decay
        t += (1.0 - decay) * s
    return teacher


def build_circle(n: int, sizes: tuple[int, ...], seed: int, dropout: float = 0.2,
                 lr: float = 0.05, momentum: float = 0.9) -> TeacherCircle:
    """``n`` pairs, each with its own initialization and noise streams. Teachers start as student copies."""
    if n < 1:
        raise ValueError("a teacher circle needs at least one pair")
    pairs = []
    for i in range(n):
        student = init_mlp(sizes, dropout, stream(seed, i, INIT))
        rngs = {k: stream(seed, i, k) for k in (STUDENT_NOISE, TARGET_NOISE, MC_NOISE, MASKS, PAIR_BATCHES)}
        pairs.append(StudentTeacherPair(student, student.copy(), SGD(lr, momentum), rngs))
    return TeacherCircle(pairs)


@dataclass
class StepMetrics:
    supervised: float
    consistency: float
    total: float
    kept: int
    batch_size: int
    mean_temperature: float
    target_teacher: int

    @property
    def kept_fraction(self) -> float:
        return self.kept / self.batch_size


def consistency_plan(report_ranks: np.ndarray | None, n: int, epoch: int, cfg: TrainerConfig,
                     rng: np.random.Generator) -> tuple[np.ndarray | None, np.ndarray | float]:
    """Keep mask and per-sample temperatures for one student's batch."""
    keep = None
    temps: np.ndarray | float = 1.0
    if report_ranks is None:
        return keep, temps
    fc = cfg.filter
    if fc.mode != "none":
        hard = ccl.hard_filter_mask(report_ranks, epoch, fc.beta) if fc.mode != "probabilistic" \
            else np.ones(n, dtype=bool)
        prob = ccl.prob_filter_mask(report_ranks, ccl.p_max_schedule(epoch, fc.rho, fc.E), rng) \
            if fc.mode != "hard" else np.ones(n, dtype=bool)
        keep = ccl.combine_masks(hard, prob, fc.mode)
    if cfg.temperature.enabled:
        tc = cfg.temperature
        temps = ccl.per_sample_temperatures(report_ranks, ccl.t_max_schedule(epoch, tc), tc.t_min)
    return keep, temps


def train_step(circle: TeacherCircle, batches: Batch | list[Batch], epoch: int,
               cfg: TrainerConfig) -> list[StepMetrics]:
    """One optimizer step for every student, then the EMA update of every teacher."""
    if isinstance(batches, Batch):
        batches = [batches] * len(circle)
    if any(len(b) == 0 for b in batches):
        raise ValueError("empty batch")
    weight = ccl.ramp_up_weight(epoch, cfg.weights)
    metrics = []
    for i, (pair, batch) in enumerate(zip(circle.pairs, batches)):
        src = circle.source(i)
        assert len(circle) == 1 or src != i, "student taught by its own teacher"
        teacher = circle.pairs[src].teacher
        n = len(batch)
        keep, temps, teacher_logits = None, 1.0, None
        if weight > 0:
            if cfg.uses_uncertainty:
                report = estimate_uncertainty(teacher, batch.inputs, cfg.mc_passes,
                                              pair.rngs[MC_NOISE], cfg.input_noise)
                keep, temps = consistency_plan(report.ranks, n, epoch, cfg, pair.rngs[MASKS])
            teacher_logits, _ = forward(teacher, batch.inputs,
                                        Perturbation(cfg.input_noise, True, pair.rngs[TARGET_NOISE]))
        logits, cache = forward(pair.student, batch.inputs,
                                Perturbation(cfg.input_noise, True, pair.rngs[STUDENT_NOISE]))
        parts = ccl.total_loss(logits, teacher_logits, batch.labels, batch.labeled, temps, keep, weight)
        pair.optimizer.step(pair.student, backward(pair.student, cache, parts.grad))
        metrics.append(StepMetrics(
            supervised=parts.supervised, consistency=parts.consistency, total=parts.total,
            kept=n if keep is None else int(keep.sum()), batch_size=n,
            mean_temperature=float(np.mean(temps)), target_teacher=src))
    for pair in circle.pairs:
        ema_update(pair.teacher, pair.student, cfg.ema_decay)
    return metrics


def evaluate(model: MLP, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of the deterministic forward pass; argmax ties go to the lower class."""
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    logits, _ = forward(model, inputs, DETERMINISTIC)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def epoch_batches(labeled_idx: np.ndarray, unlabeled_idx: np.ndarray, batch_size: int,
                  labeled_per_batch: int, rng: np.random.Generator):
    """Yield index arrays, labeled rows first.

    Every batch holds ``labeled_per_batch`` labeled rows (drawn with
    replacement when the pool is smaller) and fills the rest from one pass
    over the shuffled unlabeled pool, dropping the incomplete tail.
    """
    n_unl = batch_size - labeled_per_batch if unlabeled_idx.size else 0
    n_lab = batch_size - n_unl
    if n_unl:
        n_steps = max(1, unlabeled_idx.size // n_unl)
        if unlabeled_idx.size >= n_unl:
            unl = rng.permutation(unlabeled_idx)
        else:
            unl = rng.choice(unlabeled_idx, size=n_unl, replace=True)
    else:
        n_steps = max(1, labeled_idx.size // n_lab)
    for s in range(n_steps):
        lab = rng.choice(labeled_idx, size=n_lab, replace=labeled_idx.size < n_lab)
        if n_unl:
            yield np.concatenate([lab, unl[s * n_unl:(s + 1) * n_unl]]), n_lab
        else:
            yield lab, n_lab


@dataclass
class PairEpoch:
    supervised_loss: float
    consistency_loss: float
    kept_fraction: float
    mean_temperature: float
    student_train_acc: float
    student_test_acc: float
    teacher_train_acc: float
    teacher_test_acc: float
    kept_counts: list[int] = field(default_factory=list)
    batch_sizes: list[int] = field(default_factory=list)


@dataclass
class EpochRecord:
    epoch: int
    pairs: list[PairEpoch]

    @property
    def student_test_acc(self) -> float:
        return float(np.mean([p.student_test_acc for p in self.pairs]))

    @property
    def teacher_test_acc(self) -> float:
        return float(np.mean([p.teacher_test_acc for p in self.pairs]))


@dataclass
class RunHistory:
    seed: int
    records: list[EpochRecord]
    circle: TeacherCircle

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> EpochRecord | None:
        return self.records[-1] if self.records else None


def _check_dataset(ds: Dataset) -> None:
    visible = ds.visible_labels()[ds.train_idx]
    present = set(visible[visible >= 0].tolist())
    missing = sorted(set(range(ds.n_classes)) - present)
    if missing:
        raise ValueError(f"no labeled training sample for classes {missing}")
    if ds.test_idx.size == 0:
        raise ValueError("dataset has no test split")


def train(cfg: TrainerConfig, ds: Dataset) -> RunHistory:
    cfg.validate()
    _check_dataset(ds)
    sizes = (ds.n_features, *cfg.hidden, ds.n_classes)
    circle = build_circle(cfg.n_pairs, sizes, cfg.seed, cfg.dropout, cfg.lr, cfg.momentum)
    labels = ds.visible_labels()
    train_mask = np.zeros(len(labels), dtype=bool)
    train_mask[ds.train_idx] = True
    labeled_idx = np.flatnonzero(train_mask & ds.labeled)
    unlabeled_idx = np.flatnonzero(train_mask & ~ds.labeled)
    x_train = ds.features[ds.train_idx]
    y_train = ds.diagnostic_labels()[ds.train_idx]
    x_test, y_test = ds.test_set()
    shared_rng = stream(cfg.seed, SHARED_BATCHES)

    def make_batches(rng):
        return [Batch(ds.features[idx], labels[idx], np.arange(len(idx)) < n_lab)
                for idx, n_lab in epoch_batches(labeled_idx, unlabeled_idx, cfg.batch_size,
                                                cfg.labeled_per_batch, rng)]

    records = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.independent_batches:
            per_pair = [make_batches(p.rngs[PAIR_BATCHES]) for p in circle.pairs]
            n_steps = min(len(b) for b in per_pair)
            steps = [[b[s] for b in per_pair] for s in range(n_steps)]
        else:
            steps = make_batches(shared_rng)
        step_metrics = [train_step(circle, batch, epoch, cfg) for batch in steps]
        pairs = []
        for i, pair in enumerate(circle.pairs):
            ms = [m[i] for m in step_metrics]
            pairs.append(PairEpoch(
                supervised_loss=float(np.mean([m.supervised for m in ms])),
                consistency_loss=float(np.mean([m.consistency for m in ms])),
                kept_fraction=float(np.mean([m.kept_fraction for m in ms])),
                mean_temperature=float(np.mean([m.mean_temperature for m in ms])),
                student_train_acc=evaluate(pair.student, x_train, y_train),
                student_test_acc=evaluate(pair.student, x_test, y_test),
                teacher_train_acc=evaluate(pair.teacher, x_train, y_train),
                teacher_test_acc=evaluate(pair.teacher, x_test, y_test),
                kept_counts=[m.kept for m in ms],
                batch_sizes=[m.batch_size for m in ms]))
        records.append(EpochRecord(epoch, pairs))
        log.debug("epoch %d student %.4f teacher %.4f", epoch,
                  records[-1].student_test_acc, records[-1].teacher_test_acc)
    return RunHistory(cfg.seed, records, circle)
