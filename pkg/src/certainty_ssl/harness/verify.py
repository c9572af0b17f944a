"""Self-checks of the numerical core against independent oracles.

Each check reports what it measured and the tolerance it used. ``backward_fn``
can be swapped for a deliberately broken implementation to confirm that the
gradient check actually fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import ccl, nn, trainer
from ..data import gen_two_moons, split_semi_supervised
from ..oracles import binomial_within, ema_closed_form, naive_predictive_variance, numerical_gradient, relative_error
from ..uncertainty import predictive_variance


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: str
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<22} measured={self.measured:.3g}  tol: {self.tolerance}  {self.detail}".rstrip()


def check_backward(backward_fn: Callable = nn.backward, n_models: int = 100) -> CheckResult:
    worst = 0.0
    for seed in range(n_models):
        rng = np.random.default_rng(seed)
        model = nn.init_mlp((3, 5, 4, 3), 0.3, rng)
        for b in model.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x, y = rng.normal(size=(5, 3)), rng.integers(0, 3, size=5)
        _, cache = nn.forward(model, x, nn.Perturbation(0.1, True, rng))

        def loss():
            return float(nn.cross_entropy(nn.softmax(nn.replay(model, cache)), y)[0].sum())

        _, g = nn.cross_entropy(nn.softmax(nn.replay(model, cache)), y)
        analytic = backward_fn(model, cache, g)
        worst = max(worst, relative_error(analytic, numerical_gradient(loss, model.params())))
    return CheckResult("backward_fd", worst < 1e-4, worst, "rel err < 1e-4", f"{n_models} random MLPs")


def check_consistency_grad() -> CheckResult:
    worst = 0.0
    rng = np.random.default_rng(1)
    for t in (0.5, 1.0, 5.0, 20.0):
        zs, zt = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        keep = rng.random(6) < 0.7
        _, g = ccl.consistency_loss(zs, zt, t, keep)
        num = numerical_gradient(lambda: ccl.consistency_loss(zs, zt, t, keep)[0], [zs])[0]
        worst = max(worst, relative_error(g, num))
    return CheckResult("consistency_fd", worst < 1e-4, worst, "rel err < 1e-4", "T in {0.5,1,5,20}")


def check_predictive_variance(n_stacks: int = 200) -> CheckResult:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(n_stacks):
        k, b, c = rng.integers(2, 12), rng.integers(1, 8), rng.integers(2, 6)
        e = np.exp(rng.normal(size=(k, b, c)) * 2)
        stack = e / e.sum(axis=2, keepdims=True)
        worst = max(worst, float(np.max(np.abs(predictive_variance(stack) - naive_predictive_variance(stack)))))
    return CheckResult("pv_bruteforce", worst < 1e-12, worst, "max abs < 1e-12", f"{n_stacks} stacks")


def check_ema() -> CheckResult:
    rng = np.random.default_rng(3)
    teacher = nn.init_mlp((2, 6, 3), 0.0, rng)
    w0 = [p.copy() for p in teacher.params()]
    history = []
    for _ in range(50):
        student = nn.init_mlp((2, 6, 3), 0.0, rng)
        trainer.ema_update(teacher, student, 0.95)
        history.append([p.copy() for p in student.params()])
    worst = 0.0
    for j, p in enumerate(teacher.params()):
        worst = max(worst, float(np.max(np.abs(p - ema_closed_form(w0[j], [h[j] for h in history], 0.95)))))
    return CheckResult("ema_closed_form", worst < 1e-12, worst, "max abs < 1e-12", "50 updates")


def check_mask_statistics(n_draws: int = 10_000) -> CheckResult:
    rng = np.random.default_rng(4)
    n, p_max = 32, 0.8
    ranks = np.arange(1, n + 1)
    dropped = np.zeros(n, dtype=np.int64)
    for _ in range(n_draws):
        dropped += ~ccl.prob_filter_mask(ranks, p_max, rng)
    probs = ccl.filter_out_probabilities(ranks, p_max)
    ok = [binomial_within(int(dropped[i]), n_draws, float(probs[i]), 3.0) for i in range(n)]
    sd = np.sqrt(n_draws * probs * (1 - probs))
    z = np.where(sd > 0, np.abs(dropped - n_draws * probs) / np.where(sd > 0, sd, 1), 0.0)
    return CheckResult("mask_binomial", all(ok), float(z.max()), "|z| <= 3 per rank", f"{n_draws} draws")


def check_gradient_scaling() -> CheckResult:
    lo, hi = np.inf, -np.inf
    for t in (25.0, 50.0, 100.0):
        rng = np.random.default_rng(int(t))
        for _ in range(100):
            zs, zt = rng.normal(size=(1, 10)), rng.normal(size=(1, 10))
            r = np.linalg.norm(ccl.consistency_loss(zs, zt, t)[1]) / np.linalg.norm(ccl.consistency_loss(zs, zt, 2 * t)[1])
            lo, hi = min(lo, r), max(hi, r)
    ok = 3.6 <= lo and hi <= 4.4
    return CheckResult("grad_ratio_T_2T", ok, hi if abs(hi - 4) > abs(lo - 4) else lo, "ratio in [3.6, 4.4]",
                       f"range [{lo:.3f}, {hi:.3f}]")


def check_hard_filter() -> CheckResult:
    bad = 0
    for epoch in range(1, 51):
        for n in (1, 7, 32, 64):
            ranks = np.random.default_rng(epoch * 100 + n).permutation(n) + 1
            kept = int(ccl.hard_filter_mask(ranks, epoch, 8.0).sum())
            bad += kept != min(n, int(np.ceil(8.0 * epoch)))
    return CheckResult("hard_filter_count", bad == 0, float(bad), "exact", "epochs 1..50")


def check_determinism() -> CheckResult:
    ds = split_semi_supervised(gen_two_moons(60, 0.1, seed=5, n_test=30), 6, seed=6)
    cfg = trainer.TrainerConfig(epochs=3, batch_size=16, labeled_per_batch=4, hidden=(8, 8), mc_passes=4,
                                n_pairs=2, seed=7, weights=ccl.ConsistencyWeights(5.0, 2))
    a, b = trainer.train(cfg, ds), trainer.train(cfg, ds)
    same = [r.pairs for r in a.records] == [r.pairs for r in b.records] and all(
        np.array_equal(x, y)
        for pa, pb in zip(a.circle.pairs, b.circle.pairs)
        for x, y in zip(pa.teacher.params() + pa.student.params(), pb.teacher.params() + pb.student.params())
    )
    return CheckResult("determinism", same, 0.0 if same else 1.0, "bit-identical", "two runs, same seed")


def verify(backward_fn: Callable = nn.backward, report: Callable[[str], None] | None = print) -> list[CheckResult]:
    checks = [
        lambda: check_backward(backward_fn), check_consistency_grad, check_predictive_variance, check_ema,
        check_mask_statistics, check_gradient_scaling, check_hard_filter, check_determinism,
    ]
    results = []
    t0 = time.perf_counter()
    for check in checks:
        r = check()
        results.append(r)
        if report:
            report(r.line())
    if report:
        n_ok = sum(r.passed for r in results)
        report(f"{n_ok}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    return results


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
