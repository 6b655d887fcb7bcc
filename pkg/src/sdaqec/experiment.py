"""Seeded small-scale comparison of augmented vs. unaugmented training on generated textures."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .diffusion import AugmentConfig
from .evaluation import MetricSet, evaluate
from .synthetic import make_corpus
from .trainer import TrainConfig, train

DESK_LR = 1e-3


@dataclass
class ArmResult:
    seed: int
    augmented: bool
    metrics: MetricSet
    epochs: int
    seconds: float


def run_arm(seed: int, augmented: bool, lr: float = DESK_LR, size: int = 64) -> ArmResult:
    """Train on a 300/60 corpus, select on a 60/12 validation set, score on 60/60 held-out images."""
    train_set = make_corpus(300, 60, size, seed=1000 + seed, prefix="tr")
    val_set = make_corpus(60, 12, size, seed=2000 + seed, prefix="va")
    test_set = make_corpus(60, 60, size, seed=3000 + seed, prefix="te")
    x_te, y_te = test_set.arrays()
    start = time.perf_counter()
    cfg = TrainConfig(lr=lr, seed=seed, use_diffusion=augmented, use_quantum=True)
    model, hist, _ = train(train_set, val_set, cfg, AugmentConfig(seed=seed))
    scores = model.predict_proba(x_te)[:, 1]
    _, metrics = evaluate(scores, y_te)
    return ArmResult(seed, augmented, metrics, len(hist), time.perf_counter() - start)


def desk_comparison(seeds=range(5), lr: float = DESK_LR, log=None) -> list[tuple[ArmResult, ArmResult]]:
    """(baseline, augmented) result pairs, one per seed."""
    pairs = []
    for seed in seeds:
        base = run_arm(seed, False, lr)
        aug = run_arm(seed, True, lr)
        if log:
            for r in (base, aug):
                log(
                    f"seed {r.seed} {'augmented' if r.augmented else 'baseline '} "
                    f"recall={r.metrics.recall:.3f} f1={r.metrics.f1:.3f} epochs={r.epochs} {r.seconds:.0f}s"
                )
        pairs.append((base, aug))
    return pairs
