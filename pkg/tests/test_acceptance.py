"""One test per acceptance criterion; each prints a PASS/FAIL line in the run summary."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from qoracle import dense_cnot, dense_ry
from sdaqec.data_io import Dataset, LabeledSample
from sdaqec.diffusion import AugmentConfig, augment_minority, forward_diffuse, linear_beta_schedule, synthesis_count
from sdaqec.evaluation import ConfusionMatrix, bootstrap, frechet_distance, metrics_from_confusion, relative_improvement, roc_auc
from sdaqec.experiment import desk_comparison
from sdaqec.neural import (
    Extractor,
    ExtractorConfig,
    NormState,
    Parameter,
    add,
    backward,
    batch_norm,
    conv2d,
    depthwise_conv2d,
    global_average_pool,
    linear,
    pointwise_conv2d,
    reduce_features,
    relu,
)
from sdaqec.quantum import CircuitParams, HeadParams, QuantumHead, circuit_gradients, cnot_array, quantum_forward, ry_array, z_expectations


def test_c01_metric_fidelity(criterion):
    start = time.perf_counter()
    best = metrics_from_confusion(ConfusionMatrix(tp=59, fp=1, tn=59, fn=1))
    weak = metrics_from_confusion(ConfusionMatrix(tp=60, fp=47, tn=13, fn=0))
    names = ("accuracy", "precision", "recall", "specificity", "f1")
    ok = all(abs(getattr(best, n) - 0.9833) <= 5e-5 for n in names)
    ok &= weak.recall == 1.0 and round(weak.specificity, 4) == 0.2167
    ok &= abs(weak.precision - 0.5610) <= 5e-3 and abs(weak.f1 - 0.7191) <= 5e-3
    elapsed = time.perf_counter() - start
    criterion(1, "metric fidelity", ok and elapsed < 1.0,
              f"best {best.accuracy:.4f}, weak precision {weak.precision:.4f} f1 {weak.f1:.4f}, {elapsed * 1e3:.1f} ms")


def test_c02_synthesis_count(criterion):
    ok = synthesis_count(280, 102, 0.7) == 94
    rng = np.random.default_rng(2)
    img = np.zeros((1, 1, 1))
    bad = []
    for _ in range(100):
        n_maj = int(rng.integers(1, 400))
        n_min = int(rng.integers(1, n_maj + 1))
        d = Dataset([LabeledSample(img, 0, source_id="a")] * n_maj + [LabeledSample(img, 1, source_id="b")] * n_min)
        got = augment_minority(d, AugmentConfig()).class_counts[1]
        expect = max(n_min, math.ceil(Fraction(7, 10) * n_maj))
        if got != expect:
            bad.append((n_maj, n_min, got, expect))
    criterion(2, "synthesis count", ok and not bad, f"M(280,102)=94; {100 - len(bad)}/100 random pairs match")


def test_c03_relative_improvement(criterion):
    cases = [((0.9833, 0.6083), 61.6), ((0.9878, 0.8119), 21.7), ((0.9833, 0.2167), 353.8)]
    got = [relative_improvement(*args) for args, _ in cases]
    ok = all(abs(g - e) <= 0.1 for g, (_, e) in zip(got, cases))
    criterion(3, "relative improvement", ok, ", ".join(f"{g:.2f}%" for g in got))


def test_c04_schedule(criterion):
    s = linear_beta_schedule(5, 1e-4, 0.02)
    ok = s.betas[0] == 1e-4 and s.betas[-1] == 0.02
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(1000):
        T = int(rng.integers(1, 200))
        b0 = float(rng.uniform(1e-6, 0.2))
        b1 = float(rng.uniform(b0, 0.99))
        sc = linear_beta_schedule(T, b0, b1)
        if not (np.all(np.diff(sc.betas) >= 0) and np.all(np.diff(sc.alpha_bars) < 0) and sc.betas[0] == b0 and (T == 1 or sc.betas[-1] == b1)):
            failures += 1
    criterion(4, "schedule", ok and failures == 0, f"endpoints exact, {1000 - failures}/1000 configs monotone")


def test_c05_diffusion_moments(criterion):
    start = time.perf_counter()
    s = linear_beta_schedule()
    n = 200_000
    worst = 0.0
    for t in range(5):
        rng = np.random.default_rng(100 + t)
        x0 = np.full(n, 0.7)
        xt = forward_diffuse(x0, t, s, rng, clamp=False)
        mean_err = abs(xt.mean() - math.sqrt(s.alpha_bars[t]) * 0.7) / (math.sqrt(s.alpha_bars[t]) * 0.7)
        var_err = abs(xt.var() - (1 - s.alpha_bars[t])) / (1 - s.alpha_bars[t])
        worst = max(worst, mean_err, var_err)
    elapsed = time.perf_counter() - start
    criterion(5, "diffusion moments", worst <= 0.02 and elapsed < 30, f"worst relative error {worst:.4f}, {elapsed:.2f} s")


def test_c06_quantum(criterion):
    rng = np.random.default_rng(6)
    worst_norm = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 5))
        psi = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
        psi /= np.linalg.norm(psi)
        for _ in range(int(rng.integers(1, 12))):
            if n > 1 and rng.random() < 0.4:
                c, t = rng.choice(n, 2, replace=False)
                psi = cnot_array(psi, c, t, n)
            else:
                psi = ry_array(psi, int(rng.integers(n)), rng.uniform(-10, 10), n)
        worst_norm = max(worst_norm, abs(np.linalg.norm(psi) - 1))
        if not np.all(np.abs(z_expectations(psi, n)) <= 1):
            worst_norm = math.inf
    worst_dense = 0.0
    for _ in range(300):
        n = int(rng.integers(1, 5))
        psi = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
        q, th = int(rng.integers(n)), rng.uniform(-7, 7)
        worst_dense = max(worst_dense, np.max(np.abs(ry_array(psi, q, th, n) - dense_ry(n, q, th) @ psi)))
        if n > 1:
            c, t = rng.choice(n, 2, replace=False)
            worst_dense = max(worst_dense, np.max(np.abs(cnot_array(psi, c, t, n) - dense_cnot(n, c, t) @ psi)))
    f = rng.standard_normal((3, 16))
    thetas = rng.uniform(-np.pi, np.pi, (2, 4))
    head = HeadParams(rng.standard_normal((2, 4)), rng.standard_normal(2))
    up = rng.standard_normal((3, 2))

    def obj(th):
        return float(np.sum(up * quantum_forward(f, CircuitParams(thetas=th), head)[0]))

    g = circuit_gradients(f, CircuitParams(thetas=thetas), head, up)["thetas"]
    shift_err = fd_err = 0.0
    for idx in np.ndindex(thetas.shape):
        e = np.zeros_like(thetas)
        e[idx] = 1
        shift = (obj(thetas + e * math.pi / 2) - obj(thetas - e * math.pi / 2)) / 2
        fd = (obj(thetas + e * 1e-6) - obj(thetas - e * 1e-6)) / 2e-6
        shift_err = max(shift_err, abs(g[idx] - shift))
        fd_err = max(fd_err, abs(g[idx] - fd))
    n_params = sum(p.data.size for p in QuantumHead().params.values())
    ok = worst_norm <= 1e-10 and worst_dense <= 1e-10 and shift_err <= 1e-9 and fd_err <= 1e-6 and n_params == 18
    criterion(6, "quantum correctness", ok,
              f"norm {worst_norm:.1e}, dense {worst_dense:.1e}, shift {shift_err:.1e}, fd {fd_err:.1e}, params {n_params}")


def _op_error(build, arrays, seed):
    rng = np.random.default_rng(seed)
    leaves = [Parameter(a) for a in arrays]
    out = build(*leaves)
    w = rng.standard_normal(out.shape)
    backward(out, w)
    return max(rel_error(p.grad, numeric_grad(lambda: float(np.sum(w * build(*leaves).data)), p.data)) for p in leaves)


def test_c07_classical_gradients(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    errors = {}
    for trial in range(3):
        n, c, h = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(4, 7))
        o = int(rng.integers(1, 4))
        s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x = rng.standard_normal((n, c, h, h))
        errors[f"conv2d#{trial}"] = _op_error(lambda a, b: conv2d(a, b, s, p), [x, rng.standard_normal((o, c, 3, 3))], trial)
        errors[f"depthwise#{trial}"] = _op_error(lambda a, b: depthwise_conv2d(a, b, s, p), [x, rng.standard_normal((c, 3, 3))], trial)
        errors[f"pointwise#{trial}"] = _op_error(pointwise_conv2d, [x, rng.standard_normal((o, c))], trial)
        errors[f"relu+add+gap#{trial}"] = _op_error(lambda a, b: global_average_pool(relu(add(a, b))), [x, rng.standard_normal(x.shape)], trial)
        errors[f"linear#{trial}"] = _op_error(linear, [rng.standard_normal((3, 5)), rng.standard_normal((o, 5)), rng.standard_normal(o)], trial)
        errors[f"reduce#{trial}"] = _op_error(reduce_features, [rng.standard_normal((3, 6)), rng.standard_normal((4, 6)), rng.standard_normal(4)], trial)
        for training in (True, False):
            bn = lambda a, g, b: batch_norm(a, g, b, NormState(np.full(c, 0.1), np.full(c, 1.3)), training)
            errors[f"batch_norm[{training}]#{trial}"] = _op_error(bn, [rng.standard_normal((3, c, 2, 2)), rng.standard_normal(c), rng.standard_normal(c)], trial)
    cfg = ExtractorConfig(input=(3, 16, 16), stem_channels=4, blocks=[(2, 6, 2), (2, 6, 1)], feature_dim=8, reduced_dim=4)
    ex = Extractor(cfg, np.random.default_rng(70))
    x = np.random.default_rng(71).uniform(size=(3, 3, 16, 16))
    w = np.random.default_rng(72).standard_normal((3, 4))
    backward(ex.forward(x, True), w)
    for name, prm in ex.params.items():
        errors[f"extractor:{name}"] = rel_error(prm.grad, numeric_grad(lambda: float(np.sum(w * ex.forward(x, True).data)), prm.data))
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    criterion(7, "classical gradients", errors[worst] < 1e-4 and elapsed < 60,
              f"{len(errors)} checks, worst {worst} {errors[worst]:.1e}, {elapsed:.1f} s")


def test_c08_auc_oracle(criterion):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        s = rng.integers(0, int(rng.integers(2, 20)), n) / 7 if rng.random() < 0.5 else rng.uniform(size=n)
        pos, neg = s[y == 1], s[y == 0]
        mw = (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (len(pos) * len(neg))
        worst = max(worst, abs(roc_auc(s, y) - mw))
    example = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    criterion(8, "AUC oracle", worst <= 1e-12 and example == 0.75, f"max deviation {worst:.1e}, example {example}")


def test_c09_bootstrap(criterion):
    rng = np.random.default_rng(9)
    y = np.r_[np.zeros(60), np.ones(60)].astype(int)
    scores = np.clip(0.2 + 0.6 * y + rng.normal(0, 0.2, 120), 0, 1)
    preds = (scores >= 0.5).astype(int)
    a = bootstrap(scores, preds, y, "accuracy", n=500, seed=3)
    b = bootstrap(scores, preds, y, "accuracy", n=500, seed=3)
    deterministic = np.array_equal(a.samples, b.samples)
    perfect = bootstrap(y.astype(float), y, y, "accuracy", n=500, seed=3)
    point = float(np.mean(preds == y))
    close = abs(a.mean - point) <= 0.005
    ok = deterministic and perfect.ci95 == (1.0, 1.0) and close and a.ci95[0] <= a.ci95[1]
    criterion(9, "bootstrap", ok, f"point {point:.4f}, mean {a.mean:.4f}, ci {a.ci95[0]:.3f}..{a.ci95[1]:.3f}")


@pytest.mark.slow
def test_c10_desk_scale(criterion):
    pairs = desk_comparison(range(5), log=print)
    wins = sum(aug.metrics.recall >= base.metrics.recall for base, aug in pairs)
    f1_base = float(np.mean([base.metrics.f1 for base, _ in pairs]))
    f1_aug = float(np.mean([aug.metrics.f1 for _, aug in pairs]))
    slowest = max(r.seconds for pair in pairs for r in pair)
    ok = wins >= 4 and f1_aug > f1_base and slowest < 600
    criterion(10, "desk-scale end to end", ok,
              f"recall >= baseline in {wins}/5 seeds, mean F1 {f1_aug:.3f} vs {f1_base:.3f}, slowest run {slowest:.0f} s")


def test_c11_frechet(criterion):
    rng = np.random.default_rng(11)
    a = rng.standard_normal((5, 5))
    c1 = a @ a.T + np.eye(5)
    b = rng.standard_normal((5, 5))
    c2 = b @ b.T + 0.5 * np.eye(5)
    mu1, mu2 = rng.standard_normal(5), rng.standard_normal(5)
    same = abs(frechet_distance(mu1, c1, mu1, c1))
    one_d = frechet_distance([0.0], [[1.0]], [1.0], [[4.0]])
    asym = abs(frechet_distance(mu1, c1, mu2, c2) - frechet_distance(mu2, c2, mu1, c1))
    criterion(11, "Frechet distance", same <= 1e-10 and one_d == 2.0 and asym <= 1e-10,
              f"identical {same:.1e}, 1-D {one_d}, asymmetry {asym:.1e}")
