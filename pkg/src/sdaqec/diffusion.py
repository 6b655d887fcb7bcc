"""Minority-class synthesis with a short forward-noising schedule plus blur/brightness jitter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data_io import Dataset, LabeledSample, class_distribution


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alpha_bars: np.ndarray


def linear_beta_schedule(T: int = 5, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas evenly spaced from ``beta_start`` to ``beta_end``; alpha_bars[t] = prod_{s<=t} (1 - betas[s])."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    T = int(T)
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        s = np.arange(T, dtype=np.float64)
        betas = beta_start + s / (T - 1) * (beta_end - beta_start)
        betas[-1] = beta_end
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T, float(beta_start), float(beta_end), betas, alpha_bars)


@dataclass
class AugmentConfig:
    balance_target: float = 0.7
    blur_sigma: float = 0.5
    brightness_range: tuple[float, float] = (0.9, 1.1)
    T: int = 5
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0
    schedule: NoiseSchedule = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 < self.balance_target <= 1):
            raise ValueError("balance_target must lie in (0, 1]")
        lo, hi = self.brightness_range
        if not (0 < lo <= hi):
            raise ValueError("brightness_range must satisfy 0 < lo <= hi")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be non-negative")
        self.brightness_range = (float(lo), float(hi))
        self.schedule = linear_beta_schedule(self.T, self.beta_start, self.beta_end)


def forward_diffuse(x0, t: int, sched: NoiseSchedule, rng=None, *, noise=None, clamp: bool = True):
    """Noise ``x0`` to step ``t``: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    ``noise`` overrides the standard-normal draw; ``clamp=False`` returns the raw value.
    """
    if not (0 <= t < sched.T):
        raise ValueError(f"step {t} outside [0, {sched.T - 1}]")
    x0 = np.asarray(x0, dtype=np.float64)
    if noise is None:
        noise = rng.standard_normal(x0.shape)
    abar = sched.alpha_bars[t]
    xt = math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise
    return np.clip(xt, 0.0, 1.0) if clamp else xt


def synthesis_count(n_maj: int, n_min: int, balance_target: float) -> int:
    """Number of synthetic minority samples needed to reach ``balance_target * n_maj``."""
    if not (n_maj >= n_min >= 0):
        raise ValueError("need n_maj >= n_min >= 0")
    if not (0 < balance_target <= 1):
        raise ValueError("balance_target must lie in (0, 1]")
    # round away float noise before ceil, e.g. 0.7 * 280 = 196.00000000000003
    target = math.ceil(round(balance_target * n_maj, 9))
    return max(0, target - n_min)


def _gauss_kernel(sigma: float) -> np.ndarray:
    half = math.ceil(3 * sigma)
    xs = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _blur_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    half = len(k) // 2
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad)
    wp = np.pad(np.ones(n), (half, half))
    out = np.zeros_like(x)
    norm = np.zeros(n)
    for j, kj in enumerate(k):
        out += kj * xp[..., j : j + n]
        norm += kj * wp[j : j + n]
    return np.moveaxis(out / norm, -1, axis)


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable truncated Gaussian blur over the last two axes, renormalized at borders."""
    if sigma <= 0:
        return np.array(x, dtype=np.float64, copy=True)
    k = _gauss_kernel(sigma)
    return _blur_axis(_blur_axis(np.asarray(x, dtype=np.float64), k, -1), k, -2)


def post_process(x, cfg: AugmentConfig, rng=None, *, gamma=None):
    """Blur, scale by a brightness factor drawn from ``cfg.brightness_range``, clamp to [0, 1]."""
    if gamma is None:
        gamma = rng.uniform(*cfg.brightness_range)
    return np.clip(gaussian_blur(x, cfg.blur_sigma) * gamma, 0.0, 1.0)


def synthesize(sources, n: int, cfg: AugmentConfig):
    """Generate ``n`` synthetic images from a list of source images.

    Each synthetic ``j`` has its own generator seeded from ``(cfg.seed, j)`` so the set is
    independent of evaluation order. Returns ``(images, records)`` where each record holds
    the source index, step ``t`` and brightness factor ``gamma``.
    """
    images, records = [], []
    for j in range(n):
        rng = np.random.default_rng([cfg.seed, j])
        src = int(rng.integers(len(sources)))
        t = int(rng.integers(cfg.schedule.T))
        xt = forward_diffuse(sources[src], t, cfg.schedule, rng)
        gamma = float(rng.uniform(*cfg.brightness_range))
        images.append(post_process(xt, cfg, gamma=gamma))
        records.append({"source": src, "t": t, "gamma": gamma})
    return images, records


def augment_minority(train: Dataset, cfg: AugmentConfig) -> Dataset:
    """Append synthetic minority samples until the minority reaches ``balance_target`` of the majority."""
    counts = train.class_counts
    if min(counts.values()) == 0:
        raise ValueError("minority class is empty")
    n_maj, n_min, _, minority = class_distribution(train)
    m = synthesis_count(n_maj, n_min, cfg.balance_target)
    if m == 0:
        return Dataset(list(train.samples))
    pool = [s for s in train.samples if s.label == minority and s.origin == "real"]
    images, records = synthesize([s.image for s in pool], m, cfg)
    synth = []
    for j, (img, rec) in enumerate(zip(images, records)):
        src = pool[rec["source"]]
        synth.append(
            LabeledSample(
                image=img,
                label=minority,
                origin="synthetic",
                source_id=src.source_id,
                meta={"index": j, "t": rec["t"], "gamma": rec["gamma"]},
            )
        )
    return Dataset(list(train.samples) + synth)
