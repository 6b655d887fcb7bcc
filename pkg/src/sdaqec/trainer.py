"""End-to-end training of the extractor + quantum head with Adam and early stopping."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .data_io import Dataset, DataError
from .diffusion import AugmentConfig, augment_minority
from .neural import Extractor, ExtractorConfig, Parameter, Tensor, as_tensor, linear
from .quantum import QuantumHead

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sdaqec-checkpoint"
CHECKPOINT_VERSION = 1
PROB_CLIP = 1e-7


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, snapshot=None):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    patience: int = 5
    seed: int = 0
    use_diffusion: bool = True
    use_quantum: bool = True

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.adam_eps <= 0 or self.weight_decay < 0:
            raise ValueError("lr and adam_eps must be positive, weight_decay non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed epochs")


@dataclass
class ModelConfig:
    """``input_dim`` set means the model consumes feature vectors instead of images.

    In feature mode ``reduced_dim=None`` feeds the features straight to the head.
    """

    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    input_dim: int | None = None
    reduced_dim: int | None = 16
    n_qubits: int = 4
    n_layers: int = 2
    use_quantum: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor"]["input"] = list(self.extractor.input)
        d["extractor"]["blocks"] = [list(b) for b in self.extractor.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["extractor"] = ExtractorConfig(**d.get("extractor", {}))
        return cls(**d)


class HybridModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 1])
        self.params: dict[str, Parameter] = {}
        self.extractor = None
        if cfg.input_dim is None:
            self.extractor = Extractor(cfg.extractor, rng)
            self.params.update(self.extractor.params)
            head_in = cfg.extractor.reduced_dim
        elif cfg.reduced_dim is not None:
            self.params["reduce.w"] = Parameter(rng.standard_normal((cfg.reduced_dim, cfg.input_dim)) * np.sqrt(2.0 / cfg.input_dim))
            self.params["reduce.b"] = Parameter(np.full(cfg.reduced_dim, 0.01), decay=False)
            head_in = cfg.reduced_dim
        else:
            head_in = cfg.input_dim
        self.head_in = head_in
        self.quantum = None
        if cfg.use_quantum:
            n_enc = int(round(math.log2(head_in)))
            if 2**n_enc != head_in:
                raise ValueError(f"quantum head needs a power-of-two input, got {head_in}")
            if cfg.n_qubits > n_enc:
                raise ValueError(f"{cfg.n_qubits}-qubit circuit does not fit a {head_in}-amplitude encoding")
            self.quantum = QuantumHead(cfg.n_qubits, cfg.n_layers, rng=rng)
            self.params.update(self.quantum.params)
        else:
            self.params["cls.w"] = Parameter(rng.standard_normal((2, head_in)) * np.sqrt(1.0 / head_in))
            self.params["cls.b"] = Parameter(np.zeros(2), decay=False)

    def features(self, x, training=False) -> Tensor:
        """Reduced features fed to the head."""
        if self.extractor is not None:
            return self.extractor.forward(x, training)
        if "reduce.w" in self.params:
            return neural.reduce_features(x, self.params["reduce.w"], self.params["reduce.b"])
        return as_tensor(x)

    def forward(self, x, training=False) -> Tensor:
        f = self.features(x, training)
        if self.quantum is not None:
            return self.quantum.forward(f)
        return linear(f, self.params["cls.w"], self.params["cls.b"])

    def predict_proba(self, x, batch=64) -> np.ndarray:
        """Inference-mode class probabilities, shape (N, 2)."""
        out = []
        for i in range(0, len(x), batch):
            z = self.forward(x[i : i + batch], training=False).data
            out.append(softmax(z))
        return np.concatenate(out)

    def embed(self, x, batch=64) -> np.ndarray:
        return np.concatenate([self.features(x[i : i + batch]).data for i in range(0, len(x), batch)])

    def snapshot(self) -> dict:
        snap = {"params": {k: p.data.copy() for k, p in self.params.items()}}
        if self.extractor is not None:
            snap["norms"] = {k: (n.mean.copy(), n.var.copy()) for k, n in self.extractor.norms.items()}
        return snap

    def restore(self, snap: dict) -> None:
        for k, v in snap["params"].items():
            self.params[k].data = v.copy()
        for k, (m, v) in snap.get("norms", {}).items():
            self.extractor.norms[k].mean = m.copy()
            self.extractor.norms[k].var = v.copy()


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood with the label probability clipped to [1e-7, 1 - 1e-7]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    n = z.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    lp = logp[np.arange(n), labels]
    lo, hi = math.log(PROB_CLIP), math.log1p(-PROB_CLIP)
    active = (lp > lo) & (lp < hi)
    loss = -np.clip(lp, lo, hi).mean()

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), labels] = 1.0
        return (g * (p - onehot) * active[:, None] / n,)

    return Tensor(loss, (logits,), back)


def l2_penalty(params: dict, lam: float) -> Tensor:
    ws = [p for p in params.values() if getattr(p, "decay", True)]
    val = lam * sum(float(np.sum(p.data**2)) for p in ws)
    return Tensor(val, tuple(ws), lambda g: tuple(2.0 * lam * g * p.data for p in ws))


def total(*terms: Tensor) -> Tensor:
    return Tensor(sum(t.data for t in terms), terms, lambda g: tuple(g for _ in terms))


def compute_loss(logits, labels, params: dict, lam: float):
    """Cross-entropy plus ``lam`` times the squared norm of the decayed weights.

    ``params`` maps names to :class:`Parameter` (only ``decay=True`` entries are penalized)
    or to plain arrays (all penalized). Returns ``(loss, grads)`` where ``grads`` holds
    ``"logits"`` and one entry per parameter.
    """
    logits = Tensor(np.asarray(getattr(logits, "data", logits), dtype=np.float64), requires_grad=True)
    leaves = {k: v if isinstance(v, Parameter) else Parameter(v) for k, v in params.items()}
    for p in leaves.values():
        p.grad = None
    loss = total(cross_entropy(logits, labels), l2_penalty(leaves, lam))
    if not np.isfinite(loss.data):
        raise TrainingDiverged("non-finite loss")
    neural.backward(loss)
    grads = {"logits": logits.grad}
    grads.update({k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in leaves.items()})
    return float(loss.data), grads


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are left intact."""
    t = state.t + 1
    new_p, m_all, v_all = {}, dict(state.m), dict(state.v)
    for k, p in params.items():
        g = grads[k]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient for {k} has shape {np.shape(g)}, parameter {np.shape(p)}")
        m = beta1 * m_all.get(k, 0.0) + (1 - beta1) * g
        v = beta2 * v_all.get(k, 0.0) + (1 - beta2) * g * g
        m_all[k], v_all[k] = m, v
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        new_p[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return new_p, AdamState(t, m_all, v_all)


class EarlyStopping:
    """Tracks the best validation loss; ``stop`` turns true after ``patience`` non-improving epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def __len__(self):
        return len(self.train_loss)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # batch norm needs >= 2 samples; fold a trailing singleton into the previous batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def evaluate_loss(model: HybridModel, x, y, batch=64) -> tuple[float, float]:
    """Inference-mode mean cross-entropy (no penalty) and accuracy."""
    probs = model.predict_proba(x, batch)
    p = np.clip(probs[np.arange(len(y)), y], PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.log(p).mean()), float((probs.argmax(1) == y).mean())


HISTORY_FIELDS = ["epoch", "train_loss", "val_loss", "val_accuracy"]


def fit(model: HybridModel, x_tr, y_tr, x_va, y_va, cfg: TrainConfig, out_dir=None) -> TrainHistory:
    """Minibatch Adam on cross-entropy + L2; restores the best validation-loss snapshot."""
    rng = np.random.default_rng([cfg.seed, 2])
    params = model.params
    state = AdamState()
    hist = TrainHistory()
    stopper = EarlyStopping(cfg.patience)
    best = model.snapshot()
    hist_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        hist_path = out_dir / "history.csv"
        with open(hist_path, "w", newline="") as fh:
            csv.writer(fh).writerow(HISTORY_FIELDS)
    for epoch in range(cfg.epochs):
        last_good = model.snapshot()
        running, seen = 0.0, 0
        for idx in _batches(len(x_tr), cfg.batch_size, rng):
            for p in params.values():
                p.grad = None
            logits = model.forward(x_tr[idx], training=True)
            loss = total(cross_entropy(logits, y_tr[idx]), l2_penalty(params, cfg.weight_decay))
            if not np.isfinite(loss.data):
                model.restore(last_good)
                if out_dir is not None:
                    save_checkpoint(out_dir / "last.ckpt", model)
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", last_good)
            neural.backward(loss)
            values = {k: p.data for k, p in params.items()}
            grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in params.items()}
            new, state = adam_step(values, grads, state, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            for k, v in new.items():
                params[k].data = v
            running += float(loss.data) * len(idx)
            seen += len(idx)
        val_loss, val_acc = evaluate_loss(model, x_va, y_va)
        hist.train_loss.append(running / seen)
        hist.val_loss.append(val_loss)
        hist.val_accuracy.append(val_acc)
        log.info("epoch %d train %.4f val %.4f acc %.3f", epoch, running / seen, val_loss, val_acc)
        if hist_path is not None:
            with open(hist_path, "a", newline="") as fh:
                csv.writer(fh).writerow([epoch, repr(running / seen), repr(val_loss), repr(val_acc)])
        if stopper.update(epoch, val_loss):
            best = model.snapshot()
        if stopper.stop:
            hist.stop_reason = f"early stop: no val improvement for {cfg.patience} epochs"
            break
    else:
        hist.stop_reason = "max epochs"
    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", model)
    model.restore(best)
    hist.best_epoch = stopper.best_epoch
    if out_dir is not None:
        save_checkpoint(out_dir / "best.ckpt", model)
    return hist


def _require_both_classes(d: Dataset, name: str):
    for label, n in d.class_counts.items():
        if n == 0:
            raise DataError(f"{name} split has no samples of class {label}")


def train(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, aug: AugmentConfig | None = None,
          model_cfg: ModelConfig | None = None, out_dir=None):
    """Augment (optionally), build the model and fit it. Returns ``(model, history, train_set)``."""
    _require_both_classes(train_ds, "train")
    _require_both_classes(val_ds, "val")
    if any(s.origin == "synthetic" for s in val_ds.samples):
        raise DataError("synthetic samples must not appear in the validation split")
    model_cfg = model_cfg or ModelConfig()
    model_cfg.use_quantum = cfg.use_quantum
    if cfg.use_diffusion:
        train_ds = augment_minority(train_ds, aug or AugmentConfig(seed=cfg.seed))
    model = HybridModel(model_cfg, seed=cfg.seed)
    x_tr, y_tr = train_ds.arrays()
    x_va, y_va = val_ds.arrays()
    hist = fit(model, x_tr, y_tr, x_va, y_va, cfg, out_dir)
    return model, hist, train_ds


def save_checkpoint(path, model: HybridModel) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "params": {k: p.data.tolist() for k, p in model.params.items()},
    }
    if model.extractor is not None:
        doc["norms"] = {k: {"mean": n.mean.tolist(), "var": n.var.tolist()} for k, n in model.extractor.norms.items()}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> HybridModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    model = HybridModel(ModelConfig.from_dict(doc["config"]))
    if set(doc["params"]) != set(model.params):
        raise ValueError("checkpoint parameters do not match its config")
    for k, p in model.params.items():
        arr = np.asarray(doc["params"][k], dtype=np.float64)
        if arr.shape != p.shape:
            raise ValueError(f"checkpoint {k}: expected shape {p.shape}, got {arr.shape}")
        p.data = arr
    for k, n in (doc.get("norms") or {}).items():
        model.extractor.norms[k].mean = np.asarray(n["mean"], dtype=np.float64)
        model.extractor.norms[k].var = np.asarray(n["var"], dtype=np.float64)
    return model
