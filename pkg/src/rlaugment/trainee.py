"""Trainee models and the synthetic spectrogram classification task."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


class TraineeModel(Protocol):
    """What the training loop needs from a model being trained under augmentation."""

    def loss_and_grad(self, x, y) -> tuple[float, dict]: ...

    def apply_step(self, grads: dict, lr: float) -> "TraineeModel": ...

    def evaluate(self, x, y) -> float: ...

    def snapshot(self) -> dict: ...

    def restore(self, snap: dict) -> None: ...


@dataclass
class LabeledSet:
    """Spectrograms ``x`` of shape ``(n, time, freq)`` with integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 3 or len(self.x) != len(self.y):
            raise ValueError("x must be (n, time, freq) with one label per example")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.x[idx], self.y[idx], self.n_classes)


def pool(x) -> np.ndarray:
    """Mean over time; accepts a 3-D array or a list of 2-D arrays of any length."""
    if isinstance(x, np.ndarray) and x.ndim == 3:
        return x.mean(axis=1)
    return np.stack([np.asarray(s, dtype=np.float64).mean(axis=0) for s in x])


class ToyClassifier:
    """Mean-pool over time, one ReLU hidden layer, softmax output."""

    def __init__(self, n_freq: int, n_classes: int, hidden: int = 32, seed: int | None = 0,
                 zero: bool = False):
        self.n_freq, self.n_classes, self.hidden = n_freq, n_classes, hidden
        if zero:
            self.params = {
                "W1": np.zeros((n_freq, hidden)), "b1": np.zeros(hidden),
                "W2": np.zeros((hidden, n_classes)), "b2": np.zeros(n_classes),
            }
        else:
            g = np.random.default_rng(seed)
            self.params = {
                "W1": g.normal(0.0, np.sqrt(2.0 / n_freq), size=(n_freq, hidden)),
                "b1": np.zeros(hidden),
                "W2": g.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, n_classes)),
                "b2": np.zeros(n_classes),
            }

    def _forward(self, x):
        p = self.params
        feats = pool(x)
        pre = feats @ p["W1"] + p["b1"]
        hid = np.maximum(pre, 0.0)
        logits = hid @ p["W2"] + p["b2"]
        return feats, pre, hid, logits

    def logits(self, x) -> np.ndarray:
        return self._forward(x)[3]

    def loss_and_grad(self, x, y) -> tuple[float, dict]:
        """Mean cross-entropy over the batch and its gradient."""
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise ValueError("empty batch")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        feats, pre, hid, logits = self._forward(x)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = len(y)
        loss = -logp[np.arange(n), y].mean()
        dlogits = np.exp(logp)
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        p = self.params
        dhid = dlogits @ p["W2"].T
        dpre = dhid * (pre > 0)
        grads = {
            "W1": feats.T @ dpre, "b1": dpre.sum(axis=0),
            "W2": hid.T @ dlogits, "b2": dlogits.sum(axis=0),
        }
        return float(loss), grads

    def apply_step(self, grads: dict, lr: float) -> "ToyClassifier":
        """Plain gradient descent, in place."""
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {k}")
        for k, g in grads.items():
            self.params[k] -= lr * g
        return self

    def predict(self, x) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def evaluate(self, x, y) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snap: dict) -> None:
        self.params = {k: v.copy() for k, v in snap.items()}


@dataclass(frozen=True)
class SyntheticTask:
    """Each class is a band of ``band_width`` bins lit with ``amplitude``, plus Gaussian noise."""

    n_classes: int = 4
    n_time: int = 40
    n_freq: int = 20
    band_width: int = 3
    amplitude: float = 1.0
    noise: float = 0.5
    n_train: int = 512
    n_test: int = 256
    seed: int = 7

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_time < 2 or self.band_width < 1:
            raise ValueError("n_time must be >= 2 and band_width >= 1")
        if self.n_freq < self.n_classes * self.band_width:
            raise ValueError(
                f"n_freq={self.n_freq} cannot hold {self.n_classes} bands of width {self.band_width}"
            )
        if self.noise < 0 or self.n_train < 1 or self.n_test < 1:
            raise ValueError("noise must be >= 0 and set sizes positive")


def band_centers(task: SyntheticTask) -> np.ndarray:
    return (2 * np.arange(task.n_classes) + 1) * task.n_freq // (2 * task.n_classes)


def prototypes(task: SyntheticTask) -> np.ndarray:
    """``(n_classes, n_time, n_freq)`` noiseless class templates."""
    task.validate()
    protos = np.zeros((task.n_classes, task.n_time, task.n_freq))
    half = task.band_width // 2
    for c, center in enumerate(band_centers(task)):
        lo = int(np.clip(center - half, 0, task.n_freq - task.band_width))
        protos[c, :, lo:lo + task.band_width] = task.amplitude
    return protos


def _make_set(task, protos, n, g):
    y = np.arange(n) % task.n_classes
    y = y[g.permutation(n)]
    x = protos[y] + task.noise * g.standard_normal((n, task.n_time, task.n_freq))
    return LabeledSet(x, y, task.n_classes)


def gen_synthetic(task: SyntheticTask | None = None) -> tuple[LabeledSet, LabeledSet]:
    """Balanced train/test sets, fully determined by ``task.seed``."""
    task = task or SyntheticTask()
    protos = prototypes(task)
    ss = np.random.SeedSequence(task.seed)
    g_train, g_test = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    return _make_set(task, protos, task.n_train, g_train), _make_set(task, protos, task.n_test, g_test)
