"""Small numpy perceptron with a sigmoid output, binary cross-entropy and Adam.

Hidden layers use rectified linear units; the last layer emits one logit per
row. Gradients are derived by hand so they can be checked against finite
differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits, targets, weights=None) -> float:
    """Mean binary cross-entropy computed from logits without overflow."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if weights is None:
        return float(per.mean())
    w = np.asarray(weights, dtype=np.float64)
    return float((per * w).sum() / w.sum())


class MLP:
    """Fully connected network ``sizes[0] -> ... -> sizes[-1]`` (last size 1)."""

    def __init__(self, sizes, seed: int = 0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or self.sizes[-1] != 1:
            raise ValueError("need at least an input size and a single output")
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def _forward(self, x):
        acts = [np.asarray(x, dtype=np.float64)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(np.maximum(z, 0.0) if i < len(self.weights) - 1 else z)
        return acts

    def logits(self, x) -> np.ndarray:
        return self._forward(x)[-1][:, 0]

    def predict_proba(self, x) -> np.ndarray:
        return sigmoid(self.logits(x))

    def loss_and_grads(self, x, y, weights=None) -> tuple[float, list[np.ndarray]]:
        """Mean (optionally weighted) cross-entropy and its gradient w.r.t. :attr:`params`."""
        acts = self._forward(x)
        z = acts[-1][:, 0]
        y = np.asarray(y, dtype=np.float64)
        if weights is None:
            w = np.full(len(y), 1.0 / len(y))
        else:
            w = np.asarray(weights, dtype=np.float64)
            w = w / w.sum()
        loss = bce_with_logits(z, y, w)
        delta = ((sigmoid(z) - y) * w)[:, None]
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        grads.reverse()   # now [W0, b0, W1, b1, ...]
        return loss, grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        k = 0
        for p in self.params:
            p[...] = flat[k:k + p.size].reshape(p.shape)
            k += p.size

    def to_json(self) -> dict:
        return {"sizes": list(self.sizes),
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_json(cls, data: dict) -> MLP:
        net = cls(data["sizes"])
        net.weights = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
        net.biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
        return net


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x) -> Standardizer:
        x = np.asarray(x, dtype=np.float64)
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))

    def __call__(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> Standardizer:
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float))
