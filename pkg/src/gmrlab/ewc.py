"""Fully-connected softmax classifier with elastic weight consolidation.

The network is a plain affine+ReLU chain (default 784-800-800-800-10)
trained with an adaptive-moment optimizer. After each completed task the
parameters are snapshotted together with a diagonal Fisher-information
estimate; later tasks pay a quadratic penalty for moving parameters that
were important to earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset
from .errors import ConfigError, ConsistencyError, ShapeError
from .metrics import MetricsLog

DEFAULT_LAYER_SIZES = (784, 800, 800, 800, 10)


@dataclass
class DnnParams:
    """Per-layer weights and biases, stored as a flat list [W1, b1, W2, ...]."""

    params: list

    @property
    def layer_sizes(self) -> tuple:
        sizes = [self.params[0].shape[0]]
        for w in self.params[0::2]:
            sizes.append(w.shape[1])
        return tuple(sizes)

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "DnnParams":
        return DnnParams(params=[a.copy() for a in self.params])

    def param_count(self) -> int:
        return int(sum(a.size for a in self.params))


def init_dnn(layer_sizes=DEFAULT_LAYER_SIZES, seed_or_rng=0) -> DnnParams:
    """He-initialized weights (ReLU hidden layers), zero biases."""
    rng = np.random.default_rng(seed_or_rng) if isinstance(seed_or_rng, int) else seed_or_rng
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        params.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        params.append(np.zeros(fan_out))
    return DnnParams(params=params)


def _flatten_images(x: np.ndarray, dim: int) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
    if flat.shape[1] != dim:
        raise ShapeError(f"input dim {flat.shape[1]} != network input {dim}")
    return flat


def _forward_cache(x: np.ndarray, p: DnnParams):
    """Activations per layer; ReLU between hidden layers, raw logits out."""
    acts = [x]
    h = x
    n = p.n_layers
    for l in range(n):
        w, b = p.params[2 * l], p.params[2 * l + 1]
        z = h @ w + b
        h = z if l == n - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def dnn_forward(x: np.ndarray, p: DnnParams) -> np.ndarray:
    """Logits for a batch; softmax is applied inside the loss."""
    flat = _flatten_images(np.asarray(x, dtype=float), p.layer_sizes[0])
    return _forward_cache(flat, p)[-1]


def _backward(d_logits: np.ndarray, acts, p: DnnParams):
    """Gradients for every parameter given d(loss)/d(logits)."""
    grads = [None] * len(p.params)
    delta = d_logits
    for l in range(p.n_layers - 1, -1, -1):
        w = p.params[2 * l]
        grads[2 * l] = acts[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ w.T) * (acts[l] > 0)
    return grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ce_loss_and_grads(p: DnnParams, images: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy and parameter gradients."""
    flat = _flatten_images(images, p.layer_sizes[0])
    n = flat.shape[0]
    acts = _forward_cache(flat, p)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = float(-log_probs[np.arange(n), targets].mean())
    probs = np.exp(log_probs)
    probs[np.arange(n), targets] -= 1.0
    grads = _backward(probs / n, acts, p)
    return loss, grads


@dataclass
class EwcAnchors:
    """One (snapshot, Fisher) pair per completed task, plus the penalty weight."""

    lam: float = 0.0
    snapshots: list = field(default_factory=list)  # list of param lists
    fishers: list = field(default_factory=list)    # same shapes, entries >= 0

    def __len__(self) -> int:
        return len(self.snapshots)

    def append(self, snapshot, fisher) -> None:
        self.snapshots.append(snapshot)
        self.fishers.append(fisher)

    def stored_value_count(self) -> int:
        return int(
            sum(a.size for snap in self.snapshots for a in snap)
            + sum(a.size for f in self.fishers for a in f)
        )


def penalty_and_grads(p: DnnParams, anchors: EwcAnchors):
    """(lam/2) * sum_t sum_i F_i (theta_i - theta*_i)^2 and its gradient."""
    penalty = 0.0
    grads = [np.zeros_like(a) for a in p.params]
    for snapshot, fisher in zip(anchors.snapshots, anchors.fishers):
        if len(snapshot) != len(p.params):
            raise ConsistencyError("anchor shape does not match parameters")
        for i, (theta, star, f) in enumerate(zip(p.params, snapshot, fisher)):
            if theta.shape != star.shape:
                raise ConsistencyError("anchor shape does not match parameters")
            diff = theta - star
            penalty += float((f * diff * diff).sum())
            grads[i] += anchors.lam * f * diff
    return 0.5 * anchors.lam * penalty, grads


def ewc_loss_and_grads(p: DnnParams, images: np.ndarray, targets: np.ndarray, anchors: EwcAnchors):
    """Cross-entropy plus the quadratic anchoring penalty; returns
    (total_loss, ce_part, grads)."""
    ce, grads = ce_loss_and_grads(p, images, targets)
    pen, pen_grads = penalty_and_grads(p, anchors)
    for g, pg in zip(grads, pen_grads):
        g += pg
    return ce + pen, ce, grads


def fisher_from_samples(p: DnnParams, images: np.ndarray, targets: np.ndarray):
    """Mean squared per-sample gradient of log p(target | image).

    Per-sample weight gradients are rank-one (activation outer delta), so
    their squares reduce to (acts^2)^T @ (delta^2) without materializing
    per-sample gradient tensors.
    """
    flat = _flatten_images(images, p.layer_sizes[0])
    n = flat.shape[0]
    acts = _forward_cache(flat, p)
    probs = _softmax(acts[-1])
    delta = -probs
    delta[np.arange(n), targets] += 1.0  # d log p(y|x) / d logits
    fisher = [np.zeros_like(a) for a in p.params]
    for l in range(p.n_layers - 1, -1, -1):
        w = p.params[2 * l]
        fisher[2 * l] = (acts[l] ** 2).T @ (delta**2) / n
        fisher[2 * l + 1] = (delta**2).mean(axis=0)
        if l > 0:
            delta = (delta @ w.T) * (acts[l] > 0)
    return fisher


def fisher_diag(
    p: DnnParams,
    dataset: LabeledDataset,
    sample_count: int = 2000,
    rng: np.random.Generator | int = 0,
    batch: int = 250,
):
    """Diagonal Fisher estimate with labels drawn from the model's own
    predictive distribution (true-Fisher sampling)."""
    if len(dataset) == 0:
        raise ConsistencyError("cannot estimate Fisher on an empty dataset")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    idx = rng.choice(len(dataset), size=sample_count, replace=True)
    fisher = [np.zeros_like(a) for a in p.params]
    done = 0
    for lo in range(0, sample_count, batch):
        sel = idx[lo : lo + batch]
        images = dataset.images[sel]
        flat = _flatten_images(images, p.layer_sizes[0])
        probs = _softmax(_forward_cache(flat, p)[-1])
        draws = (probs.cumsum(axis=1) > rng.random((len(sel), 1))).argmax(axis=1)
        part = fisher_from_samples(p, images, draws)
        w = len(sel)
        for acc, f in zip(fisher, part):
            acc += f * w
        done += w
    for acc in fisher:
        acc /= done
    return fisher


class Adam:
    """Adaptive-moment optimizer (decay 0.9/0.999, stability eps 1e-8)."""

    def __init__(self, shapes, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def ewc_accuracy(p: DnnParams, ds: LabeledDataset, batch: int = 2000) -> float:
    hits = 0
    for lo in range(0, len(ds), batch):
        logits = dnn_forward(ds.images[lo : lo + batch], p)
        hits += int((logits.argmax(axis=1) == ds.labels[lo : lo + batch]).sum())
    return hits / len(ds)


def train_task_ewc(
    p: DnnParams,
    anchors: EwcAnchors,
    train_set: LabeledDataset,
    epochs: int,
    eps: float,
    rng: np.random.Generator | int,
    batch_size: int = 100,
    fisher_samples: int = 2000,
    log: MetricsLog | None = None,
    task_index: int = 1,
    on_batch=None,
) -> MetricsLog:
    """Optimize the consolidated loss for one task, then append an anchor.

    The step size is ``eps`` and the penalty weight is pinned to 1/eps.
    The metrics log records the mean label log-probability of each batch as
    its log-likelihood column and the full consolidated loss.
    """
    if eps <= 0:
        raise ConfigError(f"step size must be positive, got {eps}")
    if len(train_set) == 0:
        raise ConsistencyError("training set is empty")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    anchors.lam = 1.0 / eps
    log = log if log is not None else MetricsLog()
    opt = Adam([a.shape for a in p.params])
    iteration = 0
    for _ in range(epochs):
        order = rng.permutation(len(train_set))
        for lo in range(0, len(train_set), batch_size):
            sel = order[lo : lo + batch_size]
            total, ce, grads = ewc_loss_and_grads(
                p, train_set.images[sel], train_set.labels[sel], anchors
            )
            opt.step(p.params, grads, eps)
            iteration += 1
            rec = log.add(task_index, iteration, loglik=-ce, loss=total)
            if on_batch is not None:
                on_batch(task_index, iteration, -ce, rec, train_set.labels[sel])
    anchors.append(
        [a.copy() for a in p.params],
        fisher_diag(p, train_set, sample_count=fisher_samples, rng=rng),
    )
    return log
