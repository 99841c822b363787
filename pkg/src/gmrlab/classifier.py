"""Linear readout over responsibilities, plus its approximate inversion.

The readout computes flatten(gamma) @ W + b. Because responsibilities are
already normalized to [0, 1], logits are compared to one-hot targets
directly under the MSE loss; cross-entropy (softmax + NLL) is selectable.
The inversion turns a desired class into a nonnegative per-component
control vector for conditional sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ControlError, ShapeError

LOSS_KINDS = ("mse", "ce")


@dataclass
class ClassifierParams:
    W: np.ndarray  # (F, num_classes), F = H' * W' * K
    b: np.ndarray  # (num_classes,)

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(W=self.W.copy(), b=self.b.copy())


def init_classifier(feature_dim: int, num_classes: int) -> ClassifierParams:
    return ClassifierParams(W=np.zeros((feature_dim, num_classes)), b=np.zeros(num_classes))


def _flatten(gamma: np.ndarray, feature_dim: int) -> np.ndarray:
    if gamma.ndim == 4:
        flat = gamma.reshape(gamma.shape[0], -1)
    elif gamma.ndim == 2:
        flat = gamma
    else:
        raise ShapeError(f"expected responsibilities of rank 2 or 4, got shape {gamma.shape}")
    if flat.shape[1] != feature_dim:
        raise ShapeError(f"feature dim {flat.shape[1]} != readout dim {feature_dim}")
    return flat


def predict(gamma: np.ndarray, p: ClassifierParams) -> np.ndarray:
    """Logits for a batch of responsibility tensors. Predicted class = argmax."""
    return _flatten(gamma, p.feature_dim) @ p.W + p.b


def predict_classes(gamma: np.ndarray, p: ClassifierParams) -> np.ndarray:
    return predict(gamma, p).argmax(axis=1)


def _one_hot(targets: np.ndarray, num_classes: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.min() < 0 or targets.max() >= num_classes:
        raise ShapeError(f"targets outside [0, {num_classes})")
    out = np.zeros((targets.shape[0], num_classes))
    out[np.arange(targets.shape[0]), targets] = 1.0
    return out


def loss_and_grads(
    gamma: np.ndarray,
    targets: np.ndarray,
    p: ClassifierParams,
    kind: str = "mse",
    with_gamma_grad: bool = False,
):
    """Mean batch loss and gradients w.r.t. W and b.

    ``kind="ce"`` applies softmax to the logits then the negative
    log-likelihood; ``kind="mse"`` compares logits to one-hot targets
    directly. With ``with_gamma_grad`` the gradient w.r.t. the (flattened)
    responsibilities is returned as well, for end-to-end extensions.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    flat = _flatten(gamma, p.feature_dim)
    n = flat.shape[0]
    logits = flat @ p.W + p.b
    onehot = _one_hot(targets, p.num_classes)
    if kind == "ce":
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        loss = float(-(log_probs * onehot).sum(axis=1).mean())
        d_logits = (np.exp(log_probs) - onehot) / n
    else:
        diff = logits - onehot
        loss = float((diff * diff).mean())
        d_logits = 2.0 * diff / diff.size
    d_w = flat.T @ d_logits
    d_b = d_logits.sum(axis=0)
    if with_gamma_grad:
        return loss, d_w, d_b, d_logits @ p.W.T
    return loss, d_w, d_b


def train_step(
    gamma: np.ndarray, targets: np.ndarray, p: ClassifierParams, lr: float, kind: str = "mse"
) -> float:
    """One SGD descent step on (W, b); returns the pre-update loss."""
    loss, d_w, d_b = loss_and_grads(gamma, targets, p, kind=kind)
    p.W -= lr * d_w
    p.b -= lr * d_b
    return loss


def control_signal(class_id: int, p: ClassifierParams) -> np.ndarray:
    """Per-component sampling weights for one class.

    Computes (onehot - b) W^T, rectifies negative entries, and scales the
    result into [0, 1]. Rectifying first matters: components the readout
    never used sit near zero, and scaling the raw range would hand them
    roughly half the maximum mass, polluting conditional samples with
    draws from unspecialized components. The result has min 0 and max 1;
    the sampler renormalizes it into a multinomial parameter. A constant
    pre-normalization vector has no class information and raises
    ControlError.
    """
    if not 0 <= class_id < p.num_classes:
        raise ShapeError(f"class id {class_id} outside [0, {p.num_classes})")
    onehot = np.zeros(p.num_classes)
    onehot[class_id] = 1.0
    raw = np.maximum((onehot - p.b) @ p.W.T, 0.0)
    span = raw.max() - raw.min()
    if span <= 1e-12:
        raise ControlError(f"control signal for class {class_id} is constant")
    return (raw - raw.min()) / span
