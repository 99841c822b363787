"""The composed replay model: folding + mixture + linear readout.

Training on a sub-task interleaves one unsupervised mixture step and one
readout step per batch. Between sub-tasks the model generates labeled
samples of everything it has seen (conditional sampling through the
readout inversion) and retrains on the generated-plus-new mixture, so no
real samples from completed sub-tasks are ever stored.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from . import gmm
from .datasets import LabeledDataset, merge_datasets
from .errors import ConsistencyError, ShapeError
from .folding import FoldSpec, fold, fold_shape, unfold
from .metrics import MetricsLog


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 50
    gmm_lr: float = 0.01
    clf_lr: float = 0.05
    loss_kind: str = "mse"
    # fraction of the first task's iterations over which the annealing
    # radius decays to its floor; any remainder fine-tunes the exact
    # objective with smoothing off
    anneal_fraction: float = 1.0


@dataclass
class GmrModel:
    input_shape: tuple[int, int, int]   # (H, W, C)
    num_classes: int
    fold_spec: FoldSpec
    gmm: gmm.GmmParams
    anneal: gmm.AnnealState
    clf: clf.ClassifierParams
    config: TrainConfig
    seed: int = 0

    @property
    def folded_shape(self) -> tuple[int, int, int]:
        return fold_shape(*self.input_shape, self.fold_spec)

    @property
    def feature_dim(self) -> int:
        oh, ow, _ = self.folded_shape
        return oh * ow * self.gmm.n_components

    def validate(self) -> None:
        oh, ow, oc = self.folded_shape
        if oc != self.gmm.dim:
            raise ShapeError(f"folded channels {oc} != mixture dim {self.gmm.dim}")
        if self.feature_dim != self.clf.feature_dim:
            raise ShapeError(
                f"readout expects {self.clf.feature_dim} features, model provides {self.feature_dim}"
            )


def build_gmr(
    input_shape: tuple[int, int, int],
    num_classes: int,
    n_components: int = 100,
    config: TrainConfig | None = None,
    fold_spec: FoldSpec | None = None,
    seed: int = 0,
    annealing: bool = True,
    sigma2_min: float = 0.05,
) -> GmrModel:
    """Assemble a model with consistent shapes for the given input layout.

    ``sigma2_min`` is the variance floor; the default suits [0,1] image
    columns of hundreds of dimensions, low-dimensional data wants it far
    smaller.
    """
    h, w, c = input_shape
    spec = fold_spec or FoldSpec.full_image(h, w)
    oh, ow, oc = fold_shape(h, w, c, spec)
    params = gmm.init_gmm(
        n_components, oc, seed_or_rng=np.random.default_rng(seed), sigma2_min=sigma2_min
    )
    anneal = gmm.AnnealState.for_grid(n_components) if annealing else gmm.AnnealState.disabled(n_components)
    readout = clf.init_classifier(oh * ow * n_components, num_classes)
    model = GmrModel(
        input_shape=(h, w, c),
        num_classes=num_classes,
        fold_spec=spec,
        gmm=params,
        anneal=anneal,
        clf=readout,
        config=config or TrainConfig(),
        seed=seed,
    )
    model.validate()
    return model


def classify(model: GmrModel, images: np.ndarray) -> np.ndarray:
    """fold -> responsibilities -> readout -> argmax."""
    cols = fold(images, model.fold_spec)
    gamma = gmm.forward(cols, model.gmm)
    return clf.predict_classes(gamma, model.clf)


def joint_accuracy(model: GmrModel, ds: LabeledDataset, batch: int = 2000) -> float:
    """Accuracy over a dataset, evaluated in chunks to bound memory."""
    hits = 0
    for lo in range(0, len(ds), batch):
        pred = classify(model, ds.images[lo : lo + batch])
        hits += int((pred == ds.labels[lo : lo + batch]).sum())
    return hits / len(ds)


def score_images(model: GmrModel, images: np.ndarray) -> float:
    """Mean per-column log-density of images under the mixture."""
    return gmm.score_batch(fold(images, model.fold_spec), model.gmm)


def train_task(
    model: GmrModel,
    train_set: LabeledDataset,
    epochs: int,
    rng: np.random.Generator | int,
    log: MetricsLog | None = None,
    task_index: int = 1,
    on_batch=None,
    max_iters: int | None = None,
    start_iteration: int = 0,
) -> MetricsLog:
    """Train on one sub-task: per batch, one mixture ascent step, then one
    readout step on the fresh responsibilities.

    ``on_batch(task_index, iteration, loglik, record, labels)`` runs after
    each batch; the harness uses it for scheduled evaluation and boundary
    observation, and may return True to stop training early. ``max_iters``
    caps the number of batches regardless of epochs; ``start_iteration``
    offsets recorded iteration numbers so a resumed task keeps its log
    monotone. Returns the (possibly shared) metrics log.
    """
    if len(train_set) == 0:
        raise ConsistencyError("training set is empty")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    log = log if log is not None else MetricsLog()
    b = model.config.batch_size
    n_batches = math.ceil(len(train_set) / b)
    if model.anneal.enabled and model.anneal.decay_iters <= 0:
        model.anneal.decay_iters = max(1, int(model.config.anneal_fraction * epochs * n_batches))
    done = 0
    for _ in range(epochs):
        order = rng.permutation(len(train_set))
        for lo in range(0, len(train_set), b):
            if max_iters is not None and done >= max_iters:
                return log
            sel = order[lo : lo + b]
            images = train_set.images[sel]
            targets = train_set.labels[sel]
            cols = fold(images, model.fold_spec)
            loglik = gmm.train_step(cols, model.gmm, model.config.gmm_lr, model.anneal)
            gamma = gmm.forward(cols, model.gmm)
            loss = clf.train_step(gamma, targets, model.clf, model.config.clf_lr,
                                  kind=model.config.loss_kind)
            done += 1
            iteration = start_iteration + done
            rec = log.add(task_index, iteration, loglik=loglik, loss=loss)
            if on_batch is not None and on_batch(task_index, iteration, loglik, rec, targets):
                return log
    return log


@dataclass
class ReplayBuffer:
    """Generated samples standing in for completed sub-tasks' data."""

    images: np.ndarray  # (N, H, W, C) in [0, 1]
    labels: np.ndarray  # (N,) the class ids used as control signals

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def classes(self) -> set:
        return set(int(c) for c in np.unique(self.labels))

    def to_dataset(self, name: str, num_classes: int) -> LabeledDataset:
        return LabeledDataset(
            images=self.images, labels=self.labels, name=name, num_classes=num_classes
        )


def generate_replay(
    model: GmrModel,
    classes,
    count_per_class: int,
    rng: np.random.Generator | int,
) -> ReplayBuffer:
    """Conditionally sample ``count_per_class`` images per requested class.

    Each class id is turned into a control vector through the readout
    inversion; columns are sampled under that control and unfolded back to
    image shape.
    """
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    h, w, c = model.input_shape
    oh, ow, _ = model.folded_shape
    images, labels = [], []
    for class_id in sorted(int(x) for x in classes):
        if count_per_class <= 0:
            continue
        control = clf.control_signal(class_id, model.clf)
        control = control.reshape(oh, ow, model.gmm.n_components)
        cols = gmm.sample(model.gmm, control, count_per_class, rng, spatial=(oh, ow))
        images.append(unfold(cols, model.fold_spec, h, w, c))
        labels.append(np.full(count_per_class, class_id, dtype=np.int64))
    if not images:
        return ReplayBuffer(
            images=np.zeros((0, h, w, c)), labels=np.zeros(0, dtype=np.int64)
        )
    return ReplayBuffer(images=np.concatenate(images), labels=np.concatenate(labels))


def retrain_epochs(base_epochs: int, n_old: int, n_new: int) -> int:
    """Epoch count for retraining, scaled by the class-count ratio."""
    if n_old < 1 or n_new < 1:
        raise ConsistencyError("class counts must be positive")
    return math.ceil(base_epochs * (n_old + n_new) / n_new)


def replay_count_per_class(next_task: LabeledDataset) -> int:
    """Old-class sample budget: the mean per-class count of the next task."""
    counts = next_task.class_counts()
    counts = counts[counts > 0]
    return int(round(counts.mean()))


def merge_and_retrain(
    model: GmrModel,
    replay: ReplayBuffer,
    next_task: LabeledDataset,
    base_epochs: int,
    rng: np.random.Generator | int,
    log: MetricsLog | None = None,
    task_index: int = 2,
    on_batch=None,
    epochs_override: int | None = None,
    max_iters: int | None = None,
    start_iteration: int = 0,
) -> MetricsLog:
    """Retrain on generated-old plus real-new data with scaled epochs.

    Replay classes count as "old", the next task's classes as "new";
    epochs = ceil(base * (n_old + n_new) / n_new) unless overridden.
    Annealing stays off for retraining. An oversized replay buffer is
    trimmed to the next task's mean per-class count.
    """
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    if len(replay) == 0:
        raise ConsistencyError("replay buffer is empty")
    if len(next_task) == 0:
        raise ConsistencyError("next task is empty")
    old_classes = replay.classes
    new_classes = set(int(c) for c in np.unique(next_task.labels))
    target = replay_count_per_class(next_task)
    keep = []
    for c in sorted(old_classes):
        idx = np.flatnonzero(replay.labels == c)
        if len(idx) > target:
            idx = rng.choice(idx, size=target, replace=False)
        keep.append(np.sort(idx))
    keep = np.concatenate(keep)
    replay_ds = LabeledDataset(
        images=replay.images[keep],
        labels=replay.labels[keep],
        name="replay",
        num_classes=next_task.num_classes,
    )
    merged = merge_datasets(replay_ds, next_task, name=f"{next_task.name}+replay")
    epochs = (
        epochs_override
        if epochs_override is not None
        else retrain_epochs(base_epochs, len(old_classes), len(new_classes))
    )
    model.anneal.disable()
    return train_task(
        model, merged, epochs, rng, log=log, task_index=task_index, on_batch=on_batch,
        max_iters=max_iters, start_iteration=start_iteration,
    )


class BoundaryDetector:
    """Streaming sub-task boundary detector over batch log-likelihoods.

    Maintains a sliding mean m over the most recent ``window_len`` batch
    log-likelihoods (frozen while a candidate drop is active). A batch with
    deviation m - ll > drop_fraction * |m| extends the candidate; a
    boundary fires once the candidate persists for more than
    ``persist_iters`` batches and at least ``refractory_iters`` batches
    have passed since the previous boundary (or the stream start). Firing
    resets all state, including the window.
    """

    def __init__(
        self,
        window_len: int = 100,
        drop_fraction: float = 0.2,
        persist_iters: int = 10,
        refractory_iters: int = 500,
    ):
        if not 0.0 < drop_fraction < 1.0:
            raise ConsistencyError(f"drop_fraction must lie in (0, 1), got {drop_fraction}")
        if persist_iters < 1:
            raise ConsistencyError("persist_iters must be >= 1")
        self.window_len = window_len
        self.drop_fraction = drop_fraction
        self.persist_iters = persist_iters
        self.refractory_iters = refractory_iters
        self.reset()

    def reset(self) -> None:
        self._window: deque = deque(maxlen=self.window_len)
        self._frozen_mean: float | None = None
        self.below_count = 0
        self.iters_since_boundary = 0
        self.last_fire_below_count = 0

    @property
    def sliding_mean(self) -> float | None:
        if self._frozen_mean is not None:
            return self._frozen_mean
        if len(self._window) < self.window_len:
            return None
        return float(np.mean(self._window))

    def observe(self, batch_loglik: float) -> bool:
        """Feed one batch log-likelihood; returns True when a boundary fires."""
        self.iters_since_boundary += 1
        if self._frozen_mean is None and len(self._window) < self.window_len:
            self._window.append(batch_loglik)  # warm-up
            return False
        mean = self.sliding_mean
        deviation = mean - batch_loglik
        if deviation > self.drop_fraction * abs(mean):
            self._frozen_mean = mean
            self.below_count += 1
            if (
                self.below_count > self.persist_iters
                and self.iters_since_boundary >= self.refractory_iters
            ):
                fired_below = self.below_count
                self.reset()
                self.last_fire_below_count = fired_below
                return True
        else:
            self._frozen_mean = None
            self.below_count = 0
            self._window.append(batch_loglik)
        return False

    def config(self) -> dict:
        return {
            "window_len": self.window_len,
            "drop_fraction": self.drop_fraction,
            "persist_iters": self.persist_iters,
            "refractory_iters": self.refractory_iters,
        }
