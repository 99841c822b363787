"""Experiment orchestration: seeded repetitions, grids, evaluation, export.

A run trains one model family over a named sequential learning task,
evaluating joint test accuracy at ten evenly spaced points per sub-task,
and reports the maximum accuracy seen over the whole run, averaged over
repetitions. Repetitions are independent (isolated seeds and logs) and may
be distributed by the caller; a single run is internally sequential apart
from the numeric kernels.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import ewc as ewc_mod
from .datasets import (
    LabeledDataset,
    build_slt,
    load_mnist_style,
    random_class_subset,
    split_train_test,
    stratified_subset,
    subset_by_classes,
    synthetic_dataset,
)
from .errors import ConfigError, ConsistencyError
from .metrics import MetricsLog
from .model import (
    BoundaryDetector,
    GmrModel,
    TrainConfig,
    build_gmr,
    generate_replay,
    joint_accuracy,
    merge_and_retrain,
    replay_count_per_class,
    retrain_epochs,
    train_task,
)

MODEL_KINDS = ("gmr", "ewc")


@dataclass
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    slt: str = "D10"
    model: str = "gmr"
    k: int = 100                    # mixture components (gmr)
    eps: float = 1e-3               # step size (ewc); penalty weight is 1/eps
    loss_kind: str = "mse"
    base_epochs: int = 50
    batch_size: int = 100
    repetitions: int = 1
    seed: int = 0
    seeds: list[int] | None = None
    test_points_per_task: int = 10
    out_dir: str = "out"
    limit_train: int | None = None  # stratified training subset for desk-scale runs
    split: str = "official"         # official | pooled
    split_ratio: float = 0.9
    select_classes: int | None = None
    synth_samples: int = 1000
    synth_hw: int = 28
    detect_boundaries: bool = False
    boundary_source: str = "informed"   # informed | detector
    detector_params: dict | None = None  # BoundaryDetector overrides
    fixed_epochs: bool = False          # disable the retraining epoch scaling
    replay_per_class: int | None = None
    fisher_samples: int = 2000
    gmm_lr: float = 0.01
    clf_lr: float = 0.05

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.test_points_per_task < 1:
            raise ConfigError("test_points_per_task must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_epochs < 0:
            raise ConfigError("base_epochs must be >= 0")
        if self.boundary_source not in ("informed", "detector"):
            raise ConfigError(f"boundary_source must be informed|detector, got {self.boundary_source!r}")
        if self.boundary_source == "detector" and not self.detect_boundaries:
            raise ConfigError("boundary_source=detector requires detect_boundaries")
        build_slt(self.slt)  # raises KeyError for unknown names

    def rep_seed(self, repetition: int) -> int:
        if self.seeds:
            return int(self.seeds[repetition % len(self.seeds)])
        return int(self.seed + repetition)

    @property
    def param_label(self) -> str:
        return f"K={self.k}" if self.model == "gmr" else f"eps={self.eps:g}"


_DATA_CACHE: dict = {}


def load_data(cfg: ExperimentConfig):
    """Resolve the configured dataset into (train, test), with caching."""
    key = (
        cfg.dataset, cfg.data_dir, cfg.split, cfg.split_ratio, cfg.seed,
        cfg.limit_train, cfg.select_classes, cfg.synth_samples, cfg.synth_hw,
    )
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]
    if cfg.dataset.startswith("synthetic"):
        full = synthetic_dataset(
            n=cfg.synth_samples, hw=cfg.synth_hw, seed=cfg.seed, name=cfg.dataset
        )
        train, test = split_train_test(full, cfg.split_ratio, seed=cfg.seed)
    else:
        train, test = load_mnist_style(
            cfg.data_dir,
            split=cfg.split,
            ratio=cfg.split_ratio,
            seed=cfg.seed,
            name=cfg.dataset,
        )
    if cfg.select_classes is not None:
        train = random_class_subset(train, cfg.select_classes, seed=cfg.seed)
        test = random_class_subset(test, cfg.select_classes, seed=cfg.seed)
    if cfg.limit_train is not None:
        train = stratified_subset(train, cfg.limit_train, seed=cfg.seed)
    _DATA_CACHE[key] = (train, test)
    return train, test


def eval_schedule(total_iters: int, points: int) -> list[int]:
    """Evenly spaced evaluation iterations: point i at round(i * total / points)."""
    return sorted({max(1, int(round(i * total_iters / points))) for i in range(1, points + 1)})


@dataclass
class RunResult:
    log: MetricsLog
    model: object = None            # GmrModel, or (DnnParams, EwcAnchors) for ewc
    detections: list[int] = field(default_factory=list)      # global iterations
    true_boundaries: list[int] = field(default_factory=list)  # global iterations
    replay_buffers: list = field(default_factory=list)


def run_gmr_repetition(
    cfg: ExperimentConfig, train_ds: LabeledDataset, test_ds: LabeledDataset,
    seed: int, repetition: int = 0,
) -> RunResult:
    """One seeded pass of the replay model over the configured task sequence."""
    slt = build_slt(cfg.slt)
    train_rng = np.random.default_rng(seed + 1)
    replay_rng = np.random.default_rng(seed + 2)
    model = build_gmr(
        train_ds.image_shape,
        train_ds.num_classes,
        n_components=cfg.k,
        config=TrainConfig(
            batch_size=cfg.batch_size,
            epochs=cfg.base_epochs,
            gmm_lr=cfg.gmm_lr,
            clf_lr=cfg.clf_lr,
            loss_kind=cfg.loss_kind,
        ),
        seed=seed,
    )
    log = MetricsLog(
        model="gmr", dataset=cfg.dataset, slt=slt.name,
        param=cfg.param_label, repetition=repetition,
    )
    detector = (
        BoundaryDetector(**(cfg.detector_params or {})) if cfg.detect_boundaries else None
    )
    result = RunResult(log=log, model=model)
    detector_driven = cfg.boundary_source == "detector"
    first_seen: dict[int, int] = {}
    global_offset = 0
    seen: set[int] = set()

    for t, classes in enumerate(slt.sub_tasks, start=1):
        task_ds = subset_by_classes(train_ds, classes)
        nb = math.ceil(len(task_ds) / cfg.batch_size)
        if t == 1:
            epochs_t = cfg.base_epochs
            total = epochs_t * nb
        else:
            result.true_boundaries.append(global_offset + 1)
            target = cfg.replay_per_class or replay_count_per_class(task_ds)
            if cfg.fixed_epochs:
                epochs_t = cfg.base_epochs
            else:
                epochs_t = retrain_epochs(cfg.base_epochs, len(seen), len(classes))
            merged_n = len(task_ds) + target * len(seen)
            total = epochs_t * math.ceil(merged_n / cfg.batch_size)
        evals = set(eval_schedule(total, cfg.test_points_per_task))
        fired_at: list[int] = [0]  # iteration within task of a detector fire

        def hook(task_index, iteration, loglik, rec, labels,
                 _evals=evals, _off=global_offset, _fired=fired_at):
            for c in np.unique(labels):
                first_seen.setdefault(int(c), _off + iteration)
            stop = False
            if detector is not None and detector.observe(loglik):
                result.detections.append(_off + iteration)
                _fired[0] = iteration
                stop = detector_driven
            if iteration in _evals:
                rec.accuracy = joint_accuracy(model, test_ds)
            return stop

        if t == 1:
            train_task(model, task_ds, epochs_t, train_rng, log=log,
                       task_index=t, on_batch=hook)
        elif not detector_driven:
            buf = generate_replay(model, seen, target, replay_rng)
            result.replay_buffers.append(buf)
            merge_and_retrain(
                model, buf, task_ds, cfg.base_epochs, train_rng, log=log,
                task_index=t, on_batch=hook,
                epochs_override=epochs_t if cfg.fixed_epochs else None,
            )
        else:
            # raw new-task data until the detector notices the switch
            model.anneal.disable()
            train_task(
                model, task_ds, math.ceil(total / nb), train_rng, log=log,
                task_index=t, on_batch=hook, max_iters=total,
            )
            if fired_at[0]:
                cutoff = global_offset + fired_at[0] - detector.last_fire_below_count
                replay_classes = {c for c, it in first_seen.items() if it <= cutoff}
                remaining = total - fired_at[0]
                if replay_classes and remaining > 0:
                    buf = generate_replay(model, replay_classes, target, replay_rng)
                    result.replay_buffers.append(buf)
                    merge_and_retrain(
                        model, buf, task_ds, cfg.base_epochs, train_rng, log=log,
                        task_index=t, on_batch=hook, epochs_override=epochs_t,
                        max_iters=remaining, start_iteration=fired_at[0],
                    )
                elif remaining > 0:
                    train_task(
                        model, task_ds, math.ceil(remaining / nb), train_rng, log=log,
                        task_index=t, on_batch=hook, max_iters=remaining,
                        start_iteration=fired_at[0],
                    )
        seen |= set(int(c) for c in classes)
        global_offset += total
    return result


def run_ewc_repetition(
    cfg: ExperimentConfig, train_ds: LabeledDataset, test_ds: LabeledDataset,
    seed: int, repetition: int = 0,
) -> RunResult:
    """One seeded pass of the consolidation baseline over the task sequence."""
    slt = build_slt(cfg.slt)
    rng = np.random.default_rng(seed + 1)
    h, w, c = train_ds.image_shape
    sizes = (h * w * c, 800, 800, 800, train_ds.num_classes)
    params = ewc_mod.init_dnn(sizes, seed_or_rng=np.random.default_rng(seed))
    anchors = ewc_mod.EwcAnchors(lam=1.0 / cfg.eps)
    log = MetricsLog(
        model="ewc", dataset=cfg.dataset, slt=slt.name,
        param=cfg.param_label, repetition=repetition,
    )
    result = RunResult(log=log, model=(params, anchors))
    global_offset = 0
    for t, classes in enumerate(slt.sub_tasks, start=1):
        task_ds = subset_by_classes(train_ds, classes)
        nb = math.ceil(len(task_ds) / cfg.batch_size)
        total = cfg.base_epochs * nb
        if t > 1:
            result.true_boundaries.append(global_offset + 1)
        evals = set(eval_schedule(total, cfg.test_points_per_task))

        def hook(task_index, iteration, loglik, rec, labels, _evals=evals):
            if iteration in _evals:
                rec.accuracy = ewc_mod.ewc_accuracy(params, test_ds)
            return False

        ewc_mod.train_task_ewc(
            params, anchors, task_ds, cfg.base_epochs, cfg.eps, rng,
            batch_size=cfg.batch_size, fisher_samples=cfg.fisher_samples,
            log=log, task_index=t, on_batch=hook,
        )
        global_offset += total
    return result


def run_experiment(cfg: ExperimentConfig):
    """All repetitions of one configuration; returns (results, summary)."""
    cfg.validate()
    train_ds, test_ds = load_data(cfg)
    runner = run_gmr_repetition if cfg.model == "gmr" else run_ewc_repetition
    results = []
    for rep in range(cfg.repetitions):
        results.append(runner(cfg, train_ds, test_ds, cfg.rep_seed(rep), repetition=rep))
    summary = summarize([r.log for r in results])
    return results, summary


def summarize(logs: list[MetricsLog], baseline: dict | None = None) -> dict:
    """Max accuracy per repetition, aggregated as mean and population std.

    With a ``baseline`` summary the difference of means is reported in
    accuracy percentage points, mirroring how retention is scored against
    the all-classes run.
    """
    if not logs:
        raise ConsistencyError("no logs to summarize")
    maxima = [log.max_accuracy() for log in logs]
    mean = float(np.mean(maxima))
    out = {
        "model": logs[0].model,
        "dataset": logs[0].dataset,
        "slt": logs[0].slt,
        "param": logs[0].param,
        "repetitions": len(logs),
        "max_accuracies": [float(m) for m in maxima],
        "mean_max_accuracy": mean,
        "std_max_accuracy": float(np.std(maxima)),
    }
    if baseline is not None:
        out["baseline_mean"] = baseline["mean_max_accuracy"]
        out["diff_pp"] = (mean - baseline["mean_max_accuracy"]) * 100.0
    return out


def grid_search(cfg: ExperimentConfig, grid: dict):
    """Run every grid point and pick the best by mean max-accuracy.

    ``grid`` maps one config field name (``"k"`` or ``"eps"``) to a list of
    values. Selection uses only metrics the task schedule itself produces.
    Returns (best_config, results) where results is a list of
    (value, summary) pairs in grid order.
    """
    if len(grid) != 1:
        raise ConfigError("grid must vary exactly one field")
    (field_name, values), = grid.items()
    if field_name not in ("k", "eps"):
        raise ConfigError(f"grid field must be 'k' or 'eps', got {field_name!r}")
    if not values:
        raise ConfigError("grid must be nonempty")
    results = []
    for v in values:
        sub = replace(cfg, **{field_name: v})
        _, summary = run_experiment(sub)
        if field_name == "eps":
            summary["lambda"] = 1.0 / float(v)
        results.append((v, summary))
    best_value, _ = max(results, key=lambda r: r[1]["mean_max_accuracy"])
    return replace(cfg, **{field_name: best_value}), results


CSV_HEADER = [
    "model", "dataset", "slt", "param", "repetition",
    "task", "iteration", "accuracy", "loglik", "loss",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def metrics_csv(logs: list[MetricsLog]) -> str:
    """Render logs as CSV text (byte-stable for identical inputs)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for log in logs:
        head = [log.model, log.dataset, log.slt, log.param, log.repetition]
        for r in log.records:
            writer.writerow(
                [*head, r.task, r.iteration, _fmt(r.accuracy), _fmt(r.loglik), _fmt(r.loss)]
            )
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        for key in ("accuracy", "loglik", "loss"):
            row[key] = float(row[key]) if row[key] != "" else None
        row["repetition"] = int(row["repetition"])
        row["task"] = int(row["task"])
        row["iteration"] = int(row["iteration"])
        rows.append(row)
    return rows


def export(summary: dict, logs: list[MetricsLog], formats, out_dir, stem: str = "run"):
    """Write metrics/summary files; returns the list of paths written."""
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(formats, str):
        formats = [formats]
    paths = []
    for fmt in formats:
        if fmt == "csv":
            path = os.path.join(out_dir, f"{stem}_metrics.csv")
            with open(path, "w", newline="") as fh:
                fh.write(metrics_csv(logs))
        elif fmt == "json":
            path = os.path.join(out_dir, f"{stem}_summary.json")
            with open(path, "w") as fh:
                json.dump(summary, fh, sort_keys=True, indent=2)
                fh.write("\n")
        else:
            raise ConfigError(f"unknown export format {fmt!r}")
        paths.append(path)
    return paths


def match_boundaries(true_boundaries, detections, tolerance: int = 50):
    """Greedy one-to-one matching of detections to true switch iterations."""
    remaining = list(detections)
    matched = {}
    for b in true_boundaries:
        best = None
        for d in remaining:
            if d >= b and d - b <= tolerance and (best is None or d < best):
                best = d
        if best is not None:
            matched[b] = best
            remaining.remove(best)
    return matched, remaining
