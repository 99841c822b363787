"""Self-describing npz checkpoints for both model families.

Arrays are stored uncompressed and lossless (float64), so a reloaded model
reproduces forward outputs bit-for-bit and checkpoint size depends only on
parameter shapes, not on how many tasks were completed.
"""

from __future__ import annotations

import json

import numpy as np

from . import classifier as clf
from . import ewc, gmm
from .errors import FormatError
from .folding import FoldSpec
from .model import GmrModel, TrainConfig

FORMAT_GMR = "gmrlab-gmr-v1"
FORMAT_EWC = "gmrlab-ewc-v1"


def save_gmr(model: GmrModel, path, detector_config: dict | None = None) -> None:
    meta = {
        "format": FORMAT_GMR,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "fold_spec": {
            "fx": model.fold_spec.fx,
            "fy": model.fold_spec.fy,
            "dx": model.fold_spec.dx,
            "dy": model.fold_spec.dy,
        },
        "sigma2_min": model.gmm.sigma2_min,
        "anneal": {
            "grid_side": model.anneal.grid_side,
            "radius0": model.anneal.radius0,
            "radius_inf": model.anneal.radius_inf,
            "decay_iters": model.anneal.decay_iters,
            "step_count": model.anneal.step_count,
            "radius": model.anneal.radius,
        },
        "config": vars(model.config),
        "seed": model.seed,
        "detector": detector_config or {},
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        free_weights=model.gmm.free_weights,
        mu=model.gmm.mu,
        log_sigma=model.gmm.log_sigma,
        W=model.clf.W,
        b=model.clf.b,
    )


def _load_meta(data, expected_format):
    meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("format") != expected_format:
        raise FormatError(f"checkpoint format {meta.get('format')!r} != {expected_format!r}")
    return meta


def load_gmr(path) -> GmrModel:
    with np.load(path) as data:
        meta = _load_meta(data, FORMAT_GMR)
        params = gmm.GmmParams(
            free_weights=data["free_weights"].copy(),
            mu=data["mu"].copy(),
            log_sigma=data["log_sigma"].copy(),
            sigma2_min=meta["sigma2_min"],
        )
        readout = clf.ClassifierParams(W=data["W"].copy(), b=data["b"].copy())
    anneal = gmm.AnnealState(**meta["anneal"])
    model = GmrModel(
        input_shape=tuple(meta["input_shape"]),
        num_classes=meta["num_classes"],
        fold_spec=FoldSpec(**meta["fold_spec"]),
        gmm=params,
        anneal=anneal,
        clf=readout,
        config=TrainConfig(**meta["config"]),
        seed=meta["seed"],
    )
    model.validate()
    return model


def save_ewc(p: ewc.DnnParams, anchors: ewc.EwcAnchors, path) -> None:
    meta = {
        "format": FORMAT_EWC,
        "layer_sizes": list(p.layer_sizes),
        "lam": anchors.lam,
        "n_anchors": len(anchors),
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    }
    for i, a in enumerate(p.params):
        arrays[f"param_{i}"] = a
    for t, (snap, fisher) in enumerate(zip(anchors.snapshots, anchors.fishers)):
        for i, a in enumerate(snap):
            arrays[f"anchor_{t}_{i}"] = a
        for i, a in enumerate(fisher):
            arrays[f"fisher_{t}_{i}"] = a
    np.savez(path, **arrays)


def load_ewc(path):
    with np.load(path) as data:
        meta = _load_meta(data, FORMAT_EWC)
        n_params = 2 * (len(meta["layer_sizes"]) - 1)
        p = ewc.DnnParams(params=[data[f"param_{i}"].copy() for i in range(n_params)])
        anchors = ewc.EwcAnchors(lam=meta["lam"])
        for t in range(meta["n_anchors"]):
            anchors.append(
                [data[f"anchor_{t}_{i}"].copy() for i in range(n_params)],
                [data[f"fisher_{t}_{i}"].copy() for i in range(n_params)],
            )
    return p, anchors
