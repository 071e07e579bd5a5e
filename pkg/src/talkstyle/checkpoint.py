"""Checkpoints: a directory of VTSR tensors plus ``manifest.json``.

Tensors are stored as float32, so a model loaded from disk holds the
float32-rounded weights; save -> load -> save is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .config import RunConfig, from_flat
from .model import Backbone
from .tensor import Tensor
from .tensorio import TensorFileError, encode, decode

FORMAT = "talkstyle-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


def _file_name(param: str) -> str:
    return param.replace("/", "_") + ".vtsr"


def save_checkpoint(path: str | os.PathLike, model: Backbone, cfg: RunConfig, step: int,
                    extra: dict | None = None) -> str:
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    tensors = {}
    for name in sorted(model.params):
        buf = encode(model.params[name].data)
        fname = _file_name(name)
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(buf)
        tensors[name] = {"file": fname, "shape": list(model.params[name].shape),
                         "sha256": hashlib.sha256(buf).hexdigest()}
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "stage": model.stage,
        "step": int(step),
        "n_vertices": model.n_vertices,
        "config": cfg.flat(),
        "freeze_flags": model.freeze_flags(),
        "tensors": tensors,
        "extra": extra or {},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def read_manifest(path: str | os.PathLike) -> dict:
    mpath = os.path.join(os.fspath(path), "manifest.json")
    if not os.path.isfile(mpath):
        raise CheckpointError(f"{path}: no manifest.json")
    with open(mpath) as fh:
        man = json.load(fh)
    if man.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint (format {man.get('format')!r})")
    if man.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {man.get('version')} != {VERSION}")
    return man


def load_checkpoint(path: str | os.PathLike) -> tuple[Backbone, RunConfig, dict]:
    """Rebuild the model exactly as saved; returns ``(model, config, manifest)``."""
    man = read_manifest(path)
    cfg = from_flat(man["config"])
    model = Backbone(cfg.backbone, seed=cfg.seed, n_vertices=man["n_vertices"] if man["stage"] == 2 else None)
    if set(model.params) != set(man["tensors"]):
        missing = sorted(set(model.params) ^ set(man["tensors"]))
        raise CheckpointError(f"{path}: parameter set does not match config: {missing[:5]}")
    for name, info in man["tensors"].items():
        fpath = os.path.join(os.fspath(path), info["file"])
        try:
            with open(fpath, "rb") as fh:
                buf = fh.read()
        except OSError as exc:
            raise CheckpointIntegrityError(f"{fpath}: {exc.strerror}") from None
        if hashlib.sha256(buf).hexdigest() != info["sha256"]:
            raise CheckpointIntegrityError(f"{fpath}: checksum mismatch")
        try:
            arr = decode(buf, fpath)
        except TensorFileError as exc:
            raise CheckpointIntegrityError(str(exc)) from None
        if list(arr.shape) != info["shape"] or arr.shape != model.params[name].shape:
            raise CheckpointIntegrityError(f"{fpath}: shape {arr.shape} != {tuple(info['shape'])}")
        model.params[name] = Tensor(arr, name=name)
    return model, cfg, man


def load_for_stage2(path: str | os.PathLike, n_vertices: int,
                    mean_pose: np.ndarray | None = None) -> tuple[Backbone, RunConfig, dict]:
    """Load a checkpoint for stage-2 training.

    A stage-1 checkpoint has its Mel head replaced by a fresh vertex head; a
    stage-2 checkpoint must match ``n_vertices``.
    """
    model, cfg, man = load_checkpoint(path)
    if model.stage == 1:
        model.to_stage2(n_vertices, mean_pose)
    elif model.n_vertices != n_vertices:
        raise CheckpointError(f"checkpoint has {model.n_vertices} vertices, corpus has {n_vertices}")
    return model, cfg, man
