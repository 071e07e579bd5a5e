"""Seeded experiment runners shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, apply_overrides, desk_config
from .losses import METRIC_COLUMNS, evaluate_sequence, loss_lap_full
from .mesh import build_laplacian
from .model import Backbone
from .synth import Corpus, gen_corpus
from .train import TrainResult, make_example, train_stage1, train_stage2

# loss-term variants of the stage-2 ablation
VARIANTS = {
    "ver_only": {"vertex_mask": False, "landmark_loss": False},
    "wei_ver": {"vertex_mask": True, "landmark_loss": False},
    "wei_ver_lmk": {"vertex_mask": True, "landmark_loss": True},
}


def acceptance_corpus(seed: int = 7) -> Corpus:
    return gen_corpus(4, 80, seed)


def stage1_config(**overrides) -> RunConfig:
    return desk_config(**{"max_steps": 2000, "eval_every": 250, "eval_size": 8, **overrides})


# stage-2 seeds of the paired loss-term ablation
ABLATION_SEEDS = (0, 1, 2)

# desk-scale stage-2 schedule: the reference peak lr of 0.01 saturates the
# style tanh at hidden=32 and flattens the predicted mouth gap
STAGE2_DESK = {"max_steps": 2000, "lr_constant": 0.003, "eval_every": 500, "eval_size": 8}


def stage2_config(variant: str = "wei_ver_lmk", lambda_lap: float = 1.0, **overrides) -> RunConfig:
    cfg = desk_config(**{**STAGE2_DESK, **overrides})
    return apply_overrides(cfg, {**VARIANTS[variant], "lambda_lap": lambda_lap})


def run_stage1(corpus: Corpus, out_dir: str, cfg: RunConfig | None = None) -> TrainResult:
    cfg = cfg or stage1_config()
    return train_stage1(corpus.split("train"), cfg, log_path=os.path.join(out_dir, "loss.csv"), out_dir=out_dir)


def run_stage2(corpus: Corpus, stage1_ckpt: str, out_dir: str, cfg: RunConfig) -> TrainResult:
    return train_stage2(corpus.split("train"), corpus.topology, stage1_ckpt, cfg,
                        log_path=os.path.join(out_dir, "loss.csv"), out_dir=out_dir)


@dataclass
class SplitReport:
    metrics: dict[str, float]
    lap_full: float
    per_sequence: list[dict]


def predict(model: Backbone, seq, cfg: RunConfig) -> np.ndarray:
    ex = make_example(seq, cfg)
    return model.animate(ex.ids, ex.durations, ex.style_input, ex.fps)


def evaluate_split(model: Backbone, corpus: Corpus, cfg: RunConfig, split: str = "test") -> SplitReport:
    lap = build_laplacian(corpus.topology)
    rows, laps = [], []
    for s in corpus.split(split):
        pred = predict(model, s, cfg)
        gt = np.asarray(s.anim.frames, dtype=np.float64)
        rows.append(evaluate_sequence(pred, gt, corpus.topology, s.alignment, s.anim.fps))
        laps.append(loss_lap_full(pred, lap).item())
    means = {c: float(np.nanmean([r[c] for r in rows])) for c in METRIC_COLUMNS}
    return SplitReport(means, float(np.mean(laps)), rows)


def style_vectors(model: Backbone, sequences, cfg: RunConfig) -> np.ndarray:
    return np.stack([model.style_from_input(make_example(s, cfg).style_input).data.reshape(-1)
                     for s in sequences])


def cosine_distance_matrix(x: np.ndarray) -> np.ndarray:
    u = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    return 1.0 - u @ u.T


def within_between(vectors: np.ndarray, labels) -> tuple[float, float]:
    """Mean cosine distance over same-label pairs and over different-label pairs."""
    labels = np.asarray(labels)
    d = cosine_distance_matrix(vectors)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    return float(d[same & off].mean()), float(d[~same].mean())
