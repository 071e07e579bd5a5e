"""Training losses (Mel MAE, geometry, temporal, Laplacian, Tikhonov) and evaluation metrics.

Losses take Tensors so they can sit on a tape; metrics are plain numpy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import LossWeights
from .content import BILABIALS, AlignedPhonemeSeq
from .mesh import GraphLaplacian, MeshTopology, mouth_gaps


class MetricUndefinedError(ValueError):
    pass


def _t(x) -> T.Tensor:
    return x if isinstance(x, T.Tensor) else T.Tensor(x)


def loss_stage1(pred, target) -> T.Tensor:
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"loss_stage1: {pred.shape} vs {target.shape}")
    return T.mean_all(T.abs_(T.sub(pred, target)))


def _coord_columns(vertex_ids: np.ndarray) -> np.ndarray:
    return (3 * np.asarray(vertex_ids)[:, None] + np.arange(3)).reshape(-1)


def _weighted_mae(resid: T.Tensor, col_weights: np.ndarray) -> T.Tensor:
    n = resid.shape[0]
    w = np.broadcast_to(col_weights, resid.shape)
    total = T.sum_all(T.mul(T.abs_(resid), T.Tensor(w)))
    return T.scale(total, 1.0 / (col_weights.sum() * n))


def _geometry_terms(resid: T.Tensor, topology: MeshTopology, lw: LossWeights) -> T.Tensor:
    nv = topology.vertex_count
    if resid.shape[1] != 3 * nv:
        raise T.ShapeError(f"animation has {resid.shape[1]} columns, topology needs {3 * nv}")
    vw = topology.region_weights if lw.vertex_mask else np.ones(nv)
    loss = _weighted_mae(resid, np.repeat(vw, 3))
    if lw.landmark_loss and topology.landmark_indices.size:
        lmw = np.ones(topology.landmark_indices.size)
        lmw[topology.mouth_landmark_rows] = lw.mouth_landmark_weight
        cols = _coord_columns(topology.landmark_indices)
        loss = T.add(loss, _weighted_mae(T.gather_cols(resid, cols), np.repeat(lmw, 3)))
    return loss


def loss_geometry(pred, gt, topology: MeshTopology, lw: LossWeights) -> T.Tensor:
    """Region-weighted vertex MAE plus mouth-up-weighted landmark MAE.

    Each term is normalized by ``3 * T * sum(weights)``, so scaling all
    weights leaves the value unchanged.
    """
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape:
        raise T.ShapeError(f"loss_geometry: {pred.shape} vs {gt.shape}")
    return _geometry_terms(T.sub(pred, gt), topology, lw)


def frame_diff(x: T.Tensor) -> T.Tensor:
    n = x.shape[0]
    return T.sub(T.slice_rows(x, 1, n), T.slice_rows(x, 0, n - 1))


def loss_temporal(pred, gt, topology: MeshTopology, lw: LossWeights) -> T.Tensor:
    pred, gt = _t(pred), _t(gt)
    if pred.shape[0] < 2:
        raise ValueError("temporal loss needs at least 2 frames")
    return loss_geometry(frame_diff(pred), frame_diff(gt), topology, lw)


def lap_energy(columns, lap: GraphLaplacian) -> T.Tensor:
    """Mean squared umbrella Laplacian over the columns of a ``3Nv x K`` matrix.

    Each column is read as an ``Nv x 3`` vertex field and the Laplacian is
    applied per coordinate.
    """
    m = _t(columns)
    rows, k = m.shape
    nv = lap.vertex_count
    if rows != 3 * nv:
        raise T.ShapeError(f"{rows} rows but topology has {nv} vertices (needs {3 * nv})")
    per_vertex = T.reshape(m, (nv, 3 * k))
    return T.mean_all(T.square(T.const_matmul(lap.matrix, per_vertex)))


def loss_lap_mod(weight, lap: GraphLaplacian, bias=None) -> T.Tensor:
    """Laplacian penalty on the output layer's columns (and its bias) instead of on frames."""
    w = _t(weight)
    if bias is not None:
        w = T.concat_cols([w, T.reshape(_t(bias), (w.shape[0], 1))])
    return lap_energy(w, lap)


def loss_lap_full(pred_anim, lap: GraphLaplacian) -> T.Tensor:
    """Laplacian penalty on every predicted frame; cost grows with T."""
    return lap_energy(T.transpose(_t(pred_anim)), lap)


def loss_tikhonov(weight) -> T.Tensor:
    return T.mean_all(T.square(_t(weight)))


def loss_stage2(pred, gt, weight, topology: MeshTopology, lw: LossWeights,
                lap: GraphLaplacian | None = None, bias=None) -> T.Tensor:
    pred, gt = _t(pred), _t(gt)
    loss = T.add(loss_geometry(pred, gt, topology, lw), loss_temporal(pred, gt, topology, lw))
    if lw.lambda_lap > 0:
        if lap is None:
            raise ValueError("lambda_lap > 0 needs a Laplacian")
        reg = loss_lap_mod(weight, lap, bias if lw.regularize_bias else None)
        loss = T.add(loss, T.scale(reg, lw.lambda_lap))
    if lw.lambda_tik > 0:
        loss = T.add(loss, T.scale(loss_tikhonov(weight), lw.lambda_tik))
    return loss


# ---------------------------------------------------------------------------
# metrics


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"metric inputs differ in shape: {pred.shape} vs {gt.shape}")
    return pred, gt


def _vertex_errors(pred, gt) -> np.ndarray:
    d = (pred - gt).reshape(pred.shape[0], -1, 3)
    return np.sqrt((d * d).sum(axis=2))  # T x Nv


def metric_dver(pred, gt, topology: MeshTopology | None = None) -> float:
    pred, gt = _pair(pred, gt)
    return float(_vertex_errors(pred, gt).mean())


def metric_dlmk(pred, gt, topology: MeshTopology) -> float:
    pred, gt = _pair(pred, gt)
    return float(_vertex_errors(pred, gt)[:, topology.landmark_indices].mean())


def metric_lip_max(pred, gt, topology: MeshTopology) -> float:
    pred, gt = _pair(pred, gt)
    err = _vertex_errors(pred, gt)[:, topology.mouth_landmark_indices]
    return float(err.max(axis=1).mean())


def metric_dsigma(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    if pred.shape[0] < 2:
        raise ValueError("d_sigma needs at least 2 frames")
    return float(np.sqrt(abs(pred.var(axis=0).mean() - gt.var(axis=0).mean())))


@dataclass(frozen=True)
class ClosureEvent:
    frame_index: int
    phoneme: str


def detect_closures(aligned: AlignedPhonemeSeq, fps: float, n_frames: int | None = None) -> list[ClosureEvent]:
    """One event per B/P/M interval, at the video frame nearest its midpoint."""
    events = []
    for e in aligned.entries:
        base = e.phoneme.base
        if base not in BILABIALS:
            continue
        f = int(np.floor(0.5 * (e.start + e.end) * fps + 0.5))
        if n_frames is not None:
            f = min(max(f, 0), n_frames - 1)
        events.append(ClosureEvent(f, base))
    return events


def metric_dclose(pred, events: list[ClosureEvent], topology: MeshTopology, k: int) -> float:
    """Mean over events of the smallest predicted mouth gap within ``+-k`` frames."""
    if not events:
        raise MetricUndefinedError("d_close is undefined without closure events")
    gaps = mouth_gaps(np.asarray(pred), topology)
    n = gaps.size
    vals = [gaps[max(0, ev.frame_index - k):min(n, ev.frame_index + k + 1)].min() for ev in events]
    return float(np.mean(vals))


METRIC_COLUMNS = ("d_ver", "d_lmk", "lip_max", "d_sigma", "d_close_0", "d_close_1", "d_close_2", "d_close_3")


def evaluate_sequence(pred, gt, topology: MeshTopology, aligned: AlignedPhonemeSeq | None, fps: float) -> dict:
    pred, gt = _pair(pred, gt)
    row = {
        "d_ver": metric_dver(pred, gt, topology),
        "d_lmk": metric_dlmk(pred, gt, topology),
        "lip_max": metric_lip_max(pred, gt, topology),
        "d_sigma": metric_dsigma(pred, gt),
    }
    events = detect_closures(aligned, fps, pred.shape[0]) if aligned is not None else []
    for k in range(4):
        row[f"d_close_{k}"] = metric_dclose(pred, events, topology, k) if events else float("nan")
    return row
