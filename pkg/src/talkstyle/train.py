"""Two-stage training: Adam with warm-up schedules, global-norm clipping,
group freezing, CSV logging and periodic checkpoints."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_for_stage2, save_checkpoint
from .config import RunConfig, StageSchedule
from .content import quantize_durations
from .losses import loss_geometry, loss_lap_mod, loss_stage1, loss_temporal, loss_tikhonov
from .mesh import GraphLaplacian, MeshTopology, build_laplacian
from .model import FRAME_RATE, Backbone
from .spline import resample_matrix, video_frame_count

BETA1, BETA2, ADAM_EPS = 0.9, 0.98, 1e-9


class TrainingError(ValueError):
    pass


def lr_at(step: int, schedule: StageSchedule) -> float:
    if step < 1:
        raise ValueError(f"learning-rate schedule starts at step 1, got {step}")
    w = schedule.warmup_steps
    if schedule.stage == 1:
        return schedule.lr_constant * min(step ** -0.5, step * w ** -1.5)
    return schedule.lr_constant * min(step / w, math.sqrt(w / step))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads: list[np.ndarray], max_norm: float = 1.0) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the factor applied (1.0 when nothing was clipped).
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for g in grads:
        g *= factor
    return factor


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float, frozen: set[str] | frozenset = frozenset()) -> None:
    """One bias-corrected Adam update of the non-frozen entries of ``params``, in place."""
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    for name, g in grads.items():
        if name in frozen:
            continue
        p = params[name]
        if g.shape != p.shape:
            raise T.ShapeError(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# data adapters


@dataclass
class Example:
    """What one training step needs from a corpus sequence."""
    id: str
    ids: np.ndarray
    durations: np.ndarray
    style_input: np.ndarray
    mel: np.ndarray | None = None
    anim: np.ndarray | None = None
    fps: float = 30.0
    speaker: int = -1


def make_example(seq, cfg: RunConfig) -> Example:
    d = quantize_durations(seq.alignment, FRAME_RATE)
    n = int(d.sum())
    mel = np.asarray(seq.mel.values, dtype=np.float64)
    if abs(mel.shape[0] - n) > 1:
        raise TrainingError(f"{seq.id}: alignment is {n} frames but mel has {mel.shape[0]}")
    if mel.shape[0] < n:  # within one frame: repeat the last mel frame
        mel = np.concatenate([mel, mel[-1:]])
    style = mel if cfg.backbone.style_source == "mel" else np.asarray(seq.style_features, dtype=np.float64)
    anim = None
    if getattr(seq, "anim", None) is not None:
        anim = np.asarray(seq.anim.frames, dtype=np.float64)
        want = video_frame_count(n, FRAME_RATE, seq.anim.fps)
        if abs(anim.shape[0] - want) > 1:
            raise TrainingError(f"{seq.id}: animation has {anim.shape[0]} frames, alignment implies {want}")
        anim = anim[:want] if anim.shape[0] >= want else np.concatenate([anim, anim[-1:]])
    return Example(seq.id, seq.alignment.ids, d, style, mel[:n], anim,
                   getattr(seq.anim, "fps", 30.0), getattr(seq, "speaker", -1))


def eval_subset(examples: list[Example], size: int) -> list[Example]:
    """Fixed, evenly spaced subset so evaluation is comparable across steps."""
    if size <= 0 or size >= len(examples):
        return list(examples)
    idx = np.linspace(0, len(examples) - 1, size).round().astype(int)
    return [examples[i] for i in idx]


class _Order:
    """Seeded epoch-wise shuffling over example indices."""

    def __init__(self, n: int, seed: int):
        self.n, self.rng, self.queue = n, np.random.default_rng(seed), []

    def next(self) -> int:
        if not self.queue:
            self.queue = list(self.rng.permutation(self.n))
        return int(self.queue.pop())


@dataclass
class TrainResult:
    model: Backbone
    history: list[dict]
    checkpoint: str | None = None

    def column(self, key: str) -> list[float]:
        return [row[key] for row in self.history if row.get(key) not in (None, "")]


def _write_log(path: str | None, rows: list[dict], columns: list[str]) -> None:
    if not path:
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _step_update(model: Backbone, trainable: dict[str, T.Tensor], tape: T.Tape, loss: T.Tensor,
                 state: OptimizerState, lr: float, clip: float) -> float:
    T.zero_grad(trainable.values())
    T.backward(tape, loss)
    grads = {k: p.grad for k, p in trainable.items()}
    norm = global_norm(grads.values())
    clip_global_norm(list(grads.values()), clip)
    adam_step(model.params, grads, state, lr)
    return norm


def _prepare(model: Backbone, stage: int) -> dict[str, T.Tensor]:
    trainable = model.trainable(stage)
    for k, p in model.params.items():
        p.requires_grad = k in trainable
    return trainable


# ---------------------------------------------------------------------------
# stage 1


def stage1_loss(model: Backbone, ex: Example, training: bool) -> T.Tensor:
    pred = model.forward_stage1(ex.ids, ex.durations, ex.style_input, training)
    return loss_stage1(pred, ex.mel)


def evaluate_stage1(model: Backbone, examples: list[Example]) -> float:
    return float(np.mean([stage1_loss(model, ex, False).item() for ex in examples]))


STAGE1_COLUMNS = ["step", "lr", "loss", "grad_norm", "eval_loss"]


def train_stage1(sequences, cfg: RunConfig, log_path: str | None = None, out_dir: str | None = None,
                 model: Backbone | None = None) -> TrainResult:
    """Minimize the Mel MAE; one utterance per step, seeded shuffling."""
    cfg.validate()
    if not sequences:
        raise TrainingError("stage 1 needs a non-empty corpus")
    sched = cfg.schedule(1)
    examples = [make_example(s, cfg) for s in sequences]
    evals = eval_subset(examples, cfg.eval_size)
    if model is None:
        model = Backbone(cfg.backbone, seed=cfg.seed)
        if cfg.init_head_bias:
            model.params["head_s1.b"].data = np.concatenate([ex.mel for ex in examples]).mean(axis=0)
    trainable = _prepare(model, 1)
    state = OptimizerState()
    order = _Order(len(examples), cfg.seed + 17)
    history = [{"step": 0, "lr": 0.0, "loss": "", "grad_norm": "", "eval_loss": evaluate_stage1(model, evals)}]
    ckpt = None
    for step in range(1, sched.max_steps + 1):
        ex = examples[order.next()]
        lr = lr_at(step, sched)
        with T.Tape() as tape:
            loss = stage1_loss(model, ex, True)
        norm = _step_update(model, trainable, tape, loss, state, lr, sched.clip_norm)
        row = {"step": step, "lr": lr, "loss": loss.item(), "grad_norm": norm, "eval_loss": ""}
        if step % cfg.eval_every == 0 or step == sched.max_steps:
            row["eval_loss"] = evaluate_stage1(model, evals)
        if step % cfg.log_every == 0 or row["eval_loss"] != "" or step == 1:
            history.append(row)
        if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"step{step:06d}"), model, cfg, step)
    if out_dir:
        ckpt = save_checkpoint(out_dir, model, cfg, sched.max_steps)
    _write_log(log_path, history, STAGE1_COLUMNS)
    return TrainResult(model, history, ckpt)


# ---------------------------------------------------------------------------
# stage 2


class Stage2Context:
    """Per-run constants: topology, Laplacian and cached frozen-encoder outputs."""

    def __init__(self, model: Backbone, topology: MeshTopology, cfg: RunConfig):
        self.model, self.topology, self.cfg = model, topology, cfg
        self.lap: GraphLaplacian = build_laplacian(topology)
        self._content: dict[str, np.ndarray] = {}

    def content(self, ex: Example) -> T.Tensor:
        # the phoneme encoder is frozen in stage 2, so its output per sequence is constant
        if ex.id not in self._content:
            self._content[ex.id] = self.model.encode_phonemes(ex.ids, training=False).data
        return T.Tensor(self._content[ex.id])

    def predict(self, ex: Example, training: bool):
        m = self.model
        style = m.style_from_input(ex.style_input, training)
        out = m.decode_stage2(m.variance_adapt(self.content(ex), ex.durations, style), training)
        frames = T.const_matmul(resample_matrix(out.frames.shape[0], FRAME_RATE, ex.fps), out.frames)
        return frames, out

    def loss(self, ex: Example, training: bool) -> tuple[T.Tensor, dict]:
        lw, p = self.cfg.loss, self.model.params
        pred, _ = self.predict(ex, training)
        geo = loss_geometry(pred, ex.anim, self.topology, lw)
        tmp = loss_temporal(pred, ex.anim, self.topology, lw)
        lap = loss_lap_mod(p["head_s2.fc2.w"], self.lap, p["head_s2.fc2.b"] if lw.regularize_bias else None)
        # same objective as loss_stage2, sharing the already-built terms
        total = T.add(geo, tmp)
        if lw.lambda_lap > 0:
            total = T.add(total, T.scale(lap, lw.lambda_lap))
        if lw.lambda_tik > 0:
            total = T.add(total, T.scale(loss_tikhonov(p["head_s2.fc2.w"]), lw.lambda_tik))
        return total, {"geometry": geo.item(), "temporal": tmp.item(), "lap_mod": lap.item()}


def mean_pose(sequences) -> np.ndarray:
    return np.concatenate([np.asarray(s.anim.frames, dtype=np.float64) for s in sequences]).mean(axis=0)


STAGE2_COLUMNS = ["step", "lr", "loss", "geometry", "temporal", "lap_mod", "grad_norm", "eval_loss"]


def train_stage2(sequences, topology: MeshTopology, stage1_checkpoint: str, cfg: RunConfig,
                 log_path: str | None = None, out_dir: str | None = None) -> TrainResult:
    """Fine-tune style encoder, decoder and the vertex head from a stage-1 checkpoint."""
    cfg.validate()
    if not sequences:
        raise TrainingError("stage 2 needs a non-empty corpus")
    pose = mean_pose(sequences) if cfg.init_head_bias else None
    model, ckpt_cfg, _ = load_for_stage2(stage1_checkpoint, topology.vertex_count, pose)
    if ckpt_cfg.backbone != cfg.backbone:
        diff = [k for k, v in vars(cfg.backbone).items() if getattr(ckpt_cfg.backbone, k) != v]
        raise TrainingError(f"checkpoint backbone differs from run config in {diff}")
    model.rng = np.random.default_rng(cfg.seed + 1)
    sched = cfg.schedule(2)
    examples = [make_example(s, cfg) for s in sequences]
    if any(ex.anim is None for ex in examples):
        raise TrainingError("stage 2 needs ground-truth animations")
    evals = eval_subset(examples, cfg.eval_size)
    ctx = Stage2Context(model, topology, cfg)
    trainable = _prepare(model, 2)
    state = OptimizerState()
    order = _Order(len(examples), cfg.seed + 29)

    def evaluate() -> float:
        return float(np.mean([ctx.loss(ex, False)[0].item() for ex in evals]))

    history = [{"step": 0, "lr": 0.0, "loss": "", "eval_loss": evaluate()}]
    for step in range(1, sched.max_steps + 1):
        ex = examples[order.next()]
        lr = lr_at(step, sched)
        with T.Tape() as tape:
            loss, parts = ctx.loss(ex, True)
        norm = _step_update(model, trainable, tape, loss, state, lr, sched.clip_norm)
        row = {"step": step, "lr": lr, "loss": loss.item(), "grad_norm": norm, "eval_loss": "", **parts}
        if step % cfg.eval_every == 0 or step == sched.max_steps:
            row["eval_loss"] = evaluate()
        if step % cfg.log_every == 0 or row["eval_loss"] != "" or step == 1:
            history.append(row)
        if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"step{step:06d}"), model, cfg, step)
    ckpt = save_checkpoint(out_dir, model, cfg, sched.max_steps) if out_dir else None
    _write_log(log_path, history, STAGE2_COLUMNS)
    return TrainResult(model, history, ckpt)


def predict_animation(model: Backbone, ex: Example) -> np.ndarray:
    """Inference-mode prediction at the example's fps, same length as its ground truth."""
    frames = model.animate(ex.ids, ex.durations, ex.style_input, ex.fps)
    return frames
