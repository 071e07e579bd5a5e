"""Non-autoregressive backbone: phoneme encoder, style encoder, variance adaptor,
decoder and the two output heads (Mel for stage 1, vertices for stage 2).

Parameters live in a flat ``name -> Tensor`` dict; the first dotted component
of a name is its group (``phoneme_encoder``, ``style_encoder``, ``decoder``,
``head_s1``, ``head_s2``), which is the unit of freezing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import BackboneConfig
from .content import length_regulate
from .spline import resample_frames

FRAME_RATE = 62.5
GROUPS = ("phoneme_encoder", "style_encoder", "decoder", "head_s1", "head_s2")
STAGE_TRAINABLE = {
    1: ("phoneme_encoder", "style_encoder", "decoder", "head_s1"),
    2: ("style_encoder", "decoder", "head_s2"),
}
# fixed affine map taking log-Mel values to roughly unit scale for the feature stub
MEL_CENTER, MEL_SPREAD = -6.0, 4.0


def sinusoid_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class Stage2Output:
    frames: T.Tensor  # T x 3Nv at the audio feature rate
    hidden: T.Tensor  # T x s2_hidden activations feeding the last layer


class Backbone:
    def __init__(self, cfg: BackboneConfig, seed: int = 0, n_vertices: int | None = None,
                 mean_pose: np.ndarray | None = None):
        cfg.validate()
        self.cfg = cfg
        self.init_rng = np.random.default_rng(seed)
        self.rng = np.random.default_rng(seed + 1)  # dropout masks
        self.params: dict[str, T.Tensor] = {}
        self.stage = 1
        self._build()
        if n_vertices is not None:
            self.to_stage2(n_vertices, mean_pose)

    # -- construction -----------------------------------------------------
    def _xavier(self, name: str, shape: tuple, fan_in: int, fan_out: int) -> None:
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        self.params[name] = T.Tensor(self.init_rng.uniform(-lim, lim, shape), name=name)

    def _zeros(self, name: str, shape: tuple) -> None:
        self.params[name] = T.Tensor(np.zeros(shape), name=name)

    def _ones(self, name: str, shape: tuple) -> None:
        self.params[name] = T.Tensor(np.ones(shape), name=name)

    def _linear(self, name: str, n_in: int, n_out: int) -> None:
        self._xavier(f"{name}.w", (n_out, n_in), n_in, n_out)
        self._zeros(f"{name}.b", (n_out,))

    def _conv(self, name: str, n_in: int, n_out: int, k: int) -> None:
        self._xavier(f"{name}.w", (n_out, n_in, k), n_in * k, n_out * k)
        self._zeros(f"{name}.b", (n_out,))

    def _block(self, name: str) -> None:
        c = self.cfg
        for p in ("q", "k", "v", "o"):
            self._linear(f"{name}.attn_{p}", c.hidden, c.hidden)
        self._ones(f"{name}.ln1.g", (c.hidden,))
        self._zeros(f"{name}.ln1.b", (c.hidden,))
        k1, k2 = c.conv_kernels
        self._conv(f"{name}.conv1", c.hidden, c.filter, k1)
        self._conv(f"{name}.conv2", c.filter, c.hidden, k2)
        self._ones(f"{name}.ln2.g", (c.hidden,))
        self._zeros(f"{name}.ln2.b", (c.hidden,))

    def _build(self) -> None:
        c = self.cfg
        # N(0, 1/d) rows, scaled by sqrt(d) at lookup to match the positional encoding
        self.params["phoneme_encoder.embedding"] = T.Tensor(
            self.init_rng.normal(0.0, c.hidden ** -0.5, (c.phoneme_vocab, c.hidden)), name="phoneme_encoder.embedding")
        for i in range(c.encoder_blocks):
            self._block(f"phoneme_encoder.block{i}")
        if c.style_source == "mel":
            for s in range(2):
                self._conv(f"style_encoder.stub{s}.conv0", c.n_mels, c.stub_channels, 3)
                self._conv(f"style_encoder.stub{s}.conv1", c.stub_channels, c.stub_channels, 3)
            style_in = 2 * c.stub_channels
        else:
            style_in = c.style_input_dim
        self._linear("style_encoder.fc1", style_in, c.style_hidden)
        self._linear("style_encoder.fc2", c.style_hidden, c.style_dim)
        for i in range(c.decoder_blocks):
            self._block(f"decoder.block{i}")
        self._linear("head_s1", c.hidden, c.n_mels)

    def to_stage2(self, n_vertices: int, mean_pose: np.ndarray | None = None) -> None:
        """Drop the Mel head and attach a fresh vertex head.

        Both layers start uniform in (-0.01, 0.01); the output bias starts at
        ``mean_pose`` so initial predictions sit near the rest shape.
        """
        c = self.cfg
        for k in [k for k in self.params if k.startswith("head_s1")]:
            del self.params[k]
        u = lambda *shape: self.init_rng.uniform(-0.01, 0.01, shape)
        self.params["head_s2.fc1.w"] = T.Tensor(u(c.s2_hidden, c.hidden), name="head_s2.fc1.w")
        self.params["head_s2.fc1.b"] = T.Tensor(u(c.s2_hidden), name="head_s2.fc1.b")
        self.params["head_s2.fc2.w"] = T.Tensor(u(3 * n_vertices, c.s2_hidden), name="head_s2.fc2.w")
        bias = np.zeros(3 * n_vertices) if mean_pose is None else np.asarray(mean_pose, dtype=np.float64).reshape(-1)
        self.params["head_s2.fc2.b"] = T.Tensor(bias.copy(), name="head_s2.fc2.b")
        self.stage = 2

    # -- parameter bookkeeping -------------------------------------------
    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def trainable(self, stage: int | None = None) -> dict[str, T.Tensor]:
        keep = STAGE_TRAINABLE[stage or self.stage]
        return {k: v for k, v in self.params.items() if self.group_of(k) in keep}

    def frozen(self, stage: int | None = None) -> dict[str, T.Tensor]:
        keep = STAGE_TRAINABLE[stage or self.stage]
        return {k: v for k, v in self.params.items() if self.group_of(k) not in keep}

    def freeze_flags(self) -> dict[str, bool]:
        keep = STAGE_TRAINABLE[self.stage]
        present = {self.group_of(k) for k in self.params}
        return {g: g not in keep for g in GROUPS if g in present}

    @property
    def n_vertices(self) -> int | None:
        w = self.params.get("head_s2.fc2.w")
        return None if w is None else w.shape[0] // 3

    # -- layers -------------------------------------------------------------
    def _lin(self, x, name):
        return T.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def _conv1d(self, x, name):
        return T.conv1d(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def attention(self, x: T.Tensor, name: str) -> T.Tensor:
        c = self.cfg
        dk = c.hidden // c.heads
        q, k, v = (self._lin(x, f"{name}.attn_{p}") for p in "qkv")
        heads = []
        for h in range(c.heads):
            qh = T.slice_cols(q, h * dk, (h + 1) * dk)
            kh = T.slice_cols(k, h * dk, (h + 1) * dk)
            vh = T.slice_cols(v, h * dk, (h + 1) * dk)
            att = T.softmax_rows(T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dk)))
            heads.append(T.matmul(att, vh))
        merged = heads[0] if len(heads) == 1 else T.concat_cols(heads)
        return self._lin(merged, f"{name}.attn_o")

    def fft_block(self, x: T.Tensor, name: str, training: bool = False) -> T.Tensor:
        p, c = self.params, self.cfg
        a = T.dropout(self.attention(x, name), c.dropout, self.rng, training)
        x = T.layer_norm(T.add(x, a), p[f"{name}.ln1.g"], p[f"{name}.ln1.b"])
        f = self._conv1d(T.relu(self._conv1d(x, f"{name}.conv1")), f"{name}.conv2")
        f = T.dropout(f, c.dropout, self.rng, training)
        return T.layer_norm(T.add(x, f), p[f"{name}.ln2.g"], p[f"{name}.ln2.b"])

    def encode_phonemes(self, ids, training: bool = False) -> T.Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0 or ids.min() < 0 or ids.max() >= self.cfg.phoneme_vocab:
            raise IndexError(f"phoneme ids must lie in [0, {self.cfg.phoneme_vocab})")
        x = T.scale(T.gather_rows(self.params["phoneme_encoder.embedding"], ids), math.sqrt(self.cfg.hidden))
        x = T.add(x, T.Tensor(sinusoid_encoding(len(ids), self.cfg.hidden)))
        for i in range(self.cfg.encoder_blocks):
            x = self.fft_block(x, f"phoneme_encoder.block{i}", training)
        return x

    def style_streams(self, mel: np.ndarray, training: bool = False) -> list[T.Tensor]:
        """Desk-scale stand-in for the two pretrained speech encoders."""
        x = T.Tensor((np.asarray(mel) - MEL_CENTER) / MEL_SPREAD)
        out = []
        for s in range(2):
            h = T.relu(self._conv1d(x, f"style_encoder.stub{s}.conv0"))
            out.append(T.relu(self._conv1d(h, f"style_encoder.stub{s}.conv1")))
        return out

    def style_encode(self, streams: list[T.Tensor], training: bool = False) -> T.Tensor:
        """Concat streams, max-pool (k=2, s=2), average over time, then the MLP head.

        Returns a 1 x style_dim tensor in (-1, 1).
        """
        feats = streams[0] if len(streams) == 1 else T.concat_cols(streams)
        if feats.shape[0] < 2:
            raise ValueError(f"style features need at least 2 frames, got {feats.shape[0]}")
        pooled = T.mean_rows(T.maxpool_rows(feats, 2, 2))
        h = T.dropout(T.relu(self._lin(pooled, "style_encoder.fc1")), self.cfg.dropout, self.rng, training)
        return T.tanh(self._lin(h, "style_encoder.fc2"))

    def style_from_input(self, style_input, training: bool = False) -> T.Tensor:
        """Mel matrix when ``style_source == 'mel'``, feature matrix otherwise."""
        if self.cfg.style_source == "mel":
            return self.style_encode(self.style_streams(style_input, training), training)
        return self.style_encode([T.Tensor(style_input)], training)

    @staticmethod
    def variance_adapt(content: T.Tensor, durations, style: T.Tensor) -> T.Tensor:
        frames = length_regulate(content, durations)
        return T.add(frames, T.expand_rows(style, frames.shape[0]))

    def decode(self, adapted: T.Tensor, training: bool = False) -> T.Tensor:
        x = T.add(adapted, T.Tensor(sinusoid_encoding(adapted.shape[0], self.cfg.hidden)))
        for i in range(self.cfg.decoder_blocks):
            x = self.fft_block(x, f"decoder.block{i}", training)
        return x

    def decode_stage1(self, adapted: T.Tensor, training: bool = False) -> T.Tensor:
        return self._lin(self.decode(adapted, training), "head_s1")

    def decode_stage2(self, adapted: T.Tensor, training: bool = False) -> Stage2Output:
        h = T.tanh(self._lin(self.decode(adapted, training), "head_s2.fc1"))
        return Stage2Output(self._lin(h, "head_s2.fc2"), h)

    # -- end to end ---------------------------------------------------------
    def forward_stage1(self, ids, durations, style_input, training: bool = False) -> T.Tensor:
        content = self.encode_phonemes(ids, training)
        style = self.style_from_input(style_input, training)
        return self.decode_stage1(self.variance_adapt(content, durations, style), training)

    def forward_stage2(self, ids, durations, style_input, training: bool = False,
                       style: T.Tensor | None = None) -> Stage2Output:
        content = self.encode_phonemes(ids, training)
        if style is None:
            style = self.style_from_input(style_input, training)
        return self.decode_stage2(self.variance_adapt(content, durations, style), training)

    def animate(self, ids, durations, style_input, fps: float = 30.0,
                style: T.Tensor | None = None) -> np.ndarray:
        """Inference: vertex frames resampled to ``fps``."""
        out = self.forward_stage2(ids, durations, style_input, style=style)
        return resample_to_fps(out.frames.data, fps)


def resample_to_fps(frames, dst_fps: float, src_fps: float = FRAME_RATE):
    if frames.shape[0] < 4:
        raise ValueError(f"need at least 4 frames to resample, got {frames.shape[0]}")
    return resample_frames(frames, src_fps, dst_fps)
