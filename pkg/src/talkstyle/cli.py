"""``talkstyle`` command line.

Every failure prints exactly one line ``error: <kind>: <message>`` on stderr
and exits nonzero (2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import audio, content
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .losses import METRIC_COLUMNS, evaluate_sequence
from .mesh import MeshError, VertexAnim, load_topology, save_obj
from .model import FRAME_RATE
from .synth import gen_corpus, load_corpus, write_corpus
from .tensorio import TensorFileError, load_tensor, save_csv, save_tensor
from .textgrid import TextGridError
from .train import TrainingError, make_example, train_stage1, train_stage2


class UsageError(Exception):
    pass


class CommandError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# helpers


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise CommandError("path", f"{what} not found: {path}")
    return path


def _config(args) -> RunConfig:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    for key in ("max_steps", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    cfg = load_config(args.config, overrides)
    return cfg


def _log_config(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    text = cfg.to_text()
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(text)
    sys.stderr.write("resolved config:\n" + "".join("  " + line + "\n" for line in text.splitlines()))


def _read_input_matrix(path: str) -> tuple[np.ndarray, str]:
    """A WAV file becomes MelFrames; a VTSR file is taken as-is."""
    _require_file(path, "input")
    if path.lower().endswith(".wav"):
        return audio.mel_spectrogram(audio.load_wav(path)).values, "mel"
    arr = load_tensor(path)
    if arr.ndim != 2:
        raise CommandError("input", f"{path}: expected a 2-D tensor, got shape {arr.shape}")
    return arr.astype(np.float64), "mel" if arr.shape[1] == audio.N_MELS else "features"


def _style_matrix(path: str, cfg: RunConfig) -> np.ndarray:
    mat, kind = _read_input_matrix(path)
    want = "mel" if cfg.backbone.style_source == "mel" else "features"
    if kind != want and not (want == "features" and mat.shape[1] == cfg.backbone.style_input_dim):
        raise CommandError("input", f"{path}: model expects {want} style input, file has {mat.shape[1]} columns")
    return mat


# ---------------------------------------------------------------------------
# commands


def cmd_extract_mel(args) -> None:
    _require_file(args.wav, "wav")
    try:
        mel = audio.mel_spectrogram(audio.load_wav(args.wav))
    except audio.AudioFormatError as exc:
        raise CommandError("audio", f"{args.wav}: {exc}") from None
    out = args.out or os.path.splitext(args.wav)[0] + ".mel.vtsr"
    save_tensor(out, mel.values)
    preview = args.preview or os.path.splitext(out)[0] + ".csv"
    save_csv(preview, mel.values[: args.preview_rows], [f"mel{i}" for i in range(audio.N_MELS)])
    print(f"{out}\t{mel.values.shape[0]}x{mel.values.shape[1]}")


def cmd_gen_corpus(args) -> None:
    corpus = gen_corpus(args.speakers, args.sequences, args.seed, fps=args.fps)
    path = write_corpus(corpus, args.out)
    print(path)


def _corpus_split(manifest: str, split: str):
    corpus = load_corpus(_require_file(manifest, "corpus manifest"))
    if split not in corpus.splits:
        raise CommandError("corpus", f"no split {split!r} in {manifest}")
    return corpus, corpus.split(split)


def cmd_train_stage1(args) -> None:
    cfg = _config(args)
    _log_config(cfg, args.out)
    _, seqs = _corpus_split(args.corpus, args.split)
    log = args.log or os.path.join(args.out, "loss.csv")
    res = train_stage1(seqs, cfg, log_path=log, out_dir=args.out)
    print(res.checkpoint)


def cmd_train_stage2(args) -> None:
    if not args.stage1_checkpoint:
        raise UsageError("train-stage2 requires --stage1-checkpoint")
    cfg = _config(args)
    _log_config(cfg, args.out)
    corpus, seqs = _corpus_split(args.corpus, args.split)
    log = args.log or os.path.join(args.out, "loss.csv")
    res = train_stage2(seqs, corpus.topology, args.stage1_checkpoint, cfg, log_path=log, out_dir=args.out)
    print(res.checkpoint)


def cmd_infer(args) -> None:
    model, cfg, man = load_checkpoint(args.checkpoint)
    if man["stage"] != 2:
        raise CommandError("stage", f"{args.checkpoint} is a stage-{man['stage']} checkpoint; infer needs stage 2")
    aligned = content.parse_textgrid(_require_file(args.textgrid, "textgrid"))
    durations = content.quantize_durations(aligned, FRAME_RATE)
    driving, kind = _read_input_matrix(args.driving)
    if kind == "mel" and abs(driving.shape[0] - int(durations.sum())) > 1:
        raise CommandError("length", f"alignment spans {int(durations.sum())} frames, "
                                     f"driving input has {driving.shape[0]}")
    if args.style_ref:
        style_in = _style_matrix(args.style_ref, cfg)
    else:
        style_in = _style_matrix(args.driving, cfg)
    frames = model.animate(aligned.ids, durations, style_in, args.fps)
    save_tensor(args.out, frames)
    if args.obj_dir:
        topo = load_topology(_require_file(args.topology, "topology")) if args.topology else None
        if topo is None:
            raise UsageError("--obj-dir needs --topology")
        os.makedirs(args.obj_dir, exist_ok=True)
        for i, f in enumerate(frames):
            save_obj(os.path.join(args.obj_dir, f"frame{i:05d}.obj"), f, topo)
    print(f"{args.out}\t{frames.shape[0]} frames @ {args.fps:g} fps")


def cmd_edit(args) -> None:
    seq = content.parse_textgrid(_require_file(args.textgrid, "textgrid"))
    if args.replace:
        old, new = args.replace
        lex = content.load_lexicon(args.lexicon) if args.lexicon else content.bundled_lexicon()
        edited = content.edit_replace(seq, old, new, lex)
    else:
        edited = content.edit_mute(seq, args.mute)
    out = args.out or os.path.splitext(args.textgrid)[0] + ".edited.TextGrid"
    content.serialize_textgrid(edited, out)
    print(f"{out}\t{' '.join(edited.symbols)}")


def _write_metrics(path: str | None, rows: list[tuple[str, dict]]) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *METRIC_COLUMNS])
        for rid, row in rows:
            w.writerow([rid, *(_fmt(row[c]) for c in METRIC_COLUMNS)])
    finally:
        if path:
            fh.close()


def _metrics_row(pred: np.ndarray, gt: np.ndarray, topo, aligned, fps: float) -> dict:
    if pred.shape[1] != 3 * topo.vertex_count or gt.shape[1] != 3 * topo.vertex_count:
        raise CommandError("topology", f"animation has {pred.shape[1]} columns, topology has "
                                       f"{topo.vertex_count} vertices")
    if pred.shape != gt.shape:
        raise CommandError("shape", f"prediction {pred.shape} vs ground truth {gt.shape}")
    return evaluate_sequence(pred, gt, topo, aligned, fps)


def cmd_evaluate(args) -> None:
    if args.manifest:
        if not args.pred_dir:
            raise UsageError("batch evaluate needs --pred-dir")
        corpus, seqs = _corpus_split(args.manifest, args.split)
        rows = []
        for s in seqs:
            pred = load_tensor(_require_file(os.path.join(args.pred_dir, f"{s.id}.anim.vtsr"), "prediction"))
            rows.append((s.id, _metrics_row(pred.astype(np.float64), s.anim.frames.astype(np.float64),
                                            corpus.topology, s.alignment, s.anim.fps)))
        mean = {c: float(np.nanmean([r[c] for _, r in rows])) for c in METRIC_COLUMNS}
        _write_metrics(args.out, rows + [("mean", mean)])
        return
    if not (args.pred and args.gt and args.topology_path and args.textgrid):
        raise UsageError("evaluate needs <pred> <gt> <topology> <textgrid> or --manifest")
    pred = load_tensor(_require_file(args.pred, "prediction")).astype(np.float64)
    gt = load_tensor(_require_file(args.gt, "ground truth")).astype(np.float64)
    topo = load_topology(_require_file(args.topology_path, "topology"))
    aligned = content.parse_textgrid(_require_file(args.textgrid, "textgrid"))
    _write_metrics(args.out, [(os.path.basename(args.pred), _metrics_row(pred, gt, topo, aligned, args.fps))])


def cmd_export_styles(args) -> None:
    model, cfg, _ = load_checkpoint(args.checkpoint)
    corpus = load_corpus(_require_file(args.manifest, "corpus manifest"))
    dim = cfg.backbone.style_dim
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "speaker", *(f"s{i}" for i in range(dim))])
        for s in corpus.sequences:
            ex = make_example(s, cfg)
            vec = model.style_from_input(ex.style_input).data.reshape(-1)
            w.writerow([s.id, s.speaker, *(_fmt(v) for v in vec)])
    finally:
        if args.out:
            fh.close()


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="talkstyle", description="Two-stage style-aware talking-face animation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def train_args(sp):
        sp.add_argument("--corpus", required=True, help="corpus manifest.json")
        sp.add_argument("--out", required=True, help="checkpoint directory")
        sp.add_argument("--config", help="flat key = value config (default $TALKSTYLE_CONFIG)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        sp.add_argument("--max-steps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--split", default="train")
        sp.add_argument("--log", help="loss CSV (default <out>/loss.csv)")

    sp = sub.add_parser("extract-mel", help="WAV -> log-Mel tensor + CSV preview")
    sp.add_argument("wav")
    sp.add_argument("-o", "--out")
    sp.add_argument("--preview")
    sp.add_argument("--preview-rows", type=int, default=10)
    sp.set_defaults(func=cmd_extract_mel)

    sp = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--speakers", type=int, default=4)
    sp.add_argument("--sequences", type=int, default=80)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--fps", type=float, default=30.0, choices=[25.0, 30.0])
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("train-stage1", help="Mel reconstruction pre-training")
    train_args(sp)
    sp.set_defaults(func=cmd_train_stage1)

    sp = sub.add_parser("train-stage2", help="vertex fine-tuning from a stage-1 checkpoint")
    train_args(sp)
    sp.add_argument("--stage1-checkpoint")
    sp.set_defaults(func=cmd_train_stage2)

    sp = sub.add_parser("infer", help="animate a TextGrid with a driving and optional style input")
    sp.add_argument("checkpoint")
    sp.add_argument("driving", help=".wav or .vtsr (Mel or style features)")
    sp.add_argument("textgrid")
    sp.add_argument("--style-ref", help=".wav or .vtsr giving the style")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--fps", type=float, default=30.0)
    sp.add_argument("--obj-dir")
    sp.add_argument("--topology")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("edit", help="replace or mute words in an aligned TextGrid")
    sp.add_argument("textgrid")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--replace", nargs=2, metavar=("OLD", "NEW"))
    g.add_argument("--mute", metavar="WORD")
    sp.add_argument("-o", "--out")
    sp.add_argument("--lexicon")
    sp.set_defaults(func=cmd_edit)

    sp = sub.add_parser("evaluate", help="metric row(s) for predicted animations")
    sp.add_argument("pred", nargs="?")
    sp.add_argument("gt", nargs="?")
    sp.add_argument("topology_path", nargs="?", metavar="topology")
    sp.add_argument("textgrid", nargs="?")
    sp.add_argument("--fps", type=float, default=30.0)
    sp.add_argument("--manifest", help="batch mode over a corpus split")
    sp.add_argument("--pred-dir")
    sp.add_argument("--split", default="test")
    sp.add_argument("-o", "--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("export-styles", help="CSV of style vectors per corpus sequence")
    sp.add_argument("checkpoint")
    sp.add_argument("manifest")
    sp.add_argument("-o", "--out")
    sp.set_defaults(func=cmd_export_styles)
    return p


_KINDS = [
    (ConfigError, "config"),
    (CheckpointError, "checkpoint"),
    (TensorFileError, "tensor"),
    (TextGridError, "textgrid"),
    (audio.AudioFormatError, "audio"),
    (content.OOVError, "oov"),
    (content.SpanNotFoundError, "span"),
    (content.UnsupportedTokenError, "text"),
    (content.DurationError, "duration"),
    (content.ContiguityError, "alignment"),
    (MeshError, "mesh"),
    (TrainingError, "training"),
    (FileNotFoundError, "path"),
    (json.JSONDecodeError, "json"),
    (OSError, "io"),
    (ValueError, "value"),
]


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("missing command")
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: usage: {_one_line(exc)}\n")
        return 2
    except CommandError as exc:
        sys.stderr.write(f"error: {exc.kind}: {_one_line(exc)}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - mapped to a single machine-parseable line
        kind = next((k for cls, k in _KINDS if isinstance(exc, cls)), type(exc).__name__)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"error: {kind}: {_one_line(msg)}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
