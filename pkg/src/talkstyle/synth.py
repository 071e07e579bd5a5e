"""Deterministic synthetic corpus: face-patch topology, alignments, log-Mel
"audio", vertex animation with exact bilabial closures, and per-speaker styles.

Nothing here is meant to sound or look real; it only has to make phonemes
and speakers discriminable and closures exact, so every acceptance property
has an oracle.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .audio import MelFrames, N_MELS
from .content import (BILABIALS, INVENTORY, SIL, AlignedPhonemeSeq, Entry, Lexicon, WordSpan,
                      bundled_lexicon, lookup, normalize_text, parse_textgrid, serialize_textgrid)
from .mesh import MeshTopology, VertexAnim, load_topology, save_topology
from .spline import video_frame_count
from .tensorio import load_tensor, save_tensor

FRAME_RATE = 62.5
GRID_COLS, GRID_ROWS = 20, 15
LOWER_LIP_ROW, UPPER_LIP_ROW = 5, 6
MOUTH_COLS = range(5, 15)
INNER_LIP_COLS = (8, 9, 10)
VOCA_MASK = (0.5, 1.5)
FEATURE_DIM = 16


@dataclass(frozen=True)
class SynthStyle:
    mouth_amplitude: float
    spectral_tilt: float
    base_rate: float
    identity: int

    def __post_init__(self):
        if not 0.5 <= self.mouth_amplitude <= 1.5:
            raise ValueError(f"mouth_amplitude {self.mouth_amplitude} outside [0.5, 1.5]")
        if not -1.0 <= self.spectral_tilt <= 1.0:
            raise ValueError(f"spectral_tilt {self.spectral_tilt} outside [-1, 1]")
        if not 0.8 <= self.base_rate <= 1.2:
            raise ValueError(f"base_rate {self.base_rate} outside [0.8, 1.2]")


@dataclass
class SynthSequence:
    id: str
    mel: MelFrames
    alignment: AlignedPhonemeSeq
    anim: VertexAnim
    style: SynthStyle
    style_features: np.ndarray
    transcript: str = ""

    @property
    def speaker(self) -> int:
        return self.style.identity


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def derive_seed(base: int, *keys: int) -> int:
    s = base & 0xFFFFFFFFFFFFFFFF
    for k in keys:
        s = splitmix64(s ^ (k & 0xFFFFFFFFFFFFFFFF))
    return s


# ---------------------------------------------------------------------------
# topology


def _vid(r: int, c: int) -> int:
    return r * GRID_COLS + c


def _mouth_mask(c) -> np.ndarray:
    """1 over the central lip columns tapering to 0 at the corners."""
    d = np.abs(np.asarray(c, dtype=np.float64) - 9.0)
    return np.clip(1.0 - np.maximum(d - 1.0, 0.0) * 0.25, 0.0, 1.0) * np.isin(c, list(MOUTH_COLS))


def _rest_grid() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, c = np.meshgrid(np.arange(GRID_ROWS), np.arange(GRID_COLS), indexing="ij")
    return r.reshape(-1), c.reshape(-1), np.stack([c.reshape(-1) - 9.5, r.reshape(-1) - 5.5], 1)


def gen_topology() -> MeshTopology:
    """20 x 15 face patch (300 vertices) with a mouth slit between rows 5 and 6."""
    faces = []
    for r in range(GRID_ROWS - 1):
        for c in range(GRID_COLS - 1):
            if r == LOWER_LIP_ROW and c in MOUTH_COLS and c + 1 in MOUTH_COLS:
                continue  # the opening: no faces across the lips
            a, b, d, e = _vid(r, c), _vid(r, c + 1), _vid(r + 1, c), _vid(r + 1, c + 1)
            faces += [(a, b, e), (a, e, d)]
    mouth = [_vid(LOWER_LIP_ROW, c) for c in MOUTH_COLS] + [_vid(UPPER_LIP_ROW, c) for c in MOUTH_COLS]
    others = [v for v in range(GRID_ROWS * GRID_COLS) if v not in set(mouth)]
    pick = np.linspace(0, len(others) - 1, 48).round().astype(int)
    landmarks = sorted(set(mouth) | {others[i] for i in pick})
    pairs = [(_vid(UPPER_LIP_ROW, c), _vid(LOWER_LIP_ROW, c)) for c in INNER_LIP_COLS]
    rows, cols, _ = _rest_grid()
    labels = ((rows >= 2) & (rows <= 9) & (cols >= 3) & (cols <= 16)).astype(np.int64)
    verts = render_frames(np.zeros((1, 4)))[0].reshape(-1, 3)
    return MeshTopology(verts, faces, landmarks, mouth, pairs, labels, VOCA_MASK)


def render_frames(channels: np.ndarray) -> np.ndarray:
    """Positions (T x 900) from per-frame (open, width, jaw, protrusion) channels."""
    ch = np.atleast_2d(channels)
    g, w, j, p = (ch[:, i:i + 1] for i in range(4))
    rows, cols, xy = _rest_grid()
    m = _mouth_mask(cols)[None, :]
    x = np.broadcast_to(xy[:, 0], (len(ch), xy.shape[0])).copy()
    y = np.broadcast_to(xy[:, 1], (len(ch), xy.shape[0])).copy()
    lower = rows == LOWER_LIP_ROW
    upper = rows == UPPER_LIP_ROW
    lip = lower | upper
    # lips close onto y = 0 inside the mouth; the rest of the patch keeps its grid rows
    y[:, lower] = -0.5 * (1.0 - m[:, lower]) - m[:, lower] * (0.5 * g)
    y[:, upper] = 0.5 * (1.0 - m[:, upper]) + m[:, upper] * (0.5 * g)
    chin = rows < LOWER_LIP_ROW
    fall = np.exp(-((xy[:, 0] / 6.0) ** 2))[None, :]
    y[:, chin] -= j * (rows[chin] / LOWER_LIP_ROW)[None, :] * fall[:, chin]
    near = lip | (rows == LOWER_LIP_ROW - 1) | (rows == UPPER_LIP_ROW + 1)
    spread = np.where(lip, 1.0, 0.5)[None, :] * m
    x[:, near] = x[:, near] * (1.0 + 0.08 * w * spread[:, near])
    z = -0.04 * xy[:, 0] ** 2 - 0.03 * xy[:, 1] ** 2
    z = np.broadcast_to(z, x.shape).copy()
    z[:, near] += p * 1.0 * spread[:, near]
    return np.stack([x, y, z], axis=2).reshape(len(ch), -1)


# ---------------------------------------------------------------------------
# phoneme tables

# (open, width, jaw, protrusion) targets
_VISEMES = {
    "sil": (0.3, 0.0, 0.1, 0.0),
    "B": (0.0, 0.0, 0.0, 0.0), "P": (0.0, 0.0, 0.0, 0.0), "M": (0.0, 0.0, 0.0, 0.0),
    "F": (0.3, 0.2, 0.1, 0.0), "V": (0.3, 0.2, 0.1, 0.0),
    "TH": (0.5, 0.3, 0.2, 0.0), "DH": (0.5, 0.3, 0.2, 0.0),
    "W": (0.4, -0.8, 0.2, 1.0), "R": (0.5, -0.4, 0.3, 0.6),
    "SH": (0.5, -0.3, 0.3, 0.8), "ZH": (0.5, -0.3, 0.3, 0.8),
    "CH": (0.5, -0.3, 0.3, 0.8), "JH": (0.5, -0.3, 0.3, 0.8),
    "S": (0.35, 0.6, 0.2, 0.0), "Z": (0.35, 0.6, 0.2, 0.0), "Y": (0.5, 0.6, 0.3, 0.0),
    "T": (0.6, 0.3, 0.3, 0.0), "D": (0.6, 0.3, 0.3, 0.0), "N": (0.6, 0.3, 0.3, 0.0),
    "L": (0.7, 0.3, 0.4, 0.0), "K": (0.8, 0.2, 0.5, 0.0), "G": (0.8, 0.2, 0.5, 0.0),
    "NG": (0.7, 0.2, 0.4, 0.0), "HH": (0.9, 0.2, 0.5, 0.0),
    "AA": (2.0, 0.2, 1.2, 0.0), "AE": (1.7, 0.6, 1.0, 0.0), "AH": (1.4, 0.2, 0.8, 0.0),
    "AO": (1.6, -0.4, 1.0, 0.6), "AW": (1.8, -0.2, 1.1, 0.4), "AY": (1.8, 0.4, 1.1, 0.0),
    "EH": (1.3, 0.6, 0.7, 0.0), "ER": (0.9, -0.3, 0.5, 0.5), "EY": (1.2, 0.7, 0.6, 0.0),
    "IH": (1.0, 0.7, 0.5, 0.0), "IY": (0.7, 1.0, 0.3, 0.0), "OW": (1.2, -0.6, 0.7, 0.8),
    "OY": (1.3, -0.4, 0.8, 0.6), "UH": (0.8, -0.5, 0.4, 0.6), "UW": (0.6, -0.9, 0.3, 1.0),
}
OPEN_VOWELS = ("AA", "AE", "AW", "AY")


def _base(symbol: str) -> str:
    return symbol.rstrip("012")


@lru_cache(maxsize=1)
def _phone_tables() -> tuple[dict, dict]:
    """Seeded per-phoneme Mel templates and base durations (frames)."""
    rng = np.random.default_rng(20240601)
    bands = np.arange(N_MELS)
    templates, lengths = {}, {}
    for sym in sorted({_base(s) for s in INVENTORY}):
        if sym == "sil":
            templates[sym] = np.full(N_MELS, -9.0)
            lengths[sym] = 6.0
            continue
        t = np.full(N_MELS, -6.5)
        for _ in range(3):
            center, width, height = rng.uniform(2, 70), rng.uniform(3, 9), rng.uniform(1.5, 4.0)
            t += height * np.exp(-0.5 * ((bands - center) / width) ** 2)
        templates[sym] = t
        vowel = sym[0] in "AEIOU"
        lengths[sym] = rng.uniform(6, 10) if vowel else rng.uniform(3, 6)
    return templates, lengths


def _smooth_offset(rng: np.random.Generator, amp: float) -> np.ndarray:
    bands = np.arange(N_MELS)
    out = np.zeros(N_MELS)
    for _ in range(2):
        out += rng.uniform(-amp, amp) * np.exp(-0.5 * ((bands - rng.uniform(0, 80)) / rng.uniform(6, 14)) ** 2)
    return out


def identity_signature(identity: int) -> tuple[np.ndarray, np.ndarray]:
    """(Mel offset, feature embedding) fixed per speaker identity."""
    rng = np.random.default_rng(derive_seed(0x5EED, identity))
    emb = rng.normal(size=FEATURE_DIM // 2)
    return _smooth_offset(rng, 1.0), emb / np.linalg.norm(emb)


# ---------------------------------------------------------------------------
# sequences


def _track(alignment: AlignedPhonemeSeq, targets: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Hold each phoneme's target, cosine-ramp between holds.

    Bilabials hold over their whole interval so the closure is exact at any
    sample inside it.
    """
    keys_t, keys_v = [], []
    for e, v in zip(alignment.entries, targets):
        hold = 0.0 if e.phoneme.base in BILABIALS else 0.3 * e.duration
        keys_t += [e.start + hold, e.end - hold]
        keys_v += [v, v]
    keys_t, keys_v = np.array(keys_t), np.array(keys_v)
    out = np.empty((times.size, targets.shape[1]))
    for n, t in enumerate(times):
        i = np.searchsorted(keys_t, t, side="right") - 1
        if i < 0:
            out[n] = keys_v[0]
        elif i >= len(keys_t) - 1:
            out[n] = keys_v[-1]
        elif i % 2 == 0:  # inside a hold
            out[n] = keys_v[i]
        else:
            t0, t1 = keys_t[i], keys_t[i + 1]
            u = 0.5 - 0.5 * np.cos(np.pi * (t - t0) / (t1 - t0))
            out[n] = keys_v[i] + (keys_v[i + 1] - keys_v[i]) * u
    return out


def sequence_durations(phones, style: SynthStyle, rng: np.random.Generator) -> np.ndarray:
    _, lengths = _phone_tables()
    frames = []
    for p in phones:
        b = _base(p.symbol)
        n = lengths[b] * style.base_rate * rng.uniform(0.85, 1.15)
        lo = 3 if b in BILABIALS else 2
        frames.append(max(lo, int(round(n))))
    return np.array(frames, dtype=np.int64)


def build_alignment(words: list[str], lexicon: Lexicon, style: SynthStyle,
                    rng: np.random.Generator) -> tuple[AlignedPhonemeSeq, np.ndarray]:
    phones, spans = [SIL], []
    for w in words:
        p = lookup(w, lexicon)
        spans.append(WordSpan(w, len(phones), len(phones) + len(p) - 1))
        phones.extend(p)
    phones.append(SIL)
    frames = sequence_durations(phones, style, rng)
    frames[0] = rng.integers(8, 13)
    frames[-1] = rng.integers(8, 13)
    edges = np.concatenate([[0], np.cumsum(frames)]) / FRAME_RATE
    entries = [Entry(p, float(edges[i]), float(edges[i + 1])) for i, p in enumerate(phones)]
    return AlignedPhonemeSeq(entries, spans), frames


def render_mel(alignment: AlignedPhonemeSeq, frames: np.ndarray, style: SynthStyle,
               rng: np.random.Generator) -> np.ndarray:
    templates, _ = _phone_tables()
    offset, _ = identity_signature(style.identity)
    tilt = style.spectral_tilt * 2.0 * np.linspace(1.0, -1.0, N_MELS)
    loud = 1.5 * np.log(style.mouth_amplitude)
    rows = []
    for e, n in zip(alignment.entries, frames):
        base = _base(e.phoneme.symbol)
        t = templates[base]
        if base != "sil":
            t = t + tilt + loud + offset + (0.3 if e.phoneme.symbol.endswith("1") else 0.0)
        rows.append(np.repeat(t[None, :], n, axis=0))
    mel = np.concatenate(rows)
    # soften phoneme boundaries with a 3-tap average
    padded = np.concatenate([mel[:1], mel, mel[-1:]])
    mel = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    mel = mel + rng.normal(0.0, 0.25, mel.shape)
    return np.maximum(mel, np.log(1e-10))


def style_features_from_mel(mel: np.ndarray, identity: int, rng: np.random.Generator) -> np.ndarray:
    """Stand-in for pretrained embeddings: band-group Mel statistics plus identity code."""
    _, emb = identity_signature(identity)
    stats = mel.reshape(mel.shape[0], FEATURE_DIM // 2, -1).mean(axis=2) / 4.0 + 1.5
    ident = np.broadcast_to(emb, (mel.shape[0], emb.size)) + rng.normal(0, 0.1, (mel.shape[0], emb.size))
    return np.concatenate([stats, ident], axis=1)


def gen_sequence(seed: int, style: SynthStyle, transcript: str, lexicon: Lexicon | None = None,
                 fps: float = 30.0, seq_id: str = "seq") -> SynthSequence:
    lexicon = lexicon or bundled_lexicon()
    words = normalize_text(transcript)
    rng = np.random.default_rng(seed)
    alignment, frames = build_alignment(words, lexicon, style, rng)
    mel = render_mel(alignment, frames, style, rng)
    n_video = video_frame_count(mel.shape[0], FRAME_RATE, fps)
    times = np.arange(n_video) / fps
    targets = np.array([_VISEMES[_base(e.phoneme.symbol)] for e in alignment.entries])
    targets = targets * np.array([style.mouth_amplitude, 1.0, style.mouth_amplitude, 1.0])
    anim = VertexAnim(render_frames(_track(alignment, targets, times)), fps)
    feats = style_features_from_mel(mel, style.identity, rng)
    return SynthSequence(seq_id, MelFrames(mel), alignment, anim, style, feats, " ".join(words))


# ---------------------------------------------------------------------------
# corpus


@lru_cache(maxsize=1)
def bundled_sentences() -> tuple[str, ...]:
    text = resources.files("talkstyle").joinpath("data/sentences.txt").read_text(encoding="utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def speaker_styles(n_speakers: int, seed: int) -> list[SynthStyle]:
    """Stratified styles so speakers are spread over the parameter ranges."""
    rng = np.random.default_rng(derive_seed(seed, 0xA11CE))
    amps = rng.permutation(np.linspace(0.6, 1.4, n_speakers))
    tilts = rng.permutation(np.linspace(-0.9, 0.9, n_speakers))
    rates = rng.uniform(0.85, 1.15, n_speakers)
    return [SynthStyle(float(a), float(t), float(r), i) for i, (a, t, r) in enumerate(zip(amps, tilts, rates))]


@dataclass
class Corpus:
    sequences: list[SynthSequence]
    splits: dict[str, list[str]]
    topology: MeshTopology
    seed: int
    fps: float

    def split(self, name: str) -> list[SynthSequence]:
        by_id = {s.id: s for s in self.sequences}
        return [by_id[i] for i in self.splits[name]]

    def by_id(self, seq_id: str) -> SynthSequence:
        return next(s for s in self.sequences if s.id == seq_id)


def _split_ids(ids_by_speaker: list[list[str]], seed: int) -> dict[str, list[str]]:
    rng = np.random.default_rng(derive_seed(seed, 0x5B117))
    shuffled = [list(rng.permutation(ids)) for ids in ids_by_speaker]
    order = []
    for r in range(max(len(s) for s in shuffled)):
        order += [s[r] for s in shuffled if r < len(s)]
    n = len(order)
    n_held = int(round(0.1 * n))
    return {"test": sorted(order[:n_held]), "val": sorted(order[n_held:2 * n_held]),
            "train": sorted(order[2 * n_held:])}


def random_transcript(seed: int, lexicon: Lexicon, n_words: tuple[int, int] = (4, 8)) -> str:
    """Seeded word string over the lexicon; varied phoneme contexts, no repeated sentences."""
    rng = np.random.default_rng(seed)
    words = sorted(lexicon)
    return " ".join(words[i] for i in rng.integers(0, len(words), rng.integers(n_words[0], n_words[1] + 1)))


def gen_corpus(n_speakers: int, n_sequences: int, seed: int, fps: float = 30.0,
               sentences: list[str] | None = None, random_text: bool = False) -> Corpus:
    """Seeded corpus; transcripts cycle through ``sentences`` (default: the bundled
    list) or, with ``random_text``, are random word strings over the lexicon."""
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    lexicon = bundled_lexicon()
    styles = speaker_styles(n_speakers, seed)
    sentences = sentences or bundled_sentences()
    seqs, by_speaker = [], [[] for _ in range(n_speakers)]
    for i in range(n_sequences):
        spk = i % n_speakers
        if random_text:
            text = random_transcript(derive_seed(seed, i, 0x7E47), lexicon)
        else:
            text = sentences[(i // n_speakers + 7 * spk) % len(sentences)]
        sid = f"spk{spk}_{i:04d}"
        seqs.append(gen_sequence(derive_seed(seed, i), styles[spk], text, lexicon, fps, sid))
        by_speaker[spk].append(sid)
    return Corpus(seqs, _split_ids(by_speaker, seed), gen_topology(), seed, fps)


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_corpus(corpus: Corpus, out_dir: str | os.PathLike) -> str:
    """Write sequence files and ``manifest.json``; returns the manifest path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    save_topology(os.path.join(out_dir, "topology.obj"), corpus.topology)
    split_of = {sid: name for name, ids in corpus.splits.items() for sid in ids}
    entries = []
    for s in corpus.sequences:
        files = {"mel": f"{s.id}.mel.vtsr", "textgrid": f"{s.id}.TextGrid", "anim": f"{s.id}.anim.vtsr",
                 "features": f"{s.id}.feat.vtsr", "style": f"{s.id}.style.json"}
        save_tensor(os.path.join(out_dir, files["mel"]), s.mel.values)
        serialize_textgrid(s.alignment, os.path.join(out_dir, files["textgrid"]))
        save_tensor(os.path.join(out_dir, files["anim"]), s.anim.frames)
        save_tensor(os.path.join(out_dir, files["features"]), s.style_features)
        with open(os.path.join(out_dir, files["style"]), "w") as fh:
            json.dump(asdict(s.style), fh, sort_keys=True)
        entries.append({"id": s.id, "speaker": s.speaker, "split": split_of[s.id],
                        "transcript": s.transcript, "files": files,
                        "sha256": {k: _sha256(os.path.join(out_dir, v)) for k, v in files.items()}})
    manifest = {"format": "talkstyle-corpus", "version": 1, "seed": corpus.seed, "fps": corpus.fps,
                "topology": "topology.obj", "splits": corpus.splits, "sequences": entries}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


class CorpusIntegrityError(ValueError):
    pass


def load_corpus(manifest_path: str | os.PathLike, verify: bool = True) -> Corpus:
    """Read a corpus written by :func:`write_corpus`.

    Mel, animation and features come back as float32-rounded values.
    """
    root = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as fh:
        man = json.load(fh)
    seqs = []
    for e in man["sequences"]:
        f = {k: os.path.join(root, v) for k, v in e["files"].items()}
        if verify:
            for k, p in f.items():
                if _sha256(p) != e["sha256"][k]:
                    raise CorpusIntegrityError(f"{p}: checksum mismatch")
        with open(f["style"]) as fh:
            style = SynthStyle(**json.load(fh))
        seqs.append(SynthSequence(e["id"], MelFrames(load_tensor(f["mel"])), parse_textgrid(f["textgrid"]),
                                  VertexAnim(load_tensor(f["anim"]), man["fps"]), style,
                                  load_tensor(f["features"]), e["transcript"]))
    topo = load_topology(os.path.join(root, man["topology"]))
    return Corpus(seqs, man["splits"], topo, man["seed"], man["fps"])
