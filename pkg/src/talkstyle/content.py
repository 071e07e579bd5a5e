"""Phonetic content: text normalization, lexicon, alignments, durations, edits."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np

from . import tensor as T
from .textgrid import Interval, IntervalTier, MissingTierError, TextGridError, read_textgrid, write_textgrid

CONSONANTS = ("B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH").split()
VOWELS = ("AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW").split()
SILENCE = "sil"
INVENTORY = (SILENCE,) + tuple(CONSONANTS) + tuple(v + s for v in VOWELS for s in "012")
PHONEME_ID = {p: i for i, p in enumerate(INVENTORY)}
BILABIALS = frozenset({"B", "P", "M"})
# aligner labels that mean "no speech here"
_SILENT_LABELS = {"", "sil", "sp", "spn", "<eps>"}


class UnsupportedTokenError(ValueError):
    pass


class OOVError(KeyError):
    def __str__(self) -> str:
        return f"out-of-vocabulary word {self.args[0]!r}"


class UnknownPhonemeError(ValueError):
    pass


class ContiguityError(ValueError):
    pass


class DurationError(ValueError):
    pass


class SpanNotFoundError(LookupError):
    pass


@dataclass(frozen=True)
class Phoneme:
    symbol: str

    def __post_init__(self):
        if self.symbol not in PHONEME_ID:
            raise UnknownPhonemeError(f"{self.symbol!r} is not an ARPABET symbol")

    @property
    def is_silence(self) -> bool:
        return self.symbol == SILENCE

    @property
    def base(self) -> str:
        return self.symbol.rstrip("012")

    @property
    def id(self) -> int:
        return PHONEME_ID[self.symbol]


SIL = Phoneme(SILENCE)


@dataclass(frozen=True)
class Entry:
    phoneme: Phoneme
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class WordSpan:
    word: str
    first: int
    last: int


@dataclass(frozen=True)
class AlignedPhonemeSeq:
    entries: tuple[Entry, ...]
    word_spans: tuple[WordSpan, ...] = ()
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "word_spans", tuple(self.word_spans))
        self.validate()

    def validate(self) -> None:
        if not self.entries:
            raise ContiguityError("alignment has no entries")
        for a, b in zip(self.entries, self.entries[1:]):
            if a.end != b.start:
                raise ContiguityError(f"gap or overlap between {a} and {b}")
        covered = np.zeros(len(self.entries), dtype=int)
        for w in self.word_spans:
            if not 0 <= w.first <= w.last < len(self.entries):
                raise ContiguityError(f"word span {w} out of range")
            covered[w.first:w.last + 1] += 1
        for i, e in enumerate(self.entries):
            if covered[i] > 1 or (covered[i] == 0 and not e.phoneme.is_silence):
                raise ContiguityError(f"entry {i} ({e.phoneme.symbol}) not covered by exactly one word")

    @property
    def start(self) -> float:
        return self.entries[0].start

    @property
    def end(self) -> float:
        return self.entries[-1].end

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def symbols(self) -> list[str]:
        return [e.phoneme.symbol for e in self.entries]

    @property
    def ids(self) -> np.ndarray:
        return np.array([e.phoneme.id for e in self.entries], dtype=np.int64)

    @property
    def words(self) -> list[str]:
        return [w.word for w in self.word_spans]


# ---------------------------------------------------------------------------
# text and lexicon

_PUNCT = re.compile(r"[^\w\s']|_")


def normalize_text(raw: str) -> list[str]:
    """Lowercase, drop punctuation (word-internal apostrophes kept), split."""
    words = []
    for tok in _PUNCT.sub(" ", raw.lower()).split():
        tok = tok.strip("'")
        if not tok:
            continue
        if any(ch.isdigit() for ch in tok):
            raise UnsupportedTokenError(f"unsupported token {tok!r} (numbers are not expanded)")
        words.append(tok)
    return words


Lexicon = dict  # word -> list of pronunciations (each a list of symbols)


def load_lexicon(path: str | os.PathLike) -> Lexicon:
    """Read a CMU-dict style file: ``WORD<ws>PH1 PH2 ...``, variants as ``WORD(2)``."""
    with open(path, encoding="utf-8") as fh:
        return _parse_lexicon(fh.read())


def _parse_lexicon(text: str) -> Lexicon:
    lex: Lexicon = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(";;;"):
            continue
        head, *phones = line.split()
        word = re.sub(r"\(\d+\)$", "", head).lower()
        for p in phones:
            Phoneme(p)
        lex.setdefault(word, []).append(phones)
    return lex


@lru_cache(maxsize=1)
def _bundled_text() -> str:
    return resources.files("talkstyle").joinpath("data/lexicon.dict").read_text(encoding="utf-8")


def bundled_lexicon() -> Lexicon:
    return _parse_lexicon(_bundled_text())


def lookup(word: str, lexicon: Lexicon) -> list[Phoneme]:
    prons = lexicon.get(word.lower())
    if not prons:
        raise OOVError(word)
    return [Phoneme(p) for p in prons[0]]


# ---------------------------------------------------------------------------
# alignments


def parse_textgrid(path: str | os.PathLike, tol: float = 1e-9) -> AlignedPhonemeSeq:
    tiers = read_textgrid(path)
    for name in ("phones", "words"):
        if name not in tiers:
            raise MissingTierError(f"{path}: missing tier {name!r}") from None
    phones = tiers["phones"].intervals
    if not phones:
        raise ContiguityError(f"{path}: empty phones tier")
    entries = []
    for iv in phones:
        if entries and abs(iv.xmin - entries[-1].end) > tol:
            raise ContiguityError(f"{path}: phones not contiguous at {entries[-1].end} / {iv.xmin}")
        start = entries[-1].end if entries else iv.xmin
        label = iv.text.strip()
        ph = SIL if label.lower() in _SILENT_LABELS else Phoneme(label.upper())
        entries.append(Entry(ph, start, iv.xmax))
    spans = []
    mids = np.array([(e.start + e.end) / 2 for e in entries])
    for iv in tiers["words"].intervals:
        word = iv.text.strip().lower()
        if word in _SILENT_LABELS:
            continue
        inside = np.nonzero((mids > iv.xmin) & (mids < iv.xmax))[0]
        if inside.size == 0:
            raise ContiguityError(f"{path}: word {word!r} covers no phones")
        spans.append(WordSpan(word, int(inside[0]), int(inside[-1])))
    return AlignedPhonemeSeq(entries, spans)


def to_tiers(seq: AlignedPhonemeSeq) -> list[IntervalTier]:
    phones = IntervalTier("phones", seq.start, seq.end,
                          [Interval(e.start, e.end, e.phoneme.symbol) for e in seq.entries])
    words = IntervalTier("words", seq.start, seq.end)
    t = seq.start
    for w in seq.word_spans:
        ws, we = seq.entries[w.first].start, seq.entries[w.last].end
        if ws > t:
            words.intervals.append(Interval(t, ws, ""))
        words.intervals.append(Interval(ws, we, w.word))
        t = we
    if t < seq.end:
        words.intervals.append(Interval(t, seq.end, ""))
    return [words, phones]


def serialize_textgrid(seq: AlignedPhonemeSeq, path: str | os.PathLike) -> None:
    write_textgrid(path, to_tiers(seq))


def align_uniform(words: list[str], lexicon: Lexicon, phone_seconds: list[float] | None = None,
                  lead_silence: float = 0.0, tail_silence: float = 0.0) -> AlignedPhonemeSeq:
    """Build an alignment from words and per-phoneme durations (or 0.1 s each)."""
    phones, spans = [], []
    for w in words:
        p = lookup(w, lexicon)
        spans.append((w, len(phones), len(phones) + len(p) - 1))
        phones.extend(p)
    if phone_seconds is None:
        phone_seconds = [0.1] * len(phones)
    entries, t, off = [], 0.0, 0
    if lead_silence > 0:
        entries.append(Entry(SIL, 0.0, lead_silence))
        t, off = lead_silence, 1
    for p, d in zip(phones, phone_seconds):
        entries.append(Entry(p, t, t + d))
        t = t + d
    if tail_silence > 0:
        entries.append(Entry(SIL, t, t + tail_silence))
    return AlignedPhonemeSeq(entries, [WordSpan(w, a + off, b + off) for w, a, b in spans])


# ---------------------------------------------------------------------------
# durations


def quantize_durations(seq: AlignedPhonemeSeq, frame_rate: float = 62.5) -> np.ndarray:
    """Integer frame counts per entry that sum to ``round(total * frame_rate)``.

    Largest-remainder rounding (ties to the lowest index, Python's
    round-half-even for the total); any zero count is raised to one by taking
    a frame from its larger neighbour.
    """
    ideal = np.array([e.duration for e in seq.entries]) * frame_rate
    total = round(seq.duration * frame_rate)
    n = ideal.size
    if total < 1:
        raise DurationError(f"utterance of {seq.duration:.4f}s is shorter than one frame")
    if total < n:
        raise DurationError(f"{n} phonemes cannot fit into {total} frames")
    base = np.floor(ideal + 1e-9).astype(np.int64)
    rem = np.round(ideal - base, 9)
    deficit = total - int(base.sum())
    order = sorted(range(n), key=lambda i: (-rem[i], i))
    counts = base.copy()
    for i in order[:max(deficit, 0)]:
        counts[i] += 1
    for i in order[::-1][:max(-deficit, 0)]:
        counts[i] -= 1
    for i in np.nonzero(counts < 1)[0]:
        while counts[i] < 1:
            nbrs = [j for j in (i - 1, i + 1) if 0 <= j < n and counts[j] > 1]
            if not nbrs:
                nbrs = [j for j in range(n) if counts[j] > 1]
            donor = max(nbrs, key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def length_regulate(emb: T.Tensor, durations) -> T.Tensor:
    d = np.asarray(durations, dtype=np.int64)
    if d.shape != (emb.shape[0],):
        raise DurationError(f"{len(d)} durations for {emb.shape[0]} phonemes")
    if np.any(d < 1):
        raise DurationError("durations must all be >= 1")
    return T.repeat_rows(emb, d)


# ---------------------------------------------------------------------------
# content editing


def find_words(seq: AlignedPhonemeSeq, words: str | list[str]) -> tuple[int, int]:
    """Index range ``[i, j)`` into ``seq.word_spans`` matching the word sequence."""
    target = normalize_text(words) if isinstance(words, str) else [w.lower() for w in words]
    have = seq.words
    k = len(target)
    for i in range(len(have) - k + 1):
        if have[i:i + k] == target:
            return i, i + k
    raise SpanNotFoundError(f"words {' '.join(target)!r} not found in alignment")


def _rebuild(seq, lo, hi, new_entries, new_spans, span_range, meta) -> AlignedPhonemeSeq:
    delta = len(new_entries) - (hi - lo + 1)
    entries = seq.entries[:lo] + tuple(new_entries) + seq.entries[hi + 1:]
    ws, we = span_range
    spans = list(seq.word_spans[:ws]) + list(new_spans)
    spans += [replace(w, first=w.first + delta, last=w.last + delta) for w in seq.word_spans[we:]]
    return AlignedPhonemeSeq(entries, spans, meta={**seq.meta, **meta})


def _split_uniform(start: float, end: float, n: int, resolution: float = 1e-3) -> list[float]:
    units = round((end - start) / resolution)
    if units < n:
        raise DurationError(f"span of {end - start:.4f}s too short for {n} phonemes")
    base, extra = divmod(units, n)
    cuts = [start]
    acc = 0
    for i in range(n - 1):
        acc += base + (1 if i < extra else 0)
        cuts.append(start + acc * resolution)
    cuts.append(end)
    return cuts


def edit_replace(seq: AlignedPhonemeSeq, word: str, new_word: str, lexicon: Lexicon) -> AlignedPhonemeSeq:
    """Swap a word (or word sequence) for new words, keeping the span's timing."""
    new_words = normalize_text(new_word)
    prons = [lookup(w, lexicon) for w in new_words]  # OOV fails before anything else
    ws, we = find_words(seq, word)
    lo, hi = seq.word_spans[ws].first, seq.word_spans[we - 1].last
    start, end = seq.entries[lo].start, seq.entries[hi].end
    phones = [p for pron in prons for p in pron]
    cuts = _split_uniform(start, end, len(phones))
    new_entries = [Entry(p, cuts[i], cuts[i + 1]) for i, p in enumerate(phones)]
    spans, k = [], lo
    for w, pron in zip(new_words, prons):
        spans.append(WordSpan(w, k, k + len(pron) - 1))
        k += len(pron)
    meta = {"edit": "replace", "replaced": word, "with": new_word,
            "duration_policy": "uniform-per-phoneme"}
    return _rebuild(seq, lo, hi, new_entries, spans, (ws, we), meta)


def edit_mute(seq: AlignedPhonemeSeq, span: str | tuple[int, int]) -> AlignedPhonemeSeq:
    """Replace a word span (by words, or an inclusive entry range) with one ``sil``."""
    if isinstance(span, str):
        ws, we = find_words(seq, span)
        lo, hi = seq.word_spans[ws].first, seq.word_spans[we - 1].last
    else:
        lo, hi = span
        if not 0 <= lo <= hi < len(seq.entries):
            raise SpanNotFoundError(f"entry range {span} outside alignment")
        inside = [i for i, w in enumerate(seq.word_spans) if w.last >= lo and w.first <= hi]
        if any(seq.word_spans[i].first < lo or seq.word_spans[i].last > hi for i in inside):
            raise SpanNotFoundError(f"entry range {span} cuts through a word")
        ws = inside[0] if inside else sum(1 for w in seq.word_spans if w.last < lo)
        we = inside[-1] + 1 if inside else ws
    sil = Entry(SIL, seq.entries[lo].start, seq.entries[hi].end)
    meta = {"edit": "mute", "muted": span if isinstance(span, str) else list(span)}
    return _rebuild(seq, lo, hi, [sil], [], (ws, we), meta)
