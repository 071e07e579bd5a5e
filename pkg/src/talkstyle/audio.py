"""WAV loading and log-Mel feature extraction.

The recipe: 16 kHz mono audio peak-normalized to 1.0, a periodic Hann window
of 1024 samples hopped by 256 (16 ms), centered framing with 512 samples of
reflect padding per side, power spectrum, 80 HTK-mel triangular filters over
0-8 kHz and natural-log compression with a 1e-10 floor.
"""
from __future__ import annotations

import os
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
N_MELS = 80
FMAX = 8000.0
LOG_FLOOR = 1e-10
HOP_SECONDS = HOP / SAMPLE_RATE
FRAME_RATE = SAMPLE_RATE / HOP  # 62.5 frames per second


class AudioFormatError(ValueError):
    """Malformed or unsupported WAV container."""


class ChannelCountError(AudioFormatError):
    pass


class SampleRateError(AudioFormatError):
    pass


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE


@dataclass
class MelFrames:
    values: np.ndarray  # T x 80
    hop_seconds: float = HOP_SECONDS

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def normalize_peak(samples: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0.0:
        return samples.astype(np.float64)
    return samples.astype(np.float64) / peak


def load_wav(path: str | os.PathLike) -> AudioSignal:
    try:
        with wave.open(os.fspath(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise AudioFormatError(f"{path}: malformed WAV header ({e})") from e
    if channels != 1:
        raise ChannelCountError(f"{path}: expected 1 channel, found {channels}")
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate}")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(normalize_peak(pcm), rate)


def write_wav(path: str | os.PathLike, samples: np.ndarray, sample_rate: int = SAMPLE_RATE,
              channels: int = 1) -> None:
    """Write PCM-16.  For ``channels > 1`` ``samples`` is frames x channels."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def hann_periodic(n: int = N_FFT) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int) -> int:
    return n_samples // HOP + 1


def stft(samples: np.ndarray) -> np.ndarray:
    """Complex STFT, frames x 513."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 1:
        raise ValueError("stft needs at least one sample")
    pad = N_FFT // 2
    if x.size > pad:
        xp = np.pad(x, pad, mode="reflect")
    else:
        # reflect needs more samples than the pad width; fold repeatedly
        xp = np.pad(x, pad, mode="symmetric") if x.size > 1 else np.pad(x, pad, mode="edge")
    t = n_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(xp, N_FFT)[::HOP][:t]
    return np.fft.rfft(frames * hann_periodic(), axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=1)
def _filterbank() -> np.ndarray:
    bins = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(FMAX), N_MELS + 2))
    fb = np.zeros((N_MELS, bins.size))
    for i in range(N_MELS):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        if not fb[i].any():
            # lowest filters can fall between bins; keep the nearest bin
            fb[i, np.argmin(np.abs(bins - mid))] = 1.0
    fb.setflags(write=False)
    return fb


def mel_filterbank() -> np.ndarray:
    """80 x 513 triangular HTK-mel filterbank."""
    return _filterbank().copy()


def filter_centers() -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(FMAX), N_MELS + 2))[1:-1]


def mel_spectrogram(signal: AudioSignal | np.ndarray) -> MelFrames:
    samples = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal)
    power = np.abs(stft(samples)) ** 2
    mel = power @ _filterbank().T
    return MelFrames(np.log(np.maximum(mel, LOG_FLOOR)))
