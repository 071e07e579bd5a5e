"""Natural cubic spline resampling of frame sequences.

Resampling is linear in the source frames, so it is expressed as a constant
``n_dst x n_src`` matrix; the same matrix carries gradients during training.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from . import tensor as T


def video_frame_count(n_src: int, src_fps: float, dst_fps: float) -> int:
    """Frames at ``j / dst_fps`` that stay inside the source span ``[0, (n_src-1)/src_fps]``."""
    return int(np.floor((n_src - 1) * dst_fps / src_fps + 1e-9)) + 1


@lru_cache(maxsize=64)
def _matrix(n_src: int, src_fps: float, dst_fps: float) -> np.ndarray:
    if n_src < 4:
        raise ValueError(f"spline resampling needs at least 4 source frames, got {n_src}")
    h = 1.0 / src_fps
    n = n_src
    # second derivatives M = A^-1 (6/h^2) D y with M_0 = M_{n-1} = 0
    ab = np.zeros((3, n))
    ab[1, :] = 1.0
    ab[1, 1:-1] = 4.0
    ab[0, 2:] = 1.0  # super-diagonal
    ab[2, :-2] = 1.0  # sub-diagonal
    rhs = np.zeros((n, n))
    i = np.arange(1, n - 1)
    rhs[i, i - 1] = 1.0
    rhs[i, i] = -2.0
    rhs[i, i + 1] = 1.0
    rhs *= 6.0 / (h * h)
    m = solve_banded((1, 1), ab, rhs)  # n x n: M = m @ y

    n_dst = video_frame_count(n_src, src_fps, dst_fps)
    t = np.arange(n_dst) / dst_fps
    k = np.minimum((t * src_fps + 1e-9).astype(np.int64), n - 2)
    a = (t - k * h) / h  # local coordinate in [0, 1]
    b = 1.0 - a
    s = np.zeros((n_dst, n))
    rows = np.arange(n_dst)
    s[rows, k] += b
    s[rows, k + 1] += a
    c0 = ((b ** 3 - b) * h * h / 6.0)[:, None]
    c1 = ((a ** 3 - a) * h * h / 6.0)[:, None]
    s += c0 * m[k] + c1 * m[k + 1]
    s.setflags(write=False)
    return s


def resample_matrix(n_src: int, src_fps: float, dst_fps: float) -> np.ndarray:
    return _matrix(int(n_src), float(src_fps), float(dst_fps))


def resample_frames(frames, src_fps: float, dst_fps: float):
    """Resample a ``T x D`` array (or Tensor) from ``src_fps`` to ``dst_fps``."""
    if isinstance(frames, T.Tensor):
        return T.const_matmul(resample_matrix(frames.shape[0], src_fps, dst_fps), frames)
    frames = np.asarray(frames, dtype=np.float64)
    return resample_matrix(frames.shape[0], src_fps, dst_fps) @ frames
