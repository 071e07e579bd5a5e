"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import KinkMonitor, Tape, Tensor, backward


@dataclass
class GradCheckStats:
    max_error: float
    checked: int
    skipped: int


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5,
               max_coords: int | None = None, seed: int = 0, skip_kinks: bool = True,
               return_stats: bool = False):
    """Largest relative error between tape gradients and central differences.

    The relative error of one coordinate is
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.  ``max_coords`` bounds the
    number of coordinates probed per input tensor (chosen at random with
    ``seed``).  With ``skip_kinks`` a coordinate is skipped when moving it by
    ``+-h`` flips a relu/abs/max branch somewhere in ``f``: the stencil then
    straddles a non-differentiable point and the difference quotient is not a
    derivative estimate.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    with KinkMonitor() as mon, Tape() as tape:
        loss = f(*xs)
    base = mon.patterns
    backward(tape, loss)
    analytic = [np.array(t.grad, copy=True) for t in xs]

    def evaluate() -> tuple[float, list[bytes]]:
        with KinkMonitor() as m:
            val = float(f(*xs).data)
        return val, m.patterns

    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for t, g in zip(xs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp, pp = evaluate()
            flat[i] = orig - h
            fm, pm = evaluate()
            flat[i] = orig
            if skip_kinks and (pp != base or pm != base):
                skipped += 1
                continue
            fd = (fp - fm) / (2.0 * h)
            ad = g.reshape(-1)[i]
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, err)
            checked += 1
    if return_stats:
        return GradCheckStats(worst, checked, skipped)
    return worst
