"""Farm power references built from a normalised regulation signal."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

__all__ = ["ReferenceSignal", "ReferenceError", "synthetic_signal", "read_signal",
           "load_or_generate_reference"]


class ReferenceError(ValueError):
    """Bad reference input; ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ReferenceSignal:
    """``P_ref[k] = (base + gamma * delta[k]) * p_greedy`` in watts."""

    samples: np.ndarray
    delta: np.ndarray
    gamma: float
    base: float
    p_greedy: float
    source: str
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def window(self, k, horizon):
        """Reference for samples ``k+1 .. k+horizon``."""
        w = self.samples[k + 1:k + 1 + horizon]
        if w.size < horizon:
            raise ReferenceError(f"reference has {len(self.samples)} samples; step {k} needs "
                                 f"up to sample {k + horizon}")
        return w


def synthetic_signal(n, seed=0, sample_time=1.0, ramp=120.0, span=3600.0):
    """Band-limited stand-in for a regulation signal, peak value one.

    A few slow sinusoids (periods of two to seven minutes) plus white noise
    passed through a first-order low-pass filter. The first ``ramp``
    seconds are faded in with a half cosine so a run starts from the base
    level. The result is divided by its largest magnitude and its sign
    chosen so that this peak is positive, so ``max(delta) == 1``.

    The signal is always generated over at least ``span`` seconds and then
    truncated, so every request of up to ``span`` seconds with the same seed
    is a prefix of the same signal. The peak of one is only guaranteed when
    ``n`` covers the whole span.
    """
    if n < 1:
        raise ValueError("signal length must be positive")
    rng = np.random.default_rng(seed)
    total = max(int(n), int(np.ceil(span / float(sample_time))))
    t = np.arange(total) * float(sample_time)
    periods = rng.uniform(120.0, 420.0, size=3)
    amps = rng.uniform(0.5, 1.0, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    slow = np.sum(amps[:, None] * np.sin(2 * np.pi * t[None, :] / periods[:, None]
                                         + phases[:, None]), axis=0)
    a = np.exp(-float(sample_time) / 20.0)
    noise = lfilter([1.0 - a], [1.0, -a], rng.standard_normal(total))
    noise *= 0.15 * np.std(slow) / max(np.std(noise), 1e-12)
    x = slow + noise
    if ramp > 0:
        x *= np.where(t < ramp, 0.5 - 0.5 * np.cos(np.pi * t / ramp), 1.0)
    peak = np.max(np.abs(x))
    x = x / peak
    if np.max(x) < 1.0:
        x = -x
    return x[:n]


def read_signal(path):
    """Read one value per line (blank lines and ``#`` comments skipped)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ReferenceError(f"cannot read reference file {path}: {exc.strerror}") from None
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            v = float(line)
        except ValueError:
            raise ReferenceError(f"not a number: {line!r}", lineno) from None
        if not np.isfinite(v):
            raise ReferenceError(f"non-finite value {line!r}", lineno)
        values.append(v)
    if not values:
        raise ReferenceError(f"reference file {path} holds no samples")
    arr = np.asarray(values)
    peak = np.max(np.abs(arr))
    return arr / peak if peak > 0 else arr


def load_or_generate_reference(source, gamma, p_greedy, n_samples, seed=0, base=0.8,
                               sample_time=1.0):
    """Reference of ``n_samples`` samples from a file path or ``"synthetic"``."""
    if not gamma >= 0:
        raise ValueError(f"gamma must be non-negative, got {gamma!r}")
    if source in (None, "synthetic"):
        delta = synthetic_signal(n_samples, seed, sample_time)
        label = f"synthetic(seed={seed})"
    else:
        delta = read_signal(source)
        if delta.size < n_samples:
            raise ReferenceError(f"reference file {source} has {delta.size} samples, "
                                 f"{n_samples} needed", delta.size + 1)
        delta = delta[:n_samples]
        label = str(source)
    samples = (base + gamma * delta) * p_greedy
    return ReferenceSignal(samples, delta, float(gamma), float(base), float(p_greedy), label,
                           {"seed": seed, "n_samples": int(n_samples)})
