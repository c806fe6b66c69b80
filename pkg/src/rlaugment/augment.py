"""SpecAugment-style deformation kernels and speed perturbation.

Every kernel exists in two flavours: a single-spectrogram version operating
on :class:`~rlaugment.core.Spectrogram` and a ``*_batch`` version operating
on a ``(batch, time, freq)`` array. The single version is the batch version
with a batch of one, so both consume random numbers identically.
"""

from __future__ import annotations

import numpy as np

from .core import OperationKind, Policy, SearchSpace, Spectrogram

FILL_MODES = ("mean", "max", "min")


class AugmentRng:
    """Seeded random stream that splits into independent substreams.

    Substreams are addressed by index path, so ``rng.substream(3)`` always
    yields the same numbers no matter how much of ``rng`` itself has been
    consumed.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = None

    def substream(self, index: int) -> "AugmentRng":
        return AugmentRng(self.seed, self.key + (int(index),))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def __repr__(self):
        return f"AugmentRng(seed={self.seed}, key={self.key})"


def _as_rng(rng) -> AugmentRng:
    if isinstance(rng, AugmentRng):
        return rng
    return AugmentRng(int(rng))


def fill_statistic(x: np.ndarray, fill: str) -> np.ndarray:
    """Per-utterance fill value for a ``(batch, time, freq)`` array."""
    if fill == "mean":
        return x.mean(axis=(1, 2))
    if fill == "max":
        return x.max(axis=(1, 2))
    if fill == "min":
        return x.min(axis=(1, 2))
    raise ValueError(f"unknown fill mode {fill!r}, expected one of {FILL_MODES}")


def draw_mask_bands(n: int, length: int, count: int, size_cap: int, rng: AugmentRng,
                    fixed_width: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` bands per utterance; returns ``(starts, widths)``, each ``(n, count)``."""
    g = rng.generator
    cap = min(size_cap, length)
    if fixed_width:
        widths = np.full((n, count), cap, dtype=np.int64)
    else:
        widths = g.integers(0, cap + 1, size=(n, count))
    starts = g.integers(0, length - widths + 1)
    return starts, widths


def band_mask(starts: np.ndarray, widths: np.ndarray, length: int) -> np.ndarray:
    """Boolean ``(n, length)`` union of the bands."""
    idx = np.arange(length)
    inside = (idx >= starts[..., None]) & (idx < (starts + widths)[..., None])
    return inside.any(axis=1)


def apply_mask_batch(x: np.ndarray, axis: str, count: int, size_cap: int, fill: str,
                     rng, fixed_width: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a (batch, time, freq) array, got shape {x.shape}")
    if count < 1 or size_cap < 1:
        raise ValueError(f"mask count and size must be positive, got m={count}, size={size_cap}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if axis not in ("time", "freq"):
        raise ValueError(f"axis must be 'time' or 'freq', got {axis!r}")
    ax = 1 if axis == "time" else 2
    stat = fill_statistic(x, fill)
    starts, widths = draw_mask_bands(x.shape[0], x.shape[ax], count, size_cap, _as_rng(rng), fixed_width)
    masked = band_mask(starts, widths, x.shape[ax])
    cells = masked[:, :, None] if ax == 1 else masked[:, None, :]
    return np.where(cells, stat[:, None, None], x)


def apply_mask(s: Spectrogram, axis: str, count: int, size_cap: int, fill: str, rng,
               space: SearchSpace | None = None, fixed_width: bool = False) -> Spectrogram:
    """Mask ``count`` random bands along ``axis`` with the utterance mean/max/min.

    Band widths are uniform on ``0..size_cap`` (clamped to the axis length)
    unless ``fixed_width`` is set; starts are uniform over valid offsets.
    """
    if space is not None:
        if count not in space.counts:
            raise ValueError(f"m={count} not in count grid {list(space.counts)}")
        if size_cap not in space.sizes:
            raise ValueError(f"size={size_cap} not in size grid {list(space.sizes)}")
    out = apply_mask_batch(s.values[None], axis, count, size_cap, fill, rng, fixed_width)
    return Spectrogram(out[0])


def insert_frames(x: np.ndarray, warp: int, at: np.ndarray) -> np.ndarray:
    """Insert ``warp`` linearly interpolated frames before frame ``at[b]`` of each utterance."""
    n, t, _ = x.shape
    at = np.asarray(at, dtype=np.int64).reshape(n, 1)
    if np.any(at < 1) or np.any(at > t - 1):
        raise ValueError("insertion index must lie in 1..n_time-1")
    j = np.arange(t + warp)[None, :]
    inserted = (j >= at) & (j < at + warp)
    src = np.clip(np.where(j < at, j, j - warp), 0, t - 1)
    frac = (j - at + 1) / (warp + 1.0)
    rows = np.arange(n)
    prev = x[rows, at[:, 0] - 1][:, None, :]
    nxt = x[rows, at[:, 0]][:, None, :]
    interp = prev * (1.0 - frac)[..., None] + nxt * frac[..., None]
    return np.where(inserted[..., None], interp, x[rows[:, None], src])


def time_warp_batch(x: np.ndarray, warp: int, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a (batch, time, freq) array, got shape {x.shape}")
    if x.shape[1] < 2:
        raise ValueError("time warping needs at least 2 frames")
    if warp < 0:
        raise ValueError(f"warp must be non-negative, got {warp}")
    at = _as_rng(rng).generator.integers(1, x.shape[1], size=x.shape[0])
    if warp == 0:
        return x.copy()
    return insert_frames(x, warp, at)


def time_warp(s: Spectrogram, warp: int, rng, space: SearchSpace | None = None) -> Spectrogram:
    """Insert ``warp`` interpolated frames at a random interior time step."""
    if space is not None and warp not in space.warps:
        raise ValueError(f"W={warp} not in warp grid {list(space.warps)}")
    return Spectrogram(time_warp_batch(s.values[None], warp, rng)[0])


def apply_op_batch(x: np.ndarray, op, rng, fixed_width: bool = False) -> np.ndarray:
    if op.kind is OperationKind.TimeWarp:
        return time_warp_batch(x, op.warp, rng)
    return apply_mask_batch(x, op.kind.axis, op.count, op.size, op.kind.fill, rng, fixed_width)


def apply_policy_batch(x: np.ndarray, policy: Policy, rng, fixed_width: bool = False) -> np.ndarray:
    """Apply the operations left to right; operation ``i`` draws from ``rng.substream(i)``."""
    rng = _as_rng(rng)
    out = np.asarray(x, dtype=np.float64)
    for i, op in enumerate(policy.ops):
        out = apply_op_batch(out, op, rng.substream(i), fixed_width)
    return out


def apply_policy(s: Spectrogram, policy: Policy, rng, space: SearchSpace | None = None,
                 fixed_width: bool = False) -> Spectrogram:
    if space is not None:
        space.check_policy(policy, any_length=True)
    return Spectrogram(apply_policy_batch(s.values[None], policy, rng, fixed_width)[0])


def speed_perturb(x, alpha: float) -> np.ndarray:
    """Resample ``x`` so that ``y[n] = x(n * alpha)`` with linear interpolation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("speed_perturb expects a non-empty 1-D signal")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if x.size < 2:
        raise ValueError("speed_perturb needs at least 2 samples")
    n_out = int(np.floor((x.size - 1) / alpha)) + 1
    pos = np.arange(n_out) * alpha
    return np.interp(pos, np.arange(x.size), x)
