"""
Masking and time warping on a single spectrogram
================================================

Apply each augmentation kernel to a small synthetic spectrogram and look at
what changes. Run with ``python3 notebooks/01_augmentation_kernels.py``.
"""

# %%
import numpy as np

from rlaugment import AugmentRng, Spectrogram, apply_mask, apply_policy, parse_policy, time_warp
from rlaugment.augment import speed_perturb

rng = np.random.default_rng(0)
s = Spectrogram(rng.normal(size=(40, 20)))
print("input", s.shape, "mean %.3f max %.3f min %.3f" % (s.values.mean(), s.values.max(), s.values.min()))

# %% [markdown]
# A time mask with count 2 and size cap 7, filled with the utterance minimum.
# Rows that changed are the masked frames; every other cell is untouched.

# %%
out = apply_mask(s, "time", count=2, size_cap=7, fill="min", rng=AugmentRng(3))
changed = np.flatnonzero(np.any(out.values != s.values, axis=1))
print("masked frames:", changed.tolist())
print("fill value equals input min:", np.all(out.values[changed] == s.values.min()))

# %% [markdown]
# Frequency masks work the same way along the other axis.

# %%
out = apply_mask(s, "freq", count=1, size_cap=3, fill="max", rng=AugmentRng(3))
print("masked bins:", np.flatnonzero(np.any(out.values != s.values, axis=0)).tolist())

# %% [markdown]
# Time warping inserts W interpolated frames between two neighbours, so the
# output is W frames longer and the original frames survive in order.

# %%
warped = time_warp(s, 20, AugmentRng(3))
print("warp:", s.shape, "->", warped.shape)

# %% [markdown]
# A policy is three operations applied in order, each with its own substream.

# %%
policy = parse_policy("TimeWarp(W=20);MinTimeMsk(m=2,T=7);MaxFreqMsk(m=1,F=3)")
out = apply_policy(s, policy, AugmentRng(7))
print(policy, "->", out.shape)

# %% [markdown]
# Speed perturbation resamples a waveform by linear interpolation; it is a
# reference baseline and not part of the policy search.

# %%
wave = np.sin(np.linspace(0, 20 * np.pi, 16000))
for alpha in (0.9, 1.0, 1.1):
    print("alpha", alpha, "->", speed_perturb(wave, alpha).shape)
