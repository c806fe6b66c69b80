import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlaugment.augment import (
    AugmentRng,
    apply_mask,
    apply_op_batch,
    apply_policy,
    apply_policy_batch,
    draw_mask_bands,
    insert_frames,
    speed_perturb,
    time_warp,
)
from rlaugment.core import SearchSpace, Spectrogram, parse_policy

EXAMPLE_POLICY = "TimeWarp(W=20);MinTimeMsk(m=2,T=7);MaxFreqMsk(m=1,F=3)"


def ramp_5x3():
    return Spectrogram(np.arange(15, dtype=float).reshape(5, 3))


def _seed_with_band(start, width, length=5, count=1, cap=2):
    for seed in range(10_000):
        s, w = draw_mask_bands(1, length, count, cap, AugmentRng(seed))
        if s[0, 0] == start and w[0, 0] == width:
            return seed
    raise AssertionError("no seed found")


@pytest.mark.parametrize("fill, value", [("mean", 7.0), ("max", 14.0)])
def test_mask_5x3_worked_example(fill, value):
    # oracle: mean(0..14) = 105 / 15 = 7, max = 14
    seed = _seed_with_band(start=1, width=2)
    out = apply_mask(ramp_5x3(), "time", 1, 2, fill, AugmentRng(seed)).values
    expected = np.arange(15, dtype=float).reshape(5, 3)
    expected[1:3] = value
    np.testing.assert_array_equal(out, expected)


def test_constant_spectrogram_unchanged_by_mean_masks():
    s = Spectrogram(np.full((12, 8), 3.25))
    for seed in range(20):
        assert apply_mask(s, "freq", 5, 10, "mean", seed) == s
        assert apply_mask(s, "time", 3, 4, "mean", seed) == s


def test_handcrafted_setting_is_in_grid():
    sp = SearchSpace()
    s = Spectrogram(np.random.default_rng(0).normal(size=(40, 20)))
    out = apply_mask(s, "time", 1, 10, "mean", 3, space=sp)
    assert out.shape == s.shape
    with pytest.raises(ValueError):
        apply_mask(s, "time", 6, 10, "mean", 3, space=sp)
    with pytest.raises(ValueError):
        apply_mask(s, "time", 1, 11, "mean", 3, space=sp)


def test_mask_width_clamped_to_axis_length():
    s = Spectrogram(np.arange(12.0).reshape(4, 3))
    out = apply_mask(s, "freq", 1, 10, "max", 0, fixed_width=True)
    np.testing.assert_array_equal(out.values, np.full((4, 3), 11.0))


def test_mask_rejects_bad_input():
    with pytest.raises(ValueError):
        Spectrogram(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        apply_mask(ramp_5x3(), "time", 0, 2, "mean", 0)
    with pytest.raises(ValueError):
        apply_mask(ramp_5x3(), "time", 1, 2, "median", 0)


def test_fixed_width_masks_exactly_size_cap():
    s, w = draw_mask_bands(50, 40, 3, 7, AugmentRng(1), fixed_width=True)
    assert np.all(w == 7) and np.all(s + w <= 40)


def test_mask_width_distribution_covers_zero_to_cap():
    _, w = draw_mask_bands(20_000, 40, 1, 4, AugmentRng(2))
    counts = np.bincount(w.ravel(), minlength=5)
    assert counts.size == 5
    np.testing.assert_allclose(counts / counts.sum(), 0.2, atol=0.02)


@settings(max_examples=60, deadline=None)
@given(
    t=st.integers(1, 30), f=st.integers(1, 20), count=st.integers(1, 5), cap=st.integers(1, 10),
    fill=st.sampled_from(["mean", "max", "min"]), axis=st.sampled_from(["time", "freq"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_mask_fill_property(t, f, count, cap, fill, axis, seed):
    x = np.random.default_rng(seed).normal(size=(t, f))
    out = apply_mask(Spectrogram(x), axis, count, cap, fill, seed).values
    assert out.shape == x.shape
    stat = {"mean": x.mean(), "max": x.max(), "min": x.min()}[fill]
    changed_lines = np.any(out != x, axis=1 if axis == "time" else 0)
    starts, widths = draw_mask_bands(1, x.shape[0 if axis == "time" else 1], count, cap, AugmentRng(seed))
    idx = np.arange(changed_lines.size)
    masked = ((idx >= starts[0, :, None]) & (idx < (starts + widths)[0, :, None])).any(axis=0)
    assert masked.sum() <= count * cap
    lines = out if axis == "time" else out.T
    orig = x if axis == "time" else x.T
    np.testing.assert_array_equal(lines[~masked], orig[~masked])
    np.testing.assert_allclose(lines[masked], stat, rtol=0, atol=np.spacing(abs(stat) + 1.0))


def test_time_warp_two_frame_example():
    x = np.stack([np.zeros(4), np.ones(4)])[None]
    out = insert_frames(x, 10, np.array([1]))[0]
    assert out.shape == (12, 4)
    np.testing.assert_array_equal(out[0], 0.0)
    np.testing.assert_array_equal(out[-1], 1.0)
    for k in range(1, 11):
        np.testing.assert_allclose(out[k], k / 11, rtol=0, atol=1e-15)


def test_time_warp_random_two_frame_has_only_one_insertion_point():
    s = Spectrogram(np.stack([np.zeros(3), np.ones(3)]))
    out = time_warp(s, 10, 5)
    np.testing.assert_allclose(out.values[:, 0], np.arange(12) / 11, atol=1e-15)


def test_zero_warp_is_identity():
    s = Spectrogram(np.random.default_rng(1).normal(size=(9, 4)))
    sp = SearchSpace(warps=(0, 10, 20))
    assert time_warp(s, 0, 3, space=sp) == s


def test_warp_grid_and_length_checks():
    s = Spectrogram(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        time_warp(s, 10, 0)
    with pytest.raises(ValueError):
        time_warp(Spectrogram(np.zeros((5, 4))), 11, 0, space=SearchSpace())
    assert time_warp(Spectrogram(np.zeros((5, 4))), 20, 0, space=SearchSpace()).shape == (25, 4)


@settings(max_examples=60, deadline=None)
@given(t=st.integers(2, 30), f=st.integers(1, 8), warp=st.integers(1, 55), seed=st.integers(0, 2**32 - 1))
def test_warp_law(t, f, warp, seed):
    x = np.random.default_rng(seed).normal(size=(t, f))
    out = time_warp(Spectrogram(x), warp, seed).values
    assert out.shape == (t + warp, f)
    at = int(AugmentRng(seed).generator.integers(1, t, size=1)[0])
    np.testing.assert_array_equal(out[:at], x[:at])
    np.testing.assert_array_equal(out[at + warp:], x[at:])
    k = np.arange(1, warp + 1)[:, None] / (warp + 1)
    np.testing.assert_allclose(out[at:at + warp], x[at - 1] * (1 - k) + x[at] * k, atol=1e-12)


def test_apply_policy_example_policy_shape():
    s = Spectrogram(np.random.default_rng(0).normal(size=(40, 20)))
    out = apply_policy(s, parse_policy(EXAMPLE_POLICY), AugmentRng(11))
    assert out.shape == (60, 20)


def test_apply_policy_mask_only_preserves_shape_and_is_deterministic():
    s = Spectrogram(np.random.default_rng(0).normal(size=(40, 20)))
    p = parse_policy("MaxTimeMsk(m=3,T=5);FreqMsk(m=2,F=9);MinFreqMsk(m=1,F=2)")
    a = apply_policy(s, p, AugmentRng(5))
    b = apply_policy(s, p, AugmentRng(5))
    assert a.shape == s.shape
    assert a.values.tobytes() == b.values.tobytes()
    assert a != apply_policy(s, p, AugmentRng(6))


def test_apply_policy_ops_use_independent_substreams():
    x = np.random.default_rng(0).normal(size=(1, 40, 20))
    p = parse_policy("TimeMsk(m=2,T=5);TimeWarp(W=10);FreqMsk(m=2,F=4)")
    rng = AugmentRng(9)
    step = x
    for i, op in enumerate(p.ops):
        step = apply_op_batch(step, op, rng.substream(i))
    np.testing.assert_array_equal(step, apply_policy_batch(x, p, rng))


def test_batch_matches_single():
    x = np.random.default_rng(3).normal(size=(1, 30, 10))
    p = parse_policy(EXAMPLE_POLICY)
    np.testing.assert_array_equal(apply_policy_batch(x, p, 4)[0], apply_policy(Spectrogram(x[0]), p, 4).values)


def test_substreams_differ_and_are_stable():
    r = AugmentRng(42)
    a = r.substream(0).generator.random(5)
    r.generator.random(100)
    assert np.array_equal(a, r.substream(0).generator.random(5))
    assert not np.array_equal(a, r.substream(1).generator.random(5))


def test_speed_perturb_identity():
    x = np.random.default_rng(0).normal(size=50)
    np.testing.assert_array_equal(speed_perturb(x, 1.0), x)


def test_speed_perturb_ramp():
    out = speed_perturb(np.arange(101.0), 2.0)
    assert out.size == 51
    np.testing.assert_allclose(out, 2.0 * np.arange(51), atol=1e-12)


@pytest.mark.parametrize("alpha", [0.9, 1.0, 1.1])
def test_speed_perturb_si_factors_on_ramp(alpha):
    x = np.arange(200.0)
    out = speed_perturb(x, alpha)
    assert out.size == int(np.floor(199 / alpha)) + 1
    np.testing.assert_allclose(out, alpha * np.arange(out.size), atol=1e-9)


def test_speed_perturb_errors():
    with pytest.raises(ValueError):
        speed_perturb(np.arange(5.0), 0.0)
    with pytest.raises(ValueError):
        speed_perturb(np.array([]), 1.0)
