import math

import numpy as np
import pytest
from scipy import stats

from rlaugment.augment import AugmentRng
from rlaugment.controller import (
    ControllerState,
    SampledPolicy,
    TokenVocab,
    controller_entropy,
    enumerate_policies,
    init_controller,
    log_prob,
    reinforce_gradient,
    reinforce_objective,
    reinforce_update,
    sample_policies,
    sample_policy,
    step_distributions,
    valid_token_mask,
)
from rlaugment.core import OperationKind, PolicyError, SearchSpace, default_search_space, parse_policy

LN7, LN5, LN10 = math.log(7), math.log(5), math.log(10)
EXAMPLE_POLICY = "TimeWarp(W=20);MinTimeMsk(m=2,T=7);MaxFreqMsk(m=1,F=3)"
REDUCED = SearchSpace(kinds=(OperationKind.TimeMask, OperationKind.FreqMask), counts=(1, 2), sizes=(1, 2),
                      policy_length=2)


def numeric_grad(f, params, h=1e-4):
    out = {}
    for k, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out[k] = g
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300)


def test_vocab_layout():
    v = TokenVocab(default_search_space())
    assert len(v) == 33
    assert v.phase_masks[0].sum() == 7
    assert len(set(v.tokens)) == len(v.tokens)


def test_valid_token_mask_grammar():
    v = TokenVocab(default_search_space())
    assert valid_token_mask([], v).sum() == 7
    tm = v.index["kind", OperationKind.TimeMask]
    tw = v.index["kind", OperationKind.TimeWarp]
    m = valid_token_mask([tm], v)
    assert m.sum() == 5 and all(v.tokens[i][0] == "count" for i in np.flatnonzero(m))
    m = valid_token_mask([tm, v.index["count", 2]], v)
    assert m.sum() == 10 and all(v.tokens[i][0] == "size" for i in np.flatnonzero(m))
    m = valid_token_mask([tw], v)
    assert m.sum() == 10 and all(v.tokens[i][0] == "warp" for i in np.flatnonzero(m))
    full = v.encode(parse_policy(EXAMPLE_POLICY))
    assert not valid_token_mask(full, v).any()
    with pytest.raises(PolicyError):
        valid_token_mask([v.index["count", 1]], v)
    with pytest.raises(PolicyError):
        valid_token_mask(full + [tm], v)


def test_distinct_flag_removes_used_kinds():
    sp = SearchSpace(distinct=True)
    v = TokenVocab(sp)
    tm = v.index["kind", OperationKind.TimeMask]
    m = valid_token_mask([tm, v.index["count", 1], v.index["size", 1]], v)
    assert m.sum() == 6 and not m[tm]
    c = init_controller(sp, seed=3)
    for s in sample_policies(c, 300, 4):
        assert len({op.kind for op in s.policy}) == 3


def test_zero_controller_log_probs(zero_controller):
    three_masks = parse_policy("TimeMsk(m=1,T=1);FreqMsk(m=5,F=10);MinFreqMsk(m=2,F=3)")
    assert log_prob(zero_controller, three_masks) == pytest.approx(-3 * (LN7 + LN5 + LN10), abs=1e-12)
    assert -3 * (LN7 + LN5 + LN10) == pytest.approx(-17.5738, abs=1e-4)
    warps = parse_policy("TimeWarp(W=10);TimeWarp(W=55);TimeWarp(W=30)")
    assert log_prob(zero_controller, warps) == pytest.approx(-3 * (LN7 + LN10), abs=1e-12)
    assert -3 * (LN7 + LN10) == pytest.approx(-12.7455, abs=1e-4)
    expected = -(LN7 + LN10) - 2 * (LN7 + LN5 + LN10)
    assert log_prob(zero_controller, parse_policy(EXAMPLE_POLICY)) == pytest.approx(expected, abs=1e-12)


def test_zero_controller_sampled_log_probs_match_structure(zero_controller):
    for s in sample_policies(zero_controller, 200, 8):
        n_warp = sum(op.kind is OperationKind.TimeWarp for op in s.policy)
        expected = -n_warp * (LN7 + LN10) - (3 - n_warp) * (LN7 + LN5 + LN10)
        assert s.log_prob == pytest.approx(expected, abs=1e-10)


def test_zero_controller_step_entropies(zero_controller):
    dist = step_distributions(zero_controller, parse_policy("TimeMsk(m=1,T=1);FreqMsk(m=1,F=1);TimeMsk(m=1,T=1)"))
    ent = -(np.where(dist > 0, dist * np.log(np.where(dist > 0, dist, 1)), 0)).sum(axis=1)
    np.testing.assert_allclose(ent, [LN7, LN5, LN10] * 3, atol=1e-12)
    s = next(s for s in sample_policies(zero_controller, 50, 1)
             if all(op.kind is not OperationKind.TimeWarp for op in s.policy))
    np.testing.assert_allclose(s.step_entropies, [LN7, LN5, LN10] * 3, atol=1e-12)


def test_first_step_kind_frequencies(zero_controller):
    samples = sample_policies(zero_controller, 10_000, AugmentRng(2024))
    kinds = np.array([int(s.policy.ops[0].kind) for s in samples])
    freq = np.bincount(kinds, minlength=8)[1:] / kinds.size
    np.testing.assert_allclose(freq, 1 / 7, atol=0.02)


def test_rescoring_matches_sampling():
    c = init_controller(seed=5, init_scale=0.5)
    for s in sample_policies(c, 50, 3):
        assert log_prob(c, s.policy) == pytest.approx(s.log_prob, abs=1e-10)
        assert s.log_prob <= 0
        assert c.vocab.decode(s.token_ids) == s.policy
    single = sample_policy(c, 7)
    assert log_prob(c, single.policy) == pytest.approx(single.log_prob, abs=1e-10)


def test_sampling_is_deterministic():
    c = init_controller(seed=1)
    a = [s.policy for s in sample_policies(c, 20, AugmentRng(3))]
    b = [s.policy for s in sample_policies(c, 20, AugmentRng(3))]
    assert a == b


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_enumeration_sums_to_one(seed):
    c = init_controller(REDUCED, seed=seed, hidden=16, embed=8, init_scale=1.0)
    policies = list(enumerate_policies(REDUCED))
    assert len(policies) == 64
    total = sum(math.exp(log_prob(c, p)) for p in policies)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_masked_probabilities_normalised():
    c = init_controller(seed=9, init_scale=0.7)
    v = c.vocab
    for s in sample_policies(c, 100, 1):
        dist = step_distributions(c, s.policy)
        np.testing.assert_allclose(dist.sum(axis=1), 1.0, atol=1e-9)
        for t in range(len(s.token_ids)):
            mask = valid_token_mask(s.token_ids[:t], v)
            assert np.all(dist[t][~mask] == 0.0)


def _samples(c, n, seed, carry=False):
    samples = sample_policies(c, n, seed)
    if carry:
        g = np.random.default_rng(seed)
        h0, c0 = g.normal(scale=0.5, size=(n, c.hidden)), g.normal(scale=0.5, size=(n, c.hidden))
        samples = sample_policies(c, n, seed, h0, c0)
    return samples


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("lam, carry", [(0.0, False), (0.3, False), (0.3, True)])
def test_gradient_matches_finite_differences(seed, lam, carry):
    c = init_controller(seed=seed, hidden=8, embed=4, init_scale=0.5)
    samples = _samples(c, 4, seed + 10, carry)
    rewards = np.random.default_rng(seed).normal(size=4)
    analytic = reinforce_gradient(c, samples, rewards, lam)
    numeric = numeric_grad(lambda: reinforce_objective(c, samples, rewards, lam), c.params)
    for k in c.params:
        assert rel_err(analytic[k], numeric[k]) < 1e-4, k


def test_zero_rewards_and_no_entropy_leave_state_untouched():
    c = init_controller(seed=0)
    samples = sample_policies(c, 4, 0)
    new = reinforce_update(c, samples, np.zeros(4), entropy_weight=0.0)
    for k in c.params:
        assert new.params[k].tobytes() == c.params[k].tobytes()
    assert new.adam.step == 0 and not new.adam.m


@pytest.mark.parametrize("reward, direction", [(-1.0, 1), (1.0, -1)])
def test_reward_sign_law(reward, direction):
    c = init_controller(seed=4)
    s = sample_policy(c, 11)
    new = reinforce_update(c, [s], [reward])
    delta = log_prob(new, s.policy) - log_prob(c, s.policy)
    assert np.sign(delta) == direction


def test_update_is_functional():
    c = init_controller(seed=4)
    before = {k: v.copy() for k, v in c.params.items()}
    reinforce_update(c, sample_policies(c, 2, 1), [1.0, -1.0])
    for k in before:
        np.testing.assert_array_equal(before[k], c.params[k])


def test_update_rejects_bad_input():
    c = init_controller(seed=4, hidden=8, embed=4)
    s = sample_policies(c, 2, 1)
    with pytest.raises(ValueError):
        reinforce_update(c, [], [])
    with pytest.raises(ValueError):
        reinforce_update(c, s, [np.nan, 0.0])


def test_entropy_collapses_when_driven_to_one_policy():
    c = init_controller(seed=0, lr=0.003)
    p = parse_policy("TimeMsk(m=1,T=10);FreqMsk(m=1,F=10);TimeWarp(W=20)")
    target = SampledPolicy(p, tuple(c.vocab.encode(p)), 0.0, np.zeros(8))
    assert controller_entropy(c, 500, 1) > 1.5
    for _ in range(150):
        c = reinforce_update(c, [target], [-100.0])
    ent = controller_entropy(c, 500, 1)
    assert 0 <= ent < 0.1
    for k, v in c.params.items():
        assert np.all(np.isfinite(v)), k


def test_entropy_nonnegative():
    for seed in range(3):
        c = init_controller(seed=seed, init_scale=2.0)
        assert controller_entropy(c, 100, seed) >= 0


def test_default_hyperparameters():
    c = init_controller()
    assert c.hidden == 128 and c.embed == 32
    assert c.lr == 0.00035 and c.entropy_weight == 1e-5
    assert c.params["emb"].shape == (33, 32)
    assert np.all(c.params["b"][128:256] == 1.0)
    assert np.all(np.abs(c.params["Wh"]) <= 0.08)


def test_zero_controller_kind_draws_pass_chi_square(zero_controller):
    samples = sample_policies(zero_controller, 10_000, AugmentRng(77))
    counts = np.bincount([int(s.policy.ops[0].kind) for s in samples], minlength=8)[1:]
    assert stats.chisquare(counts).pvalue > 0.01
