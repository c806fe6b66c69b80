"""Recurrent policy controller.

A one-layer LSTM emits a policy token by token. A grammar restricts which
tokens are legal at each step: an operation kind first, then for masks a
count followed by a size, and for time warping a warp factor. Illegal
tokens get probability exactly zero.

Gradients of the REINFORCE objective are computed by hand with
backpropagation through time; the optimizer is Adam.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentRng
from .core import OperationKind, OperationSpec, Policy, PolicyError, SearchSpace, default_search_space

PHASE_KIND, PHASE_COUNT, PHASE_SIZE, PHASE_WARP, PHASE_DONE = range(5)

PARAM_NAMES = ("emb", "Wx", "Wh", "b", "Wo", "bo")


class TokenVocab:
    """Token ids for one search space.

    Layout: start token, then kinds, counts, sizes and warp factors in grid order.
    """

    def __init__(self, space: SearchSpace):
        self.space = space
        self.tokens = [("start", None)]
        self.tokens += [("kind", k) for k in space.kinds]
        self.tokens += [("count", v) for v in space.counts]
        self.tokens += [("size", v) for v in space.sizes]
        self.tokens += [("warp", v) for v in space.warps]
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.start = 0
        size = len(self.tokens)
        self.phase_masks = np.zeros((5, size), dtype=bool)
        for i, (typ, _) in enumerate(self.tokens):
            phase = {"kind": PHASE_KIND, "count": PHASE_COUNT, "size": PHASE_SIZE, "warp": PHASE_WARP}.get(typ)
            if phase is not None:
                self.phase_masks[phase, i] = True
        self.kind_ids = np.array([self.index["kind", k] for k in space.kinds])
        # token id -> OperationKind value, 0 for non-kind tokens
        self.token_kind = np.zeros(size, dtype=np.int64)
        self.token_kind[self.kind_ids] = [int(k) for k in space.kinds]
        self.mask_cache = {}

    def __len__(self):
        return len(self.tokens)

    def encode(self, policy: Policy) -> list[int]:
        self.space.check_policy(policy)
        ids = []
        for op in policy.ops:
            ids.append(self.index["kind", op.kind])
            if op.kind is OperationKind.TimeWarp:
                ids.append(self.index["warp", op.warp])
            else:
                ids.append(self.index["count", op.count])
                ids.append(self.index["size", op.size])
        return ids

    def decode(self, ids) -> Policy:
        ops = []
        ids = list(ids)
        i = 0
        while i < len(ids):
            typ, kind = self.tokens[ids[i]]
            if typ != "kind":
                raise PolicyError(f"token {i}: expected an operation kind, got {typ}")
            if kind is OperationKind.TimeWarp:
                typ, w = self.tokens[ids[i + 1]]
                if typ != "warp":
                    raise PolicyError(f"token {i + 1}: expected a warp factor")
                ops.append(OperationSpec(kind, warp=w))
                i += 2
            else:
                (t1, m), (t2, s) = self.tokens[ids[i + 1]], self.tokens[ids[i + 2]]
                if t1 != "count" or t2 != "size":
                    raise PolicyError(f"token {i + 1}: expected count then size")
                ops.append(OperationSpec(kind, count=m, size=s))
                i += 3
        policy = Policy(tuple(ops))
        self.space.check_policy(policy)
        return policy


def _advance(vocab: TokenVocab, phase: int, ops_done: int, tok: int) -> tuple[int, int]:
    if phase == PHASE_KIND:
        kind = vocab.token_kind[tok]
        return (PHASE_WARP if kind == OperationKind.TimeWarp else PHASE_COUNT), ops_done
    if phase == PHASE_COUNT:
        return PHASE_SIZE, ops_done
    ops_done += 1
    return (PHASE_KIND if ops_done < vocab.space.policy_length else PHASE_DONE), ops_done


def valid_token_mask(partial, vocab: TokenVocab | SearchSpace | None = None) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens allowed after ``partial``."""
    if not isinstance(vocab, TokenVocab):
        vocab = TokenVocab(vocab or default_search_space())
    phase, done, used = PHASE_KIND, 0, set()
    for pos, tok in enumerate(partial):
        tok = int(tok)
        if phase == PHASE_DONE or not (0 <= tok < len(vocab)) or not vocab.phase_masks[phase, tok]:
            raise PolicyError(f"token {pos} ({tok}) is not allowed by the grammar here")
        if phase == PHASE_KIND:
            if vocab.space.distinct and tok in used:
                raise PolicyError(f"token {pos}: repeated operation kind")
            used.add(tok)
        phase, done = _advance(vocab, phase, done, tok)
    return _mask_for(vocab, phase, used)


def _mask_for(vocab, phase, used):
    mask = vocab.phase_masks[phase].copy() if phase != PHASE_DONE else np.zeros(len(vocab), dtype=bool)
    if phase == PHASE_KIND and vocab.space.distinct:
        mask[list(used)] = False
    return mask


def grammar_masks(vocab: TokenVocab, ids) -> np.ndarray:
    """Masks for every step of a complete token sequence, shape ``(len(ids), V)``."""
    key = tuple(int(i) for i in ids)
    masks = vocab.mask_cache.get(key)
    if masks is None:
        masks = np.stack([valid_token_mask(key[:t], vocab) for t in range(len(key))])
        masks.setflags(write=False)
        vocab.mask_cache[key] = masks
    return masks


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class ControllerState:
    """Parameters of the policy LSTM plus its optimizer state.

    Sampling and scoring accept an initial recurrent state (``h0``, ``c0``);
    it is treated as a constant by the gradient.
    """

    space: SearchSpace
    params: dict
    hidden: int = 128
    embed: int = 32
    lr: float = 0.00035
    entropy_weight: float = 1e-5
    adam: AdamState = field(default_factory=AdamState)

    @property
    def vocab(self) -> TokenVocab:
        v = self.__dict__.get("_vocab")
        if v is None or v.space != self.space:
            v = TokenVocab(self.space)
            self.__dict__["_vocab"] = v
        return v

    def copy(self) -> "ControllerState":
        adam = AdamState(self.adam.beta1, self.adam.beta2, self.adam.eps, self.adam.step,
                         {k: v.copy() for k, v in self.adam.m.items()},
                         {k: v.copy() for k, v in self.adam.v.items()})
        new = dataclasses.replace(self, params={k: v.copy() for k, v in self.params.items()}, adam=adam)
        if "_vocab" in self.__dict__:
            new.__dict__["_vocab"] = self.__dict__["_vocab"]
        return new

    def zero_state(self, n: int = 1):
        return np.zeros((n, self.hidden)), np.zeros((n, self.hidden))


def init_controller(space: SearchSpace | None = None, seed: int = 0, hidden: int = 128, embed: int = 32,
                    lr: float = 0.00035, entropy_weight: float = 1e-5, init_scale: float = 0.08,
                    zero: bool = False) -> ControllerState:
    """Uniform(-0.08, 0.08) weights, zero biases except forget gate = 1.

    ``zero=True`` gives all-zero weights and biases, under which every step
    is uniform over the legal tokens.
    """
    space = space or default_search_space()
    V = len(TokenVocab(space))
    H, E = hidden, embed
    shapes = {"emb": (V, E), "Wx": (E, 4 * H), "Wh": (H, 4 * H), "b": (4 * H,), "Wo": (H, V), "bo": (V,)}
    if zero:
        params = {k: np.zeros(s) for k, s in shapes.items()}
    else:
        g = np.random.default_rng(seed)
        params = {}
        for k in PARAM_NAMES:
            if k in ("b", "bo"):
                params[k] = np.zeros(shapes[k])
            else:
                params[k] = g.uniform(-init_scale, init_scale, size=shapes[k])
        params["b"][H:2 * H] = 1.0
    return ControllerState(space=space, params=params, hidden=H, embed=E, lr=lr,
                           entropy_weight=entropy_weight)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_step(p, H, x, h, c):
    z = x @ p["Wx"] + h @ p["Wh"] + p["b"]
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def _masked_log_softmax(logits, mask):
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    logp = np.where(mask, z - zmax - np.log(np.where(total > 0, total, 1.0)), -np.inf)
    p = np.where(mask, e / np.where(total > 0, total, 1.0), 0.0)
    return logp, p


def _entropy(logp, p):
    return -np.where(p > 0, p * np.where(np.isfinite(logp), logp, 0.0), 0.0).sum(axis=-1)


@dataclass
class SampledPolicy:
    policy: Policy
    token_ids: tuple[int, ...]
    log_prob: float
    step_entropies: np.ndarray
    h0: np.ndarray | None = None
    c0: np.ndarray | None = None
    h_final: np.ndarray | None = None
    c_final: np.ndarray | None = None

    @property
    def mean_entropy(self) -> float:
        return float(np.mean(self.step_entropies))


def _init_states(c: ControllerState, n, h0, c0):
    zh, zc = c.zero_state(n)
    h = zh if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (n, c.hidden)).copy()
    cc = zc if c0 is None else np.broadcast_to(np.asarray(c0, dtype=np.float64), (n, c.hidden)).copy()
    return h, cc


def sample_policies(c: ControllerState, n: int, rng, h0=None, c0=None) -> list[SampledPolicy]:
    """Draw ``n`` policies in one batched pass; ``h0``/``c0`` may be ``(H,)`` or ``(n, H)``."""
    rng = rng if isinstance(rng, AugmentRng) else AugmentRng(int(rng))
    g = rng.generator
    vocab = c.vocab
    p, H = c.params, c.hidden
    h, cs = _init_states(c, n, h0, c0)
    start_h, start_c = h.copy(), cs.copy()
    final_h, final_c = h.copy(), cs.copy()
    prev = np.full(n, vocab.start)
    phase = np.full(n, PHASE_KIND)
    done_ops = np.zeros(n, dtype=np.int64)
    used = np.zeros((n, len(vocab)), dtype=bool)
    tokens = [[] for _ in range(n)]
    logps = np.zeros(n)
    ents = [[] for _ in range(n)]
    distinct = vocab.space.distinct
    L = vocab.space.policy_length
    for _ in range(3 * L):
        active = phase != PHASE_DONE
        if not active.any():
            break
        h, cs, _ = _lstm_step(p, H, p["emb"][prev], h, cs)
        logits = h @ p["Wo"] + p["bo"]
        mask = vocab.phase_masks[np.minimum(phase, PHASE_WARP)]
        if distinct:
            mask = mask & ~((phase == PHASE_KIND)[:, None] & used)
        logp, prob = _masked_log_softmax(logits, mask)
        ent = _entropy(logp, prob)
        cdf = np.cumsum(prob, axis=1)
        u = g.random(n) * cdf[:, -1]
        tok = np.argmax(cdf > u[:, None], axis=1)
        # guard against u landing on the last cdf value through rounding
        bad = ~mask[np.arange(n), tok]
        if bad.any():
            tok[bad] = np.array([np.flatnonzero(mask[r])[-1] for r in np.flatnonzero(bad)])
        for r in np.flatnonzero(active):
            t = int(tok[r])
            tokens[r].append(t)
            logps[r] += logp[r, t]
            ents[r].append(ent[r])
            if phase[r] == PHASE_KIND:
                used[r, t] = True
            phase[r], done_ops[r] = _advance(vocab, phase[r], done_ops[r], t)
            if phase[r] == PHASE_DONE:
                final_h[r], final_c[r] = h[r], cs[r]
        prev = np.where(active, tok, prev)
    return [
        SampledPolicy(vocab.decode(tokens[r]), tuple(tokens[r]), float(logps[r]), np.array(ents[r]),
                      start_h[r].copy(), start_c[r].copy(), final_h[r].copy(), final_c[r].copy())
        for r in range(n)
    ]


def sample_policy(c: ControllerState, rng, h0=None, c0=None) -> SampledPolicy:
    return sample_policies(c, 1, rng, h0, c0)[0]


def _teacher_forward(c: ControllerState, seqs, h0=None, c0=None):
    """Teacher-forced batched pass over token sequences (padded internally)."""
    vocab = c.vocab
    p, H = c.params, c.hidden
    B = len(seqs)
    T = max(len(s) for s in seqs)
    targets = np.zeros((B, T), dtype=np.int64)
    valid = np.zeros((B, T), dtype=bool)
    masks = np.zeros((B, T, len(vocab)), dtype=bool)
    for b, s in enumerate(seqs):
        targets[b, :len(s)] = s
        valid[b, :len(s)] = True
        masks[b, :len(s)] = grammar_masks(vocab, s)
        masks[b, len(s):, vocab.start] = True
    h, cs = _init_states(c, B, h0, c0)
    prev = np.full(B, vocab.start)
    steps = []
    for t in range(T):
        x = p["emb"][prev]
        h, cs, cache = _lstm_step(p, H, x, h, cs)
        logits = h @ p["Wo"] + p["bo"]
        logp, prob = _masked_log_softmax(logits, masks[:, t])
        steps.append((prev.copy(), h, cache, logp, prob))
        prev = targets[:, t]
    return steps, targets, valid


def log_prob(c: ControllerState, policy: Policy, h0=None, c0=None) -> float:
    """Exact log-probability of ``policy`` under the controller."""
    ids = c.vocab.encode(policy)
    steps, targets, _ = _teacher_forward(c, [ids], h0, c0)
    return float(sum(s[3][0, targets[0, t]] for t, s in enumerate(steps)))


def step_distributions(c: ControllerState, policy: Policy, h0=None, c0=None) -> np.ndarray:
    """Per-step probability vectors over the vocabulary, shape ``(steps, V)``."""
    steps, _, _ = _teacher_forward(c, [c.vocab.encode(policy)], h0, c0)
    return np.stack([s[4][0] for s in steps])


def reinforce_objective(c: ControllerState, samples, rewards, entropy_weight=None) -> float:
    """``mean_m(reward_m * log p(policy_m)) - w * mean step entropy``; the update descends on this."""
    lam = c.entropy_weight if entropy_weight is None else entropy_weight
    seqs = [s.token_ids for s in samples]
    steps, targets, valid = _teacher_forward(c, seqs, *_stack_starts(c, samples))
    M = len(samples)
    rewards = np.asarray(rewards, dtype=np.float64)
    total = 0.0
    ent_sum = 0.0
    for t, (_, _, _, logp, prob) in enumerate(steps):
        v = valid[:, t]
        lp = logp[np.arange(M), targets[:, t]]
        total += np.sum(np.where(v, rewards * lp, 0.0)) / M
        ent_sum += np.sum(np.where(v, _entropy(logp, prob), 0.0))
    return float(total - lam * ent_sum / valid.sum())


def _stack_starts(c, samples):
    if all(s.h0 is None for s in samples):
        return None, None
    h0 = np.stack([s.h0 if s.h0 is not None else np.zeros(c.hidden) for s in samples])
    c0 = np.stack([s.c0 if s.c0 is not None else np.zeros(c.hidden) for s in samples])
    return h0, c0


def reinforce_gradient(c: ControllerState, samples, rewards, entropy_weight=None) -> dict:
    """Gradient of :func:`reinforce_objective` by backpropagation through time."""
    lam = c.entropy_weight if entropy_weight is None else entropy_weight
    p, H = c.params, c.hidden
    seqs = [s.token_ids for s in samples]
    steps, targets, valid = _teacher_forward(c, seqs, *_stack_starts(c, samples))
    M = len(samples)
    w = np.asarray(rewards, dtype=np.float64) / M
    n_steps = valid.sum()
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dh_next = np.zeros((M, H))
    dc_next = np.zeros((M, H))
    rows = np.arange(M)
    for t in reversed(range(len(steps))):
        prev, h, (x, h_prev, c_prev, i, f, g, o, tc), logp, prob = steps[t]
        onehot = np.zeros_like(prob)
        onehot[rows, targets[:, t]] = 1.0
        ent = _entropy(logp, prob)
        safe_logp = np.where(prob > 0, logp, 0.0)
        dlogits = w[:, None] * (onehot - prob)
        # d(-lam * H_t / N) / dlogits = lam / N * p * (log p + H_t)
        dlogits += (lam / n_steps) * prob * (safe_logp + ent[:, None])
        dlogits *= valid[:, t][:, None]
        grads["Wo"] += h.T @ dlogits
        grads["bo"] += dlogits.sum(axis=0)
        dh = dlogits @ p["Wo"].T + dh_next
        dc = dh * o * (1.0 - tc ** 2) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        grads["Wx"] += x.T @ dz
        grads["Wh"] += h_prev.T @ dz
        grads["b"] += dz.sum(axis=0)
        np.add.at(grads["emb"], prev, dz @ p["Wx"].T)
        dh_next = dz @ p["Wh"].T
        dc_next = dc * f
    return grads


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place Adam update ``params -= lr * m_hat / (sqrt(v_hat) + eps)``."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def reinforce_update(c: ControllerState, samples, rewards, entropy_weight=None) -> ControllerState:
    """One REINFORCE step on normalized rewards; returns a new state.

    Descends on ``mean_m(r_m log p_m) - w * H``: policies with negative reward
    become more likely, and the entropy bonus resists collapse. An all-zero
    gradient leaves parameters and optimizer state untouched.
    """
    if not samples:
        raise ValueError("reinforce_update needs at least one sample")
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape != (len(samples),):
        raise ValueError("one reward per sample expected")
    if not np.all(np.isfinite(rewards)):
        raise ValueError(f"non-finite rewards: {rewards.tolist()}")
    new = c.copy()
    grads = reinforce_gradient(c, samples, rewards, entropy_weight)
    if all(not np.any(g) for g in grads.values()):
        return new
    adam_step(new.params, grads, new.adam, new.lr)
    for k, v in new.params.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"controller parameter {k} became non-finite")
    return new


def controller_entropy(c: ControllerState, n_samples: int, rng, h0=None, c0=None) -> float:
    """Monte-Carlo mean per-step entropy in nats."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = sample_policies(c, n_samples, rng, h0, c0)
    return float(np.mean(np.concatenate([s.step_entropies for s in samples])))


def enumerate_policies(space: SearchSpace):
    """Every policy in ``space`` (only sensible for small spaces)."""
    choices = []
    for k in space.kinds:
        if k is OperationKind.TimeWarp:
            choices += [OperationSpec(k, warp=w) for w in space.warps]
        else:
            choices += [OperationSpec(k, count=m, size=s) for m in space.counts for s in space.sizes]

    def rec(prefix):
        if len(prefix) == space.policy_length:
            yield Policy(tuple(prefix))
            return
        used = {op.kind for op in prefix}
        for op in choices:
            if space.distinct and op.kind in used:
                continue
            yield from rec(prefix + [op])

    yield from rec([])
