"""Alternating trainee/controller training, baselines and sweeps.

Each epoch samples ``M`` policies, trains the trainee on ``M`` augmented
copies of every minibatch (gradients averaged over branches), then turns
the per-policy mean losses into normalized rewards for one controller step.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .augment import AugmentRng, apply_policy_batch
from .controller import (
    ControllerState,
    SampledPolicy,
    init_controller,
    reinforce_update,
    sample_policies,
)
from .core import (
    FREQ_MASK_KINDS,
    OperationKind,
    OperationSpec,
    Policy,
    SearchSpace,
    default_search_space,
    format_policy,
    parse_policy,
)
from .trainee import LabeledSet, ToyClassifier

log = logging.getLogger(__name__)

MODES = ("rl", "random", "fixed", "none")
REWARD_SIGNS = ("as_paper", "adversarial")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "rl"
    M: int = 4
    epochs: int = 100
    batch_size: int = 32
    eta_asr: float = 0.05
    eta_plc: float = 0.00035
    entropy_weight: float = 1e-5
    reward_sign: str = "as_paper"
    normalize_rewards: bool = True
    fixed_policy: str = ""
    data_seed: int = 0
    augment_seed: int = 1
    controller_seed: int = 2
    reset_state_each_epoch: bool = False
    shared_minibatch: bool = True
    fixed_width: bool = False
    distinct_ops: bool = False
    policy_length: int = 3
    controller_hidden: int = 128
    controller_embed: int = 32
    trainee_hidden: int = 32
    record_wall_clock: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.eta_asr <= 0 or self.eta_plc <= 0 or self.entropy_weight < 0:
            raise ValueError("learning rates must be positive and entropy_weight >= 0")
        if self.reward_sign not in REWARD_SIGNS:
            raise ValueError(f"reward_sign must be one of {REWARD_SIGNS}")
        if self.mode == "fixed":
            if not self.fixed_policy:
                raise ValueError("mode=fixed needs a fixed_policy")
            self.policy()

    def space(self) -> SearchSpace:
        return SearchSpace(policy_length=self.policy_length, distinct=self.distinct_ops)

    def policy(self) -> Policy:
        return parse_policy(self.fixed_policy, self.space(), any_length=True)


@dataclass
class EpochRecord:
    epoch: int
    policies: list[str]
    raw_losses: list[float]
    normalized_rewards: list[float]
    controller_entropy: float | None
    train_loss: float
    test_accuracy: float
    wall_clock_seconds: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "EpochRecord":
        names = [f for f in cls.__dataclass_fields__]
        if sorted(d) != sorted(names):
            raise ValueError(f"record fields {sorted(d)} do not match {sorted(names)}")
        return cls(**d)


def normalize_losses(losses, eps: float = 1e-8) -> np.ndarray:
    """Zero-mean, unit (population) variance; all-equal losses give zeros."""
    x = np.asarray(losses, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a non-empty vector of losses")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite losses: {x.tolist()}")
    if np.all(x == x[0]):
        return np.zeros_like(x)
    return (x - x.mean()) / (x.std() + eps)


def sample_random_policies(space: SearchSpace, n: int, rng) -> list[Policy]:
    """Uniform over the factored grammar: kind first, then each parameter."""
    g = (rng if isinstance(rng, AugmentRng) else AugmentRng(int(rng))).generator
    out = []
    for _ in range(n):
        ops, used = [], set()
        for _ in range(space.policy_length):
            kinds = [k for k in space.kinds if not (space.distinct and k in used)]
            kind = kinds[g.integers(len(kinds))]
            used.add(kind)
            if kind is OperationKind.TimeWarp:
                ops.append(OperationSpec(kind, warp=space.warps[g.integers(len(space.warps))]))
            else:
                m = space.counts[g.integers(len(space.counts))]
                s = space.sizes[g.integers(len(space.sizes))]
                ops.append(OperationSpec(kind, count=m, size=s))
        out.append(Policy(tuple(ops)))
    return out


def destroys_band(policy: Policy, min_size: int = 6) -> bool:
    """True if any frequency mask in ``policy`` may cover ``min_size`` or more bins."""
    return any(op.kind in FREQ_MASK_KINDS and op.size >= min_size for op in policy.ops)


def destructive_fraction(policies, min_size: int = 6) -> float:
    policies = [p.policy if isinstance(p, SampledPolicy) else p for p in policies]
    return float(np.mean([destroys_band(p, min_size) for p in policies]))


@dataclass
class RunState:
    """Everything that evolves across epochs of one run."""

    cfg: TrainConfig
    trainee: ToyClassifier
    controller: ControllerState | None = None
    carry_h: np.ndarray | None = None
    carry_c: np.ndarray | None = None
    epoch: int = 0
    records: list = field(default_factory=list)


def init_run(cfg: TrainConfig, train: LabeledSet) -> RunState:
    cfg.validate()
    trainee = ToyClassifier(train.x.shape[2], train.n_classes, hidden=cfg.trainee_hidden, seed=cfg.data_seed)
    state = RunState(cfg, trainee)
    if cfg.mode == "rl":
        state.controller = init_controller(
            cfg.space(), seed=cfg.controller_seed, hidden=cfg.controller_hidden, embed=cfg.controller_embed,
            lr=cfg.eta_plc, entropy_weight=cfg.entropy_weight,
        )
        state.carry_h, state.carry_c = state.controller.zero_state(cfg.M)
    return state


def _batches(n, batch_size, rng: AugmentRng):
    order = rng.generator.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _train_branches(state: RunState, train: LabeledSet, policies: list[Policy | None]):
    """One pass over the data; every minibatch step averages the branch gradients.

    Returns per-branch mean loss over the epoch.
    """
    cfg, model = state.cfg, state.trainee
    data_rng = AugmentRng(cfg.data_seed).substream(1).substream(state.epoch)
    aug_rng = AugmentRng(cfg.augment_seed).substream(state.epoch)
    n_branch = len(policies)
    if cfg.shared_minibatch:
        shared = _batches(len(train), cfg.batch_size, data_rng)
        schedules = [shared] * n_branch
    else:
        schedules = [_batches(len(train), cfg.batch_size, data_rng.substream(m)) for m in range(n_branch)]
    losses = np.zeros((len(schedules[0]), n_branch))
    for j in range(len(schedules[0])):
        grads_sum = None
        for m, policy in enumerate(policies):
            idx = schedules[m][j]
            x = train.x[idx]
            if policy is not None:
                x = apply_policy_batch(x, policy, aug_rng.substream(j).substream(m), cfg.fixed_width)
            loss, grads = model.loss_and_grad(x, train.y[idx])
            if not np.isfinite(loss):
                name = format_policy(policy) if policy is not None else "no augmentation"
                raise TrainingError(f"non-finite loss at epoch {state.epoch}, batch {j}, policy {name}")
            losses[j, m] = loss
            if grads_sum is None:
                grads_sum = grads
            else:
                grads_sum = {k: grads_sum[k] + g for k, g in grads.items()}
        model.apply_step({k: g / n_branch for k, g in grads_sum.items()}, cfg.eta_asr)
    return losses.mean(axis=0)


def _rewards(cfg: TrainConfig, losses) -> np.ndarray:
    r = normalize_losses(losses) if cfg.normalize_rewards else np.asarray(losses, dtype=np.float64)
    if cfg.reward_sign == "adversarial":
        r = -r
    return r


def run_epoch(state: RunState, train: LabeledSet, test: LabeledSet) -> EpochRecord:
    """Run one epoch in the configured mode and append its record."""
    cfg = state.cfg
    t0 = time.perf_counter()
    entropy = None
    rewards = np.zeros(0)
    space = cfg.space()
    sample_rng = AugmentRng(cfg.controller_seed).substream(state.epoch)
    if cfg.mode == "rl":
        c = state.controller
        if cfg.reset_state_each_epoch:
            state.carry_h, state.carry_c = c.zero_state(cfg.M)
        samples = sample_policies(c, cfg.M, sample_rng, state.carry_h, state.carry_c)
        policies = [s.policy for s in samples]
        entropy = float(np.mean(np.concatenate([s.step_entropies for s in samples])))
    elif cfg.mode == "random":
        policies = sample_random_policies(space, cfg.M, sample_rng)
    elif cfg.mode == "fixed":
        policies = [cfg.policy()]
    else:
        policies = [None]

    losses = _train_branches(state, train, policies)

    if cfg.mode in ("rl", "random"):
        rewards = _rewards(cfg, losses)
    if cfg.mode == "rl":
        state.controller = reinforce_update(state.controller, samples, rewards)
        state.carry_h = np.stack([s.h_final for s in samples])
        state.carry_c = np.stack([s.c_final for s in samples])

    record = EpochRecord(
        epoch=state.epoch,
        policies=[format_policy(p) for p in policies if p is not None],
        raw_losses=[float(v) for v in losses] if cfg.mode != "none" else [],
        normalized_rewards=[float(v) for v in rewards],
        controller_entropy=entropy,
        train_loss=float(losses.mean()),
        test_accuracy=state.trainee.evaluate(test.x, test.y),
        wall_clock_seconds=round(time.perf_counter() - t0, 6) if cfg.record_wall_clock else 0.0,
    )
    state.records.append(record)
    state.epoch += 1
    return record


def run_epoch_rl(state: RunState, train: LabeledSet, test: LabeledSet) -> EpochRecord:
    if state.cfg.mode != "rl":
        raise ValueError("run_epoch_rl needs mode=rl")
    return run_epoch(state, train, test)


def sample_like_run(state: RunState, n: int, rng) -> list[SampledPolicy]:
    """Sample ``n`` policies the way the next epoch would, cycling over the carried branch states."""
    if state.controller is None:
        raise ValueError("run has no controller")
    idx = np.arange(n) % state.cfg.M
    if state.cfg.reset_state_each_epoch:
        return sample_policies(state.controller, n, rng)
    return sample_policies(state.controller, n, rng, state.carry_h[idx], state.carry_c[idx])


@dataclass
class RunResult:
    config: TrainConfig
    records: list
    trainee: ToyClassifier
    controller: ControllerState | None

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].test_accuracy if self.records else float("nan")


def run_training(cfg: TrainConfig, train: LabeledSet, test: LabeledSet, out_dir=None) -> RunResult:
    """Train for ``cfg.epochs`` epochs; with ``out_dir`` also write metrics and checkpoints.

    ``metrics.jsonl`` gets one line per epoch, flushed as it goes.
    """
    state = init_run(cfg, train)
    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics = open(out_dir / "metrics.jsonl", "w", encoding="utf-8", newline="\n")
    try:
        for _ in range(cfg.epochs):
            rec = run_epoch(state, train, test)
            log.debug("epoch %d loss %.4f acc %.4f", rec.epoch, rec.train_loss, rec.test_accuracy)
            if metrics is not None:
                metrics.write(rec.to_json() + "\n")
                metrics.flush()
    finally:
        if metrics is not None:
            metrics.close()
    if out_dir is not None:
        formats.atomic_write(out_dir / "trainee.trn", formats.trainee_bytes(state.trainee))
        if state.controller is not None:
            formats.atomic_write(out_dir / "controller.apc", formats.controller_bytes(state.controller))
    return RunResult(cfg, state.records, state.trainee, state.controller)


@dataclass
class GridCell:
    stage: int
    count: int
    size: int
    warp: int | None
    policy: str
    test_accuracy: float
    rank: int = 0
    winner: bool = False


@dataclass
class GridResult:
    cells: list
    stage1_winner: GridCell
    winner: GridCell

    def table(self) -> list[dict]:
        return [asdict(c) for c in self.cells]


def _rank(cells):
    ordered = sorted(enumerate(cells), key=lambda ic: (-ic[1].test_accuracy, ic[0]))
    for r, (_, cell) in enumerate(ordered, start=1):
        cell.rank = r
    return [c for _, c in ordered]


def grid_search_two_stage(train: LabeledSet, test: LabeledSet, counts=None, sizes=None, warps=None,
                          epochs: int = 30, base: TrainConfig | None = None) -> GridResult:
    """Stage 1 ties time/frequency mask counts and sizes with warping off;
    stage 2 sweeps the warp factor on top of the stage-1 winner.
    """
    space = default_search_space()
    counts = tuple(counts or space.counts)
    sizes = tuple(sizes or space.sizes)
    warps = tuple(warps or space.warps)
    if not counts or not sizes or not warps:
        raise ValueError("grids must be non-empty")
    base = replace(base or TrainConfig(), mode="fixed", epochs=epochs)

    def run_cell(ops):
        text = ";".join(str(op) for op in ops)
        return run_training(replace(base, fixed_policy=text), train, test).final_accuracy, text

    stage1 = []
    for m in counts:
        for s in sizes:
            ops = [OperationSpec(OperationKind.TimeMask, count=m, size=s),
                   OperationSpec(OperationKind.FreqMask, count=m, size=s)]
            acc, text = run_cell(ops)
            stage1.append(GridCell(1, m, s, None, text, acc))
            log.info("stage 1 m=%d size=%d acc=%.4f", m, s, acc)
    stage1 = _rank(stage1)
    best1 = stage1[0]
    stage2 = []
    for w in warps:
        ops = list(parse_policy(best1.policy, any_length=True).ops) + [OperationSpec(OperationKind.TimeWarp, warp=w)]
        acc, text = run_cell(ops)
        stage2.append(GridCell(2, best1.count, best1.size, w, text, acc))
        log.info("stage 2 W=%d acc=%.4f", w, acc)
    stage2 = _rank(stage2)
    winner = stage2[0] if stage2[0].test_accuracy > best1.test_accuracy else best1
    winner.winner = True
    return GridResult(stage1 + stage2, best1, winner)


@dataclass
class AblationRow:
    M: int
    mode: str
    accuracies: list
    mean: float
    std: float | None


def summarize(values) -> tuple[float, float | None]:
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if values.size > 1 else None
    return float(values.mean()), std


def ablation_m_sweep(base: TrainConfig, train: LabeledSet, test: LabeledSet, m_values=(2, 4, 8),
                     modes=("random", "rl"), repeats: int = 5, out_dir=None) -> list[AblationRow]:
    """Final test accuracy per (M, mode), mean and sample std over ``repeats`` seeds.

    Repetition ``r`` offsets all three seeds by ``r``, identically for every mode.
    """
    if any(m < 1 for m in m_values):
        raise ValueError("M values must be >= 1")
    rows = []
    for M in m_values:
        for mode in modes:
            accs = []
            for r in range(repeats):
                cfg = replace(base, mode=mode, M=M, data_seed=base.data_seed + r,
                              augment_seed=base.augment_seed + r, controller_seed=base.controller_seed + r)
                run_dir = None if out_dir is None else Path(out_dir) / f"{mode}_M{M}_rep{r}"
                accs.append(run_training(cfg, train, test, run_dir).final_accuracy)
            mean, std = summarize(accs)
            rows.append(AblationRow(M, mode, accs, mean, std))
            log.info("M=%d mode=%s acc=%.4f", M, mode, mean)
    return rows


def read_metrics(path) -> list[EpochRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(EpochRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{os.fspath(path)}:{lineno}: malformed metrics line: {exc}") from None
    return records
