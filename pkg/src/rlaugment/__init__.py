"""Learned SpecAugment policies: a recurrent controller trained with REINFORCE
alongside the model it augments, plus random, fixed and grid-search baselines."""

__version__ = "0.1.0"

from .augment import (
    AugmentRng,
    apply_mask,
    apply_policy,
    apply_policy_batch,
    speed_perturb,
    time_warp,
)
from .controller import (
    ControllerState,
    SampledPolicy,
    TokenVocab,
    controller_entropy,
    init_controller,
    log_prob,
    reinforce_update,
    sample_policies,
    sample_policy,
    valid_token_mask,
)
from .core import (
    OperationKind,
    OperationSpec,
    Policy,
    PolicyError,
    SearchSpace,
    Spectrogram,
    default_search_space,
    format_policy,
    parse_policy,
)
from .trainee import LabeledSet, SyntheticTask, ToyClassifier, gen_synthetic
from .trainer import (
    EpochRecord,
    TrainConfig,
    ablation_m_sweep,
    grid_search_two_stage,
    normalize_losses,
    run_epoch_rl,
    run_training,
)
