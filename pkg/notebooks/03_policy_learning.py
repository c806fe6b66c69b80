"""
Learning an augmentation policy on a synthetic task
===================================================

Four classes differ only in which band of frequency bins carries energy.
Large frequency masks can erase that band, so they raise the training loss.
The controller's reward is the normalised loss and the default update
descends on it, so it learns to avoid band-destroying masks. The adversarial
sign flips the rewards and pushes towards them. Run with
``python3 notebooks/03_policy_learning.py`` (about a minute).
"""

# %%
from dataclasses import replace

from rlaugment import AugmentRng, SyntheticTask, TrainConfig, gen_synthetic, sample_policies
from rlaugment.trainer import destructive_fraction, init_run, run_epoch, sample_like_run

train, test = gen_synthetic(SyntheticTask())
print("train", train.x.shape, "test", test.x.shape)

# %%
cfg = TrainConfig(mode="rl", epochs=200, data_seed=0, augment_seed=10, controller_seed=20)
before = destructive_fraction(sample_policies(init_run(cfg, train).controller, 1000, AugmentRng(99)))
print("band-destroying fraction before training: %.3f" % before)

# %%
for sign in ("as_paper", "adversarial"):
    state = init_run(replace(cfg, reward_sign=sign), train)
    for epoch in range(cfg.epochs):
        rec = run_epoch(state, train, test)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            print("%-11s epoch %3d  entropy %.3f  acc %.3f  %s"
                  % (sign, epoch, rec.controller_entropy, rec.test_accuracy, rec.policies[0]))
    after = destructive_fraction(sample_like_run(state, 1000, AugmentRng(100)))
    print("%-11s band-destroying fraction after: %.3f" % (sign, after))
