"""
Baselines: no augmentation, a fixed policy, random policies, grid search
========================================================================

Run with ``python3 notebooks/04_baselines_and_grid_search.py``.
"""

# %%
from rlaugment import SyntheticTask, TrainConfig, gen_synthetic, run_training
from rlaugment.trainer import ablation_m_sweep, grid_search_two_stage

train, test = gen_synthetic(SyntheticTask())

# %% [markdown]
# The four training modes at a short budget.

# %%
runs = {
    "none": TrainConfig(mode="none", epochs=30),
    "fixed": TrainConfig(mode="fixed", epochs=30, fixed_policy="TimeMsk(m=1,T=10);FreqMsk(m=1,F=10);TimeWarp(W=20)"),
    "random": TrainConfig(mode="random", epochs=30),
    "rl": TrainConfig(mode="rl", epochs=30),
}
for name, cfg in runs.items():
    print("%-6s final test accuracy %.4f" % (name, run_training(cfg, train, test).final_accuracy))

# %% [markdown]
# Two-stage grid search on a small grid: first the mask count and size with
# time and frequency masks, then the warp width on top of the winner.

# %%
res = grid_search_two_stage(train, test, counts=[1, 3], sizes=[2, 6, 10], warps=[10, 30], epochs=10)
for row in res.table():
    print("stage %(stage)d rank %(rank)2d  %(policy)-48s acc %(test_accuracy).4f" % row)
print("stage-1 winner:", res.stage1_winner.policy)

# %% [markdown]
# Branch count sweep, random vs learned policies, mean and std over repeats.

# %%
for row in ablation_m_sweep(TrainConfig(epochs=20), train, test, m_values=(2, 4), repeats=2):
    print("M=%d %-6s %.4f +- %.4f" % (row.M, row.mode, row.mean, row.std))
