"""
Sampling policies from the recurrent controller
===============================================

The controller emits a policy token by token; a grammar mask keeps every
sample valid. Run with ``python3 notebooks/02_controller_sampling.py``.
"""

# %%
import math
from collections import Counter

import numpy as np

from rlaugment import AugmentRng, init_controller, log_prob, parse_policy, sample_policies
from rlaugment.controller import reinforce_update

# %% [markdown]
# With all weights zero every legal token is equally likely, so a policy of
# three masks has probability (1/7 * 1/5 * 1/10) ** 3.

# %%
zero = init_controller(zero=True)
p = parse_policy("TimeMsk(m=1,T=1);FreqMsk(m=2,F=3);MaxTimeMsk(m=5,T=10)")
print("log p = %.4f, closed form %.4f" % (log_prob(zero, p), -3 * math.log(7 * 5 * 10)))

# %%
samples = sample_policies(zero, 5000, AugmentRng(1))
kinds = Counter(s.policy.ops[0].kind.token for s in samples)
print("first-op kinds:", dict(sorted(kinds.items())))

# %% [markdown]
# A randomly initialised controller, a few samples with their log-probs.

# %%
c = init_controller(seed=0)
for s in sample_policies(c, 5, AugmentRng(2)):
    print("%-60s log p %.3f" % (s.policy, s.log_prob))

# %% [markdown]
# Rewards are normalised trainee losses and the update descends on them, so a
# policy with a below-average reward (lower loss) becomes more likely. The
# values here are made up; the trainer derives them from losses.

# %%
batch = sample_policies(c, 4, AugmentRng(3))
rewards = np.array([-1.0, 1.0 / 3, 1.0 / 3, 1.0 / 3])
c2 = c
for _ in range(20):
    c2 = reinforce_update(c2, batch, rewards)
print("before %.3f after %.3f" % (log_prob(c, batch[0].policy), log_prob(c2, batch[0].policy)))
