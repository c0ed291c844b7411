# %% [markdown]
# # Cloud sizes and clouded logits
#
# Rare classes get a larger "cloud": during training their cosine logit is
# pushed down by `cloud_size * |eps|`, with `eps` drawn from N(0, 1/3^2) and
# clamped to [-1, 1]. The head class gets no cloud at all.

# %%
import numpy as np

from cloudlogit import GclConfig, LongTailSpec, clouded_logits, compute_cloud_sizes, gcl_loss, longtail_counts
from cloudlogit.gcl import sample_epsilon
from cloudlogit.numerics import RngStream

counts = longtail_counts(LongTailSpec(n0=5000, num_classes=10, gamma=100))
print("CIFAR-10-LT style counts:", counts)

# %%
for strategy, e in [("log-diff", 0.25), ("pow-diff", 1 / 3), ("pow-diff", 0.25), ("cosine", 0.25)]:
    t = compute_cloud_sizes(counts, strategy, e)
    print(f"{strategy:9s} e={e:.2f}", np.round(t.normalized, 3))

# %% [markdown]
# The log-difference table is the default. Export it as CSV:

# %%
table = compute_cloud_sizes(counts, "log-diff")
print(table.to_csv())

# %% [markdown]
# Same cosine score for every class, one noise draw: the clouded logits fall
# off toward the tail, so a tail-class target has to beat its rivals by a
# larger margin before its gradient saturates.

# %%
cfg = GclConfig(scale=30.0)
z = np.full((1, 10), 0.5)
eps = sample_epsilon(RngStream(0), cfg, size=1)
print("eps =", eps)
print(np.round(clouded_logits(z, table, eps, cfg), 2))

# %%
# loss of a tail-class target as the noise grows
for e in (0.0, 0.25, 0.5, 1.0):
    print(e, round(gcl_loss(z, [9], table, [e], cfg).loss, 4))
