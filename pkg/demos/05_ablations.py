# %% [markdown]
# # Ablations: cloud-size strategy and sampler
#
# Desk-scale versions of the two ablation axes: how the cloud size is derived
# from class counts, and which sampler feeds classifier re-training. Numbers
# are medians over three seeds and will not match large-scale benchmarks.

# %%
from dataclasses import replace

import numpy as np

from cloudlogit import BlobSpec, GclConfig, SamplerSpec, TrainConfig
from cloudlogit.trainer import make_blob_corpus, train_and_evaluate

SEEDS = range(3)


def median_top1(**kw):
    accs = []
    for seed in SEEDS:
        train, test, _ = make_blob_corpus(BlobSpec(seed=seed))
        accs.append(train_and_evaluate(train, test, TrainConfig(seed=seed, **kw)).report.top1)
    return 100 * float(np.median(accs))


# %%
for strategy, e in [("cosine", 0.25), ("pow-diff", 1 / 3), ("pow-diff", 0.25), ("log-diff", 0.25)]:
    acc = median_top1(gcl=GclConfig(strategy=strategy, pow_exponent=e))
    print(f"cloud size {strategy:9s} e={e:.2f}: {acc:.1f}")

# %%
for sampler in ("IB", "CB", "EN", "CBEN"):
    print(f"sampler {sampler:4s} + cRT: {median_top1(sampler=SamplerSpec(strategy=sampler)):.1f}")
print(f"no re-training:     {median_top1(stage2_iters=0):.1f}")
