# %% [markdown]
# # Re-balancing samplers
#
# Four ways to fill a classifier re-training batch. CBEN gives each sample a
# probability equal to the reciprocal effective number of its class, with the
# class's beta rising from 0.999 (head) to 0.9999 (tail) with cloud size. The
# rarest class then gets less than class-balanced sampling would give it.

# %%
import numpy as np

from cloudlogit import LongTailSpec, class_probs, compute_cloud_sizes, longtail_counts
from cloudlogit.numerics import RngStream
from cloudlogit.sampler import compute_beta, SamplerSpec, empirical_frequencies

counts = longtail_counts(LongTailSpec(500, 10, 100))
table = compute_cloud_sizes(counts, "log-diff")
print("counts", counts)
print("beta  ", np.round(compute_beta(table, SamplerSpec()), 5))

# %%
print(f"{'class':>5} {'n':>4} " + " ".join(f"{s:>7}" for s in ("IB", "CB", "EN", "CBEN")))
tables = {s: class_probs(s, counts, table) for s in ("IB", "CB", "EN", "CBEN")}
for j, n in enumerate(counts):
    print(f"{j:>5} {n:>4} " + " ".join(f"{tables[s].rho[j]:7.4f}" for s in tables))

# %% [markdown]
# Monte-Carlo check at a million draws:

# %%
freq = empirical_frequencies(RngStream(0), tables["CBEN"], 10**6)
print("max |freq - rho| =", np.abs(freq - tables["CBEN"].rho).max())
