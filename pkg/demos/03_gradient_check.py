# %% [markdown]
# # Checking the hand-written backward passes
#
# Every gradient in the package is derived by hand. Compare each against
# central finite differences (h = 1e-6, float64) on random small networks.

# %%
from cloudlogit.gradcheck import format_rows, run_grad_check

print(format_rows(run_grad_check(trials=20)))

# %% [markdown]
# Flipping the sign of the clouded-logit gradient is caught immediately:

# %%
print(format_rows(run_grad_check(trials=2, flip_sign=True)))
