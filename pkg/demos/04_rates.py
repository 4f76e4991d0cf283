# %% [markdown]
# Empirical strong order and level-variance decay.
#
# GBM is checked against its exact solution on the same Brownian path. The
# Lewis-type SDE has no closed form, so a run 64 times finer on the same path
# stands in for it.

# %%
from truncmlmc import LevelGrid, default_truncation, fit_rate, gbm, identity_payoff, lewis, make_truncation
from truncmlmc.analysis import strong_error_curve, variance_decay_curve

grid = LevelGrid(2, 1.0)
levels = range(1, 7)

strong = strong_error_curve(gbm(), "truncated_em", make_truncation({"name": "identity"}), grid, levels, 10_000, 0)
print("GBM strong order:", round(fit_rate(strong).slope, 3))

self_ref = strong_error_curve(lewis(0.1), "truncated_em", default_truncation(), grid, levels, 2000, 0)
print("Lewis strong order (x0 = 0.1, self-reference):", round(fit_rate(self_ref).slope, 3))

decay = variance_decay_curve(lewis(0.5), identity_payoff(), "truncated_em", default_truncation(), grid,
                             levels, 10_000, 0)
for s, v in decay:
    print(f"  s = {s:<9.6g} V_l = {v:.4g}")
print("variance decay rate:", round(fit_rate(decay).slope, 3))
