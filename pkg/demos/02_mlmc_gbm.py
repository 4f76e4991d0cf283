# %% [markdown]
# MLMC on geometric Brownian motion, where E[X(T)] = x0 exp(mu T) is known.
#
# The planner picks the finest level L from the weak-error constant c1 and the
# per-level sample counts from the variance constant c2. Both constants come
# from a short pilot run.

# %%
import math

from truncmlmc import LevelGrid, gbm, identity_payoff, make_truncation, pilot_constants, run_mlmc

problem, f, grid = gbm(), identity_payoff(), LevelGrid(2, 1.0)
# linear coefficients: omega(u) = u bounds both drift and diffusion
truncation = make_truncation({"name": "identity"})

consts, info = pilot_constants(problem, f, "truncated_em", truncation, grid, alpha=0.25, beta=0.5, seed=3)
print("pilot constants:", consts)

# %%
for eps in (0.05, 0.02, 0.01):
    res = run_mlmc(problem, f, "truncated_em", truncation, consts, grid, eps, seed=3)
    err = res.estimate - math.exp(0.05)
    print(f"eps={eps:<5} L={res.plan.L:<2} N={list(res.plan.samples)} estimate={res.estimate:.5f} "
          f"error={err:+.5f} cost={res.total_cost:.3g} bound={res.plan.predicted_cost_bound:.3g}")
