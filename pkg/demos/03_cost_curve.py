# %% [markdown]
# Cost of MLMC vs plain Monte Carlo on the Lewis-type SDE from x0 = 0.5.
#
# Plain MC needs the same bias as MLMC's finest level and ceil(2 Var f / eps^2)
# samples at that step. Its cost is counted from this budget; it is only run
# when the budget is small enough to be practical.

# %%
import warnings

from truncmlmc import LevelGrid, cost_curve, default_truncation, identity_payoff, lewis, pilot_constants

warnings.simplefilter("ignore")
problem, f, grid, cfg = lewis(0.5), identity_payoff(), LevelGrid(2, 1.0), default_truncation()
consts, info = pilot_constants(problem, f, "truncated_em", cfg, grid, 0.25, 0.5, seed=0)
cc = cost_curve(problem, f, "truncated_em", cfg, consts, grid, [0.1, 0.05, 0.02, 0.01], 0,
                info["payoff_variance"])

# %%
print(f"{'eps':>6} {'L':>3} {'MLMC cost':>12} {'MC cost':>12} {'ratio':>8}")
for d, ml, mc, r in zip(cc.details, cc.mlmc_costs, cc.mc_costs, cc.ratios):
    print(f"{d['epsilon']:>6} {d['L']:>3} {ml:>12.4g} {mc:>12.4g} {r:>8.2f}")
