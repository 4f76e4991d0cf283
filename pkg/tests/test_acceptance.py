"""Acceptance gate: ten end-to-end criteria at their stated tolerances.

Each test prints one ``CRITERION n PASS|FAIL`` line, then asserts. Run with
``pytest tests/test_acceptance.py -v -s`` or ``python3 tests/test_acceptance.py``.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest

from truncmlmc.analysis import fit_rate, strong_error_curve, variance_decay_curve
from truncmlmc.cli import DIV, main, resolve, table_rows
from truncmlmc.mlmc import (
    RateConstants, allocate_samples, bias_bracket, complexity_bound, level_index, pilot_constants,
    run_mlmc, truncated_em_rates, variance_budget,
)
from truncmlmc.schemes import SchemeKind, default_truncation, make_truncation, simulate_from_increments
from truncmlmc.sde import LevelGrid, gbm, identity_payoff, lewis

SEEDS = range(20)
G2 = LevelGrid(2, 1.0)
TRUNC, CLASSIC = SchemeKind.TRUNCATED_EM, SchemeKind.CLASSIC_EM

# Shared table config for criteria 1 and 2: the Lewis problem from x0 = 2,
# 1000 paths, levels 1..5, T = 1, omega(u) = 2u^3, h(s) = s^(-1/4).
TABLE = {"problem": {"name": "lewis35", "x0": 2.0, "T": 1.0}, "n_paths": 1000, "levels": [1, 2, 3, 4, 5],
         "truncation": {"omega": {"name": "power", "coef": 2.0, "power": 3.0},
                        "h": {"name": "power", "exponent": 0.25, "scale": 1.0}}}

# GBM has linear coefficients, so omega(u) = u bounds them.
GBM_TRUNCATION = make_truncation({"name": "identity"})


def report(capsys, n, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    with capsys.disabled():
        print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail} [{elapsed:.2f}s, limit {limit}s]")
    return ok


def test_criterion_1_classic_em_diverges(capsys):
    t = time.perf_counter()
    hits = 0
    for seed in SEEDS:
        rows = table_rows(resolve("table", dict(TABLE, scheme="classic_em"), seed=seed))
        y = {r[0]: r[1] for r in rows}
        hits += any(y[l] == DIV or abs(y[l]) > 1e10 for l in (2, 3))
    ok = report(capsys, 1, hits >= 19, f"{hits}/20 seeds show |Y_l| > 1e10 or DIV at level 2 or 3",
                time.perf_counter() - t, 10)
    assert ok


def test_criterion_2_truncated_em_converges(capsys):
    t = time.perf_counter()
    hits = 0
    for seed in SEEDS:
        rows = table_rows(resolve("table", dict(TABLE, scheme="truncated_em"), seed=seed))
        y = {r[0]: r[1] for r in rows}
        if any(v == DIV for v in y.values()):
            continue
        decreasing = all(abs(y[l + 1]) < abs(y[l]) for l in range(2, 5))
        hits += decreasing and abs(y[5]) < 0.01
    ok = report(capsys, 2, hits >= 18, f"{hits}/20 seeds show |Y_l| strictly decreasing on 2..5 and |Y_5| < 0.01",
                time.perf_counter() - t, 10)
    assert ok


def test_criterion_3_gbm_strong_order(capsys):
    t = time.perf_counter()
    curve = strong_error_curve(gbm(), TRUNC, GBM_TRUNCATION, G2, range(1, 7), 10_000, seed=0)
    fit = fit_rate(curve)
    ok = report(capsys, 3, 0.35 <= fit.slope <= 0.65, f"strong slope {fit.slope:.4f} (r^2 {fit.r_squared:.4f})",
                time.perf_counter() - t, 60)
    assert ok


def test_criterion_4_variance_decay(capsys):
    t = time.perf_counter()
    curve = variance_decay_curve(lewis(0.5), identity_payoff(), TRUNC, default_truncation(), G2,
                                 range(1, 7), 10_000, seed=0)
    fit = fit_rate(curve)
    v = [val for _, val in curve]
    monotone = all(b <= 1.2 * a for a, b in zip(v, v[1:]))
    ok = report(capsys, 4, fit.slope >= 0.4 and monotone,
                f"decay slope {fit.slope:.4f}, variances {[f'{x:.3g}' for x in v]}, nonincreasing within 20%: {monotone}",
                time.perf_counter() - t, 60)
    assert ok


def test_criterion_5_planner_exactness(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 10_000
    c1s, alphas = rng.uniform(0.1, 10, n), rng.uniform(0.1, 1, n)
    Ms = rng.choice([2, 3, 4], n)
    epss = rng.uniform(1e-4, math.exp(-1), n)
    grids = {M: LevelGrid(int(M), 1.0, max_level=100_000) for M in (2, 3, 4)}
    bracket_fail = budget_fail = 0
    for c1, a, M, eps in zip(c1s, alphas, Ms, epss):
        grid = grids[M]
        c = RateConstants(a, 1.0, c1, 1.0)
        L = level_index(c, grid, eps)
        bracket_fail += not bias_bracket(c, grid, L, eps)
        for beta in (0.5, 1.0, 2.0):
            cb = RateConstants(a, beta, c1, 1.0)
            samples, _ = allocate_samples(cb, grid, max(L, 0), eps)
            budget_fail += variance_budget(cb, grid, samples) > eps * eps / 2
    ok = report(capsys, 5, bracket_fail == 0 and budget_fail == 0,
                f"{n} tuples: {bracket_fail} bracket failures, {budget_fail} budget failures",
                time.perf_counter() - t, 5)
    assert ok


def test_criterion_6_complexity_scaling(capsys):
    t = time.perf_counter()
    c = truncated_em_rates(1.0, 1.0, 1.0)
    errs = [abs(complexity_bound(c, 2, e / 2) / complexity_bound(c, 2, e) / 16 - 1) for e in (1e-1, 1e-2, 1e-3)]
    ok = report(capsys, 6, max(errs) < 1e-12, f"max relative error of bound(eps/2)/bound(eps) vs 16: {max(errs):.2e}",
                time.perf_counter() - t, 1)
    assert ok


def test_criterion_7_cost_advantage(capsys, tmp_path):
    t = time.perf_counter()
    cfg = tmp_path / "cost.json"
    cfg.write_text(json.dumps({"problem": {"name": "lewis35", "x0": 0.5},
                               "epsilons": [0.1, 0.05, 0.02, 0.01], "seed": 0}))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path)])
    lines = (tmp_path / "cost_curve.csv").read_text().splitlines()
    ratios = {float(r.split(",")[0]): float(r.split(",")[3]) for r in lines[1:]}
    ok = report(capsys, 7, code == 0 and ratios[0.01] >= 5,
                "ratios " + ", ".join(f"eps={e:g}: {r:.2f}" for e, r in ratios.items()),
                time.perf_counter() - t, 300)
    assert ok


def test_criterion_8_gbm_oracle(capsys):
    t = time.perf_counter()
    p, f, eps = gbm(), identity_payoff(), 0.02
    exact = math.exp(0.05)
    hits = 0
    for seed in SEEDS:
        consts, _ = pilot_constants(p, f, TRUNC, GBM_TRUNCATION, G2, 0.25, 0.5, seed)
        res = run_mlmc(p, f, TRUNC, GBM_TRUNCATION, consts, G2, eps, seed)
        hits += abs(res.estimate - exact) <= 3 * eps
    ok = report(capsys, 8, hits >= 18, f"{hits}/20 seeds within 3*eps of exp(0.05)", time.perf_counter() - t, 120)
    assert ok


DETERMINISM = [
    ("table", {"n_paths": 2 * 2**14 + 3, "levels": [1, 2, 3]}),
    ("mlmc", {"problem": {"name": "gbm"}, "epsilon": 0.02,
              "truncation": {"omega": {"name": "identity"}}}),
    ("cost-curve", {"problem": {"name": "lewis35", "x0": 0.5}, "epsilons": [0.1, 0.05]}),
    ("rates", {"problem": {"name": "lewis35", "x0": 0.5}, "n_paths": 2 * 2**14 + 3, "levels": [1, 2, 3, 4]}),
]


def test_criterion_9_determinism(capsys, tmp_path):
    t = time.perf_counter()
    mismatched = []
    for command, config in DETERMINISM:
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(dict(config, seed=17)))
        outs = []
        for workers in (1, 4):
            out = tmp_path / f"{command}_{workers}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert main([command, "--config", str(cfg), "--out", str(out), "--workers", str(workers)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(command)
    ok = report(capsys, 9, not mismatched, f"byte-identical across 1 and 4 workers; mismatches: {mismatched or 'none'}",
                time.perf_counter() - t, 60)
    assert ok


def test_criterion_10_inactive_truncation(capsys):
    t = time.perf_counter()
    p, n_steps = gbm(), 256
    step = 1.0 / n_steps
    dB = np.sqrt(step) * np.random.default_rng(10).standard_normal((1000, n_steps, 1))
    # the path supremum is bounded by the largest intermediate state of the classic run
    sup = 0.0
    x = np.ones((1000, 1))
    for k in range(n_steps):
        x = x + 0.05 * x * step + 0.2 * x * dB[:, k]
        sup = max(sup, float(np.abs(x).max()))
    cfg = make_truncation({"name": "power", "coef": 1.0, "power": 1.0},
                          {"name": "power", "exponent": 0.25, "scale": 10 * sup * step**0.25})
    classic, _ = simulate_from_increments(p, CLASSIC, None, step, dB)
    truncated, _ = simulate_from_increments(p, TRUNC, cfg, step, dB)
    ok = report(capsys, 10, np.array_equal(classic, truncated),
                f"radius {10 * sup:.3g} > path sup {sup:.3g}; 1000 terminal states bit-identical: "
                f"{np.array_equal(classic, truncated)}", time.perf_counter() - t, 10)
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
