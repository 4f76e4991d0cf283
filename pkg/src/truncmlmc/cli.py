"""Command line front end: ``truncmlmc {table,mlmc,cost-curve,rates}``.

Every subcommand reads an optional JSON config, validates all of it before
any simulation starts and writes CSV and/or JSON files into ``--out``.
Outputs depend only on the config and the seed, never on ``--workers``.

Exit codes: 0 on success (a divergent run is a result, not a failure),
2 for configuration errors and 3 for planning errors. Errors are printed to
stderr as a JSON object ``{"error": {"code", "field", "message"}}``.
"""
from __future__ import annotations

import argparse
import csv
import inspect
import json
import math
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .analysis import MC_EXECUTE_LIMIT, cost_curve, fit_rate, strong_errors, variance_decay_curve
from .mlmc import PlanningError, RateConstants, pilot_constants, plan, run_level, run_plan
from .rng import GAUSSIAN_METHOD, Role
from .schemes import HEIGHTS, OMEGAS, SchemeKind, TruncationConfig, make_truncation
from .sde import PAYOFFS, PROBLEMS, LevelGrid, Payoff, SdeProblem

DIV = "DIV"

EXIT_OK, EXIT_CONFIG, EXIT_PLANNING = 0, 2, 3

# Default problems per subcommand. The table default starts far enough above
# the stable point x = 1 for the classic scheme to blow up; the other
# subcommands start inside the basin where the level statistics are tame.
DEFAULT_PROBLEM = {
    "table": {"name": "lewis35", "x0": 2.0},
    "mlmc": {"name": "lewis35", "x0": 0.5},
    "cost-curve": {"name": "lewis35", "x0": 0.5},
    "rates": {"name": "lewis35", "x0": 0.5},
}

# (alpha, beta) used by pilot mode when the config does not give them.
DEFAULT_RATES = {SchemeKind.TRUNCATED_EM: (0.25, 0.5), SchemeKind.CLASSIC_EM: (0.5, 1.0)}

TOP_KEYS = {
    "problem", "payoff", "scheme", "truncation", "grid", "constants", "seed",
    "n_paths", "levels", "epsilon", "epsilons", "payoff_variance", "mc_execute_limit",
}


class ConfigError(Exception):
    def __init__(self, code: str, field: str, message: str):
        super().__init__(message)
        self.code, self.field, self.message = code, field, message


@dataclass
class Experiment:
    """A fully resolved configuration."""

    command: str
    problem: SdeProblem
    problem_desc: dict
    payoff: Payoff
    scheme: SchemeKind
    truncation: Optional[TruncationConfig]
    grid: LevelGrid
    constants: Any  # RateConstants or a dict of pilot settings
    seed: int
    n_paths: int
    levels: list
    epsilon: Optional[float] = None
    epsilons: list = field(default_factory=list)
    payoff_variance: Optional[float] = None
    mc_execute_limit: float = MC_EXECUTE_LIMIT
    notes: list = field(default_factory=list)


# Validation helpers -----------------------------------------------------------

def _number(value, path: str, integer: bool = False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        raise ConfigError("E_TYPE", path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if not integer and not math.isfinite(value):
        raise ConfigError("E_VALUE", path, "must be finite")
    return value if integer else float(value)


def _positive(value, path: str, integer: bool = False):
    v = _number(value, path, integer)
    if not v > 0:
        raise ConfigError("E_VALUE", path, f"must be positive, got {v}")
    return v


def _object(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError("E_TYPE", path, "expected an object")
    return value


def _keys(obj: dict, allowed, path: str):
    for k in obj:
        if k not in allowed:
            raise ConfigError("E_UNKNOWN_KEY", f"{path}.{k}" if path else k, f"unknown key {k!r}")


def _name(obj: dict, registry, path: str) -> str:
    if "name" not in obj:
        raise ConfigError("E_MISSING", f"{path}.name", "a name is required")
    name = obj["name"]
    if not isinstance(name, str) or name not in registry:
        raise ConfigError("E_UNKNOWN_NAME", f"{path}.name",
                          f"unknown name {name!r}; choose from {sorted(registry)}")
    return name


def _call_params(factory, obj: dict, path: str) -> dict:
    params = inspect.signature(factory).parameters
    _keys(obj, set(params) | {"name"}, path)
    out = {}
    for k, v in obj.items():
        if k == "name":
            continue
        out[k] = _number(v, f"{path}.{k}", integer=isinstance(params[k].default, int))
    return out


def _problem(raw, path: str = "problem") -> tuple[SdeProblem, dict]:
    obj = _object(raw, path)
    name = _name(obj, PROBLEMS, path)
    params = _call_params(PROBLEMS[name], obj, path)
    if "T" in params and not params["T"] > 0:
        raise ConfigError("E_T_RANGE", f"{path}.T", f"T must be positive, got {params['T']}")
    try:
        problem = PROBLEMS[name](**params)
    except ValueError as exc:
        raise ConfigError("E_VALUE", path, str(exc)) from None
    return problem, {"name": name, **problem.params}


_CALL = re.compile(r"^call\((.+)\)$")


def _payoff(raw, path: str = "payoff") -> Payoff:
    if isinstance(raw, str):
        m = _CALL.match(raw)
        if m:
            try:
                raw = {"name": "call", "K": float(m.group(1))}
            except ValueError:
                raise ConfigError("E_VALUE", path, f"cannot read a strike from {raw!r}") from None
        else:
            raw = {"name": raw}
    obj = _object(raw, path)
    name = _name(obj, PAYOFFS, path)
    params = _call_params(PAYOFFS[name], obj, path)
    if name == "call" and "K" not in params:
        raise ConfigError("E_MISSING", f"{path}.K", "the call payoff needs a strike K")
    if "growth_constant" in params and not params["growth_constant"] > 0:
        raise ConfigError("E_VALUE", f"{path}.growth_constant", "must be positive")
    return PAYOFFS[name](**params)


def _scheme(raw, path: str = "scheme") -> SchemeKind:
    try:
        return SchemeKind(raw)
    except ValueError:
        raise ConfigError("E_UNKNOWN_NAME", path,
                          f"unknown scheme {raw!r}; choose from {[s.value for s in SchemeKind]}") from None


def _design(raw, registry, path: str) -> dict:
    obj = _object(raw, path)
    name = _name(obj, registry, path)
    return {"name": name, **_call_params(registry[name], obj, path)}


def _truncation(raw, path: str = "truncation") -> tuple[TruncationConfig, list]:
    obj = _object(raw, path)
    _keys(obj, {"omega", "h", "s_star"}, path)
    omega = _design(obj["omega"], OMEGAS, f"{path}.omega") if "omega" in obj else None
    h = _design(obj["h"], HEIGHTS, f"{path}.h") if "h" in obj else None
    s_star = _number(obj.get("s_star", 1.0), f"{path}.s_star")
    if not 0 < s_star <= 1:
        raise ConfigError("E_S_STAR_RANGE", f"{path}.s_star", f"s_star must lie in (0, 1], got {s_star}")
    try:
        config = make_truncation(omega, h, s_star)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            notes = config.check()
    except ValueError as exc:
        raise ConfigError("E_TRUNCATION", path, str(exc)) from None
    return config, notes


def _grid(raw, T: float, path: str = "grid") -> LevelGrid:
    obj = _object(raw, path)
    _keys(obj, {"M", "L_max"}, path)
    M = _number(obj.get("M", 2), f"{path}.M", integer=True)
    if M < 2:
        raise ConfigError("E_M_RANGE", f"{path}.M", f"M must be >= 2, got {M}")
    L_max = _number(obj.get("L_max", 30), f"{path}.L_max", integer=True)
    if L_max < 0:
        raise ConfigError("E_VALUE", f"{path}.L_max", "must be nonnegative")
    return LevelGrid(M, T, L_max)


def _constants(raw, scheme: SchemeKind, path: str = "constants"):
    alpha, beta = DEFAULT_RATES[scheme]
    if raw == "pilot":
        raw = {"mode": "pilot"}
    obj = _object(raw, path)
    mode = obj.get("mode", "pilot" if "c1" not in obj else "given")
    if mode == "pilot":
        _keys(obj, {"mode", "alpha", "beta", "c3", "n_paths", "n_levels"}, path)
        out = {"mode": "pilot", "alpha": alpha, "beta": beta, "c3": None, "n_paths": 100, "n_levels": 4}
        for k in ("alpha", "beta", "c3"):
            if k in obj:
                out[k] = _positive(obj[k], f"{path}.{k}")
        for k in ("n_paths", "n_levels"):
            if k in obj:
                out[k] = _positive(obj[k], f"{path}.{k}", integer=True)
        if out["n_levels"] < 2:
            raise ConfigError("E_VALUE", f"{path}.n_levels", "a pilot needs at least 2 levels")
        return out
    if mode != "given":
        raise ConfigError("E_UNKNOWN_NAME", f"{path}.mode", f"unknown mode {mode!r}; use 'pilot' or 'given'")
    _keys(obj, {"mode", "alpha", "beta", "c1", "c2", "c3"}, path)
    vals = {"alpha": alpha, "beta": beta, "c3": 1.0}
    for k in ("alpha", "beta", "c1", "c2", "c3"):
        if k in obj:
            vals[k] = _positive(obj[k], f"{path}.{k}")
        elif k in ("c1", "c2"):
            raise ConfigError("E_MISSING", f"{path}.{k}", f"{k} is required when constants are given")
    return RateConstants(**vals)


def _levels(raw, path: str = "levels") -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("E_TYPE", path, "expected a nonempty list of levels")
    out = [_number(v, f"{path}[{i}]", integer=True) for i, v in enumerate(raw)]
    if any(v < 0 for v in out):
        raise ConfigError("E_VALUE", path, "levels must be nonnegative")
    return out


def resolve(command: str, raw: dict, seed: Optional[int] = None) -> Experiment:
    """Validate a raw config dict and resolve every name it references."""
    raw = _object(raw, "")
    _keys(raw, TOP_KEYS, "")
    problem, problem_desc = _problem(raw.get("problem", DEFAULT_PROBLEM[command]))
    payoff = _payoff(raw.get("payoff", "identity"))
    scheme = _scheme(raw.get("scheme", "truncated_em"))
    truncation, notes = _truncation(raw.get("truncation", {}))
    grid = _grid(raw.get("grid", {}), problem.horizon)
    constants = _constants(raw.get("constants", "pilot"), scheme)
    if seed is None:
        seed = raw.get("seed", 0)
    seed = _number(seed, "seed", integer=True)
    if not 0 <= seed < 2**64:
        raise ConfigError("E_SEED_RANGE", "seed", "seed must be an unsigned 64-bit integer")
    default_paths = {"table": 1000, "rates": 10_000}.get(command, 100)
    n_paths = _positive(raw.get("n_paths", default_paths), "n_paths", integer=True)
    default_levels = [1, 2, 3, 4, 5] if command == "table" else [1, 2, 3, 4, 5, 6]
    levels = _levels(raw.get("levels", default_levels))
    if command == "rates" and (len(set(levels)) < 3 or min(levels) < 1):
        raise ConfigError("E_VALUE", "levels", "rates need at least 3 distinct levels >= 1")
    if command in ("table", "rates") and max(levels) > grid.max_level:
        raise ConfigError("E_VALUE", "levels", f"levels exceed grid.L_max = {grid.max_level}")
    exp = Experiment(command, problem, problem_desc, payoff, scheme, truncation, grid, constants,
                     seed, n_paths, levels, notes=notes)
    if command == "mlmc":
        if "epsilon" not in raw:
            raise ConfigError("E_MISSING", "epsilon", "the mlmc subcommand needs epsilon")
        exp.epsilon = _positive(raw["epsilon"], "epsilon")
    if command == "cost-curve":
        eps = raw.get("epsilons", [0.1, 0.05, 0.02, 0.01])
        if not isinstance(eps, list) or not eps:
            raise ConfigError("E_TYPE", "epsilons", "expected a nonempty list")
        exp.epsilons = [_positive(e, f"epsilons[{i}]") for i, e in enumerate(eps)]
        if "payoff_variance" in raw:
            exp.payoff_variance = _positive(raw["payoff_variance"], "payoff_variance")
        exp.mc_execute_limit = _positive(raw.get("mc_execute_limit", MC_EXECUTE_LIMIT), "mc_execute_limit")
    return exp


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError("E_CONFIG_READ", "", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("E_CONFIG_JSON", "", f"{path} is not valid JSON: {exc}") from None


# Output -------------------------------------------------------------------------

def fmt(value) -> str:
    """CSV cell: integers as is, floats with 17 significant digits."""
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    return f"{value:.17g}"


def write_csv(path: Path, header: list, rows: list):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return _jsonable(obj.item())
    return obj


def write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2) + "\n")


def _consts_dict(c: RateConstants) -> dict:
    return {"alpha": c.alpha, "beta": c.beta, "c1": c.c1, "c2": c.c2, "c3": c.c3}


def metadata(exp: Experiment, constants_mode: Optional[str] = None) -> dict:
    meta = {
        "package": "truncmlmc",
        "version": __version__,
        "command": exp.command,
        "seed": exp.seed,
        "rng": GAUSSIAN_METHOD,
        "problem": exp.problem_desc,
        "payoff": {"name": exp.payoff.name, "growth_constant": exp.payoff.growth_constant},
        "scheme": exp.scheme.value,
        "truncation": exp.truncation.description if exp.scheme is SchemeKind.TRUNCATED_EM else None,
        "grid": {"M": exp.grid.refinement, "L_max": exp.grid.max_level},
    }
    if constants_mode is not None:
        meta["constants_mode"] = constants_mode
    if exp.notes and exp.scheme is SchemeKind.TRUNCATED_EM:
        meta["truncation_notes"] = list(exp.notes)
    return meta


def _resolve_constants(exp: Experiment, workers: int) -> tuple[RateConstants, str, dict]:
    c = exp.constants
    if isinstance(c, RateConstants):
        return c, "given", {}
    consts, info = pilot_constants(exp.problem, exp.payoff, exp.scheme, exp.truncation, exp.grid,
                                   c["alpha"], c["beta"], exp.seed, n_paths=c["n_paths"],
                                   n_levels=c["n_levels"], c3=c["c3"], workers=workers)
    return consts, "pilot", info


# Subcommands ----------------------------------------------------------------------

def table_rows(exp: Experiment, workers: int = 1) -> list:
    """One ``[level, y_hat, n_samples, variance, n_nonfinite]`` row per level."""
    rows = []
    for l in exp.levels:
        lv = run_level(exp.problem, exp.payoff, exp.scheme, exp.truncation, exp.grid, l,
                       exp.n_paths, exp.seed, workers=workers)
        y = DIV if lv.n_nonfinite == lv.n_samples else lv.mean
        rows.append([l, y, lv.n_samples, lv.sample_variance, lv.n_nonfinite])
    return rows


def cmd_table(exp: Experiment, out: Path, workers: int = 1) -> dict:
    rows = table_rows(exp, workers)
    write_csv(out / "table.csv", ["level", "y_hat", "n_samples", "variance", "n_nonfinite"], rows)
    write_json(out / "table.json", {"metadata": metadata(exp), "n_paths": exp.n_paths,
                                    "rows": [dict(zip(["level", "y_hat", "n_samples", "variance", "n_nonfinite"], r))
                                             for r in rows]})
    return {"rows": rows}


def cmd_mlmc(exp: Experiment, out: Path, workers: int = 1) -> dict:
    consts, mode, info = _resolve_constants(exp, workers)
    p = plan(consts, exp.grid, exp.epsilon)
    meta = metadata(exp, mode)
    res = run_plan(exp.problem, exp.payoff, exp.scheme, exp.truncation, p, exp.seed, workers)
    report = {
        "metadata": meta,
        "constants": {**_consts_dict(consts), "mode": mode},
        "plan": {"epsilon": p.epsilon, "L": p.L, "samples": list(p.samples), "regime": p.regime.value,
                 "predicted_cost_bound": p.predicted_cost_bound},
        "levels": [{"level": lv.level, "n_samples": lv.n_samples, "mean": lv.mean,
                    "variance": lv.sample_variance, "cost": lv.cost, "n_nonfinite": lv.n_nonfinite}
                   for lv in res.levels],
        "estimate": res.estimate,
        "total_cost": res.total_cost,
        "divergent": res.divergent,
    }
    if info:
        report["pilot"] = info
    write_json(out / "mlmc.json", report)
    return report


def cmd_cost_curve(exp: Experiment, out: Path, workers: int = 1) -> dict:
    consts, mode, info = _resolve_constants(exp, workers)
    var = exp.payoff_variance
    if var is None:
        var = info.get("payoff_variance")
    if var is None:
        top = max(exp.levels)
        var = run_level(exp.problem, exp.payoff, exp.scheme, exp.truncation, exp.grid, top, exp.n_paths,
                        exp.seed, role=Role.PILOT, workers=workers).fine_variance
    if not (math.isfinite(var) and var > 0):
        raise PlanningError(f"payoff variance estimate {var} is not usable")
    cc = cost_curve(exp.problem, exp.payoff, exp.scheme, exp.truncation, consts, exp.grid, exp.epsilons,
                    exp.seed, var, mc_execute_limit=exp.mc_execute_limit, workers=workers)
    rows = [[e, ml, mc, r] for e, ml, mc, r in zip(cc.epsilons, cc.mlmc_costs, cc.mc_costs, cc.ratios)]
    write_csv(out / "cost_curve.csv", ["epsilon", "mlmc_cost", "mc_cost", "ratio"], rows)
    write_json(out / "cost_curve.json", {"metadata": metadata(exp, mode),
                                         "constants": {**_consts_dict(consts), "mode": mode},
                                         "payoff_variance": var, "details": list(cc.details)})
    return {"rows": rows, "details": cc.details}


def _fit_summary(points) -> dict:
    try:
        fit = fit_rate(points)
    except ValueError as exc:
        return {"slope": None, "intercept": None, "r_squared": None, "note": str(exc)}
    return {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared}


def cmd_rates(exp: Experiment, out: Path, workers: int = 1) -> dict:
    levels = sorted(set(exp.levels))
    errs = strong_errors(exp.problem, exp.scheme, exp.truncation, exp.grid, levels, exp.n_paths, exp.seed)
    strong = []
    for l in levels:
        e = errs[l]
        strong.append([l, exp.grid.step(l), float(math.sqrt(float((e * e).mean()))), float(e.mean())])
    var = variance_decay_curve(exp.problem, exp.payoff, exp.scheme, exp.truncation, exp.grid, levels,
                               exp.n_paths, exp.seed, workers=workers)
    var_rows = [[l, s, v] for l, (s, v) in zip(levels, var)]
    write_csv(out / "strong.csv", ["level", "step", "rms_error", "mean_abs_error"], strong)
    write_csv(out / "variance.csv", ["level", "step", "variance"], var_rows)
    summary = {
        "metadata": metadata(exp),
        "n_paths": exp.n_paths,
        "strong_reference": "exact" if exp.problem.exact_terminal is not None else "fine-grid self-reference",
        "strong_rms": _fit_summary([(r[1], r[2]) for r in strong]),
        "strong_mean_abs": _fit_summary([(r[1], r[3]) for r in strong]),
        "variance_decay": _fit_summary([(r[1], r[2]) for r in var_rows]),
    }
    write_json(out / "rates.json", summary)
    return summary


COMMANDS = {"table": cmd_table, "mlmc": cmd_mlmc, "cost-curve": cmd_cost_curve, "rates": cmd_rates}


def _error(code: str, field: str, message: str):
    print(json.dumps({"error": {"code": code, "field": field, "message": message}}), file=sys.stderr)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="truncmlmc", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--workers", type=int, default=1, help="threads for sample chunks")
    args = parser.parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("E_VALUE", "--workers", "must be >= 1")
        exp = resolve(args.command, load_config(args.config), seed=args.seed)
    except ConfigError as exc:
        _error(exc.code, exc.field, exc.message)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](exp, out, workers=args.workers)
    except PlanningError as exc:
        _error("E_PLANNING", "", str(exc))
        return EXIT_PLANNING
    print(f"{args.command}: wrote results to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
