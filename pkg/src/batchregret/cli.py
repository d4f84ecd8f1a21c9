"""Command-line experiment runner.

Every mode writes plain CSV and JSON into the output directory. Numbers are
formatted with 12 significant digits so repeated runs give identical bytes
(only ``summary.json`` carries a wall time; table1 output carries none).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .combined import CombinedConfig, combined_solve
from .family import (
    Interval,
    ParamGrid,
    SubGrid,
    default_grid_size,
    epsilon_n,
    make_simplex_grid,
    make_uniform_grid,
    theta_epsilon,
)
from .oracle import OracleLimitError
from .predictor import beta_curve, predictive_from_prior
from .solver import NonConvergenceError, RegretReport, SolverConfig, capacity, solve, verify_sandwich

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_ORACLE_LIMIT = 4
EXIT_CHECK_FAILED = 5

MODES = ("solve", "capacity", "sandwich", "beta", "combined", "supervised", "table1", "oracle-check")
TABLE_TOLERANCE = 0.02
ORACLE_TOLERANCE = 1e-10


class ConfigError(ValueError):
    pass


def fmt(x: Any) -> str:
    """Fixed 12-significant-digit rendering used for every output number."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def _pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'lo,hi', got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"expected two numbers, got {text!r}") from None
    return lo, hi


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in str(text).split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _family(text: str) -> str:
    text = str(text).strip()
    if text in ("bernoulli", "bsc") or (text.startswith("multinomial-") and text[12:].isdigit()):
        return text
    raise ConfigError(f"unknown family {text!r}")


# key -> (parser, default, help)
KEYS: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "family": (_family, "bernoulli", "bernoulli | multinomial-K | bsc (supervised)"),
    "phi_range": (_pair, (0.0, 1.0), "data family range lo,hi (crossover range for bsc)"),
    "theta_range": (_pair, None, "hypothesis range lo,hi (default: the data range)"),
    "N": (int, 100, "batch size; the N-th symbol is predicted"),
    "L": (int, 1, "number of online predictions (combined mode)"),
    "alpha": (float, 0.1, "shell exponent, eps_N = N^(alpha-1) (sandwich mode)"),
    "grid": (int, None, "grid size M (simplex resolution for multinomial)"),
    "lambda": (float, None, "step exponent (default 2N)"),
    "epsilon": (float, None, "stopping gap in nats (default 1e-5/(2N))"),
    "max_iters": (int, 200_000, "iteration cap"),
    "seed": (int, 0, "seed for the sampled supervised path and oracle-check"),
    "out": (str, ".", "output directory"),
    "threads": (int, None, "worker cap (default: all available)"),
    "feature_dist": (_floats, (0.5, 0.5), "feature distribution P(x) (supervised)"),
    "samples": (int, 4096, "feature compositions drawn by the sampled supervised path"),
    "method": (str, "auto", "supervised evaluation: auto | exact | sampled"),
    "cases": (int, 200, "randomized instances checked by oracle-check"),
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS and key != "mode":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def resolve_config(mode: str, file_values: dict[str, str], flag_values: dict[str, Any]) -> dict[str, Any]:
    """Defaults, overridden by the config file, overridden by flags."""
    if "mode" in file_values and file_values["mode"] != mode:
        log.info("config file mode %r overridden by subcommand %r", file_values["mode"], mode)
    cfg: dict[str, Any] = {"mode": mode}
    for key, (parse, default, _) in KEYS.items():
        value = default
        if key in file_values:
            try:
                value = parse(file_values[key])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {key}: {e}") from None
        if flag_values.get(key) is not None:
            value = flag_values[key]
        cfg[key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict[str, Any]) -> None:
    if cfg["N"] < 1:
        raise ConfigError("N must be >= 1")
    if cfg["L"] < 1:
        raise ConfigError("L must be >= 1")
    if not 0.0 < cfg["alpha"] < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg["max_iters"] < 1:
        raise ConfigError("max_iters must be >= 1")
    for key in ("lambda", "epsilon"):
        if cfg[key] is not None and not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if cfg["grid"] is not None and cfg["grid"] < 1:
        raise ConfigError("grid must be >= 1")
    if cfg["threads"] is not None and cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    for key in ("phi_range", "theta_range"):
        r = cfg[key]
        if r is not None and not 0.0 <= r[0] <= r[1] <= 1.0:
            raise ConfigError(f"{key} must satisfy 0 <= lo <= hi <= 1")
    if cfg["method"] not in ("auto", "exact", "sampled"):
        raise ConfigError("method must be auto, exact or sampled")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags take precedence")
    common.add_argument("-v", "--verbose", action="count", default=0)
    for key, (parse, _, help_text) in KEYS.items():
        flag = "--" + key.replace("_", "-")
        common.add_argument(flag, dest=key, type=parse, default=None, help=help_text)
    parser = argparse.ArgumentParser(prog="batchregret", description="Min-max regret of misspecified batch learning.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sub.add_parser(mode, parents=[common])
    return parser


# -- output helpers ----------------------------------------------------------


def write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else fmt(v) for v in row) for row in rows]
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(fmt(x))
    return x


def write_json(path: Path, payload: dict[str, Any]) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def report_fields(rep: RegretReport) -> dict[str, Any]:
    return {
        "r_lower": rep.r_lower,
        "r_upper": rep.r_upper,
        "midpoint": rep.midpoint,
        "normalized": rep.normalized,
        "gap": rep.gap,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "N": rep.N,
        "L": rep.L,
        "lambda": rep.lam,
        "epsilon": rep.eps,
    }


def _grid_labels(grid) -> list[str]:
    if isinstance(grid, ParamGrid):
        if grid.is_bernoulli:
            return [fmt(p) for p in grid.success]
        return [";".join(fmt(v) for v in row) for row in grid.points]
    # BSC-style channel grids are labelled by their crossover probability
    return [fmt(ch[0, 1]) for ch in grid.channels]


def write_prior(path: Path, rep: RegretReport) -> None:
    labels = _grid_labels(rep.grid)
    write_csv(path, ["phi", "pi"], [[lab, w] for lab, w in zip(labels, rep.prior.weights)])


# -- problem construction ----------------------------------------------------


def _grid_size(cfg: dict[str, Any]) -> int:
    return cfg["grid"] or default_grid_size(cfg["N"])


def bernoulli_grid(lo: float, hi: float, M: int) -> ParamGrid:
    return make_uniform_grid(lo, hi, 1 if lo == hi else M)


def build_family(cfg: dict[str, Any]) -> tuple[ParamGrid, Any]:
    family = cfg["family"]
    if family.startswith("multinomial-"):
        if cfg["theta_range"] is not None:
            raise ConfigError("multinomial families support Theta = Phi only; drop theta_range")
        grid = make_simplex_grid(int(family[12:]), cfg["grid"] or 20)
        return grid, SubGrid(grid)
    if family != "bernoulli":
        raise ConfigError(f"family {family!r} is not available in mode {cfg['mode']}")
    lo, hi = cfg["phi_range"]
    grid = bernoulli_grid(lo, hi, _grid_size(cfg))
    a, b = cfg["theta_range"] or cfg["phi_range"]
    if not (lo <= a and b <= hi):
        raise ConfigError("theta_range must lie inside phi_range")
    return grid, Interval(a, b)


def solver_config(cfg: dict[str, Any], grid, theta) -> SolverConfig:
    try:
        return SolverConfig(
            N=cfg["N"], grid=grid, theta=theta, lam=cfg["lambda"], eps=cfg["epsilon"], max_iters=cfg["max_iters"]
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


# -- modes --------------------------------------------------------------------


@dataclass
class Outcome:
    status: int
    summary: dict[str, Any]


def _solve_outcome(rep: RegretReport, out: Path) -> Outcome:
    write_prior(out / "prior.csv", rep)
    return Outcome(EXIT_OK if rep.converged else EXIT_NONCONVERGED, report_fields(rep))


def run_solve(cfg: dict[str, Any], out: Path) -> Outcome:
    grid, theta = build_family(cfg)
    return _solve_outcome(solve(solver_config(cfg, grid, theta)), out)


def run_capacity(cfg: dict[str, Any], out: Path) -> Outcome:
    if cfg["theta_range"] is not None and cfg["theta_range"] != cfg["phi_range"]:
        raise ConfigError("capacity uses Theta = Phi; set only phi_range")
    grid, _ = build_family(cfg)
    params = {"lam": cfg["lambda"], "eps": cfg["epsilon"], "max_iters": cfg["max_iters"]}
    return _solve_outcome(capacity(grid, cfg["N"], **params), out)


def run_combined(cfg: dict[str, Any], out: Path) -> Outcome:
    grid, theta = build_family(cfg)
    rep = combined_solve(CombinedConfig(solver_config(cfg, grid, theta), cfg["L"]))
    return _solve_outcome(rep, out)


def run_beta(cfg: dict[str, Any], out: Path) -> Outcome:
    grid, theta = build_family(cfg)
    if not grid.is_bernoulli:
        raise ConfigError("beta mode needs a Bernoulli family")
    if cfg["N"] < 2:
        raise ConfigError("beta mode needs N >= 2")
    rep = solve(solver_config(cfg, grid, theta))
    outcome = _solve_outcome(rep, out)
    curve = beta_curve(predictive_from_prior(grid, rep.prior, cfg["N"]))
    rows = [[p, b, s] for p, b, s in zip(curve.p_emp, curve.beta, curve.singular)]
    write_csv(out / "beta.csv", ["p_emp", "beta", "singular"], rows)
    outcome.summary["beta_at_zero"] = float(curve.beta[0])
    return outcome


def run_sandwich(cfg: dict[str, Any], out: Path) -> Outcome:
    if cfg["family"] != "bernoulli":
        raise ConfigError("sandwich mode needs a Bernoulli family")
    phi = cfg["phi_range"]
    a, b = cfg["theta_range"] or phi
    if not (phi[0] <= a and b <= phi[1]):
        raise ConfigError("theta_range must lie inside phi_range")
    params = {"lam": cfg["lambda"], "eps": cfg["epsilon"], "max_iters": cfg["max_iters"]}
    try:
        res = verify_sandwich(Interval(a, b), phi, cfg["N"], cfg["alpha"], M=_grid_size(cfg), **params)
    except NonConvergenceError as e:
        log.error("%s", e)
        return Outcome(EXIT_NONCONVERGED, {"error": str(e)})
    reps = (res.lower, res.middle, res.upper)
    ranges = ((a, b, a, b), (phi[0], phi[1], a, b), (res.theta_eps.a, res.theta_eps.b) * 2)
    names = ("capacity_theta", "regret_misspecified", "capacity_theta_eps")
    vals = res.values
    checks = ["-", "pass" if vals[0] <= vals[1] + res.tolerance else "fail", "pass" if vals[1] <= vals[2] + res.tolerance else "fail"]
    rows = [[n, *r, rep.midpoint, rep.normalized, c] for n, r, rep, c in zip(names, ranges, reps, checks)]
    header = ["quantity", "phi_lo", "phi_hi", "theta_lo", "theta_hi", "regret", "normalized", "check"]
    write_csv(out / "sandwich.csv", header, rows)
    summary = {
        "values": list(vals),
        "normalized": list(res.normalized),
        "eps_n": res.eps_n,
        "theta_eps": [res.theta_eps.a, res.theta_eps.b],
        "tolerance": res.tolerance,
        "passed": res.passed,
        "strict": res.strict,
    }
    return Outcome(EXIT_OK if res.passed else EXIT_CHECK_FAILED, summary)


def run_supervised(cfg: dict[str, Any], out: Path) -> Outcome:
    from .supervised import FeatureDist, SupervisedConfig, bsc_hypothesis, make_bsc_grid, sup_solve

    if cfg["family"] not in ("bsc", "bernoulli"):
        raise ConfigError("supervised mode supports the bsc family")
    # the family default reads as BSC here; ranges are crossover probabilities
    lo, hi = cfg["phi_range"]
    a, b = cfg["theta_range"] or (lo, hi)
    if not (lo <= a and b <= hi):
        raise ConfigError("theta_range must lie inside phi_range")
    M = cfg["grid"] or 51
    try:
        px = FeatureDist(cfg["feature_dist"])
        config = SupervisedConfig(
            N=cfg["N"],
            grid=make_bsc_grid(lo, hi, 1 if lo == hi else M),
            theta=bsc_hypothesis(a, b),
            px=px,
            lam=cfg["lambda"],
            eps=cfg["epsilon"],
            max_iters=cfg["max_iters"],
            method=cfg["method"],
            samples=cfg["samples"],
            seed=cfg["seed"],
            threads=cfg["threads"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return _solve_outcome(sup_solve(config), out)


# Reference rows: (phi range or "shell", theta range or "shell", N, value in 2N units).
TABLE1_ROWS: tuple[tuple[Any, Any, int, float], ...] = (
    ((0.0, 1.0), (0.25, 0.5), 100, 0.7242),
    ("shell", "shell", 100, 0.9171),
    ((0.0, 1.0), (0.25, 0.75), 100, 0.8728),
    ((0.25, 0.75), (0.25, 0.75), 100, 0.8710),
    ((0.0, 1.0), (1 / 3, 2 / 3), 100, 0.7869),
    ((1 / 3, 2 / 3), (1 / 3, 2 / 3), 100, 0.7828),
    ((0.0, 1.0), (0.01, 0.99), 100, 0.9766),
    ((0.01, 0.99), (0.01, 0.99), 100, 0.9763),
    ((0.0, 1.0), (0.0, 1.0), 100, 0.9908),
    ((0.0, 1.0), (0.25, 0.5), 1000, 0.9334),
    ("shell", "shell", 1000, 0.9837),
    ((0.0, 1.0), (0.25, 0.75), 1000, 0.9816),
    ((0.25, 0.75), (0.25, 0.75), 1000, 0.9798),
    ((0.0, 1.0), (0.01, 0.99), 1000, 0.9970),
    ((0.01, 0.99), (0.01, 0.99), 1000, 0.9970),
    ((0.0, 1.0), (0.0, 1.0), 1000, 1.0027),
)
SHELL_BASE = Interval(0.25, 0.75)
SHELL_ALPHA = 0.1


def table1_ranges(phi: Any, theta: Any, N: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """Resolve the "shell" rows to [1/4 - delta, 3/4 + delta] at this N."""
    if phi == "shell":
        t = theta_epsilon(SHELL_BASE, epsilon_n(N, SHELL_ALPHA))
        return (t.a, t.b), (t.a, t.b)
    return phi, theta


def table1_row(phi: tuple[float, float], theta: tuple[float, float], N: int, cfg: dict[str, Any]) -> RegretReport:
    M = cfg["grid"] or default_grid_size(N)
    grid = bernoulli_grid(phi[0], phi[1], M)
    return solve(
        SolverConfig(N=N, grid=grid, theta=Interval(*theta), lam=cfg["lambda"], eps=cfg["epsilon"], max_iters=cfg["max_iters"])
    )


def run_table1(cfg: dict[str, Any], out: Path, only_n: int | None = None) -> Outcome:
    rows, records = [], []
    prior_dir = out / "table1_priors"
    prior_dir.mkdir(exist_ok=True)
    status = EXIT_OK
    for idx, (phi, theta, N, ref) in enumerate(TABLE1_ROWS, 1):
        if only_n is not None and N != only_n:
            continue
        phi_r, theta_r = table1_ranges(phi, theta, N)
        rep = table1_row(phi_r, theta_r, N, cfg)
        diff = rep.normalized - ref
        ok = rep.converged and abs(diff) <= TABLE_TOLERANCE
        log.info("row %d N=%d phi=%s theta=%s: %.5f vs %.4f", idx, N, phi_r, theta_r, rep.normalized, ref)
        if not rep.converged:
            status = EXIT_NONCONVERGED
        elif not ok and status == EXIT_OK:
            status = EXIT_CHECK_FAILED
        rows.append([idx, *phi_r, *theta_r, N, rep.normalized, ref, diff, "pass" if ok else "fail",
                     rep.r_lower, rep.r_upper, rep.iterations, rep.converged])
        records.append({"row": idx, "phi_range": list(phi_r), "theta_range": list(theta_r), "reference": ref,
                        "pass": ok, **report_fields(rep)})
        write_prior(prior_dir / f"row{idx:02d}.csv", rep)
    header = ["row", "phi_lo", "phi_hi", "theta_lo", "theta_hi", "N", "computed", "reference", "diff", "status",
              "r_lower", "r_upper", "iterations", "converged"]
    write_csv(out / "table1.csv", header, rows)
    payload = {"tolerance": TABLE_TOLERANCE, "rows": records, "all_pass": status == EXIT_OK}
    write_json(out / "table1.json", payload)
    return Outcome(status, {"rows": len(rows), "all_pass": status == EXIT_OK})


def run_oracle_check(cfg: dict[str, Any], out: Path) -> Outcome:
    from .checks import oracle_discrepancies

    try:
        result = oracle_discrepancies(cfg["N"], cfg["cases"], cfg["seed"], cfg["L"])
    except OracleLimitError as e:
        log.error("%s", e)
        return Outcome(EXIT_ORACLE_LIMIT, {"error": str(e)})
    worst = max(result.values())
    print(f"max-abs-discrepancy: {fmt(worst)}")
    summary = {"max_abs_discrepancy": worst, "by_quantity": result, "tolerance": ORACLE_TOLERANCE}
    return Outcome(EXIT_OK if worst <= ORACLE_TOLERANCE else EXIT_CHECK_FAILED, summary)


RUNNERS: dict[str, Callable[[dict[str, Any], Path], Outcome]] = {
    "solve": run_solve,
    "capacity": run_capacity,
    "sandwich": run_sandwich,
    "beta": run_beta,
    "combined": run_combined,
    "supervised": run_supervised,
    "oracle-check": run_oracle_check,
}


def run(cfg: dict[str, Any]) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg["mode"]
    threads = cfg["threads"] or os.cpu_count() or 1
    start = time.perf_counter()
    with threadpool_limits(limits=threads):
        if mode == "table1":
            # N is a row filter here, applied only when given explicitly
            return run_table1(cfg, out, cfg.get("_table_n")).status
        outcome = RUNNERS[mode](cfg, out)
    summary = {"config": {k: v for k, v in cfg.items() if not k.startswith("_")}, **outcome.summary}
    summary["wall_time"] = time.perf_counter() - start
    summary["exit_status"] = outcome.status
    write_json(out / "summary.json", summary)
    return outcome.status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    flags = {k: getattr(args, k) for k in KEYS}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.mode, file_values, flags)
        cfg["_table_n"] = flags["N"] if flags["N"] is not None else (int(file_values["N"]) if "N" in file_values else None)
        return run(cfg)
    except (ConfigError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
