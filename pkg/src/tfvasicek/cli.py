"""Command-line entry point.

Exit codes: 0 success, 1 a verdict failed under ``--strict``, 2 invalid
arguments or config, 3 numerical failure, 4 file I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import asymptotics, montecarlo
from .errors import FallbackRequired, NumericalError, ValidationError
from .io import write_json, write_pathset
from .streams import check_seed
from .tfbm import SampleGrid, TfbmParams, TfbmSampler
from .vasicek import VasicekParams, auxiliary_zuv, estimate_batch, simulate_vasicek, write_estimates_csv

log = logging.getLogger("tfvasicek")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
DEFAULT_LEMMA_HORIZONS = (5.0, 10.0, 20.0, 40.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_threads() -> int:
    env = os.environ.get("TVM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"TVM_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"TVM_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _positive_int(s: str) -> int:
    try:
        n = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}")
    return n


def _seed(s: str) -> int:
    try:
        return check_seed(int(s))
    except (ValueError, ValidationError) as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _add_common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (count); default: $TVM_THREADS, else all cores")
    if seed:
        p.add_argument("--seed", type=_seed, default=None,
                       help="override the config's seed (integer in [0, 2**64))")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tfvasicek", description="Tempered fractional Vasicek model: constants, simulation, estimation, experiments.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("constants", help="asymptotic constants alpha^2, beta^2 (both routes), Sigma, limit-law parameters")
    c.add_argument("--H", type=float, required=True, help="TFBM exponent H in (0, 2] (dimensionless)")
    c.add_argument("--lambda", dest="lam", type=float, required=True, help="tempering rate lambda > 0 [1/time]")
    c.add_argument("--b", type=float, required=True, help="drift slope b > 0 [1/time]")
    c.add_argument("--a", type=float, default=0.0, help="drift intercept a [state/time] (default 0)")
    c.add_argument("--sigma", type=float, default=1.0, help="volatility sigma > 0 [state] (default 1)")
    c.add_argument("--y0", type=float, default=0.0, help="initial value y0 [state] (default 0)")
    c.add_argument("--out", type=Path, default=None, help="write JSON here instead of stdout (path)")
    c.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    s = sub.add_parser("sample", help="simulate TFBM paths from a JSON config; writes CSV + sidecar JSON")
    s.add_argument("config", type=Path, help="JSON config: {tfbm: {H, lambda}, t_max [time], n_steps, n_paths, seed}")
    s.add_argument("--out", type=Path, required=True, help="output CSV path; metadata goes to <out>.json")
    _add_common(s)

    e = sub.add_parser("estimate", help="simulate Vasicek paths and estimate the drift; writes an estimates CSV")
    e.add_argument("config", type=Path,
                   help="JSON config: {tfbm, vasicek: {a, b, sigma, y0}, T [time], step [time], n_replications, seed, rule}")
    e.add_argument("--out", type=Path, required=True, help="output CSV path")
    _add_common(e)

    x = sub.add_parser("experiment", help="replicated experiment with limit-law checks; writes report.json and replications.csv")
    x.add_argument("config", type=Path,
                   help="JSON config: {tfbm, vasicek, horizons [time], step [time], n_replications, master_seed, tests, rule}")
    x.add_argument("--out-dir", type=Path, required=True, help="output directory (path) for report.json and replications.csv")
    x.add_argument("--no-verify", action="store_true", help="skip the limit-law checks")
    x.add_argument("--strict", action="store_true", help="exit 1 if any check fails")
    _add_common(x)

    v = sub.add_parser("verify-lemmas", help="finite-horizon second moments of (Z, U, V) against their limits")
    v.add_argument("--H", type=float, default=0.7, help="TFBM exponent H in (0, 2] (default 0.7)")
    v.add_argument("--lambda", dest="lam", type=float, default=1.0, help="tempering rate lambda > 0 [1/time] (default 1)")
    v.add_argument("--b", type=float, default=1.0, help="drift slope b > 0 [1/time] (default 1)")
    v.add_argument("--horizons", type=float, nargs="+", default=list(DEFAULT_LEMMA_HORIZONS),
                   help="horizons T [time], increasing (default 5 10 20 40)")
    v.add_argument("--tol", type=float, default=1e-6, help="tolerance on the limits at the last horizon (absolute)")
    v.add_argument("--out", type=Path, default=None, help="write JSON here instead of stdout (path)")
    v.add_argument("--strict", action="store_true", help="exit 1 if any check fails")
    v.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def _load_config(path: Path) -> dict:
    text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return cfg


def _get(cfg: dict, key: str, path: Path):
    if key not in cfg:
        raise ValidationError(f"{path}: missing key {key!r}")
    return cfg[key]


def _tfbm_params(d) -> TfbmParams:
    if not isinstance(d, dict):
        raise ValidationError("tfbm must be an object with H and lambda")
    return TfbmParams(d.get("H"), d.get("lambda"))


def _vasicek_params(d) -> VasicekParams:
    if not isinstance(d, dict):
        raise ValidationError("vasicek must be an object with a, b, sigma, y0")
    return VasicekParams(d.get("a"), d.get("b"), d.get("sigma"), d.get("y0"))


def _emit(obj, out: Path | None) -> None:
    if out is None:
        json.dump(obj, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        write_json(out, obj)


def cmd_constants(args) -> int:
    p = TfbmParams(args.H, args.lam)
    vp = VasicekParams(args.a, args.b, args.sigma, args.y0)
    quad_val = asymptotics.beta_squared_quadrature(p, vp.b)
    try:
        hyp_val = asymptotics.beta_squared_hypergeometric(p, vp.b)
    except FallbackRequired as e:
        log.info("%s", e)
        hyp_val = None
    beta = hyp_val if hyp_val is not None else quad_val
    consts = asymptotics.sigma_matrix(p, vp.b, beta_sq=beta)
    lp = asymptotics.limit_law_params(consts, vp)
    out = {
        "alpha_sq": consts.alpha_sq,
        "beta_sq_quadrature": quad_val,
        "beta_sq_hypergeometric": hyp_val,
        "rel_gap": None if hyp_val is None else abs(quad_val - hyp_val) / abs(hyp_val),
        "sigma_matrix": consts.sigma_matrix.tolist(),
        "limit_law_params": lp.to_dict(),
    }
    _emit(out, args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _load_config(args.config)
    p = _tfbm_params(_get(cfg, "tfbm", args.config))
    grid = SampleGrid(float(_get(cfg, "t_max", args.config)), _get(cfg, "n_steps", args.config))
    n_paths = _get(cfg, "n_paths", args.config)
    if isinstance(n_paths, bool) or not isinstance(n_paths, int) or n_paths < 0:
        raise ValidationError("n_paths must be a non-negative integer")
    seed = check_seed(args.seed if args.seed is not None else _get(cfg, "seed", args.config))
    sampler = TfbmSampler(p, grid)
    ps = sampler.sample(n_paths, seed, threads=args.threads)
    write_pathset(args.out, ps)
    print(f"wrote {n_paths} paths x {grid.n_steps + 1} nodes to {args.out} (seed {seed}, jitter {sampler.jitter:g})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_config(args.config)
    p = _tfbm_params(_get(cfg, "tfbm", args.config))
    vp = _vasicek_params(_get(cfg, "vasicek", args.config))
    grid = SampleGrid.from_step(float(_get(cfg, "T", args.config)), float(_get(cfg, "step", args.config)))
    n = _get(cfg, "n_replications", args.config)
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ValidationError("n_replications must be a positive integer")
    seed = check_seed(args.seed if args.seed is not None else _get(cfg, "seed", args.config))
    rule = cfg.get("rule", "simpson")
    if vp.b * grid.t_max > montecarlo.MAX_BT:
        raise ValidationError(f"b*T = {vp.b * grid.t_max:g} exceeds the overflow guard {montecarlo.MAX_BT:g}")
    B = TfbmSampler(p, grid).draw(seed, np.arange(n), threads=args.threads)
    Y = simulate_vasicek(vp, B, grid)
    est = estimate_batch(Y, grid, vp.a, vp.b, rule)
    z, u, v = auxiliary_zuv(B, vp.b, grid)
    rows = [
        {
            "replication": i, "seed": seed, "T": grid.t_max,
            "a_hat": est["a_hat"][i], "b_hat": est["b_hat"][i],
            "z_T": z[i], "u_T": u[i], "v_T": v[i], "denominator": est["denominator"][i],
        }
        for i in range(n)
    ]
    write_estimates_csv(args.out, rows)
    bad = int(est["degenerate"].sum())
    print(f"wrote {n} estimates to {args.out} (T={grid.t_max:g}, step={grid.step:g}, degenerate={bad})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    raw = _load_config(args.config)
    if args.seed is not None:
        raw = {**raw, "master_seed": args.seed}
    cfg = montecarlo.ExperimentConfig.from_dict(raw)
    report = montecarlo.run_experiment(cfg, threads=args.threads)
    if not args.no_verify:
        montecarlo.verify_theorem(report)
    json_path, csv_path = montecarlo.write_report(report, args.out_dir)
    excluded = int(report.table["excluded"].sum())
    verdicts = " ".join(
        f"{k}={'skipped' if v.skipped else 'pass' if v.passed else 'FAIL'}" for k, v in report.verdicts.items()
    )
    print(f"wrote {json_path} and {csv_path}: {report.table['T'].size} rows, {excluded} excluded. {verdicts}".rstrip())
    if args.strict and any(not v.passed for v in report.verdicts.values()):
        return EXIT_FAILED
    return EXIT_OK


def verify_lemmas(p: TfbmParams, b: float, horizons, tol: float = 1e-6) -> dict:
    horizons = [float(T) for T in horizons]
    if any(t1 <= t0 for t0, t1 in zip(horizons, horizons[1:])):
        raise ValidationError("horizons must be strictly increasing")
    consts = asymptotics.sigma_matrix(p, b)
    a2, be2 = consts.alpha_sq, consts.beta_sq
    limits = {
        "ez2": be2 / b**2, "eu2": (a2 - be2) / b**2, "ev2": be2,
        "ezu": be2 / b**2, "ezv": 0.0, "euv": 0.0,
    }
    table = []
    for T in horizons:
        m = asymptotics.finite_T_second_moments(p, b, T)
        table.append({"T": T, **{k: getattr(m, k) for k in limits}})
    slack = 1e-9
    checks = {}
    for k in ("eu2", "ev2"):
        gaps = [abs(r[k] - limits[k]) for r in table]
        checks[f"{k}_monotone"] = all(g1 <= g0 + slack for g0, g1 in zip(gaps, gaps[1:]))
    last = table[-1]
    for k, lim in limits.items():
        checks[f"{k}_limit"] = abs(last[k] - lim) <= tol
    return {
        "params": {**p.to_dict(), "b": b},
        "alpha_sq": a2,
        "beta_sq": be2,
        "limits": limits,
        "moments": table,
        "tol": tol,
        "checks": checks,
        "passed": all(checks.values()),
    }


def cmd_verify_lemmas(args) -> int:
    if not (math.isfinite(args.tol) and args.tol > 0):
        raise ValidationError("tol must be positive")
    res = verify_lemmas(TfbmParams(args.H, args.lam), args.b, args.horizons, args.tol)
    _emit(res, args.out)
    if args.out is not None:
        print(f"wrote {args.out}: {'pass' if res['passed'] else 'FAIL'}")
    if args.strict and not res["passed"]:
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {
    "constants": cmd_constants,
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "verify-lemmas": cmd_verify_lemmas,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if hasattr(args, "threads") and args.threads is None:
            args.threads = _default_threads()
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
