"""Replicated simulate-and-estimate experiments and checks of the limit laws.

Replication ``i`` at horizon number ``h`` draws its noise from the stream
``(master_seed, h, i)``, so a report is a pure function of its config,
whatever the chunking or thread count.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from . import asymptotics, streams
from .errors import TfvError, ValidationError
from .io import SCHEMA_VERSION, atomic_writer, write_json
from .tfbm import MAX_STEPS, SampleGrid, TfbmParams, TfbmSampler
from .vasicek import MAX_BT, RULES, VasicekParams, auxiliary_zuv, estimate_batch, simulate_vasicek

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "Verdict",
    "run_experiment",
    "ks_one_sample",
    "ks_two_sample",
    "kolmogorov_sf",
    "verify_theorem",
    "write_report",
    "step_sensitivity",
    "ALL_CHECKS",
    "REPLICATION_COLUMNS",
]

ALL_CHECKS = ("a_normal", "b_ratio", "sigma", "joint")
ALPHA = 0.01
SE_MULTIPLE = 4.0
KS_MIN_N = 20
JOINT_DIRECTIONS = ((1.0, 1.0), (1.0, -1.0), (2.0, 1.0))
REPLICATION_COLUMNS = (
    "replication", "seed", "T", "a_hat", "b_hat", "a_scaled", "b_scaled",
    "z_T", "u_T", "v_T", "denominator", "excluded",
)
_CHUNK = TfbmSampler.batch_size


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


@dataclass(frozen=True)
class ExperimentConfig:
    tfbm: TfbmParams
    vasicek: VasicekParams
    horizons: tuple[float, ...]
    step: float
    n_replications: int
    master_seed: int
    tests: tuple[str, ...] = ALL_CHECKS
    rule: str = "simpson"

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(float(t) for t in self.horizons))
        object.__setattr__(self, "tests", tuple(self.tests))
        if not self.horizons:
            raise ValidationError("at least one horizon is required")
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValidationError(f"step must be positive, got {self.step}")
        if isinstance(self.n_replications, bool) or int(self.n_replications) != self.n_replications or self.n_replications < 1:
            raise ValidationError(f"n_replications must be a positive integer, got {self.n_replications}")
        streams.check_seed(self.master_seed)
        bt = self.vasicek.b * max(self.horizons)
        if bt > MAX_BT:
            raise ValidationError(f"b*T = {bt:g} exceeds the overflow guard {MAX_BT:g}")
        for T in self.horizons:
            g = SampleGrid.from_step(T, self.step)
            if g.n_steps > MAX_STEPS:
                raise ValidationError(f"T/step = {g.n_steps} exceeds the factorization bound {MAX_STEPS}")
            if g.n_steps < 2:
                raise ValidationError(f"horizon {T} needs at least 2 steps")
        unknown = set(self.tests) - set(ALL_CHECKS)
        if unknown:
            raise ValidationError(f"unknown tests {sorted(unknown)}; choose from {ALL_CHECKS}")
        if self.rule not in RULES:
            raise ValidationError(f"rule must be one of {RULES}")

    def grids(self) -> list[SampleGrid]:
        return [SampleGrid.from_step(T, self.step) for T in self.horizons]

    def to_dict(self) -> dict:
        return {
            "tfbm": self.tfbm.to_dict(),
            "vasicek": self.vasicek.to_dict(),
            "horizons": list(self.horizons),
            "step": self.step,
            "n_replications": int(self.n_replications),
            "master_seed": int(self.master_seed),
            "tests": list(self.tests),
            "rule": self.rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            t, v = d["tfbm"], d["vasicek"]
            return cls(
                tfbm=TfbmParams(t["H"], t["lambda"]),
                vasicek=VasicekParams(v["a"], v["b"], v["sigma"], v["y0"]),
                horizons=tuple(d["horizons"]),
                step=d["step"],
                n_replications=d["n_replications"],
                master_seed=d["master_seed"],
                tests=tuple(d.get("tests", ALL_CHECKS)),
                rule=d.get("rule", "simpson"),
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed experiment config: {e!r}") from e

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class Verdict:
    name: str
    passed: bool
    statistic: float | None
    p_value: float | None = None
    threshold: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def skipped(self) -> bool:
        return "skipped" in self.details

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "statistic": self.statistic,
            "p_value": self.p_value,
            "threshold": self.threshold,
            "details": self.details,
        }


@dataclass
class ExperimentReport:
    """Per-replication table plus summaries.

    ``table`` maps each name in ``REPLICATION_COLUMNS`` to an array with
    ``n_replications * len(horizons)`` rows, horizon-major.
    """

    config: ExperimentConfig
    table: dict
    summary: dict
    provenance: dict
    verdicts: dict = field(default_factory=dict)

    def horizon_rows(self, T: float | None = None, include_excluded: bool = False) -> dict:
        T = max(self.config.horizons) if T is None else float(T)
        mask = self.table["T"] == T
        if not include_excluded:
            mask &= ~self.table["excluded"]
        return {k: v[mask] for k, v in self.table.items()}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "summary": self.summary,
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
            "provenance": self.provenance,
        }


PathSource = Callable[[int, SampleGrid, np.ndarray], np.ndarray]


def run_experiment(cfg: ExperimentConfig, threads: int = 1, path_source: PathSource | None = None) -> ExperimentReport:
    """Simulate, estimate and tabulate every (horizon, replication) pair.

    ``path_source(horizon_index, grid, indices)`` may replace the TFBM
    sampler (test hook); it must return an array (len(indices), n_steps + 1).
    Degenerate replications are kept in the table with ``excluded`` set.
    Other errors are re-raised with the horizon and replication range attached.
    """
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    vp = cfg.vasicek
    n = int(cfg.n_replications)
    cols = {c: [] for c in REPLICATION_COLUMNS}
    summary = {"horizons": []}
    for h, grid in enumerate(cfg.grids()):
        if path_source is None:
            sampler = TfbmSampler(cfg.tfbm, grid)

            def source(idx, h=h, sampler=sampler):
                return sampler.draw(cfg.master_seed, idx, prefix=(h,))
        else:

            def source(idx, h=h, grid=grid):
                return np.asarray(path_source(h, grid, idx), dtype=float)

        block = {c: np.empty(n) for c in ("a_hat", "b_hat", "a_scaled", "b_scaled", "z_T", "u_T", "v_T", "denominator")}
        excluded = np.zeros(n, dtype=bool)
        chunks = [np.arange(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]

        def work(idx, grid=grid, source=source):
            try:
                _work(idx, grid, source)
            except TfvError as e:
                raise type(e)(f"horizon T={grid.t_max:g}, replications {idx[0]}..{idx[-1]}: {e}") from e

        def _work(idx, grid, source):
            B = source(idx)
            Y = simulate_vasicek(vp, B, grid)
            est = estimate_batch(Y, grid, vp.a, vp.b, cfg.rule)
            z, u, v = auxiliary_zuv(B, vp.b, grid)
            for c in ("a_hat", "b_hat", "a_scaled", "b_scaled", "denominator"):
                block[c][idx] = est[c]
            block["z_T"][idx], block["u_T"][idx], block["v_T"][idx] = z, u, v
            excluded[idx] = est["degenerate"]

        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, chunks))
        else:
            for idx in chunks:
                work(idx)

        cols["replication"].append(np.arange(n))
        cols["seed"].append(np.full(n, cfg.master_seed, dtype=np.uint64))
        cols["T"].append(np.full(n, grid.t_max))
        for c, arr in block.items():
            cols[c].append(arr)
        cols["excluded"].append(excluded)
        summary["horizons"].append(_horizon_summary(grid.t_max, block, excluded, vp))

    table = {c: np.concatenate(v) for c, v in cols.items()}
    provenance = {
        "config_hash": cfg.digest(),
        "code_version": _version(),
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    return ExperimentReport(cfg, table, summary, provenance)


def _horizon_summary(T: float, block: dict, excluded: np.ndarray, vp: VasicekParams) -> dict:
    keep = ~excluded
    zuv = np.column_stack([block["z_T"][keep], block["u_T"][keep], block["v_T"][keep]])
    a_sc, b_sc = block["a_scaled"][keep], block["b_scaled"][keep]
    out = {
        "T": T,
        "n_included": int(keep.sum()),
        "n_excluded": int(excluded.sum()),
        "mean_a_scaled": float(np.mean(a_sc)) if a_sc.size else None,
        "var_a_scaled": float(np.var(a_sc, ddof=1)) if a_sc.size > 1 else None,
        "median_b_scaled": float(np.median(b_sc)) if b_sc.size else None,
        "median_abs_a_error": float(np.median(np.abs(block["a_hat"][keep] - vp.a))) if a_sc.size else None,
        "median_abs_b_error": float(np.median(np.abs(block["b_hat"][keep] - vp.b))) if a_sc.size else None,
    }
    if zuv.shape[0] > 1:
        out["zuv_mean"] = zuv.mean(axis=0).tolist()
        out["zuv_cov"] = np.cov(zuv, rowvar=False).tolist()
    return out


# -- Kolmogorov-Smirnov -------------------------------------------------------

def kolmogorov_sf(x: float, tol: float = 1e-10) -> float:
    """P(K > x) for the Kolmogorov distribution.

    For x >= 1 the alternating series ``2 sum (-1)^(k-1) exp(-2 k^2 x^2)`` is
    summed; below that the theta-function form of the CDF converges faster.
    Terms are added until they fall below ``tol``.
    """
    if x <= 0:
        return 1.0
    if x >= 1.0:
        total, k = 0.0, 1
        while True:
            term = math.exp(-2.0 * k * k * x * x)
            total += term if k % 2 else -term
            if term < tol:
                break
            k += 1
        return min(max(2.0 * total, 0.0), 1.0)
    c = math.pi**2 / (8.0 * x * x)
    total, k = 0.0, 1
    while True:
        term = math.exp(-((2 * k - 1) ** 2) * c)
        total += term
        if term < tol * max(total, 1e-300) or term == 0.0:
            break
        k += 1
    cdf = math.sqrt(2.0 * math.pi) / x * total
    return min(max(1.0 - cdf, 0.0), 1.0)


def _ks_p(d: float, n_eff: float) -> float:
    # Stephens' finite-n correction of the asymptotic argument
    s = math.sqrt(n_eff)
    return kolmogorov_sf((s + 0.12 + 0.11 / s) * d)


def _clean(x, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if np.isnan(arr).any():
        raise ValidationError(f"{what} contains NaN")
    if arr.size < KS_MIN_N:
        raise ValidationError(f"{what} needs at least {KS_MIN_N} samples, got {arr.size}")
    return arr


def ks_one_sample(samples: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
    """``(D, p)`` for ``samples`` against a continuous ``cdf``."""
    x = np.sort(_clean(samples, "samples"))
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    return d, _ks_p(d, n)


def ks_two_sample(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """``(D, p)`` for two samples, effective size ``n m / (n + m)``."""
    x = np.sort(_clean(x, "x"))
    y = np.sort(_clean(y, "y"))
    n, m = x.size, y.size
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / n
    fy = np.searchsorted(y, pts, side="right") / m
    d = float(np.max(np.abs(fx - fy)))
    return d, _ks_p(d, n * m / (n + m))


# -- verdicts ----------------------------------------------------------------

def _se_cov(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    xc, yc = x - x.mean(), y - y.mean()
    prod = xc * yc
    return float(prod.sum() / (x.size - 1)), float(prod.std(ddof=1) / math.sqrt(x.size))


def verify_theorem(
    report: ExperimentReport,
    constants: asymptotics.AsymptoticConstants | None = None,
    lp: asymptotics.LimitLawParams | None = None,
    n_reference: int | None = None,
) -> dict:
    """Run the configured checks on the largest horizon and store the verdicts on ``report``.

    * ``a_normal``: one-sample KS of ``T (a_hat - a)`` against ``N(0, sigma^2 alpha^2)``.
    * ``b_ratio``: two-sample KS of ``e^{bT} (b_hat - b)`` against limit-law draws.
    * ``sigma``: sample covariance of ``(Z_T, U_T, V_T)`` against the exact
      finite-T moments, entrywise within 4 standard errors.
    * ``joint``: two-sample KS of three fixed projections of the scaled error
      pair against the joint limit sampler, Bonferroni level 0.01/3.

    With fewer than ``KS_MIN_N`` included replications the KS checks are
    recorded as skipped (not passed).
    """
    cfg = report.config
    vp = cfg.vasicek
    if constants is None:
        constants = asymptotics.sigma_matrix(cfg.tfbm, vp.b)
    if lp is None:
        lp = asymptotics.limit_law_params(constants, vp)
    rows = report.horizon_rows()
    T = max(cfg.horizons)
    n = rows["a_scaled"].size
    n_ref = n if n_reference is None else int(n_reference)
    ref = asymptotics.sample_limit_laws(lp, n_ref, cfg.master_seed, prefix=(len(cfg.horizons), 0))
    out = {}
    if n < KS_MIN_N:
        reason = f"KS checks need at least {KS_MIN_N} included replications, got {n}"
        for name in ("a_normal", "b_ratio", "joint"):
            if name in cfg.tests:
                out[name] = Verdict(name, False, None, None, ALPHA, {"skipped": reason, "n": n, "T": T})
        ks_names = ()
    else:
        ks_names = cfg.tests
    if "a_normal" in ks_names:
        sd = math.sqrt(lp.a_limit_var)
        d, p = ks_one_sample(rows["a_scaled"], lambda x: norm.cdf(x, scale=sd))
        out["a_normal"] = Verdict("a_normal", p >= ALPHA, d, p, ALPHA, {"n": n, "T": T, "limit_sd": sd})
    if "b_ratio" in ks_names:
        d, p = ks_two_sample(rows["b_scaled"], ref.b_limit)
        out["b_ratio"] = Verdict("b_ratio", p >= ALPHA, d, p, ALPHA, {"n": n, "n_reference": n_ref, "T": T})
    if "sigma" in cfg.tests and n > 1:
        out["sigma"] = _sigma_verdict(cfg, rows, constants, T)
    if "joint" in ks_names:
        level = ALPHA / len(JOINT_DIRECTIONS)
        stats = []
        for u in JOINT_DIRECTIONS:
            w = np.asarray(u) / math.hypot(*u)
            emp = w[0] * rows["a_scaled"] + w[1] * rows["b_scaled"]
            lim = w[0] * ref.a_limit + w[1] * ref.b_limit
            d, p = ks_two_sample(emp, lim)
            stats.append({"direction": list(u), "D": d, "p": p})
        worst = min(stats, key=lambda s: s["p"])
        out["joint"] = Verdict("joint", all(s["p"] >= level for s in stats), worst["D"], worst["p"], level, {"projections": stats})
    report.verdicts.update(out)
    return out


def _sigma_verdict(cfg, rows, constants, T) -> Verdict:
    m = asymptotics.finite_T_second_moments(cfg.tfbm, cfg.vasicek.b, T)
    oracle = m.covariance()
    zuv = np.column_stack([rows["z_T"], rows["u_T"], rows["v_T"]])
    names = ("Z", "U", "V")
    entries, worst = [], 0.0
    for i in range(3):
        for j in range(i, 3):
            c, se = _se_cov(zuv[:, i], zuv[:, j])
            z = abs(c - oracle[i, j]) / se
            z_lim = abs(c - constants.sigma_matrix[i, j]) / se
            worst = max(worst, z)
            entries.append(
                {
                    "entry": f"{names[i]}{names[j]}",
                    "empirical": c,
                    "finite_T": float(oracle[i, j]),
                    "limit": float(constants.sigma_matrix[i, j]),
                    "se": se,
                    "z_finite_T": z,
                    "z_limit": z_lim,
                }
            )
    zu = next(e for e in entries if e["entry"] == "ZU")
    details = {
        "T": T,
        "n": int(zuv.shape[0]),
        "entries": entries,
        "cov_xi1_xi2_consistent": bool(zu["z_limit"] <= SE_MULTIPLE),
    }
    passed = worst <= SE_MULTIPLE and details["cov_xi1_xi2_consistent"]
    return Verdict("sigma", passed, worst, None, SE_MULTIPLE, details)


# sd of sqrt(n) D under the null (Kolmogorov distribution)
KOLMOGOROV_SD = math.sqrt(math.pi**2 / 12 - (math.sqrt(math.pi / 2) * math.log(2)) ** 2)


def step_sensitivity(cfg: ExperimentConfig, factor: int = 2, threads: int = 1) -> dict:
    """Discretization calibration for the ``a_normal`` check at the largest horizon.

    Paths are drawn once on the grid with step ``cfg.step / factor``; the
    coarse run uses every ``factor``-th node of the same paths, so the shift
    in the KS distance is due to the step alone.  It is compared with the
    Monte Carlo standard deviation of D, about ``0.26 / sqrt(n)``.
    """
    if isinstance(factor, bool) or int(factor) != factor or factor < 2:
        raise ValidationError(f"factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    T = max(cfg.horizons)
    base = dict(cfg.to_dict(), horizons=[T], tests=["a_normal"])
    coarse = ExperimentConfig.from_dict(base)
    fine = ExperimentConfig.from_dict(dict(base, step=cfg.step / factor))
    fine_grid = fine.grids()[0]
    if coarse.grids()[0].n_steps * factor != fine_grid.n_steps:
        raise ValidationError("step must divide the horizon on both grids")
    sampler = TfbmSampler(cfg.tfbm, fine_grid)

    def fine_paths(h, grid, idx):
        return sampler.draw(cfg.master_seed, idx, prefix=(h,))

    def coarse_paths(h, grid, idx):
        return fine_paths(h, grid, idx)[:, ::factor]

    out = {"T": T, "step": cfg.step, "refined_step": fine.step}
    for key, c, src in (("D", coarse, coarse_paths), ("D_refined", fine, fine_paths)):
        rep = run_experiment(c, threads=threads, path_source=src)
        out[key] = verify_theorem(rep)["a_normal"].statistic
    n = int(cfg.n_replications)
    out["shift"] = abs(out["D"] - out["D_refined"])
    out["mc_sd"] = KOLMOGOROV_SD / math.sqrt(n)
    out["within_mc_sd"] = bool(out["shift"] < out["mc_sd"])
    return out


# -- export -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_report(report: ExperimentReport, out_dir) -> tuple:
    """Write ``report.json`` and ``replications.csv`` into ``out_dir`` atomically."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "replications.csv"
    with atomic_writer(csv_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATION_COLUMNS)
        t = report.table
        for r in range(t["replication"].size):
            w.writerow([_fmt(t[c][r]) for c in REPLICATION_COLUMNS])
    json_path = out / "report.json"
    write_json(json_path, report.to_dict())
    return json_path, csv_path
