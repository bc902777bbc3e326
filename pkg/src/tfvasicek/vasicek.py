"""Vasicek paths driven by TFBM, least-squares drift estimators and the Z/U/V functionals.

The model is ``dY = (a + b Y) dt + sigma dB`` with ``b > 0``.  Its solution
at grid nodes is

    Y(t) = (y0 + a/b) e^{bt} - a/b + sigma (B(t) + b e^{bt} int_0^t e^{-bs} B(s) ds).

All functions accept a single path (1-D array) or a batch of paths
(2-D array, one path per row) sampled on a uniform grid.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson, trapezoid

from .errors import DegenerateDenominatorError, ValidationError
from .tfbm import SampleGrid

__all__ = [
    "VasicekParams",
    "EstimateResult",
    "LimitSummands",
    "simulate_vasicek",
    "integrate",
    "estimate_drift",
    "auxiliary_zuv",
    "limit_summands",
    "scaled_errors",
    "estimate_batch",
    "b_identity_terms",
    "write_estimates_csv",
    "ESTIMATE_COLUMNS",
    "MAX_BT",
    "DEGENERATE_RTOL",
]

MAX_BT = 50.0
# above this, rounding of Y (about eps * e^{bT}) swamps the scaled estimation errors
PRECISION_BT = 30.0
DEGENERATE_RTOL = 1e-12
RULES = ("simpson", "trapezoid")
ESTIMATE_COLUMNS = ("replication", "seed", "T", "a_hat", "b_hat", "z_T", "u_T", "v_T", "denominator")


@dataclass(frozen=True)
class VasicekParams:
    a: float
    b: float
    sigma: float
    y0: float

    def __post_init__(self):
        for name in ("a", "b", "sigma", "y0"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"{name} must be a finite number, got {v!r}")
        if self.b <= 0:
            raise ValidationError("b must be positive")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EstimateResult:
    """Drift estimates on one path; z_T, u_T, v_T are filled when the driving noise is known."""

    a_hat: float
    b_hat: float
    T: float
    denominator: float
    z_T: float = math.nan
    u_T: float = math.nan
    v_T: float = math.nan


@dataclass(frozen=True)
class LimitSummands:
    zeta: float
    scaled_Y: float
    scaled_intY: float
    scaled_intY2: float


def _as_paths(x, grid: SampleGrid, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != grid.n_steps + 1:
        raise ValidationError(
            f"{what} has {arr.shape[-1]} samples but the grid has {grid.n_steps + 1} nodes"
        )
    return arr, single


def _check_bt(b: float, grid: SampleGrid) -> None:
    if b * grid.t_max > MAX_BT:
        raise ValidationError(f"b*T = {b * grid.t_max:g} exceeds the overflow guard {MAX_BT:g}")


def _check_starts_at_zero(B: np.ndarray) -> None:
    if np.any(B[:, 0] != 0.0):
        raise ValidationError("TFBM path must start at 0")


def simulate_vasicek(vp: VasicekParams, tfbm_path, grid: SampleGrid) -> np.ndarray:
    """Vasicek trajectory (or batch of trajectories) driven by ``tfbm_path`` on ``grid``.

    The integral of ``e^{-bs} B(s)`` is accumulated by the trapezoid rule,
    so each step costs O(1).
    """
    B, single = _as_paths(tfbm_path, grid, "tfbm_path")
    _check_starts_at_zero(B)
    _check_bt(vp.b, grid)
    if vp.b * grid.t_max > PRECISION_BT:
        warnings.warn(
            f"b*T = {vp.b * grid.t_max:g} > {PRECISION_BT:g}: float64 rounding of Y, about "
            f"{np.finfo(float).eps * math.exp(vp.b * grid.t_max) * abs(vp.y0 + vp.a / vp.b):.1g}, "
            "limits the accuracy of the drift estimates",
            RuntimeWarning,
            stacklevel=2,
        )
    t = grid.times
    growth = np.exp(vp.b * t)
    J = cumulative_trapezoid(B / growth, dx=grid.step, axis=1, initial=0.0)
    Y = (vp.y0 + vp.a / vp.b) * growth - vp.a / vp.b + vp.sigma * (B + vp.b * growth * J)
    Y[:, 0] = vp.y0
    return Y[0] if single else Y


def integrate(values: np.ndarray, step: float, rule: str = "simpson") -> np.ndarray:
    """Integral along the last axis of samples on a uniform grid."""
    if rule == "simpson":
        return simpson(values, dx=step, axis=-1)
    if rule == "trapezoid":
        return trapezoid(values, dx=step, axis=-1)
    raise ValidationError(f"unknown quadrature rule {rule!r}; expected one of {RULES}")


def _moments(Y: np.ndarray, grid: SampleGrid, rule: str):
    # extended precision: e^{bT}(b_hat - b) amplifies rounding in b_hat by e^{bT}
    Yl = Y.astype(np.longdouble)
    h = np.longdouble(grid.step)
    return Yl[:, 0], Yl[:, -1], integrate(Yl, h, rule), integrate(Yl * Yl, h, rule)


def _estimate(Y: np.ndarray, grid: SampleGrid, rule: str, strict: bool = True):
    T = np.longdouble(grid.t_max)
    y0, yT, int_y, int_y2 = _moments(Y, grid, rule)
    den = T * int_y2 - int_y * int_y
    floor = DEGENERATE_RTOL * T * T * np.max(Y * Y, axis=1)
    bad = ~(den > floor)
    if strict and bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateDenominatorError(
            f"least-squares denominator {float(den[i]):.3g} is degenerate (path {i} is near-constant)"
        )
    rise = yT - y0
    with np.errstate(divide="ignore", invalid="ignore"):
        a_hat = rise * (int_y2 - 0.5 * (yT + y0) * int_y) / den
        b_hat = rise * (0.5 * T * (yT + y0) - int_y) / den
    a_hat[bad] = np.nan
    b_hat[bad] = np.nan
    return a_hat, b_hat, den, bad


def estimate_drift(y_path, grid: SampleGrid, rule: str = "simpson", *, tfbm_path=None, b: float | None = None):
    """Least-squares estimates of ``(a, b)`` from an observed path.

    ``y0`` is the first sample of the path.  With ``tfbm_path`` and ``b``
    given, the result also carries ``Z_T, U_T, V_T`` of the driving noise.
    Returns one ``EstimateResult`` for a 1-D path or a list for a batch.

    Raises ``DegenerateDenominatorError`` when
    ``T int Y^2 - (int Y)^2 <= 1e-12 T^2 max|Y|^2``.
    """
    if grid.n_steps < 2:
        raise ValidationError("estimate_drift needs at least 2 steps")
    Y, single = _as_paths(y_path, grid, "y_path")
    a_hat, b_hat, den, _ = _estimate(Y, grid, rule)
    if tfbm_path is not None:
        if b is None:
            raise ValidationError("b is required together with tfbm_path")
        z, u, v = auxiliary_zuv(tfbm_path, b, grid)
        z, u, v = np.atleast_1d(z), np.atleast_1d(u), np.atleast_1d(v)
    else:
        z = u = v = np.full(len(a_hat), math.nan)
    T = grid.t_max
    out = [
        EstimateResult(float(a_hat[i]), float(b_hat[i]), T, float(den[i]), float(z[i]), float(u[i]), float(v[i]))
        for i in range(len(a_hat))
    ]
    return out[0] if single else out


def scaled_errors(y_path, grid: SampleGrid, a: float, b: float, rule: str = "simpson"):
    """``T (a_hat - a)`` and ``e^{bT} (b_hat - b)``, formed before rounding the estimates.

    Returns two arrays (batch) or two floats (single path).
    """
    if grid.n_steps < 2:
        raise ValidationError("estimate_drift needs at least 2 steps")
    Y, single = _as_paths(y_path, grid, "y_path")
    _check_bt(b, grid)
    a_hat, b_hat, _, _ = _estimate(Y, grid, rule)
    a_sc, b_sc = _scale(a_hat, b_hat, grid.t_max, a, b)
    if single:
        return float(a_sc[0]), float(b_sc[0])
    return a_sc, b_sc


def _scale(a_hat, b_hat, T: float, a: float, b: float):
    T = np.longdouble(T)
    a_sc = T * (a_hat - np.longdouble(a))
    b_sc = np.exp(np.longdouble(b) * T) * (b_hat - np.longdouble(b))
    return a_sc.astype(float), b_sc.astype(float)


def estimate_batch(y_paths, grid: SampleGrid, a: float, b: float, rule: str = "simpson") -> dict:
    """Non-raising batch estimator used by the experiment runner.

    Returns float arrays ``a_hat, b_hat, a_scaled, b_scaled, denominator``
    and a boolean ``degenerate`` mask; degenerate rows hold NaN estimates.
    """
    if grid.n_steps < 2:
        raise ValidationError("estimate_drift needs at least 2 steps")
    Y, _ = _as_paths(y_paths, grid, "y_path")
    _check_bt(b, grid)
    a_hat, b_hat, den, bad = _estimate(Y, grid, rule, strict=False)
    a_sc, b_sc = _scale(a_hat, b_hat, grid.t_max, a, b)
    return {
        "a_hat": a_hat.astype(float),
        "b_hat": b_hat.astype(float),
        "a_scaled": a_sc,
        "b_scaled": b_sc,
        "denominator": den.astype(float),
        "degenerate": bad,
    }


def auxiliary_zuv(tfbm_path, b: float, grid: SampleGrid):
    """``(Z_T, U_T, V_T)`` for a path or batch.

    ``Z_T = int_0^T e^{-bs} B ds`` and ``U_T = e^{-bT} int_0^T e^{bs} B ds`` by
    the trapezoid rule; ``U`` is carried in scaled form with a factor
    ``e^{-b step}`` per step, so ``e^{bT}`` is never formed.
    ``V_T = B(T) - b U_T``.
    """
    if not (isinstance(b, (int, float)) and math.isfinite(b) and b > 0):
        raise ValidationError("b must be positive")
    B, single = _as_paths(tfbm_path, grid, "tfbm_path")
    _check_starts_at_zero(B)
    h = grid.step
    decay = math.exp(-b * h)
    z = trapezoid(B * np.exp(-b * grid.times), dx=h, axis=1)
    u = np.zeros(B.shape[0])
    for k in range(grid.n_steps):
        u = decay * u + 0.5 * h * (decay * B[:, k] + B[:, k + 1])
    v = B[:, -1] - b * u
    if single:
        return float(z[0]), float(u[0]), float(v[0])
    return z, u, v


def limit_summands(y_path, tfbm_path, vp: VasicekParams, grid: SampleGrid, rule: str = "simpson"):
    """Scaled path functionals and ``zeta_T = y0 + a/b + b sigma Z_T``."""
    Y, single = _as_paths(y_path, grid, "y_path")
    _check_bt(vp.b, grid)
    z, _, _ = auxiliary_zuv(tfbm_path, vp.b, grid)
    z = np.atleast_1d(z)
    _, yT, int_y, int_y2 = (x.astype(float) for x in _moments(Y, grid, rule))
    damp = math.exp(-vp.b * grid.t_max)
    zeta = vp.y0 + vp.a / vp.b + vp.b * vp.sigma * z
    out = [
        LimitSummands(float(zeta[i]), float(damp * yT[i]), float(damp * int_y[i]), float(damp * damp * int_y2[i]))
        for i in range(Y.shape[0])
    ]
    return out[0] if single else out


def b_identity_terms(y_path, grid: SampleGrid, b: float, rule: str = "simpson") -> tuple[np.ndarray, np.ndarray]:
    """``(D_T, F_T)`` with ``e^{bT} (b_hat - b) D_T = F_T`` under the same quadrature.

    ``D_T = e^{-2bT} (int Y^2 - (int Y)^2 / T)`` and
    ``F_T = e^{-bT} (Y_T - y0) ((Y_T + y0)/2 - int Y / T) - b e^{bT} D_T``.
    """
    Y, _ = _as_paths(y_path, grid, "y_path")
    _check_bt(b, grid)
    T = np.longdouble(grid.t_max)
    y0, yT, int_y, int_y2 = _moments(Y, grid, rule)
    damp = np.exp(-np.longdouble(b) * T)
    spread = int_y2 - int_y * int_y / T
    D = damp * damp * spread
    F = damp * (yT - y0) * (0.5 * (yT + y0) - int_y / T) - np.longdouble(b) * damp * spread
    return D.astype(float), F.astype(float)


def write_estimates_csv(path, rows) -> None:
    """Write rows (mappings with ``ESTIMATE_COLUMNS`` keys) as CSV, atomically."""
    from .io import atomic_writer

    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in ESTIMATE_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
