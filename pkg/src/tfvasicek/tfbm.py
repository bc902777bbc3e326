"""Tempered fractional Brownian motion: covariance kernel and exact sampling.

The variance of the process is

    Var B(t) = alpha^2 - kappa * t^H * K_H(lambda t),
    alpha^2  = 2 Gamma(2H) / (2 lambda)^(2H),
    kappa    = 2 Gamma(H + 1/2) / (sqrt(pi) (2 lambda)^H),

and ``Cov(B(s), B(t)) = (V(s) + V(t) - V(|t - s|)) / 2``.  For small
``lambda t`` the two terms of the variance cancel almost completely, so
below ``SMALL_Z`` the difference ``f(0) - f(z)`` with ``f(z) = z^H K_H(z)``
is summed directly from its power series.

Paths are drawn from the exact finite-dimensional law on a uniform grid:
the covariance over ``t_1..t_n`` is Cholesky-factored once and every
path applies that factor to its own stream of standard normals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

from . import specfun
from .errors import FactorizationError, ValidationError
from .streams import normal_rows

__all__ = [
    "TfbmParams",
    "SampleGrid",
    "PathSet",
    "TfbmSampler",
    "alpha_squared",
    "variance",
    "covariance",
    "covariance_matrix",
    "cholesky_with_jitter",
    "sample_paths",
    "SMALL_Z",
    "H_MAX",
    "MAX_STEPS",
    "JITTER_LADDER",
]

SMALL_Z = 0.1
H_MAX = 2.0
MAX_STEPS = 5000
JITTER_LADDER = (0.0, 1e-12, 1e-10)
_SERIES_ORDER = 6


@dataclass(frozen=True)
class TfbmParams:
    """Exponent ``H`` in (0, 2] and tempering rate ``lam`` > 0 (1/time)."""

    H: float
    lam: float

    def __post_init__(self):
        for name in ("H", "lam"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"{name} must be a finite number, got {v!r}")
        if self.H <= 0:
            raise ValidationError("H must be positive")
        if self.H > H_MAX:
            raise ValidationError(f"H must be at most {H_MAX}, got {self.H}")
        if self.lam <= 0:
            raise ValidationError("lambda must be positive")

    def to_dict(self) -> dict:
        return {"H": self.H, "lambda": self.lam}


@dataclass(frozen=True)
class SampleGrid:
    """Uniform grid ``t_k = k * t_max / n_steps``, ``k = 0..n_steps``."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if not math.isfinite(self.t_max) or self.t_max <= 0:
            raise ValidationError(f"t_max must be positive, got {self.t_max}")
        if isinstance(self.n_steps, bool) or int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_step(cls, t_max: float, step: float) -> "SampleGrid":
        n = int(round(t_max / step))
        if n < 1 or not math.isclose(n * step, t_max, rel_tol=1e-9):
            raise ValidationError(f"horizon {t_max} is not a multiple of step {step}")
        return cls(t_max, n)

    @property
    def step(self) -> float:
        return self.t_max / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.step

    def to_dict(self) -> dict:
        return {"t_max": self.t_max, "n_steps": self.n_steps}


@dataclass
class PathSet:
    """A batch of trajectories on ``grid``; ``values`` has shape (n_paths, n_steps + 1)."""

    grid: SampleGrid
    values: np.ndarray
    seed: int
    params: TfbmParams | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]


def alpha_squared(p: TfbmParams) -> float:
    """Limit of Var B(t) as t -> infinity: 2 Gamma(2H) / (2 lambda)^(2H)."""
    return 2.0 * math.exp(math.lgamma(2.0 * p.H) - 2.0 * p.H * math.log(2.0 * p.lam))


def _polyval(coeffs: tuple, x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


@lru_cache(maxsize=None)
def _pair_polys(n: int, k: int) -> tuple[tuple, tuple, tuple]:
    # X(eps) = k! prod_{i<=j} (i - eps),  Y(eps) = j! prod_{i<=k} (i + eps),  (Y - X) / eps
    j = k - n
    x_poly = np.array([float(math.factorial(k))])
    for i in range(1, j + 1):
        x_poly = P.polymul(x_poly, [i, -1.0])
    y_poly = np.array([float(math.factorial(j))])
    for i in range(1, k + 1):
        y_poly = P.polymul(y_poly, [i, 1.0])
    size = max(len(x_poly), len(y_poly))
    diff = np.pad(y_poly, (0, size - len(y_poly))) - np.pad(x_poly, (0, size - len(x_poly)))
    return tuple(x_poly.tolist()), tuple(y_poly.tolist()), tuple(diff[1:].tolist())


def _pair_term(n: int, k: int, eps: float, w: float, log_w: float, gammas: tuple[float, float]) -> float:
    """Sum of the two series terms of order w^k that share a pole at eps = 0.

    Terms are ``(-1)^k Gamma(nu-k) w^k / k!`` and
    ``(-1)^j Gamma(-nu-j) w^(nu+j) / j!`` with ``j = k - n``, ``nu = n + eps``.
    """
    sign = -1.0 if n % 2 else 1.0
    x_poly, y_poly, diff = _pair_polys(n, k)
    xv = _polyval(x_poly, eps)
    yv = _polyval(y_poly, eps)
    a_val = sign / xv
    b_val = sign / yv
    a_minus_b_over_eps = sign * _polyval(diff, eps) / (xv * yv)
    # powers are formed directly: w^eps alone overflows for tiny w when eps < 0
    wk = math.exp(k * log_w)
    wke = math.exp((k + eps) * log_w)
    x = eps * log_w
    if eps == 0.0:
        wk_em = wk * log_w
    elif abs(x) < 1.0:
        wk_em = wk * math.expm1(x) / eps
    else:
        wk_em = (wke - wk) / eps
    g1, g2 = gammas
    r_plus = g2 - eps * g1
    r_minus = g2 + eps * g1
    num = g2 * (a_minus_b_over_eps * wk - b_val * wk_em) + g1 * (a_val * wk + b_val * wke)
    return num / (r_plus * r_minus)


def _zk_deficit(nu: float, z: float) -> float:
    """f(0) - f(z) for f(z) = z^nu K_nu(z), by power series (small z only)."""
    w = 0.25 * z * z
    log_w = 2.0 * math.log(z) - math.log(4.0)  # w itself may underflow
    n = int(math.floor(nu + 0.5))
    eps = nu - n
    k_max, j_max = _SERIES_ORDER, _SERIES_ORDER - 1
    gammas = specfun.temme_gammas(eps)
    total = 0.0
    for k in range(1, k_max + 1):
        if n >= 1 and k >= n:
            total += _pair_term(n, k, eps, w, log_w, gammas)
        else:
            total += (-1) ** k * math.gamma(nu - k) * w ** k / math.factorial(k)
    if n == 0:
        for j in range(j_max + 1):
            total += (-1) ** j * math.gamma(-nu - j) * math.exp((nu + j) * log_w) / math.factorial(j)
    # for n >= 1 every j with n + j <= k_max is inside a pair; larger j are beyond truncation
    return -(2.0 ** (nu - 1.0)) * total


def _variance_direct(p: TfbmParams, t: float) -> float:
    z = p.lam * t
    log_kappa = math.lgamma(p.H + 0.5) + math.log(2.0 / math.sqrt(math.pi)) - p.H * math.log(2.0 * p.lam)
    tail = math.exp(log_kappa + p.H * math.log(t) - z + math.log(specfun.bessel_k_scaled(p.H, z)))
    return alpha_squared(p) - tail


def _variance_series(p: TfbmParams, t: float) -> float:
    z = p.lam * t
    log_coef = (
        math.lgamma(p.H + 0.5) + math.log(2.0 / math.sqrt(math.pi)) - p.H * math.log(2.0) - 2.0 * p.H * math.log(p.lam)
    )
    return math.exp(log_coef) * _zk_deficit(p.H, z) + 0.0  # no negative zero


def _variance_scalar(p: TfbmParams, t: float) -> float:
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    if t == 0:
        return 0.0
    if p.lam * t < SMALL_Z:
        return _variance_series(p, t)
    return _variance_direct(p, t)


def variance(p: TfbmParams, t):
    """Var B(t); accepts a scalar or an array of non-negative times."""
    if np.ndim(t) == 0:
        return _variance_scalar(p, float(t))
    arr = np.asarray(t, dtype=float)
    out = np.empty_like(arr)
    flat = out.reshape(-1)
    for i, ti in enumerate(arr.reshape(-1)):
        flat[i] = _variance_scalar(p, float(ti))
    return out


def covariance(p: TfbmParams, s: float, t: float) -> float:
    """Cov(B(s), B(t)) through the shared variance kernel."""
    if s < 0 or t < 0:
        raise ValidationError(f"times must be non-negative, got s={s}, t={t}")
    return 0.5 * (variance(p, t) + variance(p, s) - variance(p, abs(t - s)))


def covariance_matrix(p: TfbmParams, g: SampleGrid) -> np.ndarray:
    """Covariance of ``(B(t_1), ..., B(t_n))``; t_0 = 0 is excluded (its row is zero).

    On a uniform grid only the n + 1 lag variances ``V(k * step)`` are needed.
    The matrix is built from the upper triangle and mirrored, so it is
    symmetric to exact equality.
    """
    n = g.n_steps
    v = variance(p, g.times)
    i, j = np.triu_indices(n)
    upper = 0.5 * (v[i + 1] + v[j + 1] - v[j - i])
    m = np.zeros((n, n))
    m[i, j] = upper
    m[j, i] = upper
    return m


def cholesky_with_jitter(m: np.ndarray, what: str = "covariance") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter 0 -> 1e-12 -> 1e-10 (relative to mean diagonal)."""
    scale = float(np.mean(np.diag(m))) if m.size else 0.0
    for rel in JITTER_LADDER:
        try:
            a = m if rel == 0.0 else m + rel * scale * np.eye(m.shape[0])
            return np.linalg.cholesky(a), rel
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"{what} is not positive definite even with jitter {JITTER_LADDER[-1]:g} x mean diagonal"
    )


@lru_cache(maxsize=8)
def _factor(p: TfbmParams, g: SampleGrid) -> tuple[np.ndarray, float]:
    if g.n_steps > MAX_STEPS:
        raise ValidationError(f"n_steps={g.n_steps} exceeds the dense factorization bound {MAX_STEPS}")
    m = covariance_matrix(p, g)
    desc = f"TFBM covariance (H={p.H}, lambda={p.lam}, t_max={g.t_max}, n_steps={g.n_steps})"
    L, jitter = cholesky_with_jitter(m, desc)
    L.setflags(write=False)
    return L, jitter


class TfbmSampler:
    """Exact sampler for one (params, grid) pair.

    The factor is computed once and shared read-only.  Path ``i`` under
    ``(seed, prefix)`` depends only on that triple, never on how the
    requested indices are batched or threaded.
    """

    batch_size = 512

    def __init__(self, params: TfbmParams, grid: SampleGrid):
        self.params = params
        self.grid = grid
        self.factor, self.jitter = _factor(params, grid)

    def draw(self, seed: int, indices, prefix: tuple = (), threads: int = 1) -> np.ndarray:
        """Paths for the given indices as an array (len(indices), n_steps + 1), B(0) = 0.

        Index ``i`` is always computed inside the aligned block
        ``[k * batch_size, (k + 1) * batch_size)`` with a full-size product,
        because BLAS results can differ in the last bit with the matrix shape.
        """
        indices = np.asarray(indices, dtype=np.int64)
        n = self.grid.n_steps
        out = np.zeros((len(indices), n + 1))
        bs = self.batch_size
        blocks = indices // bs
        todo = np.unique(blocks)

        def work(k):
            rows = np.nonzero(blocks == k)[0]
            z = normal_rows(seed, np.arange(k * bs, (k + 1) * bs), n, prefix)
            full = z @ self.factor.T
            out[rows, 1:] = full[indices[rows] - k * bs]

        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, todo))
        else:
            for k in todo:
                work(k)
        return out

    def sample(self, n_paths: int, seed: int, threads: int = 1) -> PathSet:
        vals = self.draw(seed, np.arange(n_paths), threads=threads)
        return PathSet(self.grid, vals, seed, self.params, {"jitter": self.jitter})


def sample_paths(p: TfbmParams, g: SampleGrid, n_paths: int, seed: int, threads: int = 1) -> PathSet:
    """Draw ``n_paths`` exact TFBM trajectories on ``g``; deterministic in ``seed``."""
    if n_paths < 0:
        raise ValidationError(f"n_paths must be non-negative, got {n_paths}")
    if n_paths == 0:
        return PathSet(g, np.zeros((0, g.n_steps + 1)), seed, p)
    return TfbmSampler(p, g).sample(n_paths, seed, threads=threads)
