"""Asymptotic constants of the drift estimators and samplers for their limit laws.

Notation: ``v(u) = Var B(u)`` for the TFBM ``B``,

    alpha^2 = lim v(u) = 2 Gamma(2H) / (2 lambda)^(2H),
    beta^2  = (b/2) int_0^inf e^{-bu} v(u) du.

The functionals ``Z_T = int_0^T e^{-bs} B ds``, ``U_T = e^{-bT} int_0^T e^{bs} B ds``
and ``V_T = B_T - b U_T`` are jointly Gaussian with limit covariance

    Sigma = [[beta^2/b^2, beta^2/b^2,            0     ],
             [beta^2/b^2, (alpha^2-beta^2)/b^2,  0     ],
             [0,          0,                     beta^2]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import specfun, streams
from .errors import FallbackRequired, NumericalError, QuadratureError, ValidationError
from .tfbm import TfbmParams, alpha_squared, variance
from .vasicek import MAX_BT, VasicekParams

__all__ = [
    "AsymptoticConstants",
    "LimitLawParams",
    "SecondMoments",
    "LimitDraws",
    "alpha_squared",
    "beta_squared_quadrature",
    "beta_squared_hypergeometric",
    "beta_squared",
    "sigma_matrix",
    "limit_law_params",
    "finite_T_second_moments",
    "sample_limit_laws",
    "sample_eta_ratio",
]

TAIL_TOL = 1e-13
BETA_ABS_TOL = 1e-11
MOMENT_ABS_TOL = 1e-10
_QUAD_LIMIT = 500


@dataclass(frozen=True)
class AsymptoticConstants:
    alpha_sq: float
    beta_sq: float
    sigma_matrix: np.ndarray
    b: float
    beta_route: str = "hypergeometric"

    def to_dict(self) -> dict:
        return {
            "alpha_sq": self.alpha_sq,
            "beta_sq": self.beta_sq,
            "sigma_matrix": self.sigma_matrix.tolist(),
            "b": self.b,
            "beta_route": self.beta_route,
        }


@dataclass(frozen=True)
class LimitLawParams:
    """Parameters of the two limit laws.

    ``T (a_hat - a) -> N(0, a_limit_var)`` and
    ``e^{bT} (b_hat - b) -> eta1 / eta2`` with independent
    ``eta1 ~ N(0, eta1_var)``, ``eta2 ~ N(eta2_mean, eta2_var)``.
    """

    a_limit_var: float
    eta1_var: float
    eta2_mean: float
    eta2_var: float
    b: float
    sigma: float
    alpha_sq: float
    beta_sq: float

    def __post_init__(self):
        for name in ("a_limit_var", "eta1_var", "eta2_var"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "a_limit_var": self.a_limit_var,
            "eta1_var": self.eta1_var,
            "eta2_mean": self.eta2_mean,
            "eta2_var": self.eta2_var,
        }


@dataclass(frozen=True)
class SecondMoments:
    """Exact second moments of ``(Z_T, U_T, V_T, B_T)`` at a finite horizon."""

    T: float
    ez2: float
    eu2: float
    ev2: float
    ezu: float
    ezv: float
    euv: float
    ezb: float
    eub: float
    eb2: float

    def covariance(self) -> np.ndarray:
        """3x3 covariance of ``(Z_T, U_T, V_T)``."""
        return np.array(
            [
                [self.ez2, self.ezu, self.ezv],
                [self.ezu, self.eu2, self.euv],
                [self.ezv, self.euv, self.ev2],
            ]
        )


@dataclass(frozen=True)
class LimitDraws:
    a_limit: np.ndarray
    b_limit: np.ndarray
    xi: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        return np.column_stack([self.a_limit, self.b_limit])


def _check_b(b) -> float:
    if isinstance(b, bool) or not isinstance(b, (int, float)) or not math.isfinite(b) or b <= 0:
        raise ValidationError("b must be positive")
    return float(b)


def _quad(f, lo: float, hi: float, what: str, abs_tol: float) -> float:
    """Adaptive Gauss-Kronrod with failures reported by their worst subinterval."""
    val, err, info = quad(f, lo, hi, epsabs=abs_tol, epsrel=1e-13, limit=_QUAD_LIMIT, full_output=1)[:3]
    # scipy flags roundoff (ier=2) when it already meets tolerance but cannot prove it further
    if not math.isfinite(val) or err > abs_tol:
        last = int(info["last"])
        k = int(np.argmax(info["elist"][:last]))
        raise QuadratureError(
            f"{what}: quadrature on [{lo:g}, {hi:g}] did not converge (error estimate {err:.2e}); "
            f"worst subinterval [{info['alist'][k]:.6g}, {info['blist'][k]:.6g}] with error {info['elist'][k]:.2e}"
        )
    return val


def _pieces(hi: float) -> list[tuple[float, float]]:
    if hi <= 1.0:
        return [(0.0, hi)]
    return [(0.0, 1.0), (1.0, hi)]


def beta_squared_quadrature(p: TfbmParams, b: float) -> float:
    """``beta^2`` from its defining Laplace-type integral.

    The integral is split into ``[0, 1]`` and ``[1, u_max]``; ``u_max`` is
    chosen so that the neglected tail, at most ``(alpha^2/2) e^{-b u_max}``,
    is below 1e-13.
    """
    b = _check_b(b)
    a2 = alpha_squared(p)
    u_max = max(math.log(0.5 * a2 / TAIL_TOL), 1.0) / b

    def f(u):
        return math.exp(-b * u) * variance(p, u)

    total = sum(_quad(f, lo, hi, "beta^2", BETA_ABS_TOL / b) for lo, hi in _pieces(u_max))
    return 0.5 * b * total


def beta_squared_hypergeometric(p: TfbmParams, b: float) -> float:
    """``beta^2`` in closed form through ``2F1(2H+1, H+1/2; H+3/2; (b-lam)/(b+lam))``.

    Raises ``FallbackRequired`` when ``|(b-lam)/(b+lam)| > 0.9``.
    """
    b = _check_b(b)
    H, lam = p.H, p.lam
    x = (b - lam) / (b + lam)
    if abs(x) > specfun.HYP2F1_MAX_ABS_X:
        raise FallbackRequired(f"2F1 argument {x:.4g} is outside [-0.9, 0.9]; use the quadrature route")
    f = specfun.hyp2f1(2 * H + 1, H + 0.5, H + 1.5, x)
    log_coef = math.log(2 * b) + math.lgamma(2 * H + 1) - (2 * H + 1) * math.log(b + lam) - math.log(2 * H + 1)
    return 0.5 * alpha_squared(p) - math.exp(log_coef) * f


def beta_squared(p: TfbmParams, b: float) -> tuple[float, str]:
    """``(beta^2, route)``, preferring the closed form and falling back to quadrature."""
    try:
        return beta_squared_hypergeometric(p, b), "hypergeometric"
    except FallbackRequired:
        return beta_squared_quadrature(p, b), "quadrature"


def sigma_matrix(p: TfbmParams, b: float, beta_sq: float | None = None) -> AsymptoticConstants:
    b = _check_b(b)
    a2 = alpha_squared(p)
    route = "given"
    if beta_sq is None:
        beta_sq, route = beta_squared(p, b)
    if not 0 < beta_sq < a2:
        raise NumericalError(f"expected 0 < beta^2 < alpha^2, got beta^2={beta_sq}, alpha^2={a2}")
    s = np.zeros((3, 3))
    s[0, 0] = s[0, 1] = s[1, 0] = beta_sq / b**2
    s[1, 1] = (a2 - beta_sq) / b**2
    s[2, 2] = beta_sq
    s.setflags(write=False)
    return AsymptoticConstants(a2, beta_sq, s, b, route)


def limit_law_params(c: AsymptoticConstants, vp: VasicekParams) -> LimitLawParams:
    if not math.isclose(c.b, vp.b, rel_tol=0, abs_tol=0):
        raise ValidationError(f"constants were computed for b={c.b}, model has b={vp.b}")
    s2 = vp.sigma**2
    return LimitLawParams(
        a_limit_var=s2 * c.alpha_sq,
        eta1_var=4 * vp.b**2 * s2 * c.beta_sq,
        eta2_mean=vp.y0 + vp.a / vp.b,
        eta2_var=s2 * c.beta_sq,
        b=vp.b,
        sigma=vp.sigma,
        alpha_sq=c.alpha_sq,
        beta_sq=c.beta_sq,
    )


def finite_T_second_moments(p: TfbmParams, b: float, T: float) -> SecondMoments:
    """Second moments of ``Z_T, U_T, V_T, B_T`` by one-dimensional quadrature.

    With ``v = Var B`` and

        I-  = int_0^T e^{-bu} v(u) du,        I+ = int_0^T e^{-b(T-u)} v(u) du,
        J+  = int_0^T (T-u) e^{-b(T-u)} v du, J- = int_0^T (T-u) e^{-bu} v du,

    every double integral of the covariance reduces to these four.
    """
    b = _check_b(b)
    if isinstance(T, bool) or not math.isfinite(T) or T < 0:
        raise ValidationError(f"T must be non-negative, got {T}")
    if b * T > MAX_BT:
        raise ValidationError(f"b*T = {b * T:g} exceeds the overflow guard {MAX_BT:g}")
    if T == 0:
        return SecondMoments(0.0, *([0.0] * 9))

    def integral(weight) -> float:
        return sum(
            _quad(lambda u: weight(u) * variance(p, u), lo, hi, "finite-T moment", MOMENT_ABS_TOL)
            for lo, hi in _pieces(T)
        )

    i_minus = integral(lambda u: math.exp(-b * u))
    i_plus = integral(lambda u: math.exp(-b * (T - u)))
    j_plus = integral(lambda u: (T - u) * math.exp(-b * (T - u)))
    j_minus = integral(lambda u: (T - u) * math.exp(-b * u))
    vT = variance(p, T)
    d = math.exp(-b * T)
    g = -math.expm1(-b * T) / b

    ez2 = g * i_minus - i_minus / (2 * b) + d * i_plus / (2 * b)
    eu2 = g * i_plus - i_minus / (2 * b) + d * i_plus / (2 * b)
    eub = 0.5 * vT * g + 0.5 * i_plus - 0.5 * i_minus
    ezb = 0.5 * vT * g + 0.5 * i_minus - 0.5 * i_plus
    ezu = 0.5 * g * (i_plus + i_minus) - 0.5 * j_plus - 0.5 * d * j_minus
    ev2 = b * b * eu2 + d * vT - b * i_plus + b * i_minus
    ezv = ezb - b * ezu
    euv = eub - b * eu2
    return SecondMoments(T, ez2, eu2, ev2, ezu, ezv, euv, ezb, eub, vT)


def _xi(lp: LimitLawParams, n: int, seed: int, prefix: tuple) -> np.ndarray:
    b, a2, be2 = lp.b, lp.alpha_sq, lp.beta_sq
    gap = a2 - 2 * be2
    if gap < -1e-12 * a2:
        raise NumericalError(f"Sigma is not positive semidefinite: alpha^2 - 2 beta^2 = {gap:.3g}")
    # Cholesky of Sigma: (xi1, xi2) block and the independent xi3
    l11 = math.sqrt(be2) / b
    l22 = math.sqrt(max(gap, 0.0)) / b
    g = streams.normal_draws(seed, n, 3, prefix)
    xi = np.empty((n, 3))
    xi[:, 0] = l11 * g[:, 0]
    xi[:, 1] = l11 * g[:, 0] + l22 * g[:, 1]
    xi[:, 2] = math.sqrt(be2) * g[:, 2]
    return xi


def sample_limit_laws(lp: LimitLawParams, n: int, seed: int, prefix: tuple = (0,)) -> LimitDraws:
    """Draws of the joint limit of ``(T (a_hat - a), e^{bT} (b_hat - b))``.

    ``(xi1, xi2, xi3) ~ N(0, Sigma)``; the limits are ``b sigma xi2 - sigma xi3``
    and ``2 b sigma xi3 / (y0 + a/b + b sigma xi1)``.  No truncation is applied
    to the heavy-tailed ratio.
    """
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ValidationError(f"n must be a non-negative integer, got {n}")
    xi = _xi(lp, int(n), seed, prefix)
    b, s = lp.b, lp.sigma
    a_lim = b * s * xi[:, 1] - s * xi[:, 2]
    with np.errstate(divide="ignore"):
        b_lim = 2 * b * s * xi[:, 2] / (lp.eta2_mean + b * s * xi[:, 0])
    return LimitDraws(a_lim, b_lim, xi)


def sample_eta_ratio(lp: LimitLawParams, n: int, seed: int, prefix: tuple = (1,)) -> np.ndarray:
    """``eta1 / eta2`` from two independent normals, without going through Sigma."""
    g = streams.normal_draws(seed, int(n), 2, prefix)
    eta1 = math.sqrt(lp.eta1_var) * g[:, 0]
    eta2 = lp.eta2_mean + math.sqrt(lp.eta2_var) * g[:, 1]
    with np.errstate(divide="ignore"):
        return eta1 / eta2
