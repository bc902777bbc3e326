"""Special functions on the real line: log-gamma, K_nu and 2F1.

All routines are scalar, pure and allocation-free so they can be called
from quadrature integrands in tight loops.

``bessel_k`` uses Temme's method: for ``x <= 2`` the series built from
``I_{-mu}`` and ``I_{mu}`` is rearranged so that it stays finite and
accurate for every order, integer orders included (where the textbook
``(I_{-nu} - I_nu) / sin(pi nu)`` form is 0/0); for ``x > 2`` Steed's
continued fraction is used.  Orders above 1/2 are reached by forward
recurrence, which is stable for K.
"""

from __future__ import annotations

import math

from .errors import FallbackRequired, ValidationError

__all__ = [
    "log_gamma",
    "rgamma1p",
    "bessel_k",
    "bessel_k_scaled",
    "hyp2f1",
    "HYP2F1_MAX_ABS_X",
    "NU_MAX",
]

NU_MAX = 5.0
HYP2F1_MAX_ABS_X = 0.9

_EPS = 1e-16
_MAXIT = 10_000
_TEMME_SWITCH = 2.0

# Taylor coefficients of 1/Gamma(1 + x) about x = 0.
_RGAMMA1P = (
    1.0, 0.5772156649015329, -0.6558780715202539,
    -0.04200263503409524, 0.16653861138229148, -0.04219773455554433,
    -0.009621971527876973, 0.0072189432466631, -0.0011651675918590652,
    -0.00021524167411495098, 0.0001280502823881162, -2.013485478078824e-05,
    -1.2504934821426706e-06, 1.133027231981696e-06, -2.056338416977607e-07,
    6.116095104481416e-09, 5.002007644469223e-09, -1.18127457048702e-09,
    1.0434267116911005e-10, 7.782263439905071e-12, -3.696805618642206e-12,
    5.100370287454476e-13, -2.0583260535665066e-14, -5.348122539423018e-15,
    1.2267786282382608e-15, -1.1812593016974588e-16, 1.1866922547516004e-18,
    1.4123806553180319e-18,
)
_EVEN = _RGAMMA1P[0::2]
_ODD = _RGAMMA1P[1::2]


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


def _horner(coeffs, x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def log_gamma(x: float) -> float:
    """Natural log of Gamma(x) for x > 0."""
    x = _finite("x", x)
    if x <= 0.0:
        raise ValidationError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def temme_gammas(mu: float) -> tuple[float, float]:
    """Return ``(g1, g2)`` with ``1/Gamma(1 -+ mu) = g2 +- mu * g1``.

    ``g1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)`` is evaluated without
    cancellation, which is what makes Temme's series uniform near integer
    orders.  Valid for ``|mu| <= 1/2``.
    """
    m2 = mu * mu
    g2 = _horner(_EVEN, m2)
    g1 = -_horner(_ODD, m2)
    return g1, g2


def rgamma1p(x: float) -> float:
    """1 / Gamma(1 + x) for |x| <= 1/2."""
    return _horner(_RGAMMA1P, x)


def _temme_small(mu: float, x: float) -> tuple[float, float]:
    """K_mu(x), K_{mu+1}(x) for |mu| <= 1/2 and 0 < x <= 2."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -math.log(x2)
    e = mu * d
    fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
    g1, g2 = temme_gammas(mu)
    gampl = g2 - mu * g1
    gammi = g2 + mu * g1
    ff = fact * (g1 * math.cosh(e) + g2 * fact2 * d)
    total = ff
    e = math.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = 1.0
    d = x2 * x2
    total1 = p
    mu2 = mu * mu
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c *= d / i
        p /= i - mu
        q /= i + mu
        term = c * ff
        total += term
        total1 += c * (p - i * ff)
        if abs(term) < abs(total) * _EPS:
            break
    return total, total1 * 2.0 / x


def _steed_scaled(mu: float, x: float) -> tuple[float, float]:
    """exp(x) K_mu(x), exp(x) K_{mu+1}(x) for |mu| <= 1/2 and x > 2."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1, q2 = 0.0, 1.0
    a1 = 0.25 - mu * mu
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    h *= a1
    kmu = math.sqrt(math.pi / (2.0 * x)) / s
    return kmu, kmu * (mu + x + 0.5 - h) / x


def _check_k_args(nu: float, x: float) -> tuple[float, float]:
    nu = _finite("nu", nu)
    x = _finite("x", x)
    if x <= 0.0:
        raise ValidationError(f"bessel_k requires x > 0, got {x}")
    if nu < 0.0:
        raise ValidationError(f"bessel_k requires nu >= 0, got {nu}")
    return nu, x


def _recur_up(nu: float, x: float, kmu: float, k1: float) -> float:
    n = int(nu + 0.5)
    mu = nu - n
    for i in range(1, n + 1):
        kmu, k1 = k1, (mu + i) * (2.0 / x) * k1 + kmu
    return kmu


def bessel_k_scaled(nu: float, x: float) -> float:
    """exp(x) * K_nu(x), safe from underflow for large x."""
    nu, x = _check_k_args(nu, x)
    mu = nu - int(nu + 0.5)
    if x <= _TEMME_SWITCH:
        kmu, k1 = _temme_small(mu, x)
        return _recur_up(nu, x, kmu, k1) * math.exp(x)
    kmu, k1 = _steed_scaled(mu, x)
    return _recur_up(nu, x, kmu, k1)


def bessel_k(nu: float, x: float) -> float:
    """Modified Bessel function of the second kind, K_nu(x), real nu >= 0, x > 0.

    Accurate to about 1e-14 relative for nu in [0, 5] and x in [1e-6, 100];
    larger orders work but are outside the validated range.
    """
    nu, x = _check_k_args(nu, x)
    mu = nu - int(nu + 0.5)
    if x <= _TEMME_SWITCH:
        kmu, k1 = _temme_small(mu, x)
        return _recur_up(nu, x, kmu, k1)
    kmu, k1 = _steed_scaled(mu, x)
    return _recur_up(nu, x, kmu, k1) * math.exp(-x)


def _series_2f1(a: float, b: float, c: float, x: float) -> float:
    term = 1.0
    total = 1.0
    for n in range(_MAXIT):
        term *= (a + n) * (b + n) / ((c + n) * (n + 1)) * x
        total += term
        if term == 0.0:
            return total
        # stop only once the terms are in geometric decay
        if abs(term) <= _EPS * abs(total) and abs((a + n + 1) * (b + n + 1) * x) < abs((c + n + 1) * (n + 2)):
            return total
    raise FallbackRequired(f"2F1 series did not converge for a={a}, b={b}, c={c}, x={x}")


def hyp2f1(a: float, b: float, c: float, x: float) -> float:
    """Gauss hypergeometric function 2F1(a, b; c; x) for real arguments.

    Requires ``c > b > 0`` and ``|x| <= 0.9``.  Negative ``x`` is mapped
    into ``(0, 1/2)`` with Pfaff's transformation
    ``2F1(a,b;c;x) = (1-x)^(-b) 2F1(c-a, b; c; x/(x-1))`` before the
    power series is summed.

    Raises
    ------
    ValidationError
        If ``|x| >= 1`` or the parameter ordering is violated.
    FallbackRequired
        If ``0.9 < |x| < 1``: the series loses digits there and callers
        should switch to a quadrature route.
    """
    a = _finite("a", a)
    b = _finite("b", b)
    c = _finite("c", c)
    x = _finite("x", x)
    if not (c > b > 0.0):
        raise ValidationError(f"hyp2f1 requires c > b > 0, got b={b}, c={c}")
    if abs(x) >= 1.0:
        raise ValidationError(f"hyp2f1 requires |x| < 1, got {x}")
    if abs(x) > HYP2F1_MAX_ABS_X:
        raise FallbackRequired(f"|x|={abs(x)} exceeds {HYP2F1_MAX_ABS_X}; use the quadrature route")
    if x == 0.0:
        return 1.0
    if x < 0.0:
        y = x / (x - 1.0)
        return (1.0 - x) ** (-b) * _series_2f1(c - a, b, c, y)
    return _series_2f1(a, b, c, x)
