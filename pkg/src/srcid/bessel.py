"""
Modified Bessel function of the second kind, K_nu(x), for real nu >= 0, x > 0.

Method (Temme 1975; Steed's continued fraction as in Numerical Recipes
``bessik``): write nu = mu + n with |mu| <= 1/2. K_mu and K_{mu+1} come from
Temme's series for x < 2 and from the CF2 continued fraction for x >= 2; K_nu
then follows by forward recurrence, which is stable for K.

Relative accuracy is close to machine precision over the range used by the
Matérn kernel (nu in [0.5, 15], x up to a few hundred).
"""

import math

import numpy as np

from .errors import InvalidArgumentError

_EPS = 1e-16
_MAXIT = 10000
_XMIN = 2.0

# Taylor coefficients of 1/Gamma(z) (Abramowitz & Stegun 6.1.34); 1/Gamma(1+z)
# = sum_k _RGAMMA[k + 1] z^k.
_RGAMMA = (
    0.0,
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
)


def _gamma_terms(mu: float):
    """gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu) for |mu| <= 1/2."""
    gampl = 1.0 / math.gamma(1.0 + mu)
    gammi = 1.0 / math.gamma(1.0 - mu)
    if abs(mu) < 0.1:
        # (1/G(1-mu) - 1/G(1+mu)) / (2 mu) by series, avoiding cancellation
        b = _RGAMMA[1:]
        gam1 = -sum(b[k] * mu ** (k - 1) for k in range(1, len(b), 2))
    else:
        gam1 = (gammi - gampl) / (2.0 * mu)
    gam2 = 0.5 * (gammi + gampl)
    return gam1, gam2, gampl, gammi


def _temme(mu: float, x: np.ndarray):
    """K_mu(x), K_{mu+1}(x) for 0 < x < 2."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / e)
    gam1, gam2, gampl, gammi = _gamma_terms(mu)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    e = np.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    mu2 = mu * mu
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        delta = c * ff
        total = np.where(active, total + delta, total)
        total1 = np.where(active, total1 + c * (p - i * ff), total1)
        active &= np.abs(delta) >= np.abs(total) * _EPS
        if not active.any():
            break
    return total, total1 * 2.0 / x


def _steed(mu: float, x: np.ndarray):
    """K_mu(x), K_{mu+1}(x) for x >= 2 via Steed's CF2."""
    mu2 = mu * mu
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu2
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = np.where(active, -a * c / i, c)
        qnew = (q1 - b * q2) / a
        q1 = np.where(active, q2, q1)
        q2 = np.where(active, qnew, q2)
        q = np.where(active, q + c * qnew, q)
        b = b + 2.0
        d = np.where(active, 1.0 / (b + a * d), d)
        delh = np.where(active, (b * d - 1.0) * delh, delh)
        h = np.where(active, h + delh, h)
        dels = q * delh
        s = np.where(active, s + dels, s)
        active &= np.abs(dels / s) >= _EPS
        if not active.any():
            break
    h = a1 * h
    kmu = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def _checked(nu, x):
    nu = float(nu)
    if nu < 0:
        raise InvalidArgumentError("order must be non-negative")
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0) or np.any(~np.isfinite(xa)):
        raise InvalidArgumentError("argument must be positive and finite")
    return nu, xa


def _kv_scaled(nu: float, flat: np.ndarray):
    """K_nu(x) as ``value * exp(scale)``; the recurrence is rescaled to avoid overflow."""
    n = int(nu + 0.5)
    mu = nu - n
    kmu = np.empty_like(flat)
    k1 = np.empty_like(flat)
    small = flat < _XMIN
    if small.any():
        kmu[small], k1[small] = _temme(mu, flat[small])
    if (~small).any():
        kmu[~small], k1[~small] = _steed(mu, flat[~small])
    scale = np.zeros_like(flat)
    for i in range(1, n + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            kmu, k1 = k1, (mu + i) * (2.0 / flat) * k1 + kmu
        big = np.abs(k1) > 1e250
        if big.any():
            s = k1[big]
            kmu[big] /= s
            k1[big] = 1.0
            scale[big] += np.log(s)
    return kmu, scale


def kv(nu: float, x):
    """K_nu(x) for scalar ``nu >= 0`` and array-like ``x > 0``."""
    nu, xa = _checked(nu, x)
    val, scale = _kv_scaled(nu, np.atleast_1d(xa).ravel())
    with np.errstate(over="ignore"):
        out = (val * np.exp(scale)).reshape(xa.shape)
    return out if out.ndim else float(out)


def log_kv(nu: float, x):
    """log K_nu(x); finite where K_nu itself would overflow."""
    nu, xa = _checked(nu, x)
    val, scale = _kv_scaled(nu, np.atleast_1d(xa).ravel())
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (np.log(val) + scale).reshape(xa.shape)
    return out if out.ndim else float(out)
