"""Log-space tail probabilities for the detectors.

Detection p-values in this package routinely land far below the smallest
positive float64, so every routine here returns log10 of the tail mass
instead of the tail mass itself. The special functions are implemented from
scratch (Lanczos log-gamma, series/continued-fraction incomplete gamma,
erfc/asymptotic normal tail) so that a reimplementation in another language
can match them bit-for-bit from the constants below.
"""

from __future__ import annotations

import math

import numpy as np

LN10 = math.log(10.0)

# Lanczos approximation, g = 7, n = 9. Classic double-precision coefficient
# set; relative error below 1e-13 over the right half-plane.
LANCZOS_G = 7.0
LANCZOS_COEFFS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

GAMMA_EPS = 1e-15
GAMMA_MAX_ITER = 10_000
_FPMIN = 1e-300


def log_gamma(z: float) -> float:
    """Natural log of Gamma(z) for z > 0 via the Lanczos sum above."""
    if not z > 0.0:
        raise ValueError(f"log_gamma requires z > 0, got {z}")
    if z < 0.5:
        # Reflection keeps the Lanczos sum in its accurate region.
        return math.log(math.pi / math.sin(math.pi * z)) - log_gamma(1.0 - z)
    z -= 1.0
    x = LANCZOS_COEFFS[0]
    for i in range(1, len(LANCZOS_COEFFS)):
        x += LANCZOS_COEFFS[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(x)


def _log_gamma_arr(z: np.ndarray) -> np.ndarray:
    """Array log_gamma, valid for z >= 0.5 (all binomial arguments qualify)."""
    z = np.asarray(z, dtype=np.float64) - 1.0
    x = np.full_like(z, LANCZOS_COEFFS[0])
    for i in range(1, len(LANCZOS_COEFFS)):
        x += LANCZOS_COEFFS[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(x)


def log10_binom_tail(n: int, t: int, p0: float) -> float:
    """log10 P(X >= t) for X ~ Binomial(n, p0).

    Computed by log-sum-exp over the exact per-term logs, so the result is
    meaningful even when the tail mass underflows float64.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0 <= t <= n + 1:
        raise ValueError(f"t must lie in [0, n+1], got t={t}, n={n}")
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"p0 must lie in (0, 1), got {p0}")
    if t <= 0:
        return 0.0
    if t == n + 1:
        return float("-inf")
    k = np.arange(t, n + 1, dtype=np.float64)
    log_terms = (
        _log_gamma_arr(np.float64(n + 1))
        - _log_gamma_arr(k + 1.0)
        - _log_gamma_arr(np.float64(n) - k + 1.0)
        + k * math.log(p0)
        + (n - k) * math.log1p(-p0)
    )
    m = float(np.max(log_terms))
    s = math.fsum(np.exp(log_terms - m).tolist())
    return min((m + math.log(s)) / LN10, 0.0)


def log10_normal_upper(z: float) -> float:
    """log10 Q(z) where Q is the standard normal upper tail.

    Moderate z goes through erfc; large z uses the divergent asymptotic
    expansion Q(z) = phi(z)/z * sum_k (-1)^k (2k-1)!!/z^(2k), summed to its
    smallest term, which is far below the supported tolerance for z > 8.
    """
    if math.isnan(z) or math.isinf(z):
        raise ValueError(f"z must be finite, got {z}")
    if z <= 8.0:
        q = 0.5 * math.erfc(z / math.sqrt(2.0))
        return min(math.log10(q), 0.0)
    zz = z * z
    term = 1.0
    s = 1.0
    k = 1
    while True:
        nxt = term * (-(2 * k - 1) / zz)
        if abs(nxt) >= abs(term):
            break
        term = nxt
        s += term
        if abs(term) < 1e-17 * s:
            break
        k += 1
    ln_q = -0.5 * zz - math.log(z * math.sqrt(2.0 * math.pi)) + math.log(s)
    return ln_q / LN10


def _lower_gamma_series_ln(n: float, x: float) -> float:
    """ln P(n, x) by the regularized lower-gamma power series (x < n + 1)."""
    ap = n
    s = 1.0 / n
    term = s
    for _ in range(GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        s += term
        if abs(term) < abs(s) * GAMMA_EPS:
            return -x + n * math.log(x) - log_gamma(n) + math.log(s)
    raise RuntimeError(f"lower-gamma series did not converge for n={n}, x={x}")


def _upper_gamma_cf_ln(n: float, x: float) -> float:
    """ln Q(n, x) by the continued fraction (x >= n + 1), modified Lentz."""
    b = x + 1.0 - n
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, GAMMA_MAX_ITER + 1):
        an = -i * (i - n)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < GAMMA_EPS:
            return -x + n * math.log(x) - log_gamma(n) + math.log(h)
    raise RuntimeError(f"upper-gamma continued fraction did not converge for n={n}, x={x}")


def log10_gamma_upper(n: float, x: float) -> float:
    """log10 Q(n, x), the regularized upper incomplete gamma function.

    Q(n, x) is the null survival function of the keyed-score detector: the
    sum of n unit-rate exponentials exceeds x with probability Q(n, x).
    """
    if not n > 0.0:
        raise ValueError(f"shape n must be positive, got {n}")
    if x < 0.0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x == 0.0:
        return 0.0
    if x < n + 1.0:
        ln_p = _lower_gamma_series_ln(n, x)
        q = -math.expm1(ln_p)
        if q <= 0.0:
            # P rounded to 1 from below; only reachable for extreme shapes.
            return float("-inf")
        return min(math.log10(q), 0.0)
    return min(_upper_gamma_cf_ln(n, x) / LN10, 0.0)


def kgw_z(greens: int, total: int, gamma: float) -> float:
    """Green-token z-score: (greens - gamma*total) / sqrt(total*gamma*(1-gamma))."""
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= greens <= total:
        raise ValueError(f"greens must lie in [0, total], got {greens}/{total}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return (greens - gamma * total) / math.sqrt(total * gamma * (1.0 - gamma))


def ip_z(accuracy: float, n: int, boundary: float = 0.05) -> tuple[float, float]:
    """Z-score and log10 p for classification accuracy against chance + boundary.

    The null rate is p = 0.5 + boundary; Z = (accuracy - p) / sqrt(p(1-p)/n).
    Returns (z, log10 of the one-sided upper-tail p-value).
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
    if not 0.0 <= boundary < 0.5:
        raise ValueError(f"boundary must lie in [0, 0.5), got {boundary}")
    p = 0.5 + boundary
    z = (accuracy - p) / math.sqrt(p * (1.0 - p) / n)
    return z, log10_normal_upper(z)
