"""Generalized inverse Gaussian random variates.

Parameterization: ``GIG(p, q, c)`` has density proportional to
``x**(p-1) * exp(-(q*x + c/x)/2)`` on ``x > 0``. This is the exact shape of
the full conditional of a selected block's scale, with ``p`` driven by the
penalty rank, ``q`` by the spike/slab scale, and ``c`` by the penalty
quadratic form.

Sampling uses the ratio-of-uniforms generator behind
``scipy.stats.geninvgauss`` after reducing to ``p >= 0`` via the reciprocal
identity ``X ~ GIG(p, q, c)  <=>  1/X ~ GIG(-p, c, q)``. The boundary case
``c = 0`` (p > 0 required) degenerates to a gamma distribution.
"""

from __future__ import annotations

import numpy as np
from scipy import special
from scipy.stats import geninvgauss

__all__ = ["gig_sample", "gig_logpdf", "gig_mean"]


def _validate(p: float, q: float, c: float) -> None:
    if not (np.isfinite(p) and np.isfinite(q) and np.isfinite(c)):
        raise ValueError("GIG parameters must be finite")
    if q < 0 or c < 0:
        raise ValueError("GIG requires q >= 0 and c >= 0")
    if c == 0 and p <= 0:
        raise ValueError("GIG with c = 0 requires p > 0")
    if q == 0 and p >= 0:
        raise ValueError("GIG with q = 0 requires p < 0")


def gig_sample(p: float, q: float, c: float, rng: np.random.Generator, size=None):
    """Draw from ``GIG(p, q, c)``.

    Parameters
    ----------
    p : float
        Order parameter; any real value.
    q : float
        Coefficient of ``x`` in the exponent (>= 0).
    c : float
        Coefficient of ``1/x`` in the exponent (>= 0).
    rng : numpy.random.Generator
    size : int or tuple, optional
        When omitted a scalar float is returned.

    Returns
    -------
    float or ndarray
    """
    _validate(p, q, c)
    if p < 0:
        inv = gig_sample(-p, c, q, rng, size=size)
        return 1.0 / inv
    if c == 0:
        # density x**(p-1) exp(-q x / 2): gamma with shape p, scale 2/q
        draw = rng.gamma(shape=p, scale=2.0 / q, size=size)
        return float(draw) if size is None else draw
    omega = np.sqrt(q * c)
    scale = np.sqrt(c / q)
    draw = geninvgauss.rvs(p, omega, scale=scale, size=size, random_state=rng)
    return float(draw) if size is None else draw


def gig_logpdf(x, p: float, q: float, c: float):
    """Normalized log-density of ``GIG(p, q, c)`` (requires q > 0 and c > 0).

    The normalizing constant uses exponentially scaled Bessel functions so
    large ``|p|`` stays finite.
    """
    _validate(p, q, c)
    if q == 0 or c == 0:
        raise ValueError("normalized logpdf requires q > 0 and c > 0")
    x = np.asarray(x, dtype=float)
    omega = np.sqrt(q * c)
    # log K_p(omega) = log kve(p, omega) - omega
    log_norm = (p / 2.0) * (np.log(q) - np.log(c)) - np.log(2.0) - (
        np.log(special.kve(abs(p), omega)) - omega
    )
    out = np.where(
        x > 0,
        log_norm + (p - 1.0) * np.log(np.where(x > 0, x, 1.0)) - 0.5 * (q * x + c / np.where(x > 0, x, 1.0)),
        -np.inf,
    )
    return out if out.ndim else float(out)


def gig_mean(p: float, q: float, c: float) -> float:
    """First moment via the Bessel ratio (q > 0, c > 0)."""
    _validate(p, q, c)
    if q == 0 or c == 0:
        raise ValueError("moment formula requires q > 0 and c > 0")
    omega = np.sqrt(q * c)
    ratio = special.kve(p + 1, omega) / special.kve(p, omega)
    return float(np.sqrt(c / q) * ratio)
