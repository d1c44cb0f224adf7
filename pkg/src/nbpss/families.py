"""Response families for distributional regression.

Each family exposes, per distribution parameter k, the log-density, the
gradient of the log-density with respect to the k-th predictor, the observed
negative second derivative (``curvature``), and a stabilized positive weight
used by the iteratively weighted least squares proposal. Weights prefer the
expected curvature (Fisher information) when it differs from the observed
one, and are floored at ``WEIGHT_FLOOR`` either way.

Predictors enter through fixed response functions: identity for means, exp
for variance/scale parameters, logistic for probabilities, and
``eta / sqrt(1 + eta^2)`` for a correlation restricted to (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "LikelihoodTerms",
    "Family",
    "get_family",
    "family_names",
    "eval_terms",
    "apply_link",
    "invert_link",
    "logscore",
    "WEIGHT_FLOOR",
]

WEIGHT_FLOOR = 1e-6


@dataclass
class LikelihoodTerms:
    """Per-observation likelihood pieces for one predictor index.

    ``curvature`` is the raw observed negative second derivative (may be
    negative for non-log-concave cases); ``weight`` is the stabilized
    positive quantity the sampler consumes.
    """

    logdens: np.ndarray
    grad: np.ndarray
    curvature: np.ndarray
    weight: np.ndarray


def _as_eta(eta: np.ndarray, n_params: int) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 1:
        eta = eta.reshape(-1, 1)
    if eta.shape[1] != n_params:
        raise ValueError(f"eta must have {n_params} columns, got {eta.shape[1]}")
    return eta


def _log_sigmoid(v: np.ndarray) -> np.ndarray:
    # log(1/(1+exp(-v))) without overflow
    return -np.logaddexp(0.0, -v)


class Family:
    """Base class; concrete families fill in the per-parameter pieces."""

    name: str = ""
    n_params: int = 1
    param_names: tuple[str, ...] = ()
    links: tuple[str, ...] = ()

    def logdens(self, y, eta, aux=None) -> np.ndarray:
        raise NotImplementedError

    def grad(self, y, eta, which, aux=None) -> np.ndarray:
        raise NotImplementedError

    def curvature(self, y, eta, which, aux=None) -> np.ndarray:
        raise NotImplementedError

    def fisher(self, y, eta, which, aux=None) -> np.ndarray:
        """Expected curvature; defaults to the observed one."""
        return self.curvature(y, eta, which, aux=aux)

    def weight(self, y, eta, which, aux=None) -> np.ndarray:
        return np.maximum(self.fisher(y, eta, which, aux=aux), WEIGHT_FLOOR)

    def check_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError(f"{self.name}: response contains non-finite values")
        return y

    def initial_intercepts(self, y) -> np.ndarray:
        """Crude per-parameter starting values on the predictor scale."""
        raise NotImplementedError

    # response functions (inverse links), one per parameter
    def invlink(self, which: int, eta_k: np.ndarray):
        kind = self.links[which]
        eta_k = np.asarray(eta_k, dtype=float)
        if kind == "identity":
            return eta_k
        if kind == "log":
            return np.exp(eta_k)
        if kind == "logit":
            return special.expit(eta_k)
        if kind == "sqrt1p":
            return eta_k / np.sqrt(1.0 + eta_k**2)
        raise ValueError(f"unknown link {kind!r}")

    def linkfun(self, which: int, theta_k: np.ndarray):
        kind = self.links[which]
        theta_k = np.asarray(theta_k, dtype=float)
        if kind == "identity":
            return theta_k
        if kind == "log":
            return np.log(theta_k)
        if kind == "logit":
            return special.logit(theta_k)
        if kind == "sqrt1p":
            return theta_k / np.sqrt(1.0 - theta_k**2)
        raise ValueError(f"unknown link {kind!r}")


class Gaussian(Family):
    """Homoscedastic normal; the error variance is carried as auxiliary
    state (conjugate update in the sampler) rather than a predictor."""

    name = "gaussian"
    n_params = 1
    param_names = ("mu",)
    links = ("identity",)

    @staticmethod
    def _sigma2(aux) -> float:
        if aux is None:
            return 1.0
        return float(aux.get("sigma2", 1.0))

    def logdens(self, y, eta, aux=None):
        eta = _as_eta(eta, 1)
        s2 = self._sigma2(aux)
        r = np.asarray(y, dtype=float) - eta[:, 0]
        return -0.5 * np.log(2.0 * np.pi * s2) - 0.5 * r * r / s2

    def grad(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 1)
        s2 = self._sigma2(aux)
        return (np.asarray(y, dtype=float) - eta[:, 0]) / s2

    def curvature(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 1)
        return np.full(eta.shape[0], 1.0 / self._sigma2(aux))

    def initial_intercepts(self, y):
        return np.array([float(np.mean(y))])


class GaussianLocScale(Family):
    """Normal with predictors on the mean and the log-variance."""

    name = "gaussian_locscale"
    n_params = 2
    param_names = ("mu", "sigma2")
    links = ("identity", "log")

    def logdens(self, y, eta, aux=None):
        eta = _as_eta(eta, 2)
        r = np.asarray(y, dtype=float) - eta[:, 0]
        return -0.5 * np.log(2.0 * np.pi) - 0.5 * eta[:, 1] - 0.5 * r * r * np.exp(-eta[:, 1])

    def grad(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 2)
        r = np.asarray(y, dtype=float) - eta[:, 0]
        inv_v = np.exp(-eta[:, 1])
        if which == 0:
            return r * inv_v
        return -0.5 + 0.5 * r * r * inv_v

    def curvature(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 2)
        r = np.asarray(y, dtype=float) - eta[:, 0]
        inv_v = np.exp(-eta[:, 1])
        if which == 0:
            return inv_v
        return 0.5 * r * r * inv_v

    def fisher(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 2)
        if which == 0:
            return np.exp(-eta[:, 1])
        return np.full(eta.shape[0], 0.5)

    def initial_intercepts(self, y):
        v = max(float(np.var(y)), 1e-8)
        return np.array([float(np.mean(y)), np.log(v)])


class Poisson(Family):
    name = "poisson"
    n_params = 1
    param_names = ("lambda",)
    links = ("log",)

    def check_response(self, y):
        y = super().check_response(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("poisson: response must be nonnegative integers")
        return y

    def logdens(self, y, eta, aux=None):
        eta = _as_eta(eta, 1)
        y = np.asarray(y, dtype=float)
        with np.errstate(over="ignore"):
            lam = np.exp(eta[:, 0])
        return y * eta[:, 0] - lam - special.gammaln(y + 1.0)

    def grad(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 1)
        with np.errstate(over="ignore"):
            return np.asarray(y, dtype=float) - np.exp(eta[:, 0])

    def curvature(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 1)
        with np.errstate(over="ignore"):
            return np.exp(eta[:, 0])

    def initial_intercepts(self, y):
        return np.array([np.log(max(float(np.mean(y)), 0.1))])


class ZeroInflatedPoisson(Family):
    """Poisson mixed with a point mass at zero.

    ``pi`` (logit link) is the excess-zero probability, ``lambda`` (log link)
    the count-process rate. The zero-mass log-density is evaluated with
    log-sum-exp; the y = 0 curvature can be negative in ``lambda`` for large
    rates, so the weight falls back to the (always positive) expected
    curvature.
    """

    name = "zip"
    n_params = 2
    param_names = ("lambda", "pi")
    links = ("log", "logit")

    def check_response(self, y):
        y = super().check_response(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("zip: response must be nonnegative integers")
        return y

    def logdens(self, y, eta, aux=None):
        eta = _as_eta(eta, 2)
        y = np.asarray(y, dtype=float)
        eta_l, eta_p = eta[:, 0], eta[:, 1]
        with np.errstate(over="ignore"):
            lam = np.exp(eta_l)
        log_pi = _log_sigmoid(eta_p)
        log_1mpi = _log_sigmoid(-eta_p)
        zero = np.logaddexp(log_pi, log_1mpi - lam)
        pos = log_1mpi + y * eta_l - lam - special.gammaln(y + 1.0)
        return np.where(y == 0, zero, pos)

    @staticmethod
    def _zero_pieces(eta_l, eta_p):
        """Quantities shared by the y = 0 derivatives.

        w0 = P(count process | y = 0, parameters): the conditional weight of
        the Poisson branch given an observed zero.
        """
        with np.errstate(over="ignore"):
            lam = np.exp(eta_l)
        log_pi = _log_sigmoid(eta_p)
        log_1mpi = _log_sigmoid(-eta_p)
        log_a = np.logaddexp(log_pi, log_1mpi - lam)
        w0 = np.exp(log_1mpi - lam - log_a)
        pi_over_a = np.exp(log_pi - log_a)
        return lam, w0, pi_over_a, log_a

    def grad(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 2)
        y = np.asarray(y, dtype=float)
        eta_l, eta_p = eta[:, 0], eta[:, 1]
        lam, w0, _, _ = self._zero_pieces(eta_l, eta_p)
        pi = special.expit(eta_p)
        if which == 0:
            return np.where(y == 0, -lam * w0, y - lam)
        sp = pi * (1.0 - pi)
        with np.errstate(over="ignore"):
            one_minus_q = -np.expm1(-lam)
        a = pi + (1.0 - pi) * np.exp(-lam)
        grad0 = sp * one_minus_q / a
        return np.where(y == 0, grad0, -pi)

    def curvature(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 2)
        y = np.asarray(y, dtype=float)
        eta_l, eta_p = eta[:, 0], eta[:, 1]
        lam, w0, _, _ = self._zero_pieces(eta_l, eta_p)
        pi = special.expit(eta_p)
        if which == 0:
            zero = lam * w0 - lam * lam * w0 * (1.0 - w0)
            return np.where(y == 0, zero, lam)
        sp = pi * (1.0 - pi)
        with np.errstate(over="ignore"):
            one_minus_q = -np.expm1(-lam)
        a = pi + (1.0 - pi) * np.exp(-lam)
        zero = (one_minus_q * sp / a) ** 2 - one_minus_q * sp * (1.0 - 2.0 * pi) / a
        return np.where(y == 0, zero, sp)

    def fisher(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 2)
        eta_l, eta_p = eta[:, 0], eta[:, 1]
        lam, w0, _, _ = self._zero_pieces(eta_l, eta_p)
        pi = special.expit(eta_p)
        a = pi + (1.0 - pi) * np.exp(-lam)
        if which == 0:
            zero_curv = lam * w0 - lam * lam * w0 * (1.0 - w0)
            return a * zero_curv + (1.0 - a) * lam
        sp = pi * (1.0 - pi)
        with np.errstate(over="ignore"):
            one_minus_q = -np.expm1(-lam)
        zero_curv = (one_minus_q * sp / a) ** 2 - one_minus_q * sp * (1.0 - 2.0 * pi) / a
        return a * zero_curv + (1.0 - a) * sp

    def initial_intercepts(self, y):
        y = np.asarray(y, dtype=float)
        lam0 = max(float(np.mean(y[y > 0])) if np.any(y > 0) else 0.5, 0.2)
        p_zero = float(np.mean(y == 0))
        excess = np.clip(p_zero - np.exp(-lam0), 0.02, 0.9)
        return np.array([np.log(lam0), special.logit(excess)])


class BivariateNormal(Family):
    """Two-dimensional normal with five predictors: both means (identity),
    both scales (exp), and the correlation mapped through
    ``rho = eta / sqrt(1 + eta^2)``."""

    name = "bivariate_normal"
    n_params = 5
    param_names = ("mu1", "mu2", "sigma1", "sigma2", "rho")
    links = ("identity", "identity", "log", "log", "sqrt1p")

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("bivariate_normal: response must have two columns")
        if not np.all(np.isfinite(y)):
            raise ValueError("bivariate_normal: response contains non-finite values")
        return y

    @staticmethod
    def _pieces(y, eta):
        y = np.asarray(y, dtype=float)
        with np.errstate(over="ignore"):
            s1 = np.exp(eta[:, 2])
            s2 = np.exp(eta[:, 3])
        rho = eta[:, 4] / np.sqrt(1.0 + eta[:, 4] ** 2)
        z1 = (y[:, 0] - eta[:, 0]) / s1
        z2 = (y[:, 1] - eta[:, 1]) / s2
        w = 1.0 - rho * rho
        q = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2
        return s1, s2, rho, z1, z2, w, q

    def logdens(self, y, eta, aux=None):
        eta = _as_eta(eta, 5)
        _, _, _, _, _, w, q = self._pieces(y, eta)
        return -np.log(2.0 * np.pi) - eta[:, 2] - eta[:, 3] - 0.5 * np.log(w) - 0.5 * q / w

    def grad(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 5)
        s1, s2, rho, z1, z2, w, q = self._pieces(y, eta)
        if which == 0:
            return (z1 - rho * z2) / (s1 * w)
        if which == 1:
            return (z2 - rho * z1) / (s2 * w)
        if which == 2:
            return -1.0 + (z1 * z1 - rho * z1 * z2) / w
        if which == 3:
            return -1.0 + (z2 * z2 - rho * z1 * z2) / w
        dldr = rho / w + z1 * z2 / w - rho * q / (w * w)
        gp = (1.0 + eta[:, 4] ** 2) ** -1.5
        return gp * dldr

    def curvature(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 5)
        s1, s2, rho, z1, z2, w, q = self._pieces(y, eta)
        if which == 0:
            return 1.0 / (s1 * s1 * w)
        if which == 1:
            return 1.0 / (s2 * s2 * w)
        if which == 2:
            return (2.0 * z1 * z1 - rho * z1 * z2) / w
        if which == 3:
            return (2.0 * z2 * z2 - rho * z1 * z2) / w
        e5 = eta[:, 4]
        gp = (1.0 + e5 * e5) ** -1.5
        gpp = -3.0 * e5 * (1.0 + e5 * e5) ** -2.5
        dldr = rho / w + z1 * z2 / w - rho * q / (w * w)
        d2ldr2 = (
            (1.0 + rho * rho) / (w * w)
            + 4.0 * rho * z1 * z2 / (w * w)
            - q / (w * w)
            - 4.0 * rho * rho * q / (w * w * w)
        )
        return -(gpp * dldr + gp * gp * d2ldr2)

    def fisher(self, y, eta, which, aux=None):
        eta = _as_eta(eta, 5)
        s1, s2, rho, _, _, w, _ = self._pieces(y, eta)
        if which == 0:
            return 1.0 / (s1 * s1 * w)
        if which == 1:
            return 1.0 / (s2 * s2 * w)
        if which in (2, 3):
            return (2.0 - rho * rho) / w
        gp = (1.0 + eta[:, 4] ** 2) ** -1.5
        return gp * gp * (1.0 + rho * rho) / (w * w)

    def initial_intercepts(self, y):
        y = np.asarray(y, dtype=float)
        m = y.mean(axis=0)
        s = np.maximum(y.std(axis=0, ddof=1), 1e-4)
        r = float(np.clip(np.corrcoef(y.T)[0, 1], -0.95, 0.95))
        return np.array([m[0], m[1], np.log(s[0]), np.log(s[1]), r / np.sqrt(1.0 - r * r)])


_FAMILIES = {
    f.name: f
    for f in (Gaussian(), GaussianLocScale(), Poisson(), ZeroInflatedPoisson(), BivariateNormal())
}


def family_names() -> tuple[str, ...]:
    return tuple(sorted(_FAMILIES))


def get_family(name: str) -> Family:
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ValueError(
            f"unknown family {name!r}; available: {', '.join(family_names())}"
        ) from None


def eval_terms(family: Family, y, eta, which: int, aux=None) -> LikelihoodTerms:
    """Evaluate per-observation likelihood pieces for predictor ``which``."""
    if not 0 <= which < family.n_params:
        raise ValueError(f"{family.name}: parameter index {which} out of range")
    return LikelihoodTerms(
        logdens=family.logdens(y, eta, aux=aux),
        grad=family.grad(y, eta, which, aux=aux),
        curvature=family.curvature(y, eta, which, aux=aux),
        weight=family.weight(y, eta, which, aux=aux),
    )


def apply_link(family: Family, which: int, eta_k) -> np.ndarray:
    """Map the ``which``-th predictor to its distribution parameter."""
    return family.invlink(which, eta_k)


def invert_link(family: Family, which: int, theta_k) -> np.ndarray:
    """Map a distribution parameter back to the predictor scale."""
    return family.linkfun(which, theta_k)


def logscore(family: Family, y, eta, aux=None) -> float:
    """Total log-density of ``y`` under predictor values ``eta``."""
    return float(np.sum(family.logdens(y, eta, aux=aux)))
