"""Marginal prior densities for the spike-and-slab scale hierarchy.

The effect scale tau^2 carries, conditionally on the inclusion indicator, a
Ga(1/2, 1/(2 r(delta) psi^2)) distribution with psi^2 ~ IG(a, b) and
delta ~ Bernoulli(omega), omega ~ Beta(a0, b0). Marginally tau^2 is a
two-component scaled beta prime mixture, the signed root tau is a mixture of
two scaled t distributions with 2a degrees of freedom, and the effect vector
beta = tau * beta_tilde has a marginal density obtained by one-dimensional
quadrature over tau. That marginal has an infinite spike at zero and a
re-descending score, which is what drives the selection behaviour.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .design import ConstraintMatrix, PenaltyMatrix

__all__ = [
    "NbpssHyper",
    "NbpssState",
    "QuadratureError",
    "scaled_beta_prime_logpdf",
    "marginal_tau2_logpdf",
    "tau_logpdf",
    "marginal_beta_logpdf",
    "score_beta",
]

# quadrature controls: relative tolerance demanded of each panel, and the
# scaled-t tail mass allowed beyond the finite upper limit
QUAD_REL_TOL = 1e-8
TAIL_MASS = 1e-12


class QuadratureError(RuntimeError):
    """Raised when the tau-quadrature cannot reach the requested tolerance."""


@dataclass(frozen=True)
class NbpssHyper:
    """Hyperparameters of the scale hierarchy.

    a, b : inverse gamma shape/scale of psi^2
    r : spike shrink factor in (0, 1]
    a0, b0 : Beta prior counts of the inclusion probability omega
    """

    a: float = 5.0
    b: float = 50.0
    r: float = 0.005
    a0: float = 1.0
    b0: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("a0 and b0 must be positive")

    @property
    def slab_weight(self) -> float:
        return self.a0 / (self.a0 + self.b0)

    @property
    def slab_scale(self) -> float:
        """t-scale of tau given delta = 1."""
        return float(np.sqrt(self.b / self.a))

    @property
    def spike_scale(self) -> float:
        """t-scale of tau given delta = 0."""
        return float(np.sqrt(self.r * self.b / self.a))

    @property
    def df(self) -> float:
        return 2.0 * self.a

    def shrink(self, delta: int) -> float:
        """Scale deflation factor r(delta): r in the spike, 1 in the slab."""
        return 1.0 if delta else self.r


@dataclass
class NbpssState:
    """Per-block latent state of the scale hierarchy.

    tau2 is the squared block importance, psi2 the hyper-variance, delta the
    inclusion indicator, and omega the inclusion probability. Blocks that
    share one omega carry a common ``omega_group`` key and are updated
    together once per sweep.
    """

    tau2: float = 1.0
    psi2: float = 1.0
    delta: int = 1
    omega: float = 0.5
    omega_group: str | None = None

    def __post_init__(self):
        if self.tau2 < 0:
            raise ValueError("tau2 must be nonnegative")
        if self.psi2 <= 0:
            raise ValueError("psi2 must be positive")
        if self.delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie strictly between 0 and 1")


def scaled_beta_prime_logpdf(x, shape1: float, shape2: float, scale: float):
    """Log-density of ``scale * X/(1-X)`` with ``X ~ Beta(shape1, shape2)``."""
    if shape1 <= 0 or shape2 <= 0 or scale <= 0:
        raise ValueError("shape and scale parameters must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        z = x / scale
        out = np.where(
            x > 0,
            (shape1 - 1.0) * np.log(np.where(x > 0, z, 1.0))
            - (shape1 + shape2) * np.log1p(z)
            - special.betaln(shape1, shape2)
            - np.log(scale),
            -np.inf,
        )
    return out if out.ndim else float(out)


def marginal_tau2_logpdf(tau2, hyper: NbpssHyper):
    """Marginal log-density of tau^2: mixture of two scaled beta primes with
    shapes (1/2, a) and scales 2b (slab) and 2rb (spike)."""
    tau2 = np.asarray(tau2, dtype=float)
    w = hyper.slab_weight
    slab = scaled_beta_prime_logpdf(tau2, 0.5, hyper.a, 2.0 * hyper.b)
    spike = scaled_beta_prime_logpdf(tau2, 0.5, hyper.a, 2.0 * hyper.r * hyper.b)
    out = np.logaddexp(np.log(w) + slab, np.log1p(-w) + spike)
    return out if out.ndim else float(out)


def _t_logpdf(x, df: float, scale: float):
    z = x / scale
    return (
        special.gammaln((df + 1.0) / 2.0)
        - special.gammaln(df / 2.0)
        - 0.5 * np.log(df * np.pi)
        - np.log(scale)
        - 0.5 * (df + 1.0) * np.log1p(z * z / df)
    )


def tau_logpdf(tau, hyper: NbpssHyper):
    """Marginal log-density of the signed root tau: scaled-t mixture with
    2a degrees of freedom and scales sqrt(b/a), sqrt(rb/a)."""
    tau = np.asarray(tau, dtype=float)
    w = hyper.slab_weight
    out = np.logaddexp(
        np.log(w) + _t_logpdf(tau, hyper.df, hyper.slab_scale),
        np.log1p(-w) + _t_logpdf(tau, hyper.df, hyper.spike_scale),
    )
    return out if out.ndim else float(out)


def _tau_pdf(tau, hyper: NbpssHyper):
    return np.exp(tau_logpdf(tau, hyper))


def _scale_integrals(s: float, hyper: NbpssHyper, need_score: bool):
    """Integrals I = ∫ p(tau) exp(-s/(2 tau^2)) |tau|^-1 dtau and, when
    requested, J = same with an extra tau^-2 factor.

    The positive half-line is split at eps: below, the substitution
    tau = exp(u) absorbs the integrable singularity; above, adaptive
    Gauss-Kronrod runs to a finite T carrying all but < TAIL_MASS of the
    scaled-t mass (enlarged with s so the truncated tail stays negligible
    relative to the result).
    """
    if s < 0:
        raise ValueError("quadratic form must be nonnegative")
    if s == 0.0:
        return np.inf, np.inf if need_score else None

    df = hyper.df
    t_cut = float(stats.t.isf(TAIL_MASS / 2.0, df))
    t_upper = max(hyper.slab_scale * t_cut, 50.0 * np.sqrt(s))
    eps = min(hyper.spike_scale, np.sqrt(s), 1.0)

    def run(power: int) -> float:
        # tau-region integrand: p(tau) exp(-s/(2 tau^2)) tau^-power
        def f_tau(t):
            return np.exp(
                tau_logpdf(t, hyper) - 0.5 * s / (t * t) - power * np.log(t)
            )

        # u-region integrand after tau = exp(u), evaluated in log space so the
        # double-exponential cutoff cannot produce 0 * inf
        def f_u(u):
            with np.errstate(over="ignore"):
                log_val = (
                    tau_logpdf(np.exp(u), hyper)
                    - 0.5 * s * np.exp(-2.0 * u)
                    + (1.0 - power) * u
                )
            return np.exp(log_val)

        u_hi = np.log(eps)
        # the exponent -s e^{-2u}/2 + (1-power) u peaks near this point
        u_peak = 0.5 * np.log(s / max(power + 1.0, 2.0))
        pieces = []
        # accuracy is certified by the explicit error check below, so scipy's
        # advisory roundoff warnings carry no extra information here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            if u_peak < u_hi - 1e-12:
                pieces.append(integrate.quad(f_u, -np.inf, u_peak, epsabs=0.0, epsrel=1e-10, limit=300))
                pieces.append(integrate.quad(f_u, u_peak, u_hi, epsabs=0.0, epsrel=1e-10, limit=300))
            else:
                pieces.append(integrate.quad(f_u, -np.inf, u_hi, epsabs=0.0, epsrel=1e-10, limit=300))
            pieces.append(
                integrate.quad(
                    f_tau, eps, t_upper, epsabs=0.0, epsrel=1e-10, limit=300,
                    points=[min(np.sqrt(s), t_upper * 0.5), min(hyper.slab_scale, t_upper * 0.5)],
                )
            )
        total = 2.0 * sum(v for v, _ in pieces)
        err = 2.0 * sum(e for _, e in pieces)
        if not np.isfinite(total) or total < 0:
            raise QuadratureError(f"scale integral failed (s={s:g}, power={power})")
        if err > QUAD_REL_TOL * max(total, 1e-290):
            raise QuadratureError(
                f"scale integral did not converge to relative tolerance "
                f"{QUAD_REL_TOL:g} (s={s:g}, power={power}, err={err:g}, value={total:g})"
            )
        return total

    i_val = run(1)
    j_val = run(3) if need_score else None
    return i_val, j_val


def _constrained_subspace(penalty: PenaltyMatrix, constraint: ConstraintMatrix):
    """Orthonormal basis of the constraint null space and the restricted
    penalty; the restriction must be positive definite for the conditional
    Gaussian of beta given tau to be proper."""
    d = penalty.dim
    if constraint.is_empty:
        z = np.eye(d)
    else:
        a = constraint.rows
        _, sv, vt = np.linalg.svd(a, full_matrices=True)
        n_keep = int(np.sum(sv > 1e-12))
        z = vt[n_keep:].T
    m = z.T @ (penalty.matrix @ z)
    m = np.atleast_2d(np.asarray(m))
    vals = np.linalg.eigvalsh(m)
    if m.shape[0] == 0 or vals[0] <= 1e-12 * max(vals[-1], 1.0):
        raise ValueError(
            "penalty is singular on the constrained subspace; the constraint "
            "must remove the full null space"
        )
    sign, logdet = np.linalg.slogdet(m)
    return z, float(logdet), m.shape[0]


def _check_beta(beta, penalty, constraint):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (penalty.dim,):
        raise ValueError(f"beta must have length {penalty.dim}")
    if constraint.violation(beta) > 1e-8:
        raise ValueError("beta violates the block constraint beyond 1e-8")
    return beta


def marginal_beta_logpdf(
    beta, penalty: PenaltyMatrix, constraint: ConstraintMatrix, hyper: NbpssHyper
) -> float:
    """Marginal log-density of an effect vector under the scale hierarchy.

    Computed as ``log ∫ p(tau) p_gauss(beta / tau) |tau|^-1 dtau`` where
    ``p_gauss`` is the constrained Gaussian with precision ``K`` on the
    subspace. Diverges (+inf) at beta = 0: the marginal has an infinite
    spike at the origin.

    Raises
    ------
    ValueError
        If beta has the wrong length or violates the constraint.
    QuadratureError
        If the adaptive quadrature cannot certify 1e-8 relative accuracy.
    """
    beta = _check_beta(beta, penalty, constraint)
    _, logdet, kdim = _constrained_subspace(penalty, constraint)
    s = penalty.quad_form(beta)
    i_val, _ = _scale_integrals(s, hyper, need_score=False)
    if np.isinf(i_val):
        return np.inf
    if i_val <= 0.0:
        raise QuadratureError("marginal density underflowed to zero")
    log_c = -0.5 * kdim * np.log(2.0 * np.pi) + 0.5 * logdet
    return float(log_c + np.log(i_val))


def score_beta(
    beta, penalty: PenaltyMatrix, constraint: ConstraintMatrix, hyper: NbpssHyper
) -> np.ndarray:
    """Gradient of :func:`marginal_beta_logpdf` in beta.

    Equals ``-(K beta) * J/I`` with ``I, J`` the scale integrals with
    Jacobian powers 1 and 3; the norm re-descends: far from the origin the
    pull back toward zero fades instead of growing.
    """
    beta = _check_beta(beta, penalty, constraint)
    _constrained_subspace(penalty, constraint)
    s = penalty.quad_form(beta)
    if s == 0.0:
        raise ValueError("score is undefined at beta = 0 (infinite spike)")
    i_val, j_val = _scale_integrals(s, hyper, need_score=True)
    return -np.asarray(penalty.matrix @ beta) * (j_val / i_val)
