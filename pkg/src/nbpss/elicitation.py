"""Hyperprior elicitation from sup-norm probability statements.

The slab scale b and spike factor r are chosen so that the prior on one
effect block satisfies two statements about S = sup over the observed design
of |f(nu)|:

    P(S <= c | included) = alpha        (solve_b)
    P(S <= c | excluded) = 1 - alpha    (solve_r)

with small alpha and c: an included effect should rarely stay below c
everywhere, an excluded one should rarely escape above it.  The sup-norm
distribution has no closed form, so both probabilities are estimated by
Monte Carlo and the scales are found by bisection on the log scale with
common random numbers, which makes the solver deterministic for a fixed
seed and nearly free per iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import EffectBlock, penalized_eigenbasis

__all__ = [
    "ElicitationTarget",
    "simulate_sup_norm",
    "solve_b",
    "solve_r",
    "elicit_block",
]

PROB_TOL = 0.005
LOG_B_BRACKET = (-30.0, 30.0)
R_FLOOR = 1e-12


@dataclass(frozen=True)
class ElicitationTarget:
    """Sup-norm statement to solve for: block, level alpha, threshold c."""

    block: EffectBlock
    alpha: float = 0.1
    c: float = 0.1
    mc_draws: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if self.c <= 0.0:
            raise ValueError("c must be positive")
        if self.mc_draws < 1000:
            raise ValueError("mc_draws must be at least 1000")


def _sup_norm_squares(block: EffectBlock, a: float, draws: int, seed) -> np.ndarray:
    """Common-random-number core of the sup-norm distribution.

    One draw of S given effective scale s2 factors as sqrt(s2 * W) with
    W = G * Z^2 * M^2, where G is an inverse gamma(a, 1) variate (the unit
    psi^2), Z the standard normal behind tau, and M = max |B beta_tilde|
    with beta_tilde drawn in the penalized eigen-subspace so the constraint
    holds exactly.  Returns the vector W; it is computed once per solve and
    reused by every bisection iterate.
    """
    if a <= 0:
        raise ValueError("shape a must be positive")
    if draws < 1000:
        raise ValueError("draws must be at least 1000")
    _, vals, vecs = penalized_eigenbasis(block.penalty)
    if vals.size == 0:
        raise ValueError(f"block '{block.label}' has no penalized subspace to elicit")
    rng = np.random.default_rng(seed)
    g = 1.0 / rng.gamma(a, 1.0, size=draws)
    z = rng.standard_normal(draws)
    coef = rng.standard_normal((vals.size, draws)) / np.sqrt(vals)[:, None]
    f = block.basis @ (vecs @ coef)
    m = np.max(np.abs(np.asarray(f)), axis=0)
    return g * z * z * m * m


def simulate_sup_norm(
    block: EffectBlock,
    a: float = 5.0,
    b: float = 50.0,
    delta: int = 1,
    r: float = 1.0,
    draws: int = 10_000,
    seed=0,
) -> np.ndarray:
    """Draw the prior sup-norm sample of one block, sorted ascending.

    ``delta`` picks the mixture branch: 1 uses scale b (slab), 0 uses r * b
    (spike).  ``r`` is ignored when delta = 1, mirroring the hierarchy where
    inclusion removes the spike factor.
    """
    if delta not in (0, 1):
        raise ValueError("delta must be 0 or 1")
    if b <= 0:
        raise ValueError("scale b must be positive")
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    w = _sup_norm_squares(block, a, draws, seed)
    eff = b if delta == 1 else r * b
    return np.sort(np.sqrt(eff * w))


def _bisect_log_scale(w, c, prob, lo, hi, what):
    """Find scale with mean(W <= c^2/scale) = prob by bisection on log scale.

    The empirical probability is monotone decreasing in the scale and takes
    steps of 1/draws, far below PROB_TOL, so the loop always terminates well
    inside the target band unless the bracket excludes it.
    """
    c2 = c * c

    def phat(log_scale):
        return float(np.mean(w <= c2 * np.exp(-log_scale)))

    if phat(lo) < prob or phat(hi) > prob:
        raise ValueError(
            f"no {what} bracket: P estimates at the bracket ends are "
            f"{phat(lo):.4f} and {phat(hi):.4f}, target {prob:.4f}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p = phat(mid)
        if abs(p - prob) <= PROB_TOL:
            return float(np.exp(mid))
        if p > prob:
            lo = mid
        else:
            hi = mid
    raise ValueError(f"{what} bisection did not reach tolerance {PROB_TOL}")


def solve_b(target: ElicitationTarget, a: float = 5.0) -> float:
    """Slab scale b with P(sup-norm <= c | included) = alpha.

    Independent of r: conditioning on inclusion removes the spike factor
    from the hierarchy.
    """
    w = _sup_norm_squares(target.block, a, target.mc_draws, target.seed)
    lo, hi = LOG_B_BRACKET
    return _bisect_log_scale(w, target.c, target.alpha, lo, hi, "slab scale")


def solve_r(target: ElicitationTarget, a: float, b_solved: float) -> float:
    """Spike factor r with P(sup-norm <= c | excluded) = 1 - alpha.

    Reuses the random stream of :func:`solve_b`; the excluded branch scales
    the same draws by r * b_solved.
    """
    if b_solved <= 0:
        raise ValueError("b_solved must be positive")
    w = _sup_norm_squares(target.block, a, target.mc_draws, target.seed) * b_solved
    r = _bisect_log_scale(
        w, target.c, 1.0 - target.alpha, np.log(R_FLOOR), 0.0, "spike factor"
    )
    if not r < 1.0:
        raise ValueError("spike factor did not resolve below 1")
    return r


def elicit_block(
    block: EffectBlock,
    alpha: float = 0.1,
    c: float = 0.1,
    a: float = 5.0,
    draws: int = 10_000,
    seed=0,
) -> tuple[float, float]:
    """Solve both sup-norm statements for one block; returns (b, r)."""
    target = ElicitationTarget(block=block, alpha=alpha, c=c, mc_draws=draws, seed=seed)
    b = solve_b(target, a)
    r = solve_r(target, a, b)
    return b, r
