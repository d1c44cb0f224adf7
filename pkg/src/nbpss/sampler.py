"""MCMC engine.

Metropolis-within-Gibbs over the assembled model: each coefficient block is
proposed from a weighted-least-squares Gaussian approximation of its full
conditional under the block's linear constraint, and accepted with the
exact Metropolis-Hastings ratio (forward and reverse proposal densities
both evaluated). Scale parameters are updated by exact Gibbs draws:
generalized inverse Gaussian for selectable block scales, inverse gamma
for plain smoothing variances and the Gaussian error variance, Bernoulli
and Beta for the inclusion machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .design import ConstraintMatrix, penalized_eigenbasis
from .families import Family, eval_terms
from .gig import gig_sample as _gig_rvs
from .model import Model, ModelBlock
from .prior import NbpssHyper, NbpssState

__all__ = [
    "SamplerError",
    "GigParams",
    "BlockUpdateWorkspace",
    "BetaUpdate",
    "ChainConfig",
    "ChainState",
    "ChainOutput",
    "gig_sample",
    "sample_constrained_gaussian",
    "update_beta_block",
    "update_tau2_selected",
    "update_tau2_unselected",
    "update_delta",
    "update_psi2",
    "update_omega",
    "init_state",
    "sweep",
    "run_chain",
]

LOG_2PI = math.log(2.0 * math.pi)


class SamplerError(RuntimeError):
    """Numeric failure inside the chain, carrying block/iteration context."""


@dataclass(frozen=True)
class GigParams:
    """Parameters of GIG(p, q, c) with density proportional to
    x^(p-1) exp(-(q x + c / x) / 2)."""

    p: float
    q: float
    c: float

    def __post_init__(self):
        if not np.isfinite(self.p):
            raise ValueError("p must be finite")
        if not self.q > 0:
            raise ValueError("q must be positive")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.c == 0 and self.p <= 0:
            raise ValueError("c = 0 requires p > 0 (gamma degeneracy)")


def gig_sample(params: GigParams, rng: np.random.Generator) -> float:
    """One exact draw from GIG(p, q, c)."""
    return float(_gig_rvs(params.p, params.q, params.c, rng))


class _ConstrainedGaussian:
    """Gaussian with precision P restricted to the null space of A.

    Holds the Cholesky factor of P, the kriging-correction matrices, and
    the log normalizing constant of the on-subspace density, so one build
    serves both sampling and density evaluation in the acceptance ratio.
    """

    def __init__(self, precision: np.ndarray, rhs: np.ndarray,
                 constraint: ConstraintMatrix, label: str = "block"):
        self.constraint = constraint
        self.label = label
        try:
            self._chol = linalg.cho_factor(precision, lower=True)
        except linalg.LinAlgError as exc:
            raise SamplerError(
                f"{label}: proposal precision is not positive definite"
            ) from exc
        self.precision = precision
        mean_free = linalg.cho_solve(self._chol, rhs)
        logdet_p = 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))
        dim = precision.shape[0]
        if constraint.is_empty:
            self._pinv_at = None
            self._schur = None
            self.mean = mean_free
            self.log_norm = 0.5 * logdet_p - 0.5 * dim * LOG_2PI
        else:
            a = constraint.rows
            pinv_at = linalg.cho_solve(self._chol, a.T)
            schur = linalg.cho_factor(a @ pinv_at, lower=True)
            self._pinv_at = pinv_at
            self._schur = schur
            self.mean = self._correct(mean_free)
            # determinant of the subspace precision Z'PZ for orthonormal
            # null-space basis Z: det(P) * det(A P^-1 A')
            logdet_s = 2.0 * float(np.sum(np.log(np.diag(schur[0]))))
            k_free = dim - constraint.n_rows
            self.log_norm = 0.5 * (logdet_p + logdet_s) - 0.5 * k_free * LOG_2PI

    def _correct(self, beta: np.ndarray) -> np.ndarray:
        resid = self.constraint.rows @ beta
        return beta - self._pinv_at @ linalg.cho_solve(self._schur, resid)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.precision.shape[0])
        lower = self._chol[0]
        draw = self.mean + linalg.solve_triangular(lower, z, lower=True, trans="T")
        if self.constraint.is_empty:
            return draw
        return self._correct(draw)

    def logpdf(self, beta: np.ndarray) -> float:
        """Density on the constrained subspace; ``beta`` must satisfy it."""
        d = beta - self.mean
        return self.log_norm - 0.5 * float(d @ (self.precision @ d))


def sample_constrained_gaussian(
    precision: np.ndarray,
    rhs: np.ndarray,
    constraint: ConstraintMatrix,
    rng: np.random.Generator,
    label: str = "block",
) -> np.ndarray:
    """Draw from N(mu, P^-1) with mu = P^-1 rhs, conditioned on A beta = 0.

    Unconstrained draw via the Cholesky factor of P, then the kriging
    correction beta - P^-1 A'(A P^-1 A')^-1 A beta.
    """
    return _ConstrainedGaussian(precision, rhs, constraint, label).sample(rng)


@dataclass
class BlockUpdateWorkspace:
    """Weighted-least-squares pieces of one block proposal.

    weights and ytilde come from the likelihood expansion at the current
    predictor; precision is B'WB plus the scaled penalty; mean is the
    constrained proposal mean; eta_minus the predictor with this block's
    contribution removed.
    """

    weights: np.ndarray
    ytilde: np.ndarray
    precision: np.ndarray
    mean: np.ndarray
    eta_minus: np.ndarray
    loglik: float
    proposal: _ConstrainedGaussian = field(repr=False)


def _build_workspace(
    mblock: ModelBlock,
    beta: np.ndarray,
    tau2: float | None,
    family: Family,
    y: np.ndarray,
    eta: np.ndarray,
    aux: dict | None,
) -> BlockUpdateWorkspace:
    terms = eval_terms(family, y, eta, mblock.param, aux=aux)
    if not (np.all(np.isfinite(terms.grad)) and np.all(np.isfinite(terms.weight))):
        raise SamplerError(f"{mblock.label}: non-finite likelihood expansion")
    basis = mblock.basis_dense
    eta_k = eta[:, mblock.param]
    eta_minus = eta_k - basis @ beta
    w = terms.weight
    ytilde = eta_k + terms.grad / w
    precision = (basis * w[:, None]).T @ basis
    if tau2 is not None:
        precision = precision + mblock.penalty_dense / tau2
    rhs = basis.T @ (w * (ytilde - eta_minus))
    proposal = _ConstrainedGaussian(
        precision, rhs, mblock.block.constraint, mblock.label
    )
    return BlockUpdateWorkspace(
        weights=w,
        ytilde=ytilde,
        precision=precision,
        mean=proposal.mean,
        eta_minus=eta_minus,
        loglik=float(np.sum(terms.logdens)),
        proposal=proposal,
    )


@dataclass(frozen=True)
class BetaUpdate:
    """Result of one block move: new coefficients, acceptance flag, and the
    log acceptance ratio (None when the correction is disabled)."""

    beta: np.ndarray
    accepted: bool
    log_ratio: float | None


def update_beta_block(
    mblock: ModelBlock,
    beta: np.ndarray,
    tau2: float | None,
    family: Family,
    y: np.ndarray,
    eta: np.ndarray,
    rng: np.random.Generator,
    aux: dict | None = None,
    mh_correction: bool = True,
) -> BetaUpdate:
    """Propose the block from its weighted-least-squares approximation and
    accept with the exact ratio; ``eta`` is updated in place on acceptance.

    With ``mh_correction=False`` every proposal is taken (approximate
    sampler, diagnostic use only).
    """
    forward = _build_workspace(mblock, beta, tau2, family, y, eta, aux)
    proposed = forward.proposal.sample(rng)
    eta_prop_col = forward.eta_minus + mblock.basis_dense @ proposed
    if not np.all(np.isfinite(eta_prop_col)):
        raise SamplerError(f"{mblock.label}: non-finite proposed predictor")

    if not mh_correction:
        eta[:, mblock.param] = eta_prop_col
        return BetaUpdate(beta=proposed, accepted=True, log_ratio=None)

    eta_prop = eta.copy()
    eta_prop[:, mblock.param] = eta_prop_col
    reverse = _build_workspace(mblock, proposed, tau2, family, y, eta_prop, aux)

    log_ratio = reverse.loglik - forward.loglik
    if tau2 is not None:
        log_ratio -= 0.5 * (mblock.quad_form(proposed) - mblock.quad_form(beta)) / tau2
    log_ratio += reverse.proposal.logpdf(beta) - forward.proposal.logpdf(proposed)

    if np.log(rng.random()) < log_ratio:
        eta[:, mblock.param] = eta_prop_col
        return BetaUpdate(beta=proposed, accepted=True, log_ratio=log_ratio)
    return BetaUpdate(beta=beta, accepted=False, log_ratio=log_ratio)


def update_tau2_selected(
    mblock: ModelBlock,
    beta: np.ndarray,
    state: NbpssState,
    hyper: NbpssHyper,
    rng: np.random.Generator,
) -> float:
    """Gibbs draw of the selectable block scale from its GIG conditional."""
    params = GigParams(
        p=-0.5 * mblock.rank + 0.5,
        q=1.0 / (hyper.shrink(state.delta) * state.psi2),
        c=mblock.quad_form(beta),
    )
    return gig_sample(params, rng)


def update_tau2_unselected(
    mblock: ModelBlock,
    beta: np.ndarray,
    a_in: float,
    b_in: float,
    rng: np.random.Generator,
) -> float:
    """Gibbs draw of a plain smoothing variance from its inverse gamma."""
    shape = 0.5 * mblock.rank + a_in
    scale = 0.5 * mblock.quad_form(beta) + b_in
    if shape <= 0 or scale <= 0:
        raise SamplerError(
            f"{mblock.label}: inverse gamma update needs positive shape and scale"
        )
    return float(scale / rng.gamma(shape, 1.0))


def update_delta(
    state: NbpssState, hyper: NbpssHyper, rng: np.random.Generator
) -> int:
    """Bernoulli draw of the inclusion indicator, computed in log space."""
    r = hyper.r
    log_l = -0.5 * np.log(r) - (state.tau2 / (2.0 * state.psi2)) * (1.0 / r - 1.0)
    logit_p = special.logit(state.omega) - log_l
    return int(rng.random() < special.expit(logit_p))


def update_psi2(
    state: NbpssState, hyper: NbpssHyper, rng: np.random.Generator
) -> float:
    """Gibbs draw of the hyper-variance from its inverse gamma conditional."""
    shape = hyper.a + 0.5
    scale = hyper.b + state.tau2 / (2.0 * hyper.shrink(state.delta))
    return float(scale / rng.gamma(shape, 1.0))


def update_omega(
    states: list[NbpssState], a0: float, b0: float, rng: np.random.Generator
) -> float:
    """Beta draw of the (possibly shared) inclusion probability."""
    total = len(states)
    included = sum(s.delta for s in states)
    return float(rng.beta(a0 + included, b0 + total - included))


@dataclass(frozen=True)
class ChainConfig:
    """Chain length and bookkeeping. ``update_order`` is a fixed sequence of
    (parameter index, block position within that parameter) pairs; None
    scans all blocks in declaration order."""

    iterations: int = 12_000
    burn_in: int = 2_000
    thin: int = 10
    seed: int = 0
    update_order: tuple[tuple[int, int], ...] | None = None
    mh_correction: bool = True

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be nonnegative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.iterations > 0 and self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")


@dataclass
class ChainState:
    """Mutable state of one chain."""

    beta: list[np.ndarray]
    eta: np.ndarray
    nbpss: dict[int, NbpssState]
    ig_tau2: dict[int, float]
    sigma2: float | None

    def block_tau2(self, j: int) -> float | None:
        if j in self.nbpss:
            return self.nbpss[j].tau2
        return self.ig_tau2.get(j)

    def aux(self) -> dict | None:
        if self.sigma2 is None:
            return None
        return {"sigma2": self.sigma2}


def init_state(model: Model) -> ChainState:
    """Deterministic starting state: constant columns at the family's crude
    intercepts, selectable blocks at a small point inside their penalized
    subspace (a rejected first move must not leave the penalty quadratic
    form at zero, where the GIG conditional degenerates), everything else
    zero, unit scales, everything included."""
    n, big_k = model.n_obs, model.n_params
    start = model.family.initial_intercepts(model.y)
    beta = []
    eta = np.zeros((n, big_k))
    seeded = set()
    for mb in model.blocks:
        b = np.zeros(mb.dim)
        if (
            mb.prior.kind == "flat"
            and mb.param not in seeded
            and mb.dim == 1
            and np.all(mb.basis_dense == 1.0)
        ):
            b[0] = start[mb.param]
            seeded.add(mb.param)
        elif mb.prior.kind == "nbpss":
            _, vals, vecs = penalized_eigenbasis(mb.block.penalty)
            lead = vecs[:, 0]
            anchor = lead[np.argmax(np.abs(lead))]
            b = (0.01 * np.sign(anchor) / np.sqrt(vals[0])) * lead
        beta.append(b)
        eta[:, mb.param] += mb.basis_dense @ b
    nbpss = {}
    ig_tau2 = {}
    for j, mb in enumerate(model.blocks):
        if mb.prior.kind == "nbpss":
            omega = mb.prior.fixed_omega
            nbpss[j] = NbpssState(
                tau2=1.0,
                psi2=1.0,
                delta=1,
                omega=0.5 if omega is None else omega,
                omega_group=mb.prior.omega_group,
            )
        elif mb.prior.kind == "ig":
            ig_tau2[j] = 1.0
    sigma2 = 1.0 if model.family.name == "gaussian" else None
    return ChainState(beta=beta, eta=eta, nbpss=nbpss, ig_tau2=ig_tau2, sigma2=sigma2)


def resolve_update_order(model: Model, config: ChainConfig) -> tuple[int, ...]:
    """Map the configured (parameter, position) pairs to global block
    indices; default is declaration order grouped by parameter."""
    if config.update_order is None:
        order = []
        for k in range(model.n_params):
            order.extend(model.param_blocks(k))
        return tuple(order)
    resolved = []
    for k, pos in config.update_order:
        if not 0 <= k < model.n_params:
            raise ValueError(f"update order: parameter index {k} out of range")
        per_param = model.param_blocks(k)
        if not 0 <= pos < len(per_param):
            raise ValueError(
                f"update order: parameter {k} has no block at position {pos}"
            )
        resolved.append(per_param[pos])
    if sorted(resolved) != list(range(len(model.blocks))):
        raise ValueError("update order must visit every block exactly once")
    return tuple(resolved)


def sweep(
    model: Model,
    state: ChainState,
    rng: np.random.Generator,
    order: tuple[int, ...] | None = None,
    mh_correction: bool = True,
) -> dict[str, BetaUpdate]:
    """One full pass: every block move plus its scale updates, then the
    shared inclusion probabilities and the error variance."""
    if order is None:
        order = tuple(range(len(model.blocks)))
    results: dict[str, BetaUpdate] = {}
    aux = state.aux()
    for j in order:
        mb = model.blocks[j]
        tau2 = state.block_tau2(j)
        res = update_beta_block(
            mb,
            state.beta[j],
            tau2,
            model.family,
            model.y,
            state.eta,
            rng,
            aux=aux,
            mh_correction=mh_correction,
        )
        state.beta[j] = res.beta
        results[mb.label] = res
        if mb.prior.kind == "nbpss":
            st = state.nbpss[j]
            st.tau2 = update_tau2_selected(mb, res.beta, st, mb.prior.hyper, rng)
            st.delta = update_delta(st, mb.prior.hyper, rng)
            st.psi2 = update_psi2(st, mb.prior.hyper, rng)
        elif mb.prior.kind == "ig":
            state.ig_tau2[j] = update_tau2_unselected(
                mb, res.beta, mb.prior.ig_a, mb.prior.ig_b, rng
            )
    for members in model.omega_groups().values():
        lead = model.blocks[members[0]].prior
        if lead.fixed_omega is not None:
            continue
        hyper = lead.hyper
        group_states = [state.nbpss[j] for j in members]
        omega = update_omega(group_states, hyper.a0, hyper.b0, rng)
        for st in group_states:
            st.omega = omega
    if state.sigma2 is not None:
        resid = model.y - state.eta[:, 0]
        shape = model.error_a + 0.5 * model.n_obs
        scale = model.error_b + 0.5 * float(resid @ resid)
        state.sigma2 = float(scale / rng.gamma(shape, 1.0))
    return results


@dataclass
class ChainOutput:
    """Stored draws and diagnostics of one chain.

    Arrays are indexed (kept iteration, ...) per block label. ``loglik``
    holds pointwise log densities for the information criteria.
    ``constraint_residual`` is the largest constraint violation seen on any
    stored coefficient draw.
    """

    labels: tuple[str, ...]
    beta: dict[str, np.ndarray]
    tau2: dict[str, np.ndarray]
    psi2: dict[str, np.ndarray]
    delta: dict[str, np.ndarray]
    omega: dict[str, np.ndarray]
    sigma2: np.ndarray | None
    loglik: np.ndarray
    acceptance: dict[str, float]
    max_abs_log_ratio: dict[str, float]
    constraint_residual: float
    seed: int
    config: ChainConfig
    approximate: bool

    @property
    def n_kept(self) -> int:
        return self.loglik.shape[0]


def run_chain(
    model: Model, config: ChainConfig, rng: np.random.Generator | None = None
) -> ChainOutput:
    """Run one chain and return thinned post-burn-in draws.

    A fresh generator is seeded from the config when none is supplied, so
    equal configs reproduce bit-identical output.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    order = resolve_update_order(model, config)
    state = init_state(model)
    n_blocks = len(model.blocks)
    kept_total = 0
    if config.iterations > 0:
        kept_total = 1 + (config.iterations - config.burn_in - 1) // config.thin

    beta_store = {
        mb.label: np.empty((kept_total, mb.dim)) for mb in model.blocks
    }
    tau2_store = {
        mb.label: np.empty(kept_total)
        for mb in model.blocks
        if mb.prior.kind in ("nbpss", "ig")
    }
    nbpss_labels = [mb.label for mb in model.blocks if mb.prior.kind == "nbpss"]
    psi2_store = {lab: np.empty(kept_total) for lab in nbpss_labels}
    delta_store = {lab: np.empty(kept_total, dtype=np.int64) for lab in nbpss_labels}
    omega_store = {lab: np.empty(kept_total) for lab in nbpss_labels}
    sigma2_store = (
        np.empty(kept_total) if model.family.name == "gaussian" else None
    )
    loglik_store = np.empty((kept_total, model.n_obs))

    accept_counts = {mb.label: 0 for mb in model.blocks}
    max_log_ratio = {mb.label: 0.0 for mb in model.blocks}
    residual = 0.0
    kept = 0
    for it in range(config.iterations):
        try:
            results = sweep(
                model, state, rng, order=order, mh_correction=config.mh_correction
            )
        except SamplerError as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(state.eta)):
            bad = int(np.argmax(~np.isfinite(state.eta).all(axis=0)))
            raise SamplerError(
                f"iteration {it}: non-finite predictor for parameter {bad}"
            )
        for lab, res in results.items():
            accept_counts[lab] += res.accepted
            if res.log_ratio is not None:
                max_log_ratio[lab] = max(max_log_ratio[lab], abs(res.log_ratio))
        if it < config.burn_in or (it - config.burn_in) % config.thin:
            continue
        for j, mb in enumerate(model.blocks):
            beta_store[mb.label][kept] = state.beta[j]
            residual = max(residual, mb.block.constraint.violation(state.beta[j]))
            if mb.prior.kind == "nbpss":
                st = state.nbpss[j]
                tau2_store[mb.label][kept] = st.tau2
                psi2_store[mb.label][kept] = st.psi2
                delta_store[mb.label][kept] = st.delta
                omega_store[mb.label][kept] = st.omega
            elif mb.prior.kind == "ig":
                tau2_store[mb.label][kept] = state.ig_tau2[j]
        if sigma2_store is not None:
            sigma2_store[kept] = state.sigma2
        loglik_store[kept] = model.family.logdens(model.y, state.eta, aux=state.aux())
        kept += 1

    n_updates = max(config.iterations, 1)
    acceptance = {lab: cnt / n_updates for lab, cnt in accept_counts.items()}
    return ChainOutput(
        labels=model.labels,
        beta=beta_store,
        tau2=tau2_store,
        psi2=psi2_store,
        delta=delta_store,
        omega=omega_store,
        sigma2=sigma2_store,
        loglik=loglik_store,
        acceptance=acceptance,
        max_abs_log_ratio=max_log_ratio,
        constraint_residual=residual,
        seed=config.seed,
        config=config,
        approximate=not config.mh_correction,
    )
