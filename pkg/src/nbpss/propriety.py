"""Advisory checks for posterior propriety of penalized regression models.

The posterior of a model that mixes flat priors on unpenalized coefficients,
inverse gamma smoothing variances, and spike-and-slab variance hierarchies is
proper only under inequality conditions that link prior ranks, hyperparameter
values, and design ranks.  ``check_propriety`` evaluates every such inequality
literally and reports them one by one together with the rank bookkeeping that
feeds them.

The checks are sufficient, not necessary: a "violated" verdict does not prove
the posterior is improper, so callers should warn and continue rather than
refuse to fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EffectSpec",
    "PredictorSpec",
    "ModelSpec",
    "ConditionCheck",
    "ProprietyReport",
    "check_propriety",
]

HOLDS = "holds"
VIOLATED = "violated"
NOT_CHECKABLE = "not_checkable"

SUFFICIENT_OK = "sufficient_ok"

# Density integrability / boundedness facts per response family.  These are
# recorded, not proven: each entry is (c1_status, c1_detail, c2_status,
# c2_detail) for the two model-level density conditions.
_DENSITY_TABLE = {
    "gaussian": (
        HOLDS,
        "normal density integrable over the location predictor for every "
        "positive error variance",
        HOLDS,
        "all observations integrable, so no boundedness requirement remains",
    ),
    "gaussian_locscale": (
        HOLDS,
        "normal density integrable over (location, log scale) for interior "
        "parameter values",
        HOLDS,
        "all observations integrable, so no boundedness requirement remains",
    ),
    "bivariate_normal": (
        HOLDS,
        "bivariate normal density integrable over locations, log scales and "
        "the unconstrained correlation predictor for interior values",
        HOLDS,
        "all observations integrable, so no boundedness requirement remains",
    ),
    "poisson": (
        NOT_CHECKABLE,
        "integrability over the log-rate predictor depends on the observed "
        "counts and is not proven here",
        HOLDS,
        "probability mass function bounded by 1",
    ),
    "zip": (
        NOT_CHECKABLE,
        "integrability over the joint (log-rate, logit-probability) "
        "predictor space depends on the observed counts and is not proven "
        "here",
        HOLDS,
        "probability mass function bounded by 1",
    ),
}


@dataclass(frozen=True)
class EffectSpec:
    """One penalized coefficient block as seen by the propriety checker.

    ``rank`` is the rank of the block's prior precision matrix.  ``a`` and
    ``b`` are the inverse gamma hyperparameters attached to the block: the
    smoothing-variance prior for an unselected block, or the slab-scale prior
    for a block under selection.  ``pen_design`` optionally carries the n x
    rank design of the penalized subspace (the columns multiplying the proper
    Gaussian part in the mixed-model form) so design ranks can be computed.
    """

    label: str
    rank: int
    a: float
    b: float
    selected: bool
    pen_design: np.ndarray | None = None


@dataclass(frozen=True)
class PredictorSpec:
    """All blocks contributing to one distributional parameter's predictor.

    ``unpen_design`` holds the columns with flat priors (intercept, linear
    parts, penalty kernels left unpenalized).  When designs are unavailable
    the ranks ``r`` (of the unpenalized design) and ``t`` (added by the
    penalized designs beyond the unpenalized ones) may be supplied directly;
    in the distributional branch ``t`` must already exclude the largest
    block.
    """

    name: str
    effects: tuple[EffectSpec, ...] = ()
    unpen_design: np.ndarray | None = None
    r: int | None = None
    t: int | None = None


@dataclass(frozen=True)
class ModelSpec:
    """Model description consumed by :func:`check_propriety`.

    ``error_a`` and ``error_b`` are the inverse gamma hyperparameters of a
    conjugate error variance (mean-regression branch only).  ``sse`` is an
    observed residual sum of squares, used when ``error_b`` is zero.
    """

    family: str
    n_obs: int
    predictors: tuple[PredictorSpec, ...]
    error_a: float | None = None
    error_b: float | None = None
    sse: float | None = None


@dataclass(frozen=True)
class ConditionCheck:
    """Outcome of one inequality at one scope."""

    condition: str
    scope: str
    status: str
    detail: str
    in_sufficient: bool = True


@dataclass(frozen=True)
class ProprietyReport:
    family: str
    branch: str
    conditions: tuple[ConditionCheck, ...]
    ranks: dict = field(default_factory=dict)
    verdict: str = NOT_CHECKABLE

    def violated_conditions(self) -> tuple[str, ...]:
        ids = {c.condition for c in self.conditions if c.status == VIOLATED}
        return tuple(sorted(ids))

    def conditions_for(self, condition: str) -> tuple[ConditionCheck, ...]:
        return tuple(c for c in self.conditions if c.condition == condition)

    def summary(self) -> str:
        lines = [f"propriety check (advisory), family={self.family}, branch={self.branch}"]
        violated = self.violated_conditions()
        verdict = self.verdict
        if violated:
            verdict = f"{verdict} ({', '.join(violated)})"
        lines.append(f"verdict: {verdict}")
        for c in self.conditions:
            lines.append(f"  {c.condition:<14s} [{c.scope}] {c.status}: {c.detail}")
        return "\n".join(lines)


def _cond(condition, scope, ok, detail, in_sufficient=True):
    if ok is None:
        status = NOT_CHECKABLE
    else:
        status = HOLDS if ok else VIOLATED
    return ConditionCheck(condition, scope, status, detail, in_sufficient)


def _vacuous(condition, scope, detail, in_sufficient=True):
    return ConditionCheck(condition, scope, HOLDS, detail, in_sufficient)


def _rank(mat):
    if mat is None or mat.size == 0:
        return 0
    return int(np.linalg.matrix_rank(np.asarray(mat, dtype=float)))


def _sorted_effects(pred):
    return tuple(sorted(pred.effects, key=lambda e: e.label))


def _predictor_ranks(pred, exclude=None):
    """Return (r, t, u_full_rank) for one predictor.

    ``exclude`` drops one effect from the penalized design before computing
    t.  Entries are None when neither designs nor explicit ranks allow the
    computation.
    """
    effects = [e for e in _sorted_effects(pred) if e is not exclude]
    have_pen = all(e.pen_design is not None for e in effects)
    if pred.unpen_design is not None:
        u = np.asarray(pred.unpen_design, dtype=float)
        r = _rank(u)
        u_full = u.size == 0 or r == u.shape[1]
        if have_pen:
            blocks = [u] if u.size else []
            blocks += [np.asarray(e.pen_design, dtype=float) for e in effects]
            total = _rank(np.hstack(blocks)) if blocks else 0
            return r, total - r, u_full
        if pred.t is not None:
            return r, int(pred.t), u_full
        return r, None, u_full
    if pred.r is not None:
        return int(pred.r), (int(pred.t) if pred.t is not None else None), None
    return None, (int(pred.t) if pred.t is not None else None), None


def _ig_prior_ok(e):
    """(b.1)/(c.6): b > 0, or b = 0 with a < 0.  Excludes the Jeffreys prior."""
    if e.b > 0:
        return True, f"b = {e.b:g} > 0"
    if e.b == 0 and e.a < 0:
        return True, f"b = 0 with a = {e.a:g} < 0 (flat-type prior allowed)"
    if e.b == 0:
        return False, f"b = 0 requires a < 0, got a = {e.a:g} (Jeffreys prior excluded)"
    return False, f"b = {e.b:g} < 0 is not a valid inverse gamma scale"


def _gap_detail(e, offset, gap):
    lhs = e.rank + 2.0 * e.a + offset
    off = " - 1" if offset else ""
    return lhs, (
        f"kappa + 2a{off} = {e.rank} + 2*{e.a:g}{off} = {lhs:g} "
        f"vs kappa - t = {gap:g}"
    )


def _gaussian_mean_conditions(model):
    """(b.1)-(b.7) for single-predictor mean regression with conjugate error."""
    pred = model.predictors[0]
    effects = _sorted_effects(pred)
    ins = [e for e in effects if not e.selected]
    sels = [e for e in effects if e.selected]
    kappa = sum(e.rank for e in effects)
    r, t, u_full = _predictor_ranks(pred)
    gap = None if t is None else kappa - t

    conds = []
    scope = pred.name

    if not ins:
        for cid in ("b.1", "b.2", "b.3"):
            suff = cid != "b.2"
            conds.append(_vacuous(cid, scope, "no unselected penalized blocks", suff))
    for e in ins:
        ok, detail = _ig_prior_ok(e)
        conds.append(_cond("b.1", f"{scope}/{e.label}", ok, detail))
        lhs = e.rank + 2.0 * e.a
        conds.append(
            _cond(
                "b.2",
                f"{scope}/{e.label}",
                lhs > 0,
                f"kappa + 2a = {e.rank} + 2*{e.a:g} = {lhs:g} > 0",
                in_sufficient=False,
            )
        )
        if gap is None:
            conds.append(
                _cond("b.3", f"{scope}/{e.label}", None, "rank t of the penalized design unavailable")
            )
        else:
            lhs, detail = _gap_detail(e, 0.0, gap)
            conds.append(_cond("b.3", f"{scope}/{e.label}", lhs > gap, detail))

    if not sels:
        conds.append(_vacuous("b.4", scope, "no blocks under selection"))
    for e in sels:
        if gap is None:
            conds.append(
                _cond("b.4", f"{scope}/{e.label}", None, "rank t of the penalized design unavailable")
            )
        else:
            lhs, detail = _gap_detail(e, -1.0, gap)
            conds.append(_cond("b.4", f"{scope}/{e.label}", lhs > gap, detail))

    if model.error_a is None:
        conds.append(_cond("b.5", scope, None, "no conjugate error-variance prior supplied", False))
        conds.append(_cond("b.6", scope, None, "no conjugate error-variance prior supplied"))
    elif r is None:
        conds.append(_cond("b.5", scope, None, "rank r of the unpenalized design unavailable", False))
        conds.append(_cond("b.6", scope, None, "rank r of the unpenalized design unavailable"))
    else:
        rhs = r + len(sels)
        lhs5 = model.n_obs + 2.0 * model.error_a + 2.0 * sum(e.a for e in ins)
        conds.append(
            _cond(
                "b.5",
                scope,
                lhs5 > rhs,
                f"n + 2a_err + 2*sum(a) = {lhs5:g} vs r + J = {rhs:g}",
                in_sufficient=False,
            )
        )
        lhs6 = model.n_obs + 2.0 * model.error_a + 2.0 * sum(min(0.0, e.a) for e in ins)
        conds.append(
            _cond("b.6", scope, lhs6 > rhs, f"n + 2a_err + 2*sum(min(0, a)) = {lhs6:g} vs r + J = {rhs:g}")
        )

    if model.error_b is None:
        conds.append(_cond("b.7", scope, None, "no conjugate error-variance prior supplied"))
    elif model.error_b > 0:
        conds.append(_cond("b.7", scope, True, f"b_err = {model.error_b:g} > 0 holds for any data"))
    elif model.sse is not None:
        val = model.sse + 2.0 * model.error_b
        conds.append(_cond("b.7", scope, val > 0, f"SSE + 2b_err = {val:g} > 0"))
    else:
        conds.append(_cond("b.7", scope, None, "b_err = 0 and no residual sum of squares supplied"))

    ranks = {
        scope: {
            "kappa": kappa,
            "r": r,
            "t": t,
            "unpen_full_rank": u_full,
            "kappa_by_effect": {e.label: e.rank for e in effects},
        }
    }
    return conds, ranks


def _density_conditions(family):
    entry = _DENSITY_TABLE.get(family)
    if entry is None:
        detail = f"family '{family}' has no recorded density facts"
        return [
            ConditionCheck("c.1", "model", NOT_CHECKABLE, detail),
            ConditionCheck("c.2", "model", NOT_CHECKABLE, detail),
        ]
    c1_status, c1_detail, c2_status, c2_detail = entry
    return [
        ConditionCheck("c.1", "model", c1_status, c1_detail),
        ConditionCheck("c.2", "model", c2_status, c2_detail),
    ]


def _distributional_conditions(model):
    """(c.1)-(c.10) across predictors, largest block per predictor set aside.

    The variant per predictor follows the prior of its largest block: spike
    and slab -> the 'a' inequalities, plain inverse gamma -> the 'b' ones.
    Ties on rank break by label so the report does not depend on the order
    in which effects were supplied.
    """
    conds = list(_density_conditions(model.family))
    ranks = {}

    with_effects = [p for p in model.predictors if p.effects]
    largest = {}
    for pred in with_effects:
        effects = _sorted_effects(pred)
        largest[pred.name] = max(effects, key=lambda e: (e.rank, e.label))
    n_eps = min(largest[p.name].rank for p in with_effects) if with_effects else None

    for pred in sorted(model.predictors, key=lambda p: p.name):
        scope = pred.name
        effects = _sorted_effects(pred)
        if not effects:
            r, t, u_full = _predictor_ranks(pred)
            if u_full is not None:
                conds.append(
                    _cond(
                        "c.3",
                        f"{scope} [full design]",
                        u_full,
                        f"unpenalized design has rank r = {r}"
                        + ("" if u_full else " but more columns; delete duplicates"),
                    )
                )
            ranks[scope] = {"kappa": 0, "r": r, "t": t, "kappa_by_effect": {}}
            continue

        eps = largest[scope]
        others = [e for e in effects if e is not eps]
        ins_all = [e for e in effects if not e.selected]
        sels_all = [e for e in effects if e.selected]
        variant = "a" if eps.selected else "b"
        # Index sets for the per-block inequalities: the largest block drops
        # out of its own class.
        ins = ins_all if eps.selected else [e for e in ins_all if e is not eps]
        sels = [e for e in sels_all if e is not eps] if eps.selected else sels_all

        kappa_k = sum(e.rank for e in others)
        r, t, u_full = _predictor_ranks(pred, exclude=eps)
        gap = None if t is None else kappa_k - t

        if u_full is None:
            conds.append(_cond("c.3", f"{scope} [full design]", None, "unpenalized design unavailable"))
        else:
            conds.append(
                _cond(
                    "c.3",
                    f"{scope} [full design]",
                    u_full,
                    f"unpenalized design has rank r = {r}"
                    + ("" if u_full else " but more columns; delete duplicates"),
                )
            )
        conds.append(
            _cond(
                "c.3",
                f"{scope} [submodel]",
                None,
                "submodel rows are not constructed; checked on the full design only",
                in_sufficient=False,
            )
        )
        if t is None:
            conds.append(_cond("c.4", f"{scope} [full design]", None, "penalized design ranks unavailable"))
        else:
            conds.append(
                _cond(
                    "c.4",
                    f"{scope} [full design]",
                    True,
                    f"rank of (unpenalized, penalized-but-largest) design = r + t = {r} + {t}",
                )
            )
        conds.append(
            _cond(
                "c.4",
                f"{scope} [submodel]",
                None,
                "submodel rows are not constructed; checked on the full design only",
                in_sufficient=False,
            )
        )
        if eps.pen_design is not None:
            v_rank = _rank(eps.pen_design)
            conds.append(
                _cond(
                    "c.5",
                    f"{scope} [full design]",
                    v_rank == eps.rank,
                    f"largest block '{eps.label}' design rank {v_rank} vs kappa_eps = {eps.rank}",
                )
            )
        else:
            conds.append(
                _cond("c.5", f"{scope} [full design]", None, f"design of largest block '{eps.label}' unavailable")
            )
        conds.append(
            _cond(
                "c.5",
                f"{scope} [submodel]",
                None,
                "submodel rows are not constructed; checked on the full design only",
                in_sufficient=False,
            )
        )

        c6 = f"c.6{variant}"
        c7 = f"c.7{variant}"
        c8 = f"c.8{variant}"
        c9 = f"c.9{variant}"
        c10 = f"c.10{variant}"
        if not ins:
            conds.append(_vacuous(c6, scope, "no unselected blocks in scope"))
            conds.append(_vacuous(c7, scope, "no unselected blocks in scope"))
        for e in ins:
            ok, detail = _ig_prior_ok(e)
            conds.append(_cond(c6, f"{scope}/{e.label}", ok, detail))
            if gap is None:
                conds.append(_cond(c7, f"{scope}/{e.label}", None, "rank t unavailable"))
            else:
                lhs, detail = _gap_detail(e, 0.0, gap)
                conds.append(_cond(c7, f"{scope}/{e.label}", lhs > gap, detail))
        if not sels:
            conds.append(_vacuous(c8, scope, "no blocks under selection in scope"))
        for e in sels:
            if gap is None:
                conds.append(_cond(c8, f"{scope}/{e.label}", None, "rank t unavailable"))
            else:
                lhs, detail = _gap_detail(e, -1.0, gap)
                conds.append(_cond(c8, f"{scope}/{e.label}", lhs > gap, detail))

        if n_eps is None or r is None:
            conds.append(_cond(c9, scope, None, "ranks unavailable"))
        else:
            rhs = r + (len(sels_all) - 1 if variant == "a" else len(sels_all))
            lhs = n_eps + 2.0 * eps.a + 2.0 * sum(min(0.0, e.a) for e in ins)
            conds.append(
                _cond(
                    c9,
                    scope,
                    lhs > rhs,
                    f"n_eps + 2a_eps + 2*sum(min(0, a)) = {n_eps} + 2*{eps.a:g} "
                    f"+ {2.0 * sum(min(0.0, e.a) for e in ins):g} = {lhs:g} vs {rhs:g}",
                )
            )

        if variant == "a":
            conds.append(
                _cond(
                    c10,
                    scope,
                    None,
                    "positive residual variation in the normalized submodel cannot "
                    "be verified; ensure not all effects vanish",
                )
            )
        elif eps.b > 0:
            conds.append(_cond(c10, scope, True, f"b_eps = {eps.b:g} > 0 holds for any data"))
        else:
            conds.append(
                _cond(c10, scope, None, "b_eps = 0; needs positive submodel residual variation")
            )

        ranks[scope] = {
            "kappa": kappa_k,
            "r": r,
            "t": t,
            "largest": eps.label,
            "kappa_eps": eps.rank,
            "variant": variant,
            "kappa_by_effect": {e.label: e.rank for e in effects},
        }

    if not with_effects:
        conds.append(
            _cond(
                "c.5",
                "model",
                None,
                "no penalized blocks anywhere; the sufficient conditions do not apply",
            )
        )
    if n_eps is not None:
        ranks["model"] = {"n_eps": n_eps}
    return conds, ranks


def _condition_key(cid):
    group, _, rest = cid.partition(".")
    digits = "".join(ch for ch in rest if ch.isdigit())
    suffix = rest[len(digits):]
    return group, int(digits), suffix


def check_propriety(model: ModelSpec) -> ProprietyReport:
    """Evaluate the propriety inequalities for ``model``.

    Pure: the input is only read, and the report does not depend on the
    order of predictors or effects.  Items that cannot be evaluated from the
    supplied information are marked not_checkable; the verdict is
    sufficient_ok only when every applicable sufficient condition holds.
    """
    if model.family == "gaussian" and len(model.predictors) == 1:
        branch = "gaussian_mean"
        conds, ranks = _gaussian_mean_conditions(model)
    else:
        branch = "distributional"
        conds, ranks = _distributional_conditions(model)

    conds = sorted(conds, key=lambda c: (_condition_key(c.condition), c.scope))
    applicable = [c for c in conds if c.in_sufficient]
    if any(c.status == VIOLATED for c in applicable):
        verdict = VIOLATED
    elif any(c.status == NOT_CHECKABLE for c in applicable):
        verdict = NOT_CHECKABLE
    else:
        verdict = SUFFICIENT_OK
    return ProprietyReport(model.family, branch, tuple(conds), ranks, verdict)
