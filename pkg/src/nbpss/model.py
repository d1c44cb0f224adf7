"""Model assembly.

Bundles effect blocks per distributional parameter with their prior
assignment (selectable scale hierarchy, plain inverse gamma smoothing
variance, or flat) and precomputes the dense per-block matrices the
sampler works with. Also translates an assembled model into the inputs
of the posterior-propriety checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import propriety
from .design import (
    EffectBlock,
    PenaltyMatrix,
    empty_constraint,
    make_constraint,
)
from .families import Family, get_family
from .prior import NbpssHyper

__all__ = [
    "BlockPrior",
    "ModelBlock",
    "Model",
    "build_model",
    "make_intercept_block",
    "make_random_intercept_block",
    "propriety_spec",
]

PRIOR_KINDS = ("nbpss", "ig", "flat")


@dataclass(frozen=True)
class BlockPrior:
    """Prior assignment for one effect block.

    kind "nbpss" puts the selection hierarchy on the block scale, "ig" a
    plain inverse gamma on the smoothing variance, "flat" no prior at all
    (parametric terms, intercept). ``omega_group`` keys blocks that share
    one inclusion probability; ``fixed_omega`` pins omega and disables its
    update.
    """

    kind: str = "nbpss"
    hyper: NbpssHyper | None = None
    ig_a: float = 0.001
    ig_b: float = 0.001
    omega_group: str | None = None
    fixed_omega: float | None = None

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "nbpss":
            if self.hyper is None:
                object.__setattr__(self, "hyper", NbpssHyper())
            if self.fixed_omega is not None and not 0 < self.fixed_omega < 1:
                raise ValueError("fixed_omega must lie strictly between 0 and 1")
        # zero is tolerated so improper choices stay expressible; the
        # propriety checker reports them instead of a hard failure here
        if self.kind == "ig" and (self.ig_a < 0 or self.ig_b < 0):
            raise ValueError("ig prior needs ig_a >= 0 and ig_b >= 0")


@dataclass
class ModelBlock:
    """One effect block wired into the model: design, prior, caches."""

    block: EffectBlock
    param: int
    prior: BlockPrior
    basis_dense: np.ndarray = field(init=False, repr=False)
    penalty_dense: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = self.block.basis
        self.basis_dense = np.ascontiguousarray(
            b.toarray() if sp.issparse(b) else np.asarray(b, dtype=float)
        )
        self.penalty_dense = np.asarray(self.block.penalty.matrix.todense(), dtype=float)

    @property
    def label(self) -> str:
        return self.block.label

    @property
    def dim(self) -> int:
        return self.block.dim

    @property
    def rank(self) -> int:
        return self.block.penalty.rank

    def quad_form(self, beta: np.ndarray) -> float:
        return self.block.penalty.quad_form(beta)


@dataclass
class Model:
    """Assembled model: family, response, and blocks in update order.

    ``error_a``/``error_b`` parameterize the inverse gamma prior of the
    Gaussian error variance (ignored for families without that auxiliary).
    """

    family: Family
    y: np.ndarray
    blocks: tuple[ModelBlock, ...]
    error_a: float = 0.001
    error_b: float = 0.001
    propriety_report: object | None = None

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_params(self) -> int:
        return self.family.n_params

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(mb.label for mb in self.blocks)

    def param_blocks(self, k: int) -> tuple[int, ...]:
        """Global indices of the blocks attached to parameter ``k``."""
        return tuple(j for j, mb in enumerate(self.blocks) if mb.param == k)

    def block_index(self, label: str) -> int:
        for j, mb in enumerate(self.blocks):
            if mb.label == label:
                return j
        raise KeyError(label)

    def omega_groups(self) -> dict[str, tuple[int, ...]]:
        """Shared-omega groups; singleton blocks form their own group."""
        groups: dict[str, list[int]] = {}
        for j, mb in enumerate(self.blocks):
            if mb.prior.kind != "nbpss":
                continue
            key = mb.prior.omega_group or f"_single_{mb.label}"
            groups.setdefault(key, []).append(j)
        return {k: tuple(v) for k, v in groups.items()}


def _default_constraint(block: EffectBlock, prior: BlockPrior) -> EffectBlock:
    """Attach the constraint the prior kind calls for, when none is set.

    Selectable blocks get the penalty-kernel constraint so the block scale
    acts on a proper Gaussian; unselected smooth terms get kernel plus
    centering; parametric and flat blocks stay unconstrained.
    """
    if not block.constraint.is_empty:
        return block
    if prior.kind == "nbpss":
        if block.penalty.rank < block.penalty.dim:
            return replace(block, constraint=make_constraint(block.penalty))
        return block
    if prior.kind == "ig" and block.kind in ("spline", "gmrf"):
        return replace(
            block,
            constraint=make_constraint(block.penalty, basis=block.basis, center=True),
        )
    return block


def build_model(
    family: Family | str,
    y: np.ndarray,
    terms: list[tuple[int | str, EffectBlock, BlockPrior]],
    error_a: float = 0.001,
    error_b: float = 0.001,
    attach_constraints: bool = True,
) -> Model:
    """Assemble a model from (parameter, block, prior) term triples.

    The parameter may be given by index or by the family's parameter name.
    Declaration order of the triples fixes the sampler's update order.
    """
    if isinstance(family, str):
        family = get_family(family)
    y = family.check_response(y)
    n = y.shape[0]

    blocks: list[ModelBlock] = []
    seen: set[str] = set()
    for param, block, prior in terms:
        if isinstance(param, str):
            try:
                k = family.param_names.index(param)
            except ValueError:
                raise ValueError(
                    f"{block.label}: unknown parameter {param!r} for family "
                    f"{family.name!r}"
                ) from None
        else:
            k = int(param)
            if not 0 <= k < family.n_params:
                raise ValueError(f"{block.label}: parameter index {k} out of range")
        if block.n_obs != n:
            raise ValueError(
                f"{block.label}: basis has {block.n_obs} rows, response has {n}"
            )
        if block.label in seen:
            raise ValueError(f"duplicate block label {block.label!r}")
        seen.add(block.label)
        if attach_constraints:
            block = _default_constraint(block, prior)
        blocks.append(ModelBlock(block=block, param=k, prior=prior))

    _check_omega_groups(blocks)
    if error_a <= 0 or error_b <= 0:
        raise ValueError("error variance prior needs positive shape and scale")
    return Model(
        family=family,
        y=y,
        blocks=tuple(blocks),
        error_a=float(error_a),
        error_b=float(error_b),
    )


def _check_omega_groups(blocks: list[ModelBlock]) -> None:
    seen: dict[str, tuple] = {}
    for mb in blocks:
        if mb.prior.kind != "nbpss" or mb.prior.omega_group is None:
            continue
        key = mb.prior.omega_group
        sig = (mb.prior.hyper.a0, mb.prior.hyper.b0, mb.prior.fixed_omega)
        if key in seen and seen[key] != sig:
            raise ValueError(
                f"omega group {key!r}: members disagree on the omega prior"
            )
        seen[key] = sig


def make_intercept_block(n: int, label: str = "intercept") -> EffectBlock:
    """Constant-one column for the per-parameter level; pair with a flat prior."""
    pen = PenaltyMatrix(matrix=sp.identity(1, format="csr"), rank=1, kind="identity")
    return EffectBlock(
        label=label,
        basis=np.ones((n, 1)),
        penalty=pen,
        constraint=empty_constraint(1),
        kind="linear",
    )


def make_random_intercept_block(
    codes: np.ndarray, label: str, n_levels: int | None = None
) -> EffectBlock:
    """Exchangeable per-level intercepts: indicator basis, identity penalty."""
    codes = np.asarray(codes)
    if codes.ndim != 1:
        raise ValueError("codes must be a 1-d integer vector")
    levels = int(codes.max()) + 1 if n_levels is None else int(n_levels)
    if codes.min() < 0 or codes.max() >= levels:
        raise ValueError(f"level codes must lie in 0..{levels - 1}")
    n = codes.shape[0]
    basis = sp.csr_matrix(
        (np.ones(n), (np.arange(n), codes.astype(int))), shape=(n, levels)
    )
    pen = PenaltyMatrix(
        matrix=sp.identity(levels, format="csr"), rank=levels, kind="identity"
    )
    return EffectBlock(
        label=label,
        basis=basis,
        penalty=pen,
        constraint=empty_constraint(levels),
        kind="random",
        region_labels=np.arange(levels),
    )


def propriety_spec(model: Model) -> propriety.ModelSpec:
    """Translate an assembled model into propriety-checker inputs.

    Penalized blocks become effects of their parameter's predictor; flat
    blocks contribute unpenalized design columns. The Gaussian error prior
    is forwarded where the family carries one.
    """
    predictors = []
    for k in range(model.n_params):
        effects = []
        unpen_cols = []
        for j in model.param_blocks(k):
            mb = model.blocks[j]
            if mb.prior.kind == "flat":
                unpen_cols.append(mb.basis_dense)
                continue
            if mb.prior.kind == "nbpss":
                a_eff, b_eff = mb.prior.hyper.a, mb.prior.hyper.b
                selected = True
            else:
                a_eff, b_eff = mb.prior.ig_a, mb.prior.ig_b
                selected = False
            effects.append(
                propriety.EffectSpec(
                    label=mb.label,
                    rank=mb.rank,
                    a=a_eff,
                    b=b_eff,
                    selected=selected,
                    pen_design=mb.basis_dense,
                )
            )
        unpen = np.hstack(unpen_cols) if unpen_cols else None
        name = (
            model.family.param_names[k]
            if k < len(model.family.param_names)
            else f"param{k}"
        )
        predictors.append(
            propriety.PredictorSpec(
                name=name, effects=tuple(effects), unpen_design=unpen
            )
        )
    err_a = model.error_a if model.family.name == "gaussian" else None
    err_b = model.error_b if model.family.name == "gaussian" else None
    return propriety.ModelSpec(
        family=model.family.name,
        n_obs=model.n_obs,
        predictors=tuple(predictors),
        error_a=err_a,
        error_b=err_b,
    )
