"""Design matrices, penalties, and identifiability constraints for structured
additive terms.

Every term type is reduced to the same triple: a basis matrix ``B`` mapping
coefficients to predictor contributions, a positive semidefinite penalty ``K``
whose quadratic form drives the smoothness prior, and an optional constraint
``A`` whose rows span directions removed from the coefficient space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Knots",
    "PenaltyMatrix",
    "ConstraintMatrix",
    "EffectBlock",
    "DecomposedEffect",
    "equidistant_knots",
    "bspline_design",
    "difference_penalty",
    "penalized_eigenbasis",
    "make_bspline_block",
    "make_gmrf_block",
    "make_linear_block",
    "make_constraint",
    "decompose_effect",
]

# Relative eigenvalue threshold separating the penalty null space from the
# penalized subspace.
KERNEL_REL_TOL = 1e-10


@dataclass(frozen=True)
class Knots:
    """Equidistant knot grid with boundary extension.

    Attributes
    ----------
    sequence : ndarray
        Full knot vector including the ``degree`` extension knots appended
        beyond each end of the data range.
    degree : int
        Spline degree (3 = cubic).
    interior : int
        Number of grid knots laid over ``[lo, hi]`` inclusive of both ends.
    """

    sequence: np.ndarray
    degree: int
    interior: int

    @property
    def lo(self) -> float:
        return float(self.sequence[self.degree])

    @property
    def hi(self) -> float:
        return float(self.sequence[-self.degree - 1])

    @property
    def n_basis(self) -> int:
        # basis dimension: interior + degree - 1
        return len(self.sequence) - self.degree - 1


@dataclass(frozen=True)
class PenaltyMatrix:
    """Penalty ``K`` with its precomputed rank.

    ``matrix`` is stored sparse; ``rank`` counts strictly positive
    eigenvalues, so ``dim - rank`` is the null-space dimension.
    """

    matrix: sp.csr_matrix
    rank: int
    kind: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def quad_form(self, beta: np.ndarray) -> float:
        b = np.asarray(beta, dtype=float)
        return float(b @ (self.matrix @ b))


@dataclass(frozen=True)
class ConstraintMatrix:
    """Constraint rows ``A`` with orthonormal rows; ``A beta = 0`` is enforced
    on every draw of the block it is attached to."""

    rows: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.rows.shape[0] == 0

    def violation(self, beta: np.ndarray) -> float:
        if self.is_empty:
            return 0.0
        return float(np.max(np.abs(self.rows @ beta)))


def empty_constraint(dim: int) -> ConstraintMatrix:
    return ConstraintMatrix(rows=np.zeros((0, dim)))


@dataclass
class EffectBlock:
    """One model term in basis/penalty/constraint form.

    Attributes
    ----------
    label : str
        Unique term name, used in outputs and summaries.
    basis : ndarray or sparse matrix
        ``n x D`` design matrix of the term.
    penalty : PenaltyMatrix
        ``D x D`` penalty.
    constraint : ConstraintMatrix
        Directions removed from the coefficient space (may be empty).
    kind : str
        ``"spline"``, ``"gmrf"``, or ``"linear"``.
    x : ndarray or None
        Covariate values backing the basis (continuous terms), kept for
        grid re-evaluation in summaries.
    knots : Knots or None
        Knot grid for spline terms.
    rw_order : int or None
        Random-walk order of the difference penalty for spline terms.
    region_labels : ndarray or None
        Region identifiers, index-aligned with basis columns (spatial terms).
    """

    label: str
    basis: object
    penalty: PenaltyMatrix
    constraint: ConstraintMatrix
    kind: str
    x: np.ndarray | None = None
    knots: Knots | None = None
    rw_order: int | None = None
    region_labels: np.ndarray | None = field(default=None)
    x_shift: float = 0.0
    poly_powers: tuple[int, ...] | None = None

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def n_obs(self) -> int:
        return self.basis.shape[0]

    def basis_at(self, x_new: np.ndarray) -> np.ndarray:
        """Re-evaluate the basis at new covariate values (continuous terms)."""
        x_new = np.asarray(x_new, dtype=float)
        if self.kind == "spline":
            return bspline_design(x_new, self.knots)
        if self.kind == "linear":
            if self.poly_powers:
                xc = x_new - self.x_shift
                return np.column_stack([xc**p for p in self.poly_powers])
            return x_new.reshape(-1, 1)
        raise ValueError(f"basis_at is undefined for kind={self.kind!r}")


@dataclass
class DecomposedEffect:
    """Spline effect split into unpenalized polynomial part and the
    penalized remainder, each selectable on its own."""

    linear: EffectBlock | None
    nonlinear: EffectBlock


def equidistant_knots(x: np.ndarray, interior: int = 20, degree: int = 3) -> Knots:
    """Lay ``interior`` equidistant knots over ``[min(x), max(x)]`` and extend
    ``degree`` knots beyond each boundary with the same spacing.

    Parameters
    ----------
    x : ndarray
        Covariate values; must span a nondegenerate range.
    interior : int
        Number of knots on the data range inclusive of both endpoints
        (>= 2).
    degree : int
        Spline degree (>= 1).

    Returns
    -------
    Knots
        Full extended knot vector; resulting basis dimension is
        ``interior + degree - 1``.
    """
    x = np.asarray(x, dtype=float)
    if interior < 2:
        raise ValueError("interior knot count must be >= 2")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    lo, hi = float(np.min(x)), float(np.max(x))
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        raise ValueError("covariate must span a finite, nondegenerate range")
    h = (hi - lo) / (interior - 1)
    left = lo - h * np.arange(degree, 0, -1)
    inner = lo + h * np.arange(interior)
    inner[-1] = hi  # guard the right endpoint against rounding
    right = hi + h * np.arange(1, degree + 1)
    return Knots(sequence=np.concatenate([left, inner, right]), degree=degree, interior=interior)


def bspline_design(x: np.ndarray, knots: Knots) -> np.ndarray:
    """Evaluate the B-spline basis at ``x``.

    Rows sum to one for any ``x`` inside ``[knots.lo, knots.hi]``; values
    outside the range are rejected.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < knots.lo - 1e-12) or np.any(x > knots.hi + 1e-12):
        raise ValueError("covariate value outside the knot range")
    xc = np.clip(x, knots.lo, knots.hi)
    dm = BSpline.design_matrix(xc, knots.sequence, knots.degree, extrapolate=False)
    return np.asarray(dm.todense())


def difference_penalty(dim: int, order: int) -> PenaltyMatrix:
    """Random-walk penalty ``K = D_r' D_r`` from the ``order``-th difference
    matrix; rank is ``dim - order``."""
    if order < 1 or order >= dim:
        raise ValueError("difference order must satisfy 1 <= order < dim")
    d = np.diff(np.eye(dim), n=order, axis=0)
    k = d.T @ d
    return PenaltyMatrix(matrix=sp.csr_matrix(k), rank=dim - order, kind=f"rw{order}")


def penalized_eigenbasis(penalty: PenaltyMatrix, rel_tol: float = KERNEL_REL_TOL):
    """Eigendecompose ``K`` and split null space from penalized subspace.

    Returns
    -------
    null_vecs : ndarray, shape (D, D - rank)
        Orthonormal basis of ker(K).
    pos_vals : ndarray, shape (rank,)
        Strictly positive eigenvalues, ascending.
    pos_vecs : ndarray, shape (D, rank)
        Matching orthonormal eigenvectors.
    """
    k = np.asarray(penalty.matrix.todense())
    vals, vecs = np.linalg.eigh(k)
    vmax = float(vals[-1]) if vals.size else 0.0
    if vmax <= 0.0:
        return vecs, np.empty(0), np.empty((k.shape[0], 0))
    keep = vals > rel_tol * vmax
    return vecs[:, ~keep], vals[keep], vecs[:, keep]


def make_constraint(
    penalty: PenaltyMatrix,
    basis=None,
    center: bool = False,
) -> ConstraintMatrix:
    """Build the constraint matrix for a penalized block.

    The rows are an orthonormal basis of ker(K). With ``center=True`` the
    observed-sum functional ``1'B`` is appended (orthonormalized against the
    kernel rows, and skipped when it already lies in their span).

    Parameters
    ----------
    penalty : PenaltyMatrix
    basis : ndarray or sparse, optional
        Required when ``center=True``; supplies the column sums.
    center : bool

    Returns
    -------
    ConstraintMatrix
        Matrix with orthonormal rows (possibly zero rows for a full-rank
        penalty without centering).
    """
    null_vecs, _, _ = penalized_eigenbasis(penalty)
    rows = null_vecs.T
    if center:
        if basis is None:
            raise ValueError("center=True requires the basis matrix")
        c = np.asarray(basis.sum(axis=0), dtype=float).ravel()
        nrm = np.linalg.norm(c)
        if nrm == 0.0:
            raise ValueError("degenerate centering functional: zero column sums")
        c = c / nrm
        if rows.shape[0]:
            c = c - rows.T @ (rows @ c)
        resid = np.linalg.norm(c)
        if resid > 1e-8:
            rows = np.vstack([rows, c / resid])
    return ConstraintMatrix(rows=np.ascontiguousarray(rows))


def make_bspline_block(
    x: np.ndarray,
    label: str,
    interior: int = 20,
    degree: int = 3,
    rw_order: int = 2,
) -> EffectBlock:
    """Construct a penalized spline term.

    Parameters
    ----------
    x : ndarray
        Covariate values (already standardized upstream if desired).
    label : str
        Term name.
    interior : int
        Knots over the data range inclusive of endpoints; basis dimension is
        ``interior + degree - 1`` (defaults give 22).
    degree : int
        Spline degree.
    rw_order : int
        Order of the difference penalty (1 or 2).

    Notes
    -----
    No constraint is attached here; the caller decides between the kernel
    constraint (selected terms), the centering constraint (unselected smooth
    terms), or none, via :func:`make_constraint`.
    """
    x = np.asarray(x, dtype=float)
    knots = equidistant_knots(x, interior=interior, degree=degree)
    b = bspline_design(x, knots)
    penalty = difference_penalty(knots.n_basis, rw_order)
    return EffectBlock(
        label=label,
        basis=b,
        penalty=penalty,
        constraint=empty_constraint(knots.n_basis),
        kind="spline",
        x=x,
        knots=knots,
        rw_order=rw_order,
    )


def make_gmrf_block(
    region_index: np.ndarray,
    adjacency: np.ndarray,
    label: str,
    region_labels: np.ndarray | None = None,
) -> EffectBlock:
    """Construct an intrinsic Markov random field term over discrete regions.

    Parameters
    ----------
    region_index : ndarray of int
        Per-observation region codes in ``0..R-1``.
    adjacency : ndarray, shape (R, R)
        Symmetric 0/1 neighbourhood matrix with zero diagonal.
    label : str
    region_labels : ndarray, optional
        Display names per region; defaults to the codes.

    Notes
    -----
    ``K`` is the graph Laplacian ``diag(degree) - adjacency`` with rank
    ``R - (number of connected components)``. The basis is the 0/1 incidence
    matrix of observations to regions.
    """
    region_index = np.asarray(region_index)
    adj = np.asarray(adjacency, dtype=float)
    r = adj.shape[0]
    if adj.shape != (r, r):
        raise ValueError("adjacency must be square")
    if not np.allclose(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency diagonal must be zero")
    if region_index.min() < 0 or region_index.max() >= r:
        raise ValueError("region codes must lie in 0..R-1")
    deg = adj.sum(axis=1)
    lap = np.diag(deg) - adj
    n_comp, _ = connected_components(sp.csr_matrix(adj), directed=False)
    n = len(region_index)
    b = sp.csr_matrix(
        (np.ones(n), (np.arange(n), region_index)), shape=(n, r)
    )
    penalty = PenaltyMatrix(matrix=sp.csr_matrix(lap), rank=r - n_comp, kind="gmrf")
    if region_labels is None:
        region_labels = np.arange(r)
    return EffectBlock(
        label=label,
        basis=b,
        penalty=penalty,
        constraint=empty_constraint(r),
        kind="gmrf",
        region_labels=np.asarray(region_labels),
    )


def make_linear_block(x: np.ndarray, label: str) -> EffectBlock:
    """Construct a parametric term with identity penalty.

    ``x`` may be a single column or an ``n x D`` matrix. Used both for
    selectable linear effects (proper normal prior given the block scale)
    and, with a flat prior assigned downstream, for the intercept.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    d = x.shape[1]
    penalty = PenaltyMatrix(matrix=sp.identity(d, format="csr"), rank=d, kind="identity")
    return EffectBlock(
        label=label,
        basis=x,
        penalty=penalty,
        constraint=empty_constraint(d),
        kind="linear",
        x=x[:, 0] if d == 1 else None,
    )


def decompose_effect(block: EffectBlock) -> DecomposedEffect:
    """Split a spline term into its unpenalized polynomial part and the
    penalized remainder for separate selection.

    The polynomial part holds the centered monomials of degree
    ``1 .. rw_order - 1`` (empty for a first-order penalty; the constant
    belongs to the model intercept). The remainder keeps the full basis under
    the kernel constraint, which removes exactly the polynomial directions
    from its coefficient space.

    Returns
    -------
    DecomposedEffect
        The column space of (linear basis, constrained spline basis) matches
        the original basis column space up to the removed constant.
    """
    if block.kind != "spline":
        raise ValueError("only spline terms decompose")
    nonlin = EffectBlock(
        label=f"{block.label}_nonlin",
        basis=block.basis,
        penalty=block.penalty,
        constraint=make_constraint(block.penalty),
        kind="spline",
        x=block.x,
        knots=block.knots,
        rw_order=block.rw_order,
    )
    linear = None
    if block.rw_order >= 2:
        shift = float(np.mean(block.x))
        powers = tuple(range(1, block.rw_order))
        cols = np.column_stack([(block.x - shift) ** p for p in powers])
        linear = make_linear_block(cols, f"{block.label}_lin")
        linear.x = block.x
        linear.x_shift = shift
        linear.poly_powers = powers
    return DecomposedEffect(linear=linear, nonlinear=nonlin)
