"""Entropic relaxation of the cross-graph node matching program.

Solves max <A, P> + eps*H(P) subject to prescribed row and column marginals
via alternating log-domain scaling, then extracts hard matches row-wise. The
log-domain form is required: sharpened affinities at eps <= 0.05 overflow a
naive exponential kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, as_matrix, as_vector

DEFAULT_EPSILON = 0.1
DEFAULT_MAX_ITER = 1000
DEFAULT_TOL = 1e-6

# Row and column target totals must agree for the constraint set to be
# non-empty; mismatches indicate a graph-construction bug upstream.
TOTAL_MASS_TOL = 1e-9


@dataclass(frozen=True)
class MarginalSpec:
    """Prescribed row and column sums for a transport plan."""

    row_targets: np.ndarray
    col_targets: np.ndarray

    def __post_init__(self):
        rows = as_vector(self.row_targets, "row_targets")
        cols = as_vector(self.col_targets, "col_targets")
        if np.any(rows <= 0) or np.any(cols <= 0):
            raise ValueError("marginal targets must be strictly positive")
        if abs(rows.sum() - cols.sum()) > TOTAL_MASS_TOL:
            raise ValueError(
                f"row target total {rows.sum()!r} != column target total "
                f"{cols.sum()!r}; the constraint set is empty"
            )
        object.__setattr__(self, "row_targets", rows)
        object.__setattr__(self, "col_targets", cols)

    @classmethod
    def uniform(cls, n_rows: int, n_cols: int) -> "MarginalSpec":
        """Unit column targets with row targets n_cols/n_rows, as in the
        subgraph matching constraints (each linguistic node receives mass 1,
        visual nodes share the total evenly)."""
        return cls(np.full(n_rows, n_cols / n_rows), np.ones(n_cols))


@dataclass
class TransportPlan:
    """Nonnegative plan with convergence diagnostics."""

    plan: np.ndarray
    converged: bool
    marginal_error: float
    iterations: int


def affinity_matrix(visual_nodes, linguistic_nodes) -> np.ndarray:
    """Pairwise cosine similarities between two embedding stacks."""
    V = as_matrix(visual_nodes, "visual_nodes")
    L = as_matrix(linguistic_nodes, "linguistic_nodes")
    if V.shape[1] != L.shape[1]:
        raise ShapeError(f"embedding dims differ: {V.shape[1]} vs {L.shape[1]}")
    vn = np.linalg.norm(V, axis=1)
    ln = np.linalg.norm(L, axis=1)
    if np.any(vn == 0) or np.any(ln == 0):
        raise ValueError("zero-norm node embedding")
    return (V / vn[:, None]) @ (L / ln[:, None]).T


def sinkhorn_normalize(
    affinity,
    marginals: MarginalSpec,
    epsilon: float = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> TransportPlan:
    """Scale exp(affinity/epsilon) to the prescribed marginals.

    Alternates exact row and column potential updates in the log domain until
    the worst marginal deviation falls below `tol` or `max_iter` sweeps have
    run. The returned plan always satisfies the column constraint exactly up
    to floating point (columns are scaled last); `marginal_error` reports the
    worst remaining deviation on either side.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    A = as_matrix(affinity, "affinity")
    r = marginals.row_targets
    c = marginals.col_targets
    if A.shape != (r.size, c.size):
        raise ShapeError(
            f"affinity shape {A.shape} does not match marginals {(r.size, c.size)}"
        )

    log_kernel = A / epsilon
    log_r = np.log(r)
    log_c = np.log(c)
    f = np.zeros(r.size)
    g = np.zeros(c.size)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = log_r - _logsumexp_rows(log_kernel + g[None, :])
        g = log_c - _logsumexp_rows((log_kernel + f[:, None]).T)
        plan = np.exp(log_kernel + f[:, None] + g[None, :])
        err = max(
            float(np.abs(plan.sum(axis=1) - r).max()),
            float(np.abs(plan.sum(axis=0) - c).max()),
        )
        if err <= tol:
            break
    return TransportPlan(plan, err <= tol, err, it)


def _logsumexp_rows(M: np.ndarray) -> np.ndarray:
    # Hand-rolled for speed: these matrices are tiny and the call volume is
    # large, so scipy's generic logsumexp overhead dominates otherwise.
    m = M.max(axis=1)
    return m + np.log(np.exp(M - m[:, None]).sum(axis=1))


def argmax_match(plan) -> list[int]:
    """Most-matched column index per row; ties go to the lowest index."""
    if isinstance(plan, TransportPlan):
        plan = plan.plan
    P = as_matrix(plan, "plan")
    return [int(i) for i in np.argmax(P, axis=1)]
