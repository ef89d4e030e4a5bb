"""Optimal-transport machinery: exact EMD, entropic Sinkhorn, barycentric
domain-adaptation maps, and the transport-kernel embedding that equalizes
sequence lengths.

The exact solver works on plain arrays and is deliberately not
differentiated through; where a transported matrix participates in a
gradient computation the plan is treated as a constant and gradients flow
through the barycentric averaging of the target features only. The
Sinkhorn-based embedding is fully differentiable via a fixed unrolled
iteration count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from . import diffcore as dc
from .diffcore import Node
from .errors import DimensionError, InputError, ParameterError


@dataclass
class Coupling:
    """A transport plan with its prescribed marginals and solve diagnostics."""

    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost: float
    converged: bool = True
    marginal_violation: float = 0.0

    def transport_cost(self, cost: np.ndarray) -> float:
        return float((self.plan * cost).sum())


def cost_matrix(src: np.ndarray, tgt: np.ndarray, metric: str = "sqeuclidean") -> np.ndarray:
    """Pairwise costs between the rows of src and tgt."""
    src = np.asarray(src, dtype=float)
    tgt = np.asarray(tgt, dtype=float)
    if src.ndim != 2 or tgt.ndim != 2:
        raise DimensionError("cost_matrix expects 2-D point arrays")
    if src.shape[1] != tgt.shape[1]:
        raise DimensionError(f"feature dims differ: {src.shape[1]} vs {tgt.shape[1]}")
    sq = (
        (src * src).sum(axis=1)[:, None]
        + (tgt * tgt).sum(axis=1)[None, :]
        - 2.0 * src @ tgt.T
    )
    np.maximum(sq, 0.0, out=sq)
    if metric == "sqeuclidean":
        return sq
    if metric == "euclidean":
        return np.sqrt(sq)
    raise ParameterError(f"unknown metric {metric!r}")


def _check_marginals(a: np.ndarray, b: np.ndarray, cost: np.ndarray):
    if cost.ndim != 2 or cost.shape != (a.size, b.size):
        raise DimensionError(
            f"cost shape {cost.shape} does not match marginals ({a.size}, {b.size})"
        )
    if a.size == 0 or b.size == 0:
        raise ParameterError("marginals must be nonempty")
    if (a < 0).any() or (b < 0).any():
        raise InputError("marginals must be nonnegative")
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise InputError(
            f"marginals must sum to 1 within 1e-9, got {a.sum():.12f} and {b.sum():.12f}"
        )


def emd_exact(a, b, cost: np.ndarray) -> Coupling:
    """Exact solution of the transport linear program min <plan, cost>.

    Uniform marginals of equal size are solved by the assignment problem
    (an optimal vertex is a permutation divided by n); everything else goes
    through an exact LP solve. Desk scale only (sizes <= a few hundred).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    cost = np.asarray(cost, dtype=float)
    _check_marginals(a, b, cost)
    n, m = cost.shape

    uniform = (
        n == m
        and np.allclose(a, 1.0 / n, atol=1e-12)
        and np.allclose(b, 1.0 / m, atol=1e-12)
    )
    if uniform:
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros_like(cost)
        plan[rows, cols] = 1.0 / n
    else:
        # Equality-constrained LP on the flattened plan; HiGHS returns a
        # vertex solution. One redundant constraint is dropped.
        a_eq = np.zeros((n + m - 1, n * m))
        for i in range(n):
            a_eq[i, i * m:(i + 1) * m] = 1.0
        for j in range(m - 1):
            a_eq[n + j, j::m] = 1.0
        b_eq = np.concatenate([a, b[:-1]])
        res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if not res.success:
            raise InputError(f"transport LP failed: {res.message}")
        plan = res.x.reshape(n, m)
    violation = max(
        np.abs(plan.sum(axis=1) - a).max(),
        np.abs(plan.sum(axis=0) - b).max(),
    )
    return Coupling(plan, a, b, float((plan * cost).sum()), True, float(violation))


def _round_to_feasible(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximate plan onto the exact marginal polytope."""
    r = plan.sum(axis=1)
    scale_r = np.where(r > 0, np.minimum(1.0, a / np.where(r > 0, r, 1.0)), 0.0)
    p = plan * scale_r[:, None]
    c = p.sum(axis=0)
    scale_c = np.where(c > 0, np.minimum(1.0, b / np.where(c > 0, c, 1.0)), 0.0)
    p = p * scale_c[None, :]
    err_a = a - p.sum(axis=1)
    err_b = b - p.sum(axis=0)
    total = err_a.sum()
    if total > 0:
        p = p + np.outer(err_a, err_b) / total
    return p


def sinkhorn(a, b, cost: np.ndarray, eps: float, max_iters: int = 5000,
             tol: float = 1e-6, round_plan: bool = True) -> Coupling:
    """Entropic-regularized transport via log-domain Sinkhorn iterations.

    Stops when the worst marginal violation drops below ``tol``; a plan that
    did not converge is returned with ``converged=False`` rather than
    silently. With ``round_plan`` the result is projected onto the exact
    marginal polytope after iterating, so its cost can never undercut the
    exact optimum.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    cost = np.asarray(cost, dtype=float)
    _check_marginals(a, b, cost)
    log_a = np.log(np.where(a > 0, a, 1.0))
    log_b = np.log(np.where(b > 0, b, 1.0))
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    k = -cost / eps
    converged = False
    violation = np.inf
    zero_a = a == 0
    zero_b = b == 0
    for _ in range(max_iters):
        f = eps * (log_a - logsumexp(k + g[None, :] / eps, axis=1))
        f[zero_a] = -np.inf
        g = eps * (log_b - logsumexp(k + f[:, None] / eps, axis=0))
        g[zero_b] = -np.inf
        plan = np.exp(k + f[:, None] / eps + g[None, :] / eps)
        violation = max(
            np.abs(plan.sum(axis=1) - a).max(),
            np.abs(plan.sum(axis=0) - b).max(),
        )
        if violation < tol:
            converged = True
            break
    plan = np.exp(k + f[:, None] / eps + g[None, :] / eps)
    if round_plan:
        plan = _round_to_feasible(plan, a, b)
    return Coupling(plan, a, b, float((plan * cost).sum()), converged, float(violation))


def barycentric_map(coupling: Coupling, target_points: np.ndarray) -> np.ndarray:
    """Replace each source point by its plan-weighted average of target rows."""
    target_points = np.asarray(target_points, dtype=float)
    if coupling.plan.shape[1] != target_points.shape[0]:
        raise DimensionError(
            f"plan has {coupling.plan.shape[1]} columns but target has {target_points.shape[0]} rows"
        )
    a = coupling.row_marginal
    if (a <= 0).any():
        raise InputError("barycentric map undefined for zero row marginals")
    return (coupling.plan / a[:, None]) @ target_points


def ot_adapt(src, tgt):
    """Transport src into tgt's domain: uniform marginals, exact EMD, then
    barycentric projection. Accepts plain arrays (returns an array) or
    graph nodes (returns a node whose gradient flows through the target
    features only; the plan is a constant).
    """
    src_is_node = isinstance(src, Node)
    tgt_is_node = isinstance(tgt, Node)
    src_v = src.value if src_is_node else np.asarray(src, dtype=float)
    tgt_v = tgt.value if tgt_is_node else np.asarray(tgt, dtype=float)
    if src_v.shape[1] != tgt_v.shape[1]:
        raise DimensionError(f"feature dims differ: {src_v.shape[1]} vs {tgt_v.shape[1]}")
    n, m = src_v.shape[0], tgt_v.shape[0]
    coupling = emd_exact(np.full(n, 1.0 / n), np.full(m, 1.0 / m), cost_matrix(src_v, tgt_v))
    weights = coupling.plan * n
    if tgt_is_node:
        return dc.matmul(dc.constant(weights), tgt)
    return weights @ tgt_v


@dataclass
class OTKConfig:
    """Settings for the transport-kernel sequence embedding.

    ``reference_count`` must equal the output sequence length. ``entropic_eps``
    is relative to the mean pairwise cost (costs are mean-normalized before
    the Gibbs kernel). The Sinkhorn loop is unrolled for ``sinkhorn_iters``
    steps so the embedding stays differentiable.
    """

    reference_count: int
    entropic_eps: float = 0.1
    sinkhorn_iters: int = 30
    marginal_tol: float = 1e-3

    def __post_init__(self):
        if self.reference_count < 1:
            raise ParameterError("reference_count must be >= 1")
        if self.entropic_eps <= 0:
            raise ParameterError("entropic_eps must be positive")
        if self.sinkhorn_iters < 1:
            raise ParameterError("sinkhorn_iters must be >= 1")


@dataclass
class OTKEmbedding:
    """Result of otk_embed: the embedded sequence plus solve diagnostics."""

    values: Node
    marginal_violation: float
    converged: bool


def _pairwise_sq_cost_node(y: Node, z: Node) -> Node:
    t, d = y.shape
    n = z.rows
    y_sq = dc.sum_cols(dc.elementwise_mul(y, y))
    z_sq = dc.sum_cols(dc.elementwise_mul(z, z))
    cross = dc.scale(dc.matmul(y, dc.transpose(z)), -2.0)
    return dc.add(dc.add(dc.tile_cols(y_sq, n), dc.transpose(dc.tile_cols(z_sq, t))), cross)


def otk_embed(y, references, cfg: OTKConfig) -> OTKEmbedding:
    """Pool a length-T sequence against n references via an entropic plan.

    Output row i is the mass-renormalized plan-weighted average of y's rows
    attending to reference i, so each output row is a convex combination of
    input rows and the result has exactly ``reference_count`` rows. Both
    inputs may be nodes; the embedding is differentiable with respect to
    the sequence and the references through the unrolled iterations.
    """
    y = y if isinstance(y, Node) else dc.constant(y)
    z = references if isinstance(references, Node) else dc.constant(references)
    t, d = y.shape
    n = z.rows
    if z.cols != d:
        raise DimensionError(f"references width {z.cols} != sequence width {d}")
    if n != cfg.reference_count:
        raise DimensionError(f"references rows {n} != configured count {cfg.reference_count}")

    cost = _pairwise_sq_cost_node(y, z)
    mean = dc.scale(dc.sum_all(cost), 1.0 / (t * n))
    mean_full = dc.tile_cols(dc.tile_rows(mean, t), n)
    kernel = dc.exp_ew(dc.scale(dc.elementwise_div(cost, mean_full), -1.0 / cfg.entropic_eps))

    a = dc.constant(np.full((t, 1), 1.0 / t))
    b = dc.constant(np.full((n, 1), 1.0 / n))
    u = dc.constant(np.full((t, 1), 1.0))
    for _ in range(cfg.sinkhorn_iters):
        v = dc.elementwise_div(b, dc.matmul(dc.transpose(kernel), u))
        u = dc.elementwise_div(a, dc.matmul(kernel, v))
    # plan = diag(u) K diag(v); weights for output i are the i-th column.
    plan = dc.elementwise_mul(dc.elementwise_mul(dc.tile_cols(u, n), kernel),
                              dc.transpose(dc.tile_cols(v, t)))
    weights = dc.transpose(plan)
    row_mass = dc.sum_cols(weights)
    weights = dc.elementwise_div(weights, dc.tile_cols(row_mass, t))
    out = dc.matmul(weights, y)

    p = plan.value
    violation = max(
        np.abs(p.sum(axis=1) - 1.0 / t).max(),
        np.abs(p.sum(axis=0) - 1.0 / n).max(),
    )
    return OTKEmbedding(out, float(violation), violation < cfg.marginal_tol)
