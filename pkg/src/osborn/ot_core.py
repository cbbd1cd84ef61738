"""Discrete optimal transport solvers over squared Euclidean ground cost.

Three routes to a transport plan:

* ``sinkhorn``         -- entropic regularization, log-domain scaling updates
* ``sinkhorn_frobenius`` -- squared-Frobenius regularization, solved by
  Dykstra alternating projections (the regularized objective is, up to a
  constant, the squared distance from ``-C / (2 eps)`` to the transport
  polytope, so the minimizer is exactly the Euclidean projection onto it)
* ``exact_ot``         -- the unregularized LP, for small reference instances

All solvers accept explicit marginal weights and tolerate zero-mass rows or
columns by solving the reduced problem and re-inserting zero rows/columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import ComputationError, ValidationError

EXACT_MAX_CELLS = 64


@dataclass(frozen=True)
class MarginalWeights:
    """Probability weights on source rows and target columns."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.source, dtype=np.float64)
        t = np.asarray(self.target, dtype=np.float64)
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)
        for name, v in (("source", s), ("target", t)):
            if v.ndim != 1 or v.size == 0:
                raise ValidationError(f"{name} marginal must be a non-empty vector")
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValidationError(f"{name} marginal must be finite and non-negative")
            if abs(float(v.sum()) - 1.0) > 1e-12:
                raise ValidationError(
                    f"{name} marginal must sum to 1 (got {float(v.sum())!r})"
                )

    @classmethod
    def uniform(cls, n: int, m: int) -> "MarginalWeights":
        if n < 1 or m < 1:
            raise ValidationError("marginal sizes must be >= 1")
        return cls(np.full(n, 1.0 / n), np.full(m, 1.0 / m))


@dataclass(frozen=True)
class Coupling:
    """A transport plan together with its linear cost and solver diagnostics."""

    plan: np.ndarray
    transport_cost: float
    iterations_used: int
    converged: bool


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def cost_matrix(source, target) -> np.ndarray:
    """Pairwise squared Euclidean distances between source and target rows."""
    S = np.asarray(source, dtype=np.float64)
    T = np.asarray(target, dtype=np.float64)
    if S.ndim != 2 or T.ndim != 2:
        raise ValidationError("cost_matrix expects 2-d feature arrays")
    if S.shape[1] != T.shape[1]:
        raise ValidationError(
            f"feature dimension mismatch ({S.shape[1]} vs {T.shape[1]})"
        )
    if S.shape[0] == 0 or T.shape[0] == 0:
        raise ValidationError("feature arrays must be non-empty")
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(T))):
        raise ValidationError("non-finite feature value")
    sq = (S * S).sum(axis=1)[:, None] + (T * T).sum(axis=1)[None, :] - 2.0 * (S @ T.T)
    # rounding can push true zeros slightly negative
    np.maximum(sq, 0.0, out=sq)
    return sq


def median_positive_cost(cost: np.ndarray) -> float:
    """Median cost entry, falling back to the positive entries if the plain
    median is zero (degenerate but possible with many coincident points)."""
    C = np.asarray(cost, dtype=np.float64)
    med = float(np.median(C))
    if med > 0:
        return med
    pos = C[C > 0]
    if pos.size:
        return float(np.median(pos))
    return 1.0


def _validate_problem(cost, marginals: MarginalWeights):
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.size == 0:
        raise ValidationError("cost matrix must be 2-d and non-empty")
    if not np.all(np.isfinite(C)):
        raise ValidationError("cost matrix has non-finite entries")
    if np.any(C < 0):
        raise ValidationError("cost matrix has negative entries")
    n, m = C.shape
    if marginals.source.shape[0] != n or marginals.target.shape[0] != m:
        raise ValidationError(
            f"marginal sizes ({marginals.source.shape[0]}, {marginals.target.shape[0]}) "
            f"do not match cost shape {C.shape}"
        )
    return C


def _embed_plan(reduced_plan, rows, cols, shape):
    full = np.zeros(shape, dtype=np.float64)
    full[np.ix_(rows, cols)] = reduced_plan
    return full


def _lse_rows(A):
    mx = A.max(axis=1)
    return mx + np.log(np.exp(A - mx[:, None]).sum(axis=1))


def _lse_cols(A):
    mx = A.max(axis=0)
    return mx + np.log(np.exp(A - mx[None, :]).sum(axis=0))


def _newton_polish_step(K, f, h, P, b, g, res):
    """One damped Newton step on the entropic dual in the potentials (f, h).

    The dual gradient is the marginal defect and the Hessian is
    ``[[diag(r), P], [P^T, diag(c)]]`` (up to the shared epsilon factor,
    which cancels in the step).  The constant-shift nullspace is handled by
    a tiny Tikhonov term.  Backtracks on the residual; reports failure so
    the caller can fall back to scaling updates.
    """
    nr = f.shape[0]
    r = P.sum(axis=1)
    c = P.sum(axis=0)
    grad = np.concatenate([r - b, c - g])
    H = np.zeros((nr + c.shape[0], nr + c.shape[0]))
    H[:nr, :nr] = np.diag(r)
    H[nr:, nr:] = np.diag(c)
    H[:nr, nr:] = P
    H[nr:, :nr] = P.T
    lam = 1e-12 * (1.0 + float(max(r.max(), c.max())))
    try:
        step = np.linalg.solve(H + lam * np.eye(H.shape[0]), -grad)
    except np.linalg.LinAlgError:
        return f, h, P, res, False
    if not np.all(np.isfinite(step)):
        return f, h, P, res, False
    for alpha in (1.0, 0.5, 0.25, 0.125, 0.0625):
        f_try = f + alpha * step[:nr]
        h_try = h + alpha * step[nr:]
        P_try = np.exp(K + f_try[:, None] + h_try[None, :])
        res_try = max(float(np.abs(P_try.sum(axis=1) - b).max()),
                      float(np.abs(P_try.sum(axis=0) - g).max()))
        if res_try < res:
            return f_try, h_try, P_try, res_try, True
    return f, h, P, res, False


def sinkhorn(cost, marginals: MarginalWeights, epsilon: float,
             max_iters: int = 1000, tol: float = 1e-6) -> Coupling:
    """Entropic OT via log-domain scaling iterations.

    Dual potentials are updated in log space, so small ``epsilon`` does not
    overflow.  Convergence is declared when the worse of the two marginal
    residuals (infinity norm) drops to ``tol``.

    Three standard accelerations, all leaving the fixed point untouched:
    a warmup that anneals the regularization down to ``epsilon`` by halving
    (warm-started potentials); overrelaxed updates whose relaxation factor
    deterministically backs off toward plain updates whenever the residual
    stops shrinking; and, once the residual is small on instances where the
    dense (n+m) dual Hessian is affordable, damped Newton steps on the dual
    potentials.  At small ``epsilon`` with near-degenerate costs plain
    scaling contracts like 1 - O(1e-4) per sweep and cannot reach tight
    tolerances in any reasonable budget; the polish phase converges
    quadratically to the same potentials.
    """
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise ValidationError("epsilon must be > 0")
    max_iters = int(max_iters)
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    C = _validate_problem(cost, marginals)
    rows = np.flatnonzero(marginals.source > 0)
    cols = np.flatnonzero(marginals.target > 0)
    b = marginals.source[rows]
    g = marginals.target[cols]
    Cr = C[np.ix_(rows, cols)]
    log_b = np.log(b)
    log_g = np.log(g)
    f = np.zeros(rows.shape[0])
    h = np.zeros(cols.shape[0])
    iters = 0

    # annealing schedule: start near the median cost, halve down to epsilon
    eps0 = median_positive_cost(Cr)
    levels = []
    e = eps0
    while e > epsilon * 1.5:
        levels.append(e)
        e *= 0.5
    per_level = 25
    warmup_budget = min(len(levels) * per_level, max_iters // 3)
    spent = 0
    for e in levels:
        if spent + per_level > warmup_budget:
            break
        K = -Cr / e
        for _ in range(per_level):
            f = log_b - _lse_rows(K + h[None, :])
            h = log_g - _lse_cols(K + f[:, None])
        spent += per_level
    iters = spent

    K = -Cr / epsilon
    nr, mc = Cr.shape
    omega = 1.8
    check_every = 25
    last_res = np.inf
    converged = False
    newton_ok = (nr + mc) <= 1024
    newton_gate = max(100.0 * float(tol), 1e-4)
    P = np.exp(K + f[:, None] + h[None, :])
    res = np.inf
    while iters < max_iters:
        iters += 1
        if newton_ok and res <= newton_gate:
            f, h, P, res, ok = _newton_polish_step(K, f, h, P, b, g, res)
            if not ok:
                newton_ok = False
        else:
            f0, h0 = f, h
            f_new = log_b - _lse_rows(K + h[None, :])
            f = (1.0 - omega) * f + omega * f_new
            h_new = log_g - _lse_cols(K + f[:, None])
            h = (1.0 - omega) * h + omega * h_new
            z = K + f[:, None] + h[None, :]
            if omega > 1.0 and float(z.max()) > 500.0:
                # extrapolation overshot the exp range; redo this sweep with
                # plain updates, which keep all plan entries <= 1 by design
                omega = 1.0
                f = log_b - _lse_rows(K + h0[None, :])
                h = log_g - _lse_cols(K + f[:, None])
                z = K + f[:, None] + h[None, :]
            P = np.exp(z)
            res = max(float(np.abs(P.sum(axis=1) - b).max()),
                      float(np.abs(P.sum(axis=0) - g).max()))
        if res <= tol:
            converged = True
            break
        if iters % check_every == 0:
            if not res < last_res and omega > 1.0:
                # overrelaxation overshot; ease toward the plain update
                omega = 1.0 + (omega - 1.0) * 0.5
                if omega < 1.05:
                    omega = 1.0
            last_res = res
    if not np.all(np.isfinite(P)):
        raise ComputationError("sinkhorn produced non-finite plan entries")
    plan = _embed_plan(P, rows, cols, C.shape)
    return Coupling(
        plan=_freeze(plan),
        transport_cost=float((C * plan).sum()),
        iterations_used=iters,
        converged=converged,
    )


def _project_transport_affine(X, b, g):
    """Euclidean projection onto {P : P 1 = b, P^T 1 = g} (signs free)."""
    n, m = X.shape
    row_defect = b - X.sum(axis=1)
    total = row_defect.sum()
    u = row_defect / m
    v = (g - X.sum(axis=0) - total / m) / n
    return X + u[:, None] + v[None, :]


def sinkhorn_frobenius(cost, marginals: MarginalWeights, epsilon: float,
                       max_iters: int = 1000, tol: float = 1e-6) -> Coupling:
    """Squared-Frobenius-regularized OT.

    Minimizes ``<C, P> + epsilon * ||P||_F^2`` over the transport polytope.
    Completing the square turns this into projecting ``-C / (2 epsilon)``
    onto the polytope, done here with Dykstra's alternating projections
    between the marginal-constraint affine subspace (closed form) and the
    non-negative orthant (clipping).  Unlike the entropic route the optimal
    plan can be exactly sparse.
    """
    if not (float(epsilon) > 0):
        raise ValidationError("epsilon must be > 0")
    if int(max_iters) < 1:
        raise ValidationError("max_iters must be >= 1")
    C = _validate_problem(cost, marginals)
    rows = np.flatnonzero(marginals.source > 0)
    cols = np.flatnonzero(marginals.target > 0)
    b = marginals.source[rows]
    g = marginals.target[cols]
    Cr = C[np.ix_(rows, cols)]

    X = -Cr / (2.0 * float(epsilon))
    correction = np.zeros_like(X)
    converged = False
    iters = 0
    P = np.maximum(X, 0.0)
    for it in range(1, int(max_iters) + 1):
        Y = _project_transport_affine(X, b, g)
        shifted = Y + correction
        P = np.maximum(shifted, 0.0)
        correction = shifted - P
        X = P
        res_row = float(np.abs(P.sum(axis=1) - b).max())
        res_col = float(np.abs(P.sum(axis=0) - g).max())
        total_err = abs(float(P.sum()) - 1.0)
        iters = it
        if max(res_row, res_col) <= float(tol) and total_err <= 1e-9:
            converged = True
            break
    if not np.all(np.isfinite(P)):
        raise ComputationError("frobenius solver produced non-finite plan entries")
    plan = _embed_plan(P, rows, cols, C.shape)
    return Coupling(
        plan=_freeze(plan),
        transport_cost=float((C * plan).sum()),
        iterations_used=iters,
        converged=converged,
    )


def exact_ot(cost, marginals: MarginalWeights) -> Coupling:
    """Unregularized OT solved as a transportation LP (reference oracle).

    Refuses instances with more than ``EXACT_MAX_CELLS`` plan entries: this
    route exists for validating the scalable solvers, not for production use.
    """
    C = _validate_problem(cost, marginals)
    n, m = C.shape
    if n * m > EXACT_MAX_CELLS:
        raise ValidationError(
            f"exact solver limited to {EXACT_MAX_CELLS} plan entries, got {n * m}"
        )
    rows = np.flatnonzero(marginals.source > 0)
    cols = np.flatnonzero(marginals.target > 0)
    b = marginals.source[rows]
    g = marginals.target[cols]
    Cr = C[np.ix_(rows, cols)]
    nr, mc = Cr.shape
    A_eq = np.zeros((nr + mc, nr * mc))
    for i in range(nr):
        A_eq[i, i * mc:(i + 1) * mc] = 1.0
    for j in range(mc):
        A_eq[nr + j, j::mc] = 1.0
    b_eq = np.concatenate([b, g])
    res = linprog(Cr.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise ComputationError(f"exact transport LP failed: {res.message}")
    P = np.maximum(res.x.reshape(nr, mc), 0.0)
    res_row = float(np.abs(P.sum(axis=1) - b).max())
    res_col = float(np.abs(P.sum(axis=0) - g).max())
    if max(res_row, res_col) > 1e-10:
        raise ComputationError(
            f"exact transport LP returned marginal residual {max(res_row, res_col):g}"
        )
    plan = _embed_plan(P, rows, cols, C.shape)
    return Coupling(
        plan=_freeze(plan),
        transport_cost=float((C * plan).sum()),
        iterations_used=int(getattr(res, "nit", 0)),
        converged=True,
    )
