"""Dense strictly convex QPs with cumulative thrust bounds.

Every turbine owns a block of ``H`` increments ``du`` and the constraint
``lo <= cumsum(du) <= hi``. Substituting ``z = cumsum(du)`` per block turns
this into a box, which a primal active-set method handles directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DenseQP",
    "QPResult",
    "QPError",
    "InfeasibleError",
    "NonConvergenceError",
    "cumulative_bounds",
    "build_cost",
    "solve_qp",
]

PRIMAL_TOL = 1e-10
DUAL_TOL = 1e-8


class QPError(RuntimeError):
    pass


class InfeasibleError(QPError):
    pass


class NonConvergenceError(QPError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


def cumulative_bounds(ct_prev, horizon, ct_min, ct_max):
    """Bounds on the running sums of each turbine's increments.

    Returns ``(lower, upper)`` stacked turbine by turbine, each block being
    ``S1 * (ct_min - ct_prev)`` and ``S1 * (ct_max - ct_prev)``.
    """
    ct_prev = np.atleast_1d(np.asarray(ct_prev, dtype=float))
    lo = np.repeat(ct_min - ct_prev, horizon)
    hi = np.repeat(ct_max - ct_prev, horizon)
    return lo, hi


@dataclass
class DenseQP:
    """``min 0.5 x'Px + q'x + const``  s.t.  ``lower <= S2 x <= upper``.

    ``S2`` is block diagonal with one lower-triangular ones block of size
    ``horizon`` per entry of ``owners``.
    """

    P: np.ndarray
    q: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    horizon: int
    const: float = 0.0
    owners: tuple = ()

    def __post_init__(self):
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"Hessian shape {self.P.shape} does not match {n} variables")
        if n % self.horizon:
            raise ValueError("variable count is not a multiple of the horizon")
        if not self.owners:
            self.owners = tuple(range(n // self.horizon))

    @property
    def n(self):
        return self.q.shape[0]

    def value(self, x):
        return float(0.5 * x @ self.P @ x + self.q @ x + self.const)

    def cumulative(self, x):
        return np.cumsum(x.reshape(-1, self.horizon), axis=1).ravel()


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    iterations: int
    active_lower: np.ndarray
    active_upper: np.ndarray
    residuals: dict = field(default_factory=dict)


def build_cost(predictor, states, y_ref, q, r, free, dU, ct_prev, ct_min, ct_max,
               y_current=None, y_total=None):
    """Tracking cost as a QP in the increments of the ``free`` turbines.

    Every other turbine keeps its increments from ``dU`` (an ``(G, H)``
    array). ``y_current`` are the per-turbine predictions at ``dU``; they are
    computed when omitted, and ``y_total`` (their sum) may be passed
    instead. Since predictions are linear in the increments, only the
    total-output gains of the free turbines are needed to expand the cost
    around ``dU``.
    """
    if not q > 0 or not r > 0:
        raise ValueError(f"weights must be positive, got q={q!r}, r={r!r}")
    H = predictor.horizon
    dU = np.asarray(dU, dtype=float)
    free = list(free)
    if y_total is not None:
        total = np.asarray(y_total, dtype=float)
    else:
        if y_current is None:
            y_current = predictor.predict_all(states, dU)
        total = np.sum(y_current, axis=0)
    gains = [predictor.total_gain(l) for l in free]
    Gam = np.hstack(gains)
    x_cur = np.concatenate([dU[l] for l in free])
    # total output with the free increments set to zero
    base = total - Gam @ x_cur - np.asarray(y_ref, dtype=float)
    q2, r2 = q * q, r * r
    n = len(free) * H
    P = 2.0 * (q2 * Gam.T @ Gam + r2 * np.eye(n))
    lin = 2.0 * q2 * Gam.T @ base
    const = q2 * float(base @ base) + r2 * (float(np.sum(dU * dU)) - float(x_cur @ x_cur))
    ct_prev = np.asarray(ct_prev, dtype=float)
    lo, hi = cumulative_bounds(ct_prev[free], H, ct_min, ct_max)
    return DenseQP(P, lin, lo, hi, H, const, tuple(free))


def _cumulative_transform(qp: DenseQP):
    """Hessian and gradient in ``z = S2 x`` coordinates (``x = D z``)."""
    H = qp.horizon
    n = qp.n
    D = np.zeros((n, n))
    for b in range(n // H):
        s = slice(b * H, (b + 1) * H)
        D[s, s] = np.eye(H) - np.eye(H, k=-1)
    return D.T @ qp.P @ D, D.T @ qp.q, D


def solve_qp(qp: DenseQP, x0=None, max_iter=None) -> QPResult:
    """Primal active-set solve of a :class:`DenseQP`.

    ``x0`` (optional, increments) is a starting guess; it is projected onto
    the feasible set and used when it beats the projected unconstrained
    minimiser. Ties are broken towards the lowest index so the
    result is a deterministic function of the inputs.
    """
    lo, hi = qp.lower, qp.upper
    if np.any(lo > hi + PRIMAL_TOL):
        bad = int(np.flatnonzero(lo > hi + PRIMAL_TOL)[0])
        raise InfeasibleError(f"empty bound interval at variable {bad}: "
                              f"[{lo[bad]:.6g}, {hi[bad]:.6g}]; previous thrust out of bounds?")
    # zero increments are feasible exactly when the previous thrust is in bounds
    outside = (lo > PRIMAL_TOL) | (hi < -PRIMAL_TOL)
    if np.any(outside):
        bad = int(np.flatnonzero(outside)[0])
        raise InfeasibleError(f"previous thrust of block {bad // qp.horizon} lies outside "
                              f"the thrust bounds")
    H, n = qp.horizon, qp.n
    Pz, cz, D = _cumulative_transform(qp)
    scale = 1.0 + float(np.max(np.abs(cz), initial=0.0))
    top = np.maximum(lo, hi)
    # start from the better of the projected unconstrained minimiser and the
    # projected guess; the optimum is unique, so only the work changes
    try:
        z = np.clip(np.linalg.solve(Pz, -cz), lo, top) if n else np.zeros(0)
    except np.linalg.LinAlgError as exc:
        raise QPError("Hessian is not positive definite") from exc
    if x0 is not None:
        zx = np.clip(qp.cumulative(np.asarray(x0, dtype=float)), lo, top)
        if 0.5 * zx @ Pz @ zx + cz @ zx < 0.5 * z @ Pz @ z + cz @ z:
            z = zx
    fixed_eq = np.abs(hi - lo) <= PRIMAL_TOL
    at_lo = (z <= lo) | fixed_eq
    at_hi = (z >= hi) & ~at_lo
    cap = max_iter if max_iter is not None else max(50 * n, 50)

    for it in range(1, cap + 1):
        act = at_lo | at_hi
        free = np.flatnonzero(~act)
        if free.size:
            P_fa = Pz[free]
            rhs = -(cz[free] + P_fa[:, act] @ z[act])
            try:
                target = np.linalg.solve(P_fa[:, free], rhs)
            except np.linalg.LinAlgError as exc:
                raise QPError("Hessian is not positive definite") from exc
            zf = z[free]
            p = target - zf
            step_small = np.abs(p).max() <= PRIMAL_TOL * (1.0 + np.abs(zf).max())
        else:
            step_small = True
        if step_small:
            if free.size:
                z[free] = target
            g = Pz @ z + cz
            mult = np.where(at_lo & ~fixed_eq, g, np.where(at_hi, -g, np.inf))
            worst = int(np.argmin(mult)) if n else 0
            if n == 0 or mult[worst] >= -DUAL_TOL * scale:
                return _finish(qp, z, D, Pz, cz, at_lo, at_hi, fixed_eq, it, scale)
            at_lo[worst] = False
            at_hi[worst] = False
            continue
        # ratio test
        lo_f, hi_f = lo[free], hi[free]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(p < 0, (lo_f - zf) / p, np.where(p > 0, (hi_f - zf) / p, np.inf))
        np.maximum(ratio, 0.0, out=ratio)
        j = int(np.argmin(ratio))
        alpha = ratio[j]
        if alpha >= 1.0:
            z[free] = target
            continue
        z[free] = zf + alpha * p
        idx = free[j]
        if p[j] < 0:
            z[idx] = lo[idx]
            at_lo[idx] = True
        else:
            z[idx] = hi[idx]
            at_hi[idx] = True
    g = Pz @ z + cz
    raise NonConvergenceError(f"active-set iteration cap {cap} reached",
                              {"stationarity": float(np.max(np.abs(g[~(at_lo | at_hi)]),
                                                          initial=0.0))})


def _finish(qp, z, D, Pz, cz, at_lo, at_hi, fixed_eq, iterations, scale):
    lo, hi = qp.lower, qp.upper
    g = Pz @ z + cz
    free = ~(at_lo | at_hi)
    lam_lo = np.where(at_lo, np.maximum(g, 0.0), 0.0)
    lam_hi = np.where(at_hi, np.maximum(-g, 0.0), 0.0)
    residuals = {
        "stationarity": float(np.max(np.abs(g[free]), initial=0.0)) / scale,
        "primal": float(max(np.max(lo - z, initial=0.0), np.max(z - hi, initial=0.0))),
        "dual": float(max(np.max(-np.where(at_lo & ~fixed_eq, g, 0.0), initial=0.0),
                          np.max(np.where(at_hi, g, 0.0), initial=0.0))) / scale,
        "complementarity": float(np.max(lam_lo * np.abs(z - lo) + lam_hi * np.abs(hi - z),
                                        initial=0.0)) / scale,
    }
    x = D @ z
    return QPResult(x, qp.value(x), iterations, at_lo.copy(), at_hi.copy(), residuals)
