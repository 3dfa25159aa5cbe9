"""Horizon prediction of subsystem power outputs.

Two equivalent routes are provided. :func:`build_prediction` materialises
the stacked matrices (free response, input Toeplitz, upstream coupling
Toeplitz, shift and injection) and :func:`predict_Y` evaluates the nested
upstream cascade with them literally; this is only affordable for small
states and horizons. :class:`CondensedPredictor` produces the same numbers
from Markov parameters. It exploits the fact that neighbours couple
through a handful of signals (the low-rank ``A_up``), so every
source-to-target map collapses to an ``H x nx`` and an ``H x H`` block
computed once per model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PredictionOperator",
    "SizingError",
    "DependencyError",
    "build_prediction",
    "predict_Y",
    "CondensedPredictor",
    "factor_coupling",
]

DEFAULT_MEMORY_BUDGET = 512 * 2 ** 20


class SizingError(MemoryError):
    pass


class DependencyError(KeyError):
    def __init__(self, missing, target):
        super().__init__(f"prediction of subsystem {target} needs the state of "
                         f"subsystem {missing}, which was not supplied")
        self.missing = missing
        self.target = target


@dataclass(frozen=True)
class PredictionOperator:
    index: int
    horizon: int
    F_x: np.ndarray
    F: np.ndarray
    Phi_x: np.ndarray
    Phi: np.ndarray
    Xi: np.ndarray | None
    L: np.ndarray
    W: np.ndarray
    C_blk: np.ndarray


def _powers(A, H):
    out = [A]
    for _ in range(H - 1):
        out.append(out[-1] @ A)
    return out


def _toeplitz(A_pows, first, H):
    """Block lower-triangular Toeplitz with blocks ``A^(t-s) @ first``."""
    n, m = first.shape
    blocks = [first] + [P @ first for P in A_pows[:H - 1]]
    out = np.zeros((n * H, m * H))
    for t in range(H):
        for s in range(t + 1):
            out[t * n:(t + 1) * n, s * m:(s + 1) * m] = blocks[t - s]
    return out


def build_prediction(vmodels, sets, horizon, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Materialise the stacked prediction matrices of every subsystem."""
    H = int(horizon)
    if H < 1:
        raise ValueError("horizon must be >= 1")
    need = 0
    for m in vmodels:
        nx = m.nx
        need += nx * H * nx * 3 + nx * H * H + (nx * H) ** 2
        if m.A_up is not None:
            need += nx * H * m.A_up.shape[1] * H
    need *= 8
    if need > memory_budget:
        raise SizingError(f"stacked prediction matrices need {need / 2**20:.1f} MiB for "
                          f"horizon {H}; budget is {memory_budget / 2**20:.1f} MiB")
    ops = []
    for m in vmodels:
        nx = m.nx
        pows = _powers(m.A, H)
        F_x = np.vstack(pows)
        C_blk = np.kron(np.eye(H), m.C)
        Phi_x = _toeplitz(pows, m.B, H)
        Xi = _toeplitz(pows, m.A_up, H) if m.A_up is not None else None
        L = np.kron(np.eye(H, k=-1), np.eye(nx))
        W = np.zeros((nx * H, nx))
        W[:nx] = np.eye(nx)
        ops.append(PredictionOperator(m.index, H, F_x, C_blk @ F_x, Phi_x, C_blk @ Phi_x,
                                      Xi, L, W, C_blk))
    return ops


def _chain(i, sets):
    """Upwind members of the horizon set of ``i``, most upwind first."""
    return list(sets.upstream_h[i])


def _get(seq, j, target):
    try:
        v = seq[j]
    except (IndexError, KeyError):
        raise DependencyError(j, target) from None
    if v is None:
        raise DependencyError(j, target)
    return np.asarray(v, dtype=float)


def predict_Y(i, states, dU, ops, sets):
    """Predicted outputs of subsystem ``i`` over the horizon.

    ``states[j]`` is the velocity-form state of ``j`` at sample ``k`` and
    ``dU[j]`` its increment sequence; only ``i`` and its horizon-upwind set
    are read. The nested cascade is accumulated from the most upwind member
    towards ``i``.
    """
    op = ops[i]
    x_i, u_i = _get(states, i, i), _get(dU, i, i)
    y = op.F @ x_i + op.Phi @ u_i
    chain = _chain(i, sets)
    if not chain:
        return y
    inner = None
    for j in chain:
        o = ops[j]
        traj = (o.L @ o.F_x + o.W) @ _get(states, j, i) + o.L @ o.Phi_x @ _get(dU, j, i)
        if inner is not None:
            traj = traj + o.L @ inner
        # contribution of this trajectory to the next subsystem's states
        nxt = ops[j + 1]
        inner = nxt.Xi @ traj
    return y + op.C_blk @ inner


def factor_coupling(A_up):
    """Write ``A_up = E @ G`` with ``G`` the few signals a neighbour exports.

    Rows 1.. of a velocity-form coupling block are the original coupling
    rows; its first row is a combination of them. Falls back to an SVD if
    that structure is absent.
    """
    rows = np.flatnonzero(np.any(A_up[1:] != 0.0, axis=1)) + 1
    if rows.size:
        G = A_up[rows]
        coef, *_ = np.linalg.lstsq(G.T, A_up[0], rcond=None)
        if np.allclose(coef @ G, A_up[0], rtol=1e-12, atol=1e-12 * max(1.0, np.abs(A_up).max())):
            E = np.zeros((A_up.shape[0], rows.size))
            E[0] = coef
            E[rows, np.arange(rows.size)] = 1.0
            return E, G
    U, s, Vt = np.linalg.svd(A_up, full_matrices=False)
    r = int(np.sum(s > s[0] * 1e-13)) if s.size and s[0] > 0 else 0
    return U[:, :r] * s[:r], Vt[:r]


def _strict_toeplitz(blocks, H):
    """Rows ``t``, cols ``s < t``: ``blocks[t - 1 - s]``; first block row zero."""
    r, c = blocks[0].shape
    out = np.zeros((r * H, c * H))
    for t in range(1, H):
        for s in range(t):
            out[t * r:(t + 1) * r, s * c:(s + 1) * c] = blocks[t - 1 - s]
    return out


def _lower_toeplitz(blocks, H):
    r, c = blocks[0].shape
    out = np.zeros((r * H, c * H))
    for t in range(H):
        for s in range(t + 1):
            out[t * r:(t + 1) * r, s * c:(s + 1) * c] = blocks[t - s]
    return out


class CondensedPredictor:
    """Cached source-to-target prediction maps.

    ``state_map[i][l]`` (``H x nx_l``) and ``input_map[i][l]`` (``H x H``)
    give ``Y_i = sum_l state_map[i][l] @ x_l + input_map[i][l] @ dU_l`` over
    ``l`` in ``{i}`` plus the horizon-upwind set of ``i``.
    """

    def __init__(self, vmodels, sets, horizon):
        H = int(horizon)
        if H < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = H
        self.sets = sets
        self.vmodels = vmodels
        G = len(vmodels)
        self.sources = [tuple(sets.upstream_h[i]) + (i,) for i in range(G)]
        self.state_map = [dict() for _ in range(G)]
        self.input_map = [dict() for _ in range(G)]
        self._gain_cache = {}
        self._build()

    def _markov(self, row, A, n):
        out = [row]
        for _ in range(n - 1):
            out.append(out[-1] @ A)
        return out

    def _build(self):
        H = self.horizon
        vm = self.vmodels
        G = len(vm)
        factors = {}
        for m in vm:
            if m.A_up is not None:
                factors[m.index] = factor_coupling(m.A_up)
        # own free and forced response
        K = {}
        for m in vm:
            CA = self._markov(m.C @ m.A, m.A, H)          # C A^(t+1)
            F = np.vstack(CA)
            CB = [m.C @ m.B] + [row @ m.B for row in CA[:H - 1]]
            self.state_map[m.index][m.index] = F
            self.input_map[m.index][m.index] = _lower_toeplitz(CB, H)
            if m.index in factors:
                E = factors[m.index][0]
                CE = [m.C @ E] + [row @ E for row in CA[:H - 1]]
                K[m.index] = _lower_toeplitz(CE, H)
        # export maps: z_{m+1}[t] = G_{m+1} x_m[k+t]
        downstream_of = {m.upstream: m.index for m in vm if m.upstream is not None}
        export_x, export_u, transfer = {}, {}, {}
        for m in vm:
            nxt = downstream_of.get(m.index)
            if nxt is None:
                continue
            Gm = factors[nxt][1]
            GA = self._markov(Gm, m.A, H)                  # G A^t, t = 0..H-1
            export_x[m.index] = np.vstack(GA)
            export_u[m.index] = _strict_toeplitz([row @ m.B for row in GA[:H - 1]] or
                                                 [Gm @ m.B], H)
            if m.index in factors:
                export_in = [row @ factors[m.index][0] for row in GA[:H - 1]] or \
                    [Gm @ factors[m.index][0]]
                transfer[m.index] = _strict_toeplitz(export_in, H)
        # propagate each source down its row while targets still list it
        for l in range(G):
            jx, ju = export_x.get(l), export_u.get(l)
            m = l + 1
            while jx is not None and m < G and vm[m].upstream == m - 1 and l in self.sources[m]:
                self.state_map[m][l] = K[m] @ jx
                self.input_map[m][l] = K[m] @ ju
                if m in transfer:
                    jx, ju = transfer[m] @ jx, transfer[m] @ ju
                else:
                    jx = None
                m += 1

    def predict(self, i, states, dU):
        y = np.zeros(self.horizon)
        for l in self.sources[i]:
            y += self.state_map[i][l] @ _get(states, l, i) + self.input_map[i][l] @ _get(dU, l, i)
        return y

    def free_response(self, i, states):
        y = np.zeros(self.horizon)
        for l in self.sources[i]:
            y += self.state_map[i][l] @ _get(states, l, i)
        return y

    def predict_all(self, states, dU):
        return np.array([self.predict(i, states, dU) for i in range(len(self.vmodels))])

    def total_gain(self, l):
        """``H x H`` map from the increments of ``l`` to the summed farm output."""
        gain = self._gain_cache.get(l)
        if gain is None:
            gain = sum(self.input_map[i][l] for i in self.influence(l))
            self._gain_cache[l] = gain
        return gain

    def influence(self, l):
        """Targets whose prediction depends on the inputs of ``l``."""
        return [i for i in range(len(self.vmodels)) if l in self.input_map[i]]
