"""Levenberg-Marquardt on the product of state manifolds."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import InvalidInputError, RankDeficiencyError
from .factors import Factor
from .state import DOF, RobotState

log = logging.getLogger(__name__)


@dataclass
class FactorGraph:
    states: List[RobotState]
    factors: List[Factor] = field(default_factory=list)

    def __post_init__(self):
        t = [s.timestamp_s for s in self.states]
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("state timestamps must be strictly increasing")
        for f in self.factors:
            self._check(f)

    def _check(self, f):
        if any(i < 0 or i >= len(self.states) for i in f.state_ids):
            raise InvalidInputError(f"factor {f.kind} references state outside 0..{len(self.states) - 1}")

    def add(self, factor: Factor):
        self._check(factor)
        self.factors.append(factor)

    def count(self, kind):
        return sum(1 for f in self.factors if f.kind == kind)


@dataclass
class OptimizeResult:
    states: List[RobotState]
    initial_loss: float
    loss: float
    iterations: int
    converged: bool
    loss_history: List[float]


def total_loss(factors: Sequence[Factor], states) -> float:
    """Sum of squared whitened residuals."""
    return float(sum(np.dot(r, r) for r in (f.residual(states) for f in factors)))


def check_observability(n_states: int, factors: Sequence[Factor], fixed=()):
    """Raise :class:`RankDeficiencyError` for graphs with a free gauge.

    Every state must be linked, through factors, to a prior or a fixed state.
    """
    anchors = {f.state_ids[0] for f in factors if f.kind == "prior"} | set(fixed)
    if not anchors:
        raise RankDeficiencyError(
            "graph has no prior: global position and attitude are unconstrained",
            ["global position x/y/z", "global attitude roll/pitch/yaw"],
        )
    adj = {i: set() for i in range(n_states)}
    for f in factors:
        if len(f.state_ids) == 2:
            a, b = f.state_ids
            adj[a].add(b)
            adj[b].add(a)
    seen = set(anchors)
    queue = deque(anchors)
    while queue:
        i = queue.popleft()
        for j in adj[i] - seen:
            seen.add(j)
            queue.append(j)
    free = sorted(set(range(n_states)) - seen)
    if free:
        raise RankDeficiencyError(
            f"states {free} are not connected to any prior",
            [f"state {i} position/attitude/velocity/biases" for i in free],
        )


def _assemble(factors, states, col_of):
    rows, cols, vals, res = [], [], [], []
    r0 = 0
    for f in factors:
        r, blocks = f.linearize(states)
        m = r.size
        res.append(r)
        for sid, J in zip(f.state_ids, blocks):
            c0 = col_of[sid]
            if c0 < 0:
                continue
            ii, jj = np.nonzero(J)
            rows.append(ii + r0)
            cols.append(jj + c0)
            vals.append(J[ii, jj])
        r0 += m
    n = max(col_of) + DOF if max(col_of) >= 0 else 0
    J = sp.csr_matrix(
        (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
        shape=(r0, n),
    )
    return J, np.concatenate(res)


def optimize(graph: FactorGraph, init: Optional[Sequence[RobotState]] = None, fixed=(),
             max_iter: int = 50, rel_tol: float = 1e-8) -> OptimizeResult:
    """Minimise the summed squared whitened residuals of ``graph``.

    Parameters
    ----------
    graph : FactorGraph
    init : sequence of RobotState, optional
        Starting trajectory; defaults to ``graph.states``.
    fixed : iterable of int
        State indices held constant.

    Raises
    ------
    RankDeficiencyError
        If the graph has no prior (or fixed state), or some state cannot be
        reached from one.
    """
    states = list(graph.states if init is None else init)
    if len(states) != len(graph.states):
        raise InvalidInputError("initial trajectory length differs from the graph")
    fixed = set(fixed)
    check_observability(len(states), graph.factors, fixed)

    col_of, c = [], 0
    for i in range(len(states)):
        if i in fixed:
            col_of.append(-1)
        else:
            col_of.append(c)
            c += DOF
    n = c
    loss = total_loss(graph.factors, states)
    history = [loss]
    initial = loss
    lam = 1e-4
    converged = False
    it = 0
    if n == 0:
        return OptimizeResult(states, initial, loss, 0, True, history)

    while it < max_iter:
        it += 1
        if loss <= 1e-30:
            converged = True
            break
        J, r = _assemble(graph.factors, states, col_of)
        H = (J.T @ J).tocsc()
        g = J.T @ r
        diag = H.diagonal()
        damp = np.maximum(diag, 1e-6 * max(diag.max(), 1.0))
        accepted = False
        while lam < 1e12:
            A = H + sp.diags(lam * damp, format="csc")
            try:
                step = spla.spsolve(A, -g)
            except RuntimeError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                lam *= 10.0
                continue
            trial = [
                s if col_of[i] < 0 else s.retract(step[col_of[i] : col_of[i] + DOF])
                for i, s in enumerate(states)
            ]
            new_loss = total_loss(graph.factors, trial)
            if new_loss < loss:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        decrease = loss - new_loss
        states, loss = trial, new_loss
        history.append(loss)
        lam = max(lam / 10.0, 1e-12)
        if decrease <= rel_tol * history[-2]:
            converged = True
            break
    log.debug("optimize: %d iterations, loss %.3e -> %.3e", it, initial, loss)
    return OptimizeResult(states, initial, loss, it, converged, history)


def optimize_sliding(graph: FactorGraph, init: Optional[Sequence[RobotState]] = None,
                     window: int = 20, max_iter: int = 10) -> OptimizeResult:
    """Incremental fixed-lag smoothing over ``window`` keyframes.

    When keyframe ``k`` arrives the states ``k-window+1..k`` are optimised
    with every factor inside that range; the oldest state of the window is
    held fixed instead of being marginalised.
    """
    states = list(graph.states if init is None else init)
    n = len(states)
    initial = total_loss(graph.factors, states)
    iters = 0
    for k in range(n):
        lo = max(0, k - window + 1)
        ids = set(range(lo, k + 1))
        sub = [f for f in graph.factors if set(f.state_ids) <= ids]
        if k > 0 and lo == 0 and not any(f.kind == "prior" for f in sub):
            fixed = {0}
        else:
            fixed = {lo} if lo > 0 else set()
        local = [states[i] for i in range(lo, k + 1)]
        remapped = [_shift(f, lo) for f in sub]
        sub_graph = FactorGraph(local, remapped)
        res = optimize(sub_graph, fixed={i - lo for i in fixed}, max_iter=max_iter)
        states[lo : k + 1] = res.states
        iters += res.iterations
    loss = total_loss(graph.factors, states)
    return OptimizeResult(states, initial, loss, iters, True, [initial, loss])


def _shift(f: Factor, offset: int) -> Factor:
    g = Factor.__new__(Factor)
    g.__dict__.update(f.__dict__)
    g.state_ids = tuple(i - offset for i in f.state_ids)
    return g
