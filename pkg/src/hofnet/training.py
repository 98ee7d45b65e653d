"""Optimization of network transition and aggregation layers.

The trainable pieces are the node-level transition matrix T (projected
gradient descent on the propagation loss, restricted to transitions observed
in the counted network) and, for clustered networks, the state-to-node
assignment.  The assignment is revised by first learning a first-hop matrix
T_s (state -> node, same machinery) and then moving every state to the
same-block node whose outgoing distribution is closest to the state's learned
first hop.  Transition optimization and assignment updates alternate until
the assignment stabilizes or validation stops improving.

Losses are computed on raw particle counts; per-particle normalization is an
evaluation-time concern and never enters the descent.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import networks as nw
from . import states as st
from .corpus import density_series
from .propagation import (loss_and_grad_T, loss_and_grad_Ts, loss_T, loss_Ts,
                          estimate_series, kld_loss)


class OptimizationDivergence(RuntimeError):
    """Raised when the descent produces a non-finite loss."""


# First/second-moment coefficients of the adaptive step rule.  Divergence
# ratios b/(b̂+ε) make raw gradient entries span many orders of magnitude, so
# the learning rate is applied to moment-normalized (unit-scale) steps; the
# configured rate then bounds the per-entry movement per iteration.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class _AdamState:
    """Per-entry moment-scaled steps for masked projected descent."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad
        mhat = self.m / (1.0 - ADAM_BETA1 ** self.t)
        vhat = self.v / (1.0 - ADAM_BETA2 ** self.t)
        return mhat / (np.sqrt(vhat) + ADAM_EPS)


@dataclass
class TrainConfig:
    horizon: int = 8
    iterations: int = 100
    learning_rate: float = 0.01
    decay: float = 0.9
    decay_every: int = 10
    epsilon: float = 1e-8
    patience_assign: int = 4
    patience_val: int = 5
    max_outer: int = 40
    cluster_threshold: float = 0.04


@dataclass
class OptimizeResult:
    T: np.ndarray
    best_iter: int
    train_losses: list[float] = field(repr=False, default_factory=list)
    val_losses: list[float] = field(repr=False, default_factory=list)
    final_train: float = 0.0
    final_val: float = 0.0


def _normalize_columns(X: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    out = X.copy()
    colsum = out.sum(axis=0)
    nz = colsum > 0
    out[:, nz] /= colsum[nz]
    out[:, ~nz] = fallback[:, ~nz]
    return out


def _data_kld(series, est, eps):
    return kld_loss(series, est, eps)


def optimize_transitions(T0: np.ndarray, M: np.ndarray, node_columns: np.ndarray,
                         block_count: int, n0_tr: np.ndarray, series_tr: np.ndarray,
                         n0_va: np.ndarray | None, series_va: np.ndarray | None,
                         cfg: TrainConfig) -> OptimizeResult:
    """Projected gradient descent on T over the admissible support.

    Series carry raw particle counts.  Iterates are kept near the stochastic
    set by the column-sum penalty rather than per-step renormalization; the
    returned matrix is the column-normalized best-validation iterate, falling
    back to ``T0`` if normalization degrades it past the starting point.
    """
    if n0_va is None:
        n0_va, series_va = n0_tr, series_tr
    mask = M.astype(np.float64)

    def val_of(T):
        est = np.empty_like(series_va)
        est[0] = series_va[0]
        n = n0_va
        for t in range(1, series_va.shape[0]):
            n = T @ n
            est[t] = np.bincount(node_columns, weights=n, minlength=block_count + 1)
        return _data_kld(series_va, est, cfg.epsilon)

    # Candidates are judged as they would be returned: column-normalized.
    # Raw iterates can game the divergence by inflating column sums, so the
    # selection metric always realizes them as stochastic matrices first.
    T = T0.copy()
    best_T = T0.copy()
    val0 = val_of(T0)
    best_val = val0
    best_iter = 0
    train_losses: list[float] = []
    val_losses = [val0]
    adam = _AdamState(T.shape)

    for i in range(cfg.iterations):
        obj, grad = loss_and_grad_T(T, n0_tr, series_tr, node_columns,
                                    block_count, cfg.epsilon)
        train_losses.append(obj)
        if not np.isfinite(obj):
            raise OptimizationDivergence(f"transition loss diverged at iteration {i}")
        lr = cfg.learning_rate * cfg.decay ** (i // cfg.decay_every)
        T = T - lr * (adam.step(grad * mask) * mask)
        np.maximum(T, 0.0, out=T)
        cand = _normalize_columns(T, T0)
        v = val_of(cand)
        if not np.isfinite(v):
            raise OptimizationDivergence(f"validation loss diverged at iteration {i + 1}")
        val_losses.append(v)
        if v < best_val:
            best_val = v
            best_T = cand
            best_iter = i + 1
    train_losses.append(loss_T(T, n0_tr, series_tr, node_columns, block_count,
                               cfg.epsilon))

    chosen = best_T
    final_val = best_val
    if final_val > val0:
        chosen, final_val, best_iter = T0.copy(), val0, 0
    est = estimate_like(chosen, n0_tr, node_columns, block_count,
                        series_tr.shape[0] - 1)
    final_train = _data_kld(series_tr, est, cfg.epsilon)
    return OptimizeResult(T=chosen, best_iter=best_iter, train_losses=train_losses,
                          val_losses=val_losses, final_train=final_train,
                          final_val=final_val)


def estimate_like(T, n0, node_columns, block_count, k) -> np.ndarray:
    est = np.empty((k + 1, block_count + 1))
    n = n0
    est[0] = np.bincount(node_columns, weights=n, minlength=block_count + 1)
    for t in range(1, k + 1):
        n = T @ n
        est[t] = np.bincount(node_columns, weights=n, minlength=block_count + 1)
    return est


def count_state_to_node(network: nw.Network, fc: st.FlatCorpus,
                        state_idx: np.ndarray) -> np.ndarray:
    """Counts of observed first hops: entry [i, j] is state j -> node i."""
    nodes = network.node_of_state[state_idx]
    nxt = fc.has_next()
    frm = state_idx[:-1][nxt[:-1]]
    to = nodes[1:][nxt[:-1]]
    S = network.space.size
    counts = np.bincount(to * S + frm,
                         minlength=network.node_count * S).astype(np.float64)
    return counts.reshape(network.node_count, S)


def initial_first_hop(network: nw.Network, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-normalized first-hop matrix and its admissible mask.

    States never observed with a successor hop to their own node, keeping
    every column stochastic.
    """
    colsum = counts.sum(axis=0)
    Ts = np.zeros_like(counts)
    nz = colsum > 0
    Ts[:, nz] = counts[:, nz] / colsum[nz]
    Ms = (counts > 0).astype(np.uint8)
    for j in np.nonzero(~nz)[0]:
        own = int(network.node_of_state[j])
        Ts[own, j] = 1.0
        Ms[own, j] = 1
    return Ts, Ms


def optimize_first_hop(network: nw.Network, fc: st.FlatCorpus, state_idx: np.ndarray,
                       s0_tr: np.ndarray, series_tr: np.ndarray,
                       s0_va: np.ndarray | None, series_va: np.ndarray | None,
                       cfg: TrainConfig) -> OptimizeResult:
    """Learn the state-to-node first-hop matrix against the fixed T."""
    if s0_va is None:
        s0_va, series_va = s0_tr, series_tr
    counts = count_state_to_node(network, fc, state_idx)
    Ts0, Ms = initial_first_hop(network, counts)
    mask = Ms.astype(np.float64)
    T = network.T
    node_columns = network.node_columns
    B = network.block_count

    def val_of(Ts):
        est = np.empty_like(series_va)
        est[0] = series_va[0]
        n = Ts @ s0_va
        for t in range(1, series_va.shape[0]):
            est[t] = np.bincount(node_columns, weights=n, minlength=B + 1)
            n = T @ n
        return _data_kld(series_va, est, cfg.epsilon)

    Ts = Ts0.copy()
    best_Ts = Ts0.copy()
    val0 = val_of(Ts0)
    best_val = val0
    best_iter = 0
    train_losses: list[float] = []
    val_losses = [val0]
    adam = _AdamState(Ts.shape)

    for i in range(cfg.iterations):
        obj, grad = loss_and_grad_Ts(T, Ts, s0_tr, series_tr, node_columns, B,
                                     cfg.epsilon)
        train_losses.append(obj)
        if not np.isfinite(obj):
            raise OptimizationDivergence(f"first-hop loss diverged at iteration {i}")
        lr = cfg.learning_rate * cfg.decay ** (i // cfg.decay_every)
        Ts = Ts - lr * (adam.step(grad * mask) * mask)
        np.maximum(Ts, 0.0, out=Ts)
        cand = _normalize_columns(Ts, Ts0)
        v = val_of(cand)
        if not np.isfinite(v):
            raise OptimizationDivergence(f"validation loss diverged at iteration {i + 1}")
        val_losses.append(v)
        if v < best_val:
            best_val = v
            best_Ts = cand
            best_iter = i + 1
    train_losses.append(loss_Ts(T, Ts, s0_tr, series_tr, node_columns, B,
                                cfg.epsilon))

    chosen = best_Ts
    final_val = best_val
    if final_val > val0:
        chosen, final_val, best_iter = Ts0.copy(), val0, 0
    return OptimizeResult(T=chosen, best_iter=best_iter, train_losses=train_losses,
                          val_losses=val_losses, final_train=train_losses[-1],
                          final_val=final_val)


def update_aggregation(network: nw.Network, Ts: np.ndarray) -> np.ndarray:
    """Reassign each state to the same-block node whose outgoing transition
    distribution is closest (Euclidean) to the state's learned first hop.

    Ties keep the state's previous node when it participates, otherwise the
    lowest-indexed node.  Returns the new state-to-node assignment.
    """
    space = network.space
    assign = network.node_of_state.copy()
    T = network.T
    for b in range(network.block_count):
        s_idx = np.nonzero(space.current == b)[0]
        if s_idx.size == 0:
            continue
        n_idx = np.nonzero(network.node_block == b)[0]
        S_cols = Ts[:, s_idx]
        N_cols = T[:, n_idx]
        d2 = (np.sum(S_cols * S_cols, axis=0)[:, None]
              + np.sum(N_cols * N_cols, axis=0)[None, :]
              - 2.0 * (S_cols.T @ N_cols))
        dmin = d2.min(axis=1)
        for r, s in enumerate(s_idx):
            winners = n_idx[d2[r] == dmin[r]]
            prev = assign[s]
            assign[s] = prev if prev in winners else winners.min()
    return assign


def partition_signature(node_of_state: np.ndarray) -> tuple:
    groups: dict[int, list[int]] = {}
    for s, n in enumerate(node_of_state):
        groups.setdefault(int(n), []).append(s)
    return tuple(sorted(tuple(g) for g in groups.values()))


def _state_start(network: nw.Network, b0: np.ndarray) -> np.ndarray:
    return network.d_vals * b0[network.state_columns]


def optimize_network(network: nw.Network, train_seqs, val_seqs,
                     cfg: TrainConfig | None = None) -> tuple[nw.Network, OptimizeResult]:
    """One transition-optimization pass over a counted network ("+" variants)."""
    cfg = cfg or TrainConfig()
    series_tr = density_series(train_seqs, network.block_count, cfg.horizon)
    series_va = (density_series(val_seqs, network.block_count, cfg.horizon)
                 if val_seqs is not None else None)
    n0_tr = network.start_nodes(series_tr[0])
    n0_va = network.start_nodes(series_va[0]) if series_va is not None else None
    res = optimize_transitions(network.T, network.M, network.node_columns,
                               network.block_count, n0_tr, series_tr,
                               n0_va, series_va, cfg)
    out = dataclasses.replace(network, T=res.T,
                              provenance={**network.provenance, "trained": True})
    return out, res


def train_clustered(train_seqs, val_seqs, block_count: int, order: int,
                    cfg: TrainConfig | None = None,
                    provenance: dict | None = None) -> tuple[nw.Network, list[dict]]:
    """Alternating transition/aggregation training of a clustered network.

    Returns the best-validation network and a log with one record per outer
    iteration: ``{iter, train_loss, val_loss, nodes, A_changed}``.
    """
    cfg = cfg or TrainConfig()
    net = nw.build_clustered(train_seqs, block_count, order,
                             cfg.cluster_threshold, provenance)
    series_tr = density_series(train_seqs, block_count, cfg.horizon)
    series_va = density_series(val_seqs, block_count, cfg.horizon)
    fc, state_idx = st.lift_exact(net.space, train_seqs)
    s0_tr = _state_start(net, series_tr[0])
    s0_va = _state_start(net, series_va[0])

    def val_of(n):
        est = estimate_series(n, series_va[0], cfg.horizon)
        return _data_kld(series_va, est, cfg.epsilon)

    best_net = dataclasses.replace(net, T=net.T.copy())
    best_val = val_of(net)
    log: list[dict] = []
    streak_assign = 0
    streak_val = 0
    warm: np.ndarray | None = None

    for outer in range(1, cfg.max_outer + 1):
        T0 = warm if warm is not None else net.T
        n0_tr = net.start_nodes(series_tr[0])
        n0_va = net.start_nodes(series_va[0])
        res = optimize_transitions(T0, net.M, net.node_columns, block_count,
                                   n0_tr, series_tr, n0_va, series_va, cfg)
        net = dataclasses.replace(net, T=res.T)

        hop = optimize_first_hop(net, fc, state_idx, s0_tr, series_tr,
                                 s0_va, series_va, cfg)
        assign = update_aggregation(net, hop.T)
        changed = partition_signature(assign) != partition_signature(net.node_of_state)

        if res.final_val < best_val:
            best_val = res.final_val
            best_net = dataclasses.replace(net, T=net.T.copy())
            streak_val = 0
        else:
            streak_val += 1

        log.append({"iter": outer, "train_loss": res.final_train,
                    "val_loss": res.final_val, "nodes": net.node_count,
                    "A_changed": bool(changed)})

        if changed:
            streak_assign = 0
            net = nw.regroup(net, assign, train_seqs, recount=True)
            warm = None
        else:
            streak_assign += 1
            # With the grouping stable and the selected matrix equal to this
            # iteration's starting point, the loop state is a fixpoint: every
            # further iteration would recompute the identical result, so the
            # remaining patience iterations are skipped without changing the
            # returned network.
            if np.array_equal(res.T, T0):
                break
            warm = net.T

        if streak_assign >= cfg.patience_assign or streak_val >= cfg.patience_val:
            break

    best_net.provenance.update({"trained": True})
    return best_net, log
