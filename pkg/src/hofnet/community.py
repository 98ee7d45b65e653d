"""Flow-based community detection on network transition structure.

Communities are found by minimizing the two-level map-equation codelength of
a random walk whose link flows come from the stationary distribution of the
transition matrix.  A Markov-time dial rescales the between-community exit
flows: larger times make leaving a community cheaper to encode, so optimal
communities grow; smaller times shrink them.  The exit node takes no part in
detection — walk mass that would vanish there is re-injected uniformly, and
trajectory positions mapped to the exit are dropped from visit counting.

Sweeping the dial yields a size/stability trade-off curve; points not
dominated in (average community size, mean communities visited per
trajectory) form its Pareto front.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import states as st

_EPS_IMPROVE = 1e-12


def stationary_flow(T: np.ndarray, teleport: float = 0.15, tol: float = 1e-10,
                    max_iter: int = 100000) -> np.ndarray:
    """Stationary visit distribution of the (teleporting) walk on ``T``.

    Columns of ``T`` may be sub-stochastic; missing mass re-enters uniformly
    each step, as does the teleportation share.  Convergence is measured in
    total variation.
    """
    N = T.shape[0]
    pi = np.full(N, 1.0 / N)
    for _ in range(max_iter):
        step = T @ pi
        nxt = (1.0 - teleport) * step
        nxt += (1.0 - nxt.sum()) / N
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    return pi


def _plogp(x):
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log2(safe), 0.0)


def map_equation(T: np.ndarray, pi: np.ndarray, labels: np.ndarray,
                 markov_time: float = 1.0) -> float:
    """Two-level codelength (bits per step) of a partition.

    Link flows are ``F[i, j] = pi[j] * T[i, j]``; flows leaving a community
    are scaled by the Markov time before entering the index-level terms.
    """
    F = T * pi[None, :]
    C = int(labels.max()) + 1
    p = np.bincount(labels, weights=pi, minlength=C)
    # community-level flow aggregation: W[a, b] = flow from b-members to a-members
    idx = labels[:, None] * C + labels[None, :]
    W = np.bincount(idx.ravel(), weights=F.ravel(), minlength=C * C).reshape(C, C)
    exits = W.sum(axis=0) - np.diag(W)
    q = markov_time * exits
    q_tot = q.sum()
    terms = float(_plogp(q_tot))
    terms -= 2.0 * float(_plogp(q).sum())
    terms += float(_plogp(p + q).sum())
    terms -= float(_plogp(pi).sum())
    return terms


def _codelength_from_stats(p, exits, exits_tot, pi_term, markov_time):
    q = markov_time * exits
    return (float(_plogp(exits_tot * markov_time))
            - 2.0 * float(_plogp(q).sum())
            + float(_plogp(p + q).sum())
            - pi_term)


class _Partitioner:
    """Greedy codelength minimization: best-pair merges alternated with
    single-node moves, repeated until neither improves.  Deterministic."""

    def __init__(self, T: np.ndarray, pi: np.ndarray, markov_time: float):
        self.N = T.shape[0]
        self.mt = markov_time
        self.pi = pi
        self.F = T * pi[None, :]
        np.fill_diagonal(self.F, 0.0)  # self-flow never crosses a boundary
        self.pi_term = float(_plogp(pi).sum())
        # sparse in/out flow lists per node
        self.out_idx = [np.nonzero(self.F[:, v])[0] for v in range(self.N)]
        self.out_val = [self.F[self.out_idx[v], v] for v in range(self.N)]
        self.in_idx = [np.nonzero(self.F[v, :])[0] for v in range(self.N)]
        self.in_val = [self.F[v, self.in_idx[v]] for v in range(self.N)]

    def run(self) -> np.ndarray:
        labels = np.arange(self.N)
        length = self._length(labels)
        while True:
            labels, length, merged = self._merge_pass(labels, length)
            labels, length, moved = self._move_pass(labels, length)
            if not merged and not moved:
                break
        return _canonical_labels(labels)

    # -- helpers ---------------------------------------------------------

    def _stats(self, labels):
        C = int(labels.max()) + 1
        p = np.bincount(labels, weights=self.pi, minlength=C)
        idx = labels[:, None] * C + labels[None, :]
        W = np.bincount(idx.ravel(), weights=self.F.ravel(),
                        minlength=C * C).reshape(C, C)
        exits = W.sum(axis=0) - np.diag(W)
        return p, W, exits

    def _length(self, labels):
        p, _, exits = self._stats(labels)
        return _codelength_from_stats(p, exits, exits.sum(), self.pi_term, self.mt)

    def _merge_pass(self, labels, length):
        """Best-improvement pairwise merges until none improves."""
        labels = _canonical_labels(labels)
        p, W, exits = self._stats(labels)
        merged_any = False
        alive = np.ones(p.shape[0], dtype=bool)
        while alive.sum() > 1:
            cross = W + W.T
            np.fill_diagonal(cross, 0.0)
            cross[~alive] = 0.0
            cross[:, ~alive] = 0.0
            a_idx, b_idx = np.nonzero(np.triu(cross) > 0)
            if a_idx.size == 0:
                break
            mt = self.mt
            q = mt * exits
            q_tot = q[alive].sum()
            qa, qb = q[a_idx], q[b_idx]
            pa, pb = p[a_idx], p[b_idx]
            ex_ab = exits[a_idx] + exits[b_idx] - cross[a_idx, b_idx]
            q_ab = mt * ex_ab
            q_tot_new = q_tot - qa - qb + q_ab
            delta = (_plogp(q_tot_new) - _plogp(q_tot)
                     - 2.0 * (_plogp(q_ab) - _plogp(qa) - _plogp(qb))
                     + _plogp(pa + pb + q_ab)
                     - _plogp(pa + qa) - _plogp(pb + qb))
            best = int(np.argmin(delta))
            if delta[best] >= -_EPS_IMPROVE:
                break
            a, b = int(a_idx[best]), int(b_idx[best])
            labels[labels == b] = a
            W[a, :] += W[b, :]
            W[:, a] += W[:, b]
            W[b, :] = 0.0
            W[:, b] = 0.0
            p[a] += p[b]
            p[b] = 0.0
            exits[a] = W[:, a].sum() - W[a, a]
            exits[b] = 0.0
            alive[b] = False
            length += float(delta[best])
            merged_any = True
        labels = _canonical_labels(labels)
        return labels, self._length(labels), merged_any

    def _move_pass(self, labels, length):
        """Single-node relocations, first-improvement sweeps to a fixpoint."""
        labels = _canonical_labels(labels)
        p, W, exits = self._stats(labels)
        exits = exits.copy()
        p = p.copy()
        moved_any = False
        improved = True
        while improved:
            improved = False
            for v in range(self.N):
                a = int(labels[v])
                out_i, out_v = self.out_idx[v], self.out_val[v]
                in_i, in_v = self.in_idx[v], self.in_val[v]
                out_total = float(out_v.sum())
                in_total = float(in_v.sum())
                C = p.shape[0]
                out_to = np.bincount(labels[out_i], weights=out_v, minlength=C)
                in_from = np.bincount(labels[in_i], weights=in_v, minlength=C)
                cand = np.unique(np.concatenate([labels[out_i], labels[in_i]]))
                cand = cand[cand != a]
                if cand.size == 0:
                    continue
                mt = self.mt
                q = mt * exits
                q_tot = q.sum()
                pv = self.pi[v]
                ex_a_new = exits[a] - (out_total - out_to[a]) + in_from[a]
                ex_b_new = exits[cand] + (out_total - out_to[cand]) - in_from[cand]
                q_a_new = mt * ex_a_new
                q_b_new = mt * ex_b_new
                q_tot_new = q_tot - q[a] - q[cand] + q_a_new + q_b_new
                delta = (_plogp(q_tot_new) - _plogp(q_tot)
                         - 2.0 * (_plogp(q_a_new) + _plogp(q_b_new)
                                  - _plogp(q[a]) - _plogp(q[cand]))
                         + _plogp(p[a] - pv + q_a_new) + _plogp(p[cand] + pv + q_b_new)
                         - _plogp(p[a] + q[a]) - _plogp(p[cand] + q[cand]))
                best = int(np.argmin(delta))
                if delta[best] >= -_EPS_IMPROVE:
                    continue
                b = int(cand[best])
                labels[v] = b
                p[a] -= pv
                p[b] += pv
                exits[a] = ex_a_new
                exits[b] = float(ex_b_new[best])
                length += float(delta[best])
                improved = True
                moved_any = True
        return labels, self._length(labels), moved_any


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..C-1 in order of first appearance."""
    out = np.empty_like(labels)
    mapping: dict[int, int] = {}
    for i, l in enumerate(labels):
        mapping.setdefault(int(l), len(mapping))
        out[i] = mapping[int(l)]
    return out


def detect_partition(T: np.ndarray, markov_time: float = 1.0,
                     teleport: float = 0.15,
                     pi: np.ndarray | None = None) -> np.ndarray:
    """Community labels (0..C-1) for the nodes of ``T``."""
    if pi is None:
        pi = stationary_flow(T, teleport)
    return _Partitioner(T, pi, markov_time).run()


def detect_communities(network, markov_time: float = 1.0,
                       teleport: float = 0.15) -> dict[int, int]:
    """Partition of the network's real nodes; the exit node is left out."""
    ex = network.exit_node
    real = np.array([n for n in range(network.node_count) if n != ex])
    Tr = network.T[np.ix_(real, real)]
    labels = detect_partition(Tr, markov_time, teleport)
    return {int(real[i]): int(labels[i]) for i in range(real.shape[0])}


def exhaustive_partition(T: np.ndarray, markov_time: float = 1.0,
                         teleport: float = 0.15) -> tuple[np.ndarray, float]:
    """Minimum-codelength partition by enumerating all set partitions.

    Only feasible for small networks; used to sanity-check the greedy search.
    """
    N = T.shape[0]
    pi = stationary_flow(T, teleport)
    best = None
    best_len = np.inf

    def partitions(n):
        labels = np.zeros(n, dtype=np.int64)

        def rec(i, maxl):
            if i == n:
                yield labels.copy()
                return
            for l in range(maxl + 2):
                labels[i] = l
                yield from rec(i + 1, max(maxl, l))
        yield from rec(1, 0)

    for labels in partitions(N):
        val = map_equation(T, pi, labels, markov_time)
        if val < best_len - _EPS_IMPROVE:
            best_len = val
            best = labels
    return _canonical_labels(best), float(best_len)


# ---------------------------------------------------------------------------
# Trajectory-level stability and the Markov-time sweep

def mean_community_visits(network, assignment: dict[int, int], seqs) -> float:
    """Average number of communities visited per trajectory.

    Each block sequence is mapped to nodes (longest observed suffix), exit
    positions are dropped, and a trajectory visits ``1 + changes``
    communities along its community-label path.
    """
    fc, state_idx = st.lift_longest_suffix(network.space, seqs)
    nodes = network.node_of_state[state_idx]
    comm = np.full(network.node_count, -1, dtype=np.int64)
    for n, c in assignment.items():
        comm[n] = c
    path = comm[nodes]
    visits = []
    for s, l in zip(fc.starts, fc.lengths):
        seq = path[s:s + l]
        seq = seq[seq >= 0]
        if seq.size == 0:
            continue
        visits.append(1 + int(np.sum(seq[1:] != seq[:-1])))
    return float(np.mean(visits))


@dataclass
class SweepPoint:
    markov_time: float
    n_communities: int
    avg_size_blocks: float
    mean_visits: float
    pareto: bool = False


def _avg_size_blocks(network, assignment: dict[int, int]) -> float:
    by_comm: dict[int, set[int]] = {}
    for n, c in assignment.items():
        by_comm.setdefault(c, set()).add(int(network.node_block[n]))
    sizes = [len(v) for v in by_comm.values()]
    return float(np.mean(sizes))


def pareto_front(points: list[SweepPoint]) -> None:
    """Mark points not dominated in (avg_size_blocks, mean_visits), both
    minimized; dominated means another point is <= in both and < in one."""
    for p in points:
        p.pareto = True
        for q in points:
            if q is p:
                continue
            if (q.avg_size_blocks <= p.avg_size_blocks
                    and q.mean_visits <= p.mean_visits
                    and (q.avg_size_blocks < p.avg_size_blocks
                         or q.mean_visits < p.mean_visits)):
                p.pareto = False
                break


def sweep_markov_time(network, seqs, lo: float = 0.5, hi: float = 3.5,
                      step: float = 0.1, teleport: float = 0.15
                      ) -> tuple[list[SweepPoint], dict[float, dict[int, int]]]:
    """Partition quality across a range of Markov times.

    Returns one point per time (rounded to the sweep's resolution) plus the
    partition found at each, with Pareto-front flags filled in.
    """
    n = int(round((hi - lo) / step))
    times = [round(lo + i * step, 10) for i in range(n + 1)]
    ex = network.exit_node
    real = np.array([i for i in range(network.node_count) if i != ex])
    Tr = network.T[np.ix_(real, real)]
    pi = stationary_flow(Tr, teleport)
    points: list[SweepPoint] = []
    partitions: dict[float, dict[int, int]] = {}
    for mt in times:
        labels = detect_partition(Tr, mt, teleport, pi=pi)
        assignment = {int(real[i]): int(labels[i]) for i in range(real.shape[0])}
        partitions[mt] = assignment
        points.append(SweepPoint(
            markov_time=mt,
            n_communities=int(labels.max()) + 1,
            avg_size_blocks=_avg_size_blocks(network, assignment),
            mean_visits=mean_community_visits(network, assignment, seqs)))
    pareto_front(points)
    return points, partitions


# ---------------------------------------------------------------------------
# Serialization

def save_partition(assignment: dict[int, int], markov_time: float, path: str) -> None:
    payload = {"markov_time": markov_time,
               "assignment": {str(k): int(v) for k, v in sorted(assignment.items())}}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_partition(path: str) -> tuple[float, dict[int, int]]:
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    return float(d["markov_time"]), {int(k): int(v) for k, v in d["assignment"].items()}


def save_sweep(points: list[SweepPoint], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["markov_time", "n_communities", "avg_size_blocks",
                    "mean_visits", "pareto"])
        for p in points:
            w.writerow([f"{p.markov_time:.1f}", p.n_communities,
                        f"{p.avg_size_blocks:.10g}", f"{p.mean_visits:.10g}",
                        int(p.pareto)])
