"""Higher-order network assembly: distribution, aggregation, and transitions.

A network couples three layers:

* a distribution layer D that spreads per-block particle mass over the
  block's states (each state row is supported only in its own block's column,
  and every block column sums to one);
* an aggregation layer A that assigns every state to exactly one node, where
  only states sharing the same current block may share a node;
* a column-stochastic node transition matrix T with a binary mask M of
  admissible (observed) transitions.

The exit state/node is absorbing: its only admissible transition is the
self-loop.  Builders are provided for first-order networks, fixed-order
networks (one node per state), variable-order networks (states grouped onto
statistically justified shorter contexts), and cluster-initialized networks
meant to be refined by the optimizer.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import states as st
from .clustering import cluster_block_states
from .states import StateSpace, extract_states, lift_exact
from .tracing import TERMINAL_ID

KINDS = ("fon", "fixed", "variable", "flowhon")


class BundleFormatError(ValueError):
    """A network bundle file is malformed."""


@dataclass
class Network:
    kind: str
    order: int
    block_count: int
    space: StateSpace
    node_of_state: np.ndarray   # (S,) node index per state
    node_block: np.ndarray      # (N,) block id per node, -1 for the exit node
    T: np.ndarray               # (N, N) column-stochastic
    M: np.ndarray               # (N, N) uint8 admissible transitions
    d_vals: np.ndarray          # (S,) distribution weight of each state
    provenance: dict = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return int(self.node_block.shape[0])

    @property
    def exit_node(self) -> int:
        return int(np.nonzero(self.node_block == TERMINAL_ID)[0][0])

    @property
    def state_columns(self) -> np.ndarray:
        """Block column index of each state (exit state maps to column B)."""
        cols = self.space.current.copy()
        cols[cols == TERMINAL_ID] = self.block_count
        return cols

    @property
    def node_columns(self) -> np.ndarray:
        """Block column index of each node (exit node maps to column B)."""
        cols = self.node_block.copy()
        cols[cols == TERMINAL_ID] = self.block_count
        return cols

    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        for s, n in enumerate(self.node_of_state):
            out[int(n)].append(s)
        return out

    def node_support(self) -> np.ndarray:
        return np.bincount(self.node_of_state, weights=self.space.occ,
                           minlength=self.node_count)

    def D_dense(self) -> np.ndarray:
        D = np.zeros((self.space.size, self.block_count + 1))
        D[np.arange(self.space.size), self.state_columns] = self.d_vals
        return D

    def A_dense(self) -> np.ndarray:
        A = np.zeros((self.node_count, self.space.size))
        A[self.node_of_state, np.arange(self.space.size)] = 1.0
        return A

    def start_nodes(self, b0: np.ndarray, mode: str = "approximate") -> np.ndarray:
        """Spread a per-block mass vector (length B+1) onto nodes.

        ``approximate`` uses the learned distribution layer.  ``exact`` places
        each block's mass on the node of the particle's true entry state — a
        freshly released particle carries no history, so this is the block's
        first-order state (falling back to the block's canonically first state
        for blocks only ever observed mid-sequence).
        """
        b0 = np.asarray(b0, dtype=np.float64)
        if mode == "approximate":
            s0 = self.d_vals * b0[self.state_columns]
            return np.bincount(self.node_of_state, weights=s0,
                               minlength=self.node_count)
        if mode == "exact":
            # Canonical state order sorts by (block, order, history), so the
            # first state seen for a block is its order-1 state when one
            # exists, and the canonically first state otherwise.
            n0 = np.zeros(self.node_count)
            entry = {}
            for s in range(self.space.size):
                blk = int(self.space.current[s])
                if blk not in entry:
                    entry[blk] = int(self.node_of_state[s])
            for col in range(self.block_count + 1):
                mass = b0[col]
                if mass == 0:
                    continue
                blk = TERMINAL_ID if col == self.block_count else col
                if blk not in entry:
                    raise ValueError(f"block {blk} has no state to enter at")
                n0[entry[blk]] += mass
            return n0
        raise ValueError(f"unknown start mode {mode!r}")


def distribution_values(space: StateSpace) -> np.ndarray:
    """Per-state distribution weights: occurrences normalized per block.

    A block with no observations at all falls back to unit mass on its
    (synthetic) first-order state, keeping every column a partition of unity.
    """
    cols = space.current.copy()
    cols[cols == TERMINAL_ID] = space.block_count
    block_occ = np.bincount(cols, weights=space.occ, minlength=space.block_count + 1)
    d = np.zeros(space.size)
    observed = block_occ[cols] > 0
    d[observed] = space.occ[observed] / block_occ[cols[observed]]
    for s in np.nonzero(~observed)[0]:
        if space.orders[s] == 1:
            d[s] = 1.0
    return d


def count_node_transitions(node_of_state: np.ndarray, node_count: int,
                           fc: st.FlatCorpus, state_idx: np.ndarray) -> np.ndarray:
    """Count node-level transitions along lifted sequences.

    Entry [i, j] counts observed moves node j -> node i.
    """
    nodes = node_of_state[state_idx]
    nxt = fc.has_next()
    frm = nodes[:-1][nxt[:-1]]
    to = nodes[1:][nxt[:-1]]
    counts = np.bincount(to * node_count + frm,
                         minlength=node_count * node_count).astype(np.float64)
    return counts.reshape(node_count, node_count)


def counts_to_transitions(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-normalize counts into T; columns with no observations become
    absorbing self-loops.  Returns (T, M) where M marks admissible entries."""
    colsum = counts.sum(axis=0)
    T = np.zeros_like(counts)
    nz = colsum > 0
    T[:, nz] = counts[:, nz] / colsum[nz]
    M = (counts > 0).astype(np.uint8)
    for j in np.nonzero(~nz)[0]:
        T[j, j] = 1.0
        M[j, j] = 1
    return T, M


def _assemble(kind: str, order: int, space: StateSpace, groups: list[list[int]],
              train_seqs: list[np.ndarray], provenance: dict | None = None) -> Network:
    """Build a network from a partition of the states into same-block groups."""
    size = space.size
    seen = np.zeros(size, dtype=bool)
    for g in groups:
        blocks = {int(space.current[s]) for s in g}
        if len(blocks) != 1:
            raise ValueError("a node may only aggregate states of one block")
        for s in g:
            if seen[s]:
                raise ValueError("state assigned to two nodes")
            seen[s] = True
    if not seen.all():
        raise ValueError("every state must belong to a node")

    def group_key(g):
        blk = int(space.current[g[0]])
        return (blk == TERMINAL_ID, blk, min(g))

    groups = sorted([sorted(g) for g in groups], key=group_key)
    node_of_state = np.empty(size, dtype=np.int64)
    node_block = np.empty(len(groups), dtype=np.int64)
    for n, g in enumerate(groups):
        node_block[n] = space.current[g[0]]
        for s in g:
            node_of_state[s] = n

    fc, state_idx = lift_exact(space, train_seqs)
    counts = count_node_transitions(node_of_state, len(groups), fc, state_idx)
    T, M = counts_to_transitions(counts)
    return Network(kind=kind, order=order, block_count=space.block_count,
                   space=space, node_of_state=node_of_state, node_block=node_block,
                   T=T, M=M, d_vals=distribution_values(space),
                   provenance=dict(provenance or {}))


def build_fixed_order(train_seqs: list[np.ndarray], block_count: int, k: int,
                      kind: str = "fixed", provenance: dict | None = None) -> Network:
    """One node per extracted state (the aggregation layer is the identity)."""
    space = extract_states(train_seqs, block_count, k)
    groups = [[s] for s in range(space.size)]
    return _assemble(kind, k, space, groups, train_seqs, provenance)


def build_fon(train_seqs: list[np.ndarray], block_count: int,
              provenance: dict | None = None) -> Network:
    """First-order network: nodes are blocks (plus exit)."""
    return build_fixed_order(train_seqs, block_count, 1, kind="fon",
                             provenance=provenance)


def default_promotion_threshold(order: int, support: float) -> float:
    return order / math.log2(1.0 + support)


def build_variable_order(train_seqs: list[np.ndarray], block_count: int, max_k: int,
                         threshold_fn=None, provenance: dict | None = None) -> Network:
    """Variable-order network: a history window earns its own node only when
    its next-block distribution diverges enough from its shorter parent.

    The divergence test compares each exact-order context (order >= 2,
    aggregated over all its occurrences) against the context one entry
    shorter; KLD is measured in bits and the default threshold is
    ``order / log2(1 + support)``.  States whose window was not promoted are
    represented by their longest retained suffix.
    """
    if threshold_fn is None:
        threshold_fn = default_promotion_threshold
    space = extract_states(train_seqs, block_count, max_k)
    ctx = st.context_statistics(train_seqs, block_count, max_k)

    retained: set[int] = set()
    for key in ctx[1][0]:
        retained.add(int(key))
    for b in range(block_count):  # synthetic first-order contexts for D fallback
        retained.add(b + 2)

    for j in range(2, max_k + 1):
        keys_j, counts_j = ctx[j]
        pkeys, pcounts = ctx[j - 1]
        support = counts_j.sum(axis=1)
        for i in range(keys_j.shape[0]):
            if support[i] <= 0:
                continue
            key = int(keys_j[i])
            parent = st.suffix_key(key, j - 1)
            pi = int(np.searchsorted(pkeys, parent))
            p_high = counts_j[i] / support[i]
            psupp = pcounts[pi].sum()
            p_low = pcounts[pi] / psupp
            nz = p_high > 0
            kld = float(np.sum(p_high[nz] * np.log2(p_high[nz] / p_low[nz])))
            if kld > threshold_fn(j, float(support[i])):
                retained.add(key)

    rep_of_state = np.empty(space.size, dtype=np.int64)
    rep_keys: dict[int, int] = {}
    for s in range(space.size):
        if s == space.exit_index:
            rep = int(st.EXIT_KEY)
        else:
            key = int(space.keys[s])
            rep = key & 0xFFFF  # order-1 fallback always exists
            for j in range(int(space.orders[s]), 0, -1):
                cand = st.suffix_key(key, j)
                if cand in retained:
                    rep = cand
                    break
        rep_of_state[s] = rep_keys.setdefault(rep, len(rep_keys))

    groups: list[list[int]] = [[] for _ in range(len(rep_keys))]
    for s in range(space.size):
        groups[rep_of_state[s]].append(s)
    groups = [g for g in groups if g]
    return _assemble("variable", max_k, space, groups, train_seqs, provenance)


def build_clustered(train_seqs: list[np.ndarray], block_count: int, k: int,
                    cluster_threshold: float,
                    provenance: dict | None = None) -> Network:
    """Group same-block states by transition similarity; the starting point
    for transition/aggregation optimization."""
    space = extract_states(train_seqs, block_count, k)
    support = space.support
    dists = np.zeros_like(space.trans)
    nz = support > 0
    dists[nz] = space.trans[nz] / support[nz, None]

    groups: list[list[int]] = []
    for b in range(block_count):
        idx = np.nonzero(space.current == b)[0]
        if idx.size == 0:
            continue
        groups.extend(cluster_block_states(idx, dists[idx], support[idx],
                                           cluster_threshold))
    groups.append([space.exit_index])
    return _assemble("flowhon", k, space, groups, train_seqs, provenance)


def regroup(network: Network, node_of_state: np.ndarray,
            train_seqs: list[np.ndarray], recount: bool = True,
            warm_T: np.ndarray | None = None) -> Network:
    """Rebuild a network around a new state-to-node assignment.

    Empty nodes are dropped and node indices recanonicalized.  With
    ``recount`` the transition matrix is re-counted from the training data;
    otherwise ``warm_T`` (aligned with the new node order) is used.
    """
    groups_map: dict[int, list[int]] = {}
    for s, n in enumerate(node_of_state):
        groups_map.setdefault(int(n), []).append(s)
    groups = list(groups_map.values())
    rebuilt = _assemble(network.kind, network.order, network.space, groups,
                        train_seqs, network.provenance)
    if not recount:
        if warm_T is None:
            raise ValueError("warm_T required when recount is disabled")
        rebuilt.T = warm_T
    return rebuilt


# ---------------------------------------------------------------------------
# Bundle serialization

def network_to_dict(network: Network) -> dict:
    s_cols = network.state_columns
    members = network.members()
    support = network.node_support()
    nodes = []
    for n in range(network.node_count):
        nodes.append({
            "id": n,
            "block": int(network.node_block[n]),
            "order": max(int(network.space.orders[s]) for s in members[n]),
            "members": [list(network.space.history_of(s)) for s in members[n]],
            "support": float(support[n]),
        })
    D = [[s, int(s_cols[s]), float(network.d_vals[s])]
         for s in range(network.space.size)]
    A = [[int(network.node_of_state[s]), s, 1] for s in range(network.space.size)]
    Mi, Mj = np.nonzero(network.M)
    M = sorted([int(i), int(j), 1] for i, j in zip(Mi, Mj))
    Ti, Tj = np.nonzero(network.T >= 1e-12)
    T = sorted([int(i), int(j), float(network.T[i, j])] for i, j in zip(Ti, Tj))
    return {
        "kind": network.kind,
        "order": network.order,
        "B": network.block_count,
        "nodes": nodes,
        "D": D,
        "A": A,
        "M": M,
        "T": T,
        "provenance": network.provenance,
    }


def save_network(network: Network, path: str) -> None:
    payload = json.dumps(network_to_dict(network), sort_keys=True,
                         separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as f:
        f.write(payload)
        f.write("\n")


def _pack_state(current: int, history: list[int]) -> int:
    key = current + 2
    for j, h in enumerate(history, start=1):
        key += (h + 2) << (16 * j)
    return key


def load_network(path: str) -> Network:
    """Reconstruct a network from its bundle.

    The rebuilt object carries the state layout and all matrices but no raw
    training statistics, which is sufficient for every evaluation entry point.
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise BundleFormatError(f"{path}: invalid JSON: {e}") from e
    for key in ("kind", "order", "B", "nodes", "D", "A", "M", "T", "provenance"):
        if key not in data:
            raise BundleFormatError(f"{path}: missing key {key!r}")
    if data["kind"] not in KINDS:
        raise BundleFormatError(f"{path}: unknown network kind {data['kind']!r}")
    B = int(data["B"])

    state_keys: list[int] = []
    node_of: list[int] = []
    currents: list[int] = []
    node_block = np.empty(len(data["nodes"]), dtype=np.int64)
    for node in sorted(data["nodes"], key=lambda nd: nd["id"]):
        nid = int(node["id"])
        node_block[nid] = int(node["block"])
        for hist in node["members"]:
            state_keys.append(_pack_state(int(node["block"]), [int(h) for h in hist]))
            currents.append(int(node["block"]))
            node_of.append(nid)

    keys = np.array(state_keys, dtype=np.int64)
    if np.unique(keys).shape[0] != keys.shape[0]:
        raise BundleFormatError(f"{path}: duplicate states across nodes")
    order = st._canonical_order(keys)
    keys = keys[order]
    currents = np.array(currents, dtype=np.int64)[order]
    node_of_state = np.array(node_of, dtype=np.int64)[order]
    orders = np.array([st.key_order(int(kk)) for kk in keys], dtype=np.int64)
    size = keys.shape[0]

    exit_candidates = np.nonzero(currents == TERMINAL_ID)[0]
    if exit_candidates.shape[0] != 1:
        raise BundleFormatError(f"{path}: expected exactly one exit state")
    space = StateSpace(k=int(data["order"]), block_count=B, keys=keys,
                       current=currents, orders=orders,
                       occ=np.zeros(size), trans=np.zeros((size, B + 1)),
                       exit_index=int(exit_candidates[0]),
                       _lookup={int(kk): i for i, kk in enumerate(keys)})

    d_vals = np.zeros(size)
    for s_idx, col, val in data["D"]:
        expect = B if currents[s_idx] == TERMINAL_ID else currents[s_idx]
        if col != expect:
            raise BundleFormatError(f"{path}: D entry [{s_idx},{col}] off its block column")
        d_vals[int(s_idx)] = float(val)

    n = node_block.shape[0]
    for nid, s_idx, val in data["A"]:
        if int(val) != 1 or node_of_state[int(s_idx)] != int(nid):
            raise BundleFormatError(f"{path}: A entries disagree with node membership")

    T = np.zeros((n, n))
    for i, j, p in data["T"]:
        T[int(i), int(j)] = float(p)
    M = np.zeros((n, n), dtype=np.uint8)
    for i, j, v in data["M"]:
        M[int(i), int(j)] = int(v)
    colsum = T.sum(axis=0)
    bad = np.abs(colsum - 1.0) > 1e-6
    if np.any(bad & (colsum <= 0)):
        raise BundleFormatError(f"{path}: transition column {int(np.nonzero(bad)[0][0])} empty")
    T = T / colsum  # re-tighten stochasticity after triplet rounding

    network = Network(kind=data["kind"], order=int(data["order"]), block_count=B,
                      space=space, node_of_state=node_of_state, node_block=node_block,
                      T=T, M=M, d_vals=d_vals, provenance=dict(data["provenance"]))
    return network
