"""Network assembly: counting, distribution weights, grouping, serialization."""

import numpy as np
import pytest

import hofnet as hn
from hofnet import networks as nw
from hofnet import states as st
from invariants import assert_network_invariants


def random_corpus(rng, block_count, n_seqs, p_exit=0.15, max_len=12):
    """Random block walks; roughly half the runs end by leaving the domain."""
    seqs = []
    for _ in range(n_seqs):
        cur = int(rng.integers(block_count))
        out = [cur]
        while len(out) < max_len:
            if rng.random() < p_exit:
                out.append(-1)
                break
            # move to a different block so entries stay deduplicated
            cur = int((cur + 1 + rng.integers(block_count - 1)) % block_count)
            out.append(cur)
        seqs.append(np.array(out, dtype=np.int32))
    return seqs


def brute_force_transitions(seqs, k):
    """Window-level transition counts via plain dictionaries.

    The state at position i is the trailing window of length min(i+1, k);
    an exit entry is the single exit state.
    """
    def state_at(seq, i):
        if seq[i] == -1:
            return ("exit",)
        lo = max(0, i - k + 1)
        return tuple(int(b) for b in seq[lo:i + 1])

    counts: dict[tuple, dict[tuple, int]] = {}
    for seq in seqs:
        for i in range(len(seq) - 1):
            a = state_at(seq, i)
            b = state_at(seq, i + 1)
            counts.setdefault(a, {}).setdefault(b, 0)
            counts[a][b] += 1
    return counts


def state_tuple(space, idx):
    """Chronological window of a state: oldest history entry first."""
    if idx == space.exit_index:
        return ("exit",)
    hist = space.history_of(idx)  # most recent first
    return tuple(reversed(hist)) + (int(space.current[idx]),)


class TestCountingOracle:
    @pytest.mark.parametrize("seed,block_count,n_seqs,k", [
        (0, 4, 40, 3), (1, 5, 200, 3), (2, 3, 500, 2),
        (3, 6, 120, 4), (4, 2, 80, 1),
    ])
    def test_fixed_order_matches_brute_force(self, seed, block_count, n_seqs, k):
        rng = np.random.default_rng(seed)
        seqs = random_corpus(rng, block_count, n_seqs)
        net = nw.build_fixed_order(seqs, block_count, k)
        expected = brute_force_transitions(seqs, k)

        tuples = [state_tuple(net.space, s) for s in range(net.space.size)]
        node_of = {tuples[s]: int(net.node_of_state[s])
                   for s in range(net.space.size)}

        observed_from = set()
        for a, outs in expected.items():
            j = node_of[a]
            observed_from.add(j)
            total = sum(outs.values())
            col = np.zeros(net.node_count)
            for b, c in outs.items():
                col[node_of[b]] += c / total
            assert np.max(np.abs(net.T[:, j] - col)) < 1e-12

        # states never seen as a source are absorbing self-loops
        for s in range(net.space.size):
            n = int(net.node_of_state[s])
            if n not in observed_from:
                assert net.T[n, n] == 1.0

    def test_fon_matches_block_level_counts(self):
        rng = np.random.default_rng(7)
        seqs = random_corpus(rng, 5, 300)
        net = nw.build_fon(seqs, 5)
        # FON nodes are blocks in ascending order, exit last.
        assert net.node_block.tolist() == [0, 1, 2, 3, 4, -1]
        counts = np.zeros((6, 6))
        for seq in seqs:
            for i in range(len(seq) - 1):
                a = 5 if seq[i] == -1 else int(seq[i])
                b = 5 if seq[i + 1] == -1 else int(seq[i + 1])
                counts[b, a] += 1
        colsum = counts.sum(axis=0)
        for j in range(6):
            if colsum[j] > 0:
                assert np.max(np.abs(net.T[:, j] - counts[:, j] / colsum[j])) < 1e-12
            else:
                assert net.T[j, j] == 1.0


class TestDistributionLayer:
    def test_hand_computed_split(self):
        """Three arrivals via one history and two via another give 0.6/0.4."""
        seqs = [np.array([0, 1])] * 3 + [np.array([2, 1])] * 2
        net = nw.build_fixed_order(seqs, 3, 2)
        tuples = [state_tuple(net.space, s) for s in range(net.space.size)]
        d_by_tuple = dict(zip(tuples, net.d_vals))
        assert d_by_tuple[(0, 1)] == pytest.approx(0.6)
        assert d_by_tuple[(2, 1)] == pytest.approx(0.4)
        # the source blocks each carry a single state with full mass
        assert d_by_tuple[(0,)] == pytest.approx(1.0)
        assert d_by_tuple[(2,)] == pytest.approx(1.0)

    def test_columns_are_partitions_of_unity(self, branching_corpus):
        net = nw.build_fixed_order(branching_corpus, 6, 3)
        D = net.D_dense()
        assert np.allclose(D.sum(axis=0)[:6], 1.0, atol=1e-9)

    def test_unobserved_block_falls_back_to_first_order(self):
        space = st.extract_states([np.array([0, 1])], 3, k=2)
        d = nw.distribution_values(space)
        idx = [i for i in range(space.size)
               if space.current[i] == 2 and space.orders[i] == 1]
        assert len(idx) == 1 and d[idx[0]] == 1.0


class TestStartNodes:
    def test_approximate_spreads_by_distribution(self):
        seqs = [np.array([0, 1])] * 3 + [np.array([2, 1])] * 2
        net = nw.build_fixed_order(seqs, 3, 2)
        b0 = np.array([0.0, 10.0, 0.0, 0.0])
        n0 = net.start_nodes(b0, mode="approximate")
        assert n0.sum() == pytest.approx(10.0)
        tuples = [state_tuple(net.space, s) for s in range(net.space.size)]
        n_by_tuple = {tuples[s]: n0[net.node_of_state[s]]
                      for s in range(net.space.size)}
        assert n_by_tuple[(0, 1)] == pytest.approx(6.0)
        assert n_by_tuple[(2, 1)] == pytest.approx(4.0)

    def test_exact_places_mass_on_entry_state(self, branching_corpus):
        net = nw.build_fixed_order(branching_corpus, 6, 3)
        b0 = np.zeros(7)
        b0[0] = 5.0
        n0 = net.start_nodes(b0, mode="exact")
        ent = [s for s in range(net.space.size)
               if net.space.current[s] == 0 and net.space.orders[s] == 1][0]
        assert n0[net.node_of_state[ent]] == pytest.approx(5.0)
        assert n0.sum() == pytest.approx(5.0)

    def test_unknown_mode_rejected(self, branching_corpus):
        net = nw.build_fon(branching_corpus, 6)
        with pytest.raises(ValueError):
            net.start_nodes(np.zeros(7), mode="typo")


class TestInvariantsSmall:
    """Structural invariants for every kind and order on a tiny traced corpus.

    The full-scale counterpart of this check runs in the acceptance suite.
    """

    def test_fon(self, tiny_setup):
        assert_network_invariants(nw.build_fon(tiny_setup["train"], 27))

    @pytest.mark.parametrize("order", [2, 3, 4])
    def test_fixed(self, tiny_setup, order):
        assert_network_invariants(
            nw.build_fixed_order(tiny_setup["train"], 27, order))

    @pytest.mark.parametrize("order", [2, 3, 4])
    def test_variable(self, tiny_setup, order):
        assert_network_invariants(
            nw.build_variable_order(tiny_setup["train"], 27, order))

    @pytest.mark.parametrize("order", [2, 3, 4])
    def test_clustered(self, tiny_setup, order):
        assert_network_invariants(
            nw.build_clustered(tiny_setup["train"], 27, order, 0.04))


class TestVariableOrder:
    def test_infinite_threshold_collapses_to_first_order(self, tiny_setup):
        net = nw.build_variable_order(tiny_setup["train"], 27, 3,
                                      threshold_fn=lambda o, s: float("inf"))
        fon = nw.build_fon(tiny_setup["train"], 27)
        assert net.node_count == fon.node_count

    def test_promote_everything_matches_fixed_order(self, tiny_setup):
        net = nw.build_variable_order(tiny_setup["train"], 27, 3,
                                      threshold_fn=lambda o, s: -1.0)
        fixed = nw.build_fixed_order(tiny_setup["train"], 27, 3)
        assert net.node_count == fixed.node_count

    def test_default_threshold_lands_between(self, tiny_setup):
        net = nw.build_variable_order(tiny_setup["train"], 27, 3)
        fon = nw.build_fon(tiny_setup["train"], 27)
        fixed = nw.build_fixed_order(tiny_setup["train"], 27, 3)
        assert fon.node_count <= net.node_count <= fixed.node_count

    def test_divergent_history_is_promoted(self, branching_corpus):
        """At block 3 the two histories disagree completely (always-to-4 vs
        mostly-to-5); with enough support the corridor context earns its own
        node instead of collapsing onto the block's first-order state."""
        corpus = branching_corpus * 5  # raise support above the evidence bar
        net = nw.build_variable_order(corpus, 6, 3)
        nodes_at_3 = {int(net.node_of_state[s])
                      for s in range(net.space.size)
                      if net.space.current[s] == 3 and net.space.orders[s] >= 2}
        assert len(nodes_at_3) >= 2


class TestRegroup:
    def test_collapsing_all_blocks_reproduces_fon(self, branching_corpus):
        """Merging every state of a block into one node and recounting must
        give exactly the first-order transition matrix."""
        fixed = nw.build_fixed_order(branching_corpus, 6, 3)
        assign = np.empty(fixed.space.size, dtype=np.int64)
        for s in range(fixed.space.size):
            blk = int(fixed.space.current[s])
            assign[s] = 6 if blk == -1 else blk
        merged = nw.regroup(fixed, assign, branching_corpus, recount=True)
        fon = nw.build_fon(branching_corpus, 6)
        assert merged.node_count == fon.node_count
        assert np.max(np.abs(merged.T - fon.T)) < 1e-12

    def test_warm_transitions_respected(self, branching_corpus):
        net = nw.build_clustered(branching_corpus, 6, 2, 0.04)
        ident = net.node_of_state.copy()
        warm = net.T.copy()
        warm[:, 0] = 0.0
        warm[net.exit_node, 0] = 1.0
        out = nw.regroup(net, ident, branching_corpus, recount=False, warm_T=warm)
        assert np.array_equal(out.T, warm)

    def test_mixed_block_group_rejected(self, branching_corpus):
        net = nw.build_fixed_order(branching_corpus, 6, 2)
        assign = np.zeros(net.space.size, dtype=np.int64)  # everything in one node
        with pytest.raises(ValueError):
            nw.regroup(net, assign, branching_corpus)


class TestSerialization:
    def test_roundtrip_preserves_evaluation(self, tiny_setup, tmp_path):
        net = nw.build_clustered(tiny_setup["train"], 27, 3, 0.04)
        path = tmp_path / "net.json"
        nw.save_network(net, str(path))
        back = nw.load_network(str(path))
        assert back.kind == net.kind and back.order == net.order
        assert back.node_count == net.node_count
        assert np.array_equal(back.space.keys, net.space.keys)
        assert np.array_equal(back.node_of_state, net.node_of_state)
        assert np.array_equal(back.M, net.M)
        assert np.max(np.abs(back.T - net.T)) < 1e-9
        assert np.max(np.abs(back.d_vals - net.d_vals)) < 1e-12
        b0 = np.zeros(28)
        b0[:27] = 10.0
        a = hn.estimate_series(net, b0, 6)
        b = hn.estimate_series(back, b0, 6)
        assert np.max(np.abs(a - b)) < 1e-8

    def test_missing_key_rejected(self, tmp_path, branching_corpus):
        net = nw.build_fon(branching_corpus, 6)
        path = tmp_path / "net.json"
        nw.save_network(net, str(path))
        import json
        d = json.loads(path.read_text())
        del d["T"]
        path.write_text(json.dumps(d))
        with pytest.raises(nw.BundleFormatError):
            nw.load_network(str(path))

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "net.json"
        path.write_text("not json {")
        with pytest.raises(nw.BundleFormatError):
            nw.load_network(str(path))


class TestNodeOrdering:
    def test_exit_node_is_last_for_every_kind(self, branching_corpus):
        for net in (nw.build_fon(branching_corpus, 6),
                    nw.build_fixed_order(branching_corpus, 6, 3),
                    nw.build_variable_order(branching_corpus, 6, 3),
                    nw.build_clustered(branching_corpus, 6, 3, 0.04)):
            assert net.exit_node == net.node_count - 1
            assert net.node_block[-1] == -1

    def test_nodes_sorted_by_block(self, branching_corpus):
        net = nw.build_fixed_order(branching_corpus, 6, 3)
        blocks = net.node_block[:-1]
        assert np.all(np.diff(blocks) >= 0)
