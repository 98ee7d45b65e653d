"""Forward density propagation, divergence loss, and analytic gradients."""

import time

import numpy as np
import pytest

import hofnet as hn
from hofnet import networks as nw
from hofnet import propagation as pg


def random_problem(rng, n_nodes, block_count, k):
    """A random masked stochastic matrix plus a consistent observed series."""
    M = rng.random((n_nodes, n_nodes)) < 0.5
    M[rng.integers(n_nodes, size=n_nodes), np.arange(n_nodes)] = True
    T = np.where(M, rng.random((n_nodes, n_nodes)), 0.0)
    T /= T.sum(axis=0)
    node_columns = rng.integers(0, block_count + 1, size=n_nodes)
    n0 = rng.random(n_nodes)
    n0 *= 10.0 / n0.sum()

    # target series from a second, differently-weighted matrix on the same mask
    T2 = np.where(M, rng.random((n_nodes, n_nodes)), 0.0)
    T2 /= T2.sum(axis=0)
    nodes = pg.forward_nodes(T2, n0, k)
    observed = np.stack([pg.blocks_from_nodes(node_columns, nodes[t], block_count)
                         for t in range(k + 1)])
    return T, M, node_columns, n0, observed


def max_relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
    return float(np.max(np.abs(analytic - numeric) / denom))


class TestForward:
    def test_step_zero_is_the_start_vector(self, branching_corpus):
        net = nw.build_fon(branching_corpus, 6)
        b0 = np.array([6.0, 10.0, 0, 0, 0, 0, 0])
        series = pg.estimate_series(net, b0, 4)
        assert np.allclose(series[0], b0)

    def test_deterministic_cycle(self):
        """Two blocks feeding each other swap their mass every step."""
        seqs = [np.array([0, 1, 0, 1, 0], dtype=np.int32)] * 4
        net = nw.build_fon(seqs, 2)
        b0 = np.array([3.0, 5.0, 0.0])
        series = pg.estimate_series(net, b0, 3)
        assert np.allclose(series[1], [5.0, 3.0, 0.0])
        assert np.allclose(series[2], [3.0, 5.0, 0.0])
        assert np.allclose(series[3], [5.0, 3.0, 0.0])

    def test_mass_is_conserved_with_exits(self, branching_corpus):
        net = nw.build_fixed_order(branching_corpus, 6, 2)
        b0 = np.array([6.0, 10.0, 0, 0, 0, 0, 0])
        series = pg.estimate_series(net, b0, 8)
        assert np.allclose(series.sum(axis=1), 16.0, atol=1e-6)
        # after enough steps everything has drained into the exit column
        assert series[8, 6] == pytest.approx(16.0, abs=1e-6)

    def test_estimate_blocks_picks_one_step(self, branching_corpus):
        net = nw.build_fon(branching_corpus, 6)
        b0 = np.array([6.0, 10.0, 0, 0, 0, 0, 0])
        series = pg.estimate_series(net, b0, 5)
        assert np.allclose(pg.estimate_blocks(net, b0, 3), series[3])
        with pytest.raises(ValueError):
            pg.estimate_blocks(net, b0, -1)

    def test_history_changes_the_estimate(self, branching_corpus):
        """The corridor split needs two steps of memory: with only the blue
        source active, the order-3 network sends everything to block 4 while
        first-order propagation mixes the streams 50/50."""
        fon = nw.build_fon(branching_corpus, 6)
        ho = nw.build_fixed_order(branching_corpus, 6, 3)
        b0 = np.zeros(7)
        b0[0] = 6.0  # blue source only
        at3 = pg.estimate_series(ho, b0, 3, start_mode="exact")[3]
        assert at3[4] == pytest.approx(6.0)  # order 2 keeps the streams apart
        at3_fon = pg.estimate_series(fon, b0, 3, start_mode="exact")[3]
        assert at3_fon[4] == pytest.approx(3.0)  # first order mixes 50/50


class TestLoss:
    def test_frozen_hand_value(self):
        """Two particles observed in one bin, predicted split across two:
        the divergence is 2*ln(2)."""
        observed = np.array([[2.0, 0.0], [2.0, 0.0]])
        estimated = np.array([[2.0, 0.0], [1.0, 1.0]])
        val = pg.kld_loss(observed, estimated, eps=0.0)
        assert val == pytest.approx(2.0 * np.log(2.0), abs=1e-12)
        # per-particle normalization divides by the step-0 mass
        val_n = pg.kld_loss(observed, estimated, eps=0.0, normalize=True)
        assert val_n == pytest.approx(np.log(2.0), abs=1e-12)

    def test_perfect_estimate_has_zero_loss(self):
        series = np.array([[3.0, 1.0], [2.0, 2.0], [1.0, 3.0]])
        assert pg.kld_loss(series, series.copy(), eps=0.0) == 0.0

    def test_per_step_sums_to_total(self, branching_corpus):
        net = nw.build_fon(branching_corpus, 6)
        observed = hn.density_series(branching_corpus, 6, 4)
        estimated = pg.estimate_series(net, observed[0], 4)
        steps = pg.kld_per_step(observed, estimated, eps=1e-8)
        total = pg.kld_loss(observed, estimated, eps=1e-8)
        assert steps.shape == (4,)
        assert steps.sum() == pytest.approx(total, rel=1e-12)

    def test_column_penalty_hand_value(self):
        T = np.array([[0.6, 0.2], [0.5, 0.7]])  # column sums 1.1 and 0.9
        assert pg.column_penalty(T) == pytest.approx(0.02, abs=1e-12)
        assert pg.column_penalty(np.eye(3)) == 0.0

    def test_regularized_adds_penalty(self):
        observed = np.array([[2.0, 0.0], [2.0, 0.0]])
        estimated = np.array([[2.0, 0.0], [1.0, 1.0]])
        T = np.array([[0.6, 0.2], [0.5, 0.7]])
        val = pg.regularized_loss(observed, estimated, T, eps=0.0)
        assert val == pytest.approx(2.0 * np.log(2.0) + 0.02, abs=1e-12)


class TestGradientOracle:
    def test_transition_gradient_matches_finite_differences(self):
        """Analytic gradients agree with central differences on a batch of
        random networks, fast enough for routine use."""
        rng = np.random.default_rng(42)
        t0 = time.perf_counter()
        worst = 0.0
        for trial in range(20):
            n = int(rng.integers(4, 11))
            B = int(rng.integers(2, 5))
            T, M, cols, n0, observed = random_problem(rng, n, B, k=3)
            _, grad = pg.loss_and_grad_T(T, n0, observed, cols, B, eps=1e-8)
            fd = np.zeros_like(T)
            h = 1e-6
            for i in range(n):
                for j in range(n):
                    up = T.copy(); up[i, j] += h
                    dn = T.copy(); dn[i, j] -= h
                    fd[i, j] = (pg.loss_T(up, n0, observed, cols, B, 1e-8)
                                - pg.loss_T(dn, n0, observed, cols, B, 1e-8)) / (2 * h)
            worst = max(worst, max_relative_error(grad, fd))
        elapsed = time.perf_counter() - t0
        assert worst < 1e-4, f"gradient mismatch: {worst:.2e}"
        assert elapsed < 5.0, f"gradient batch took {elapsed:.2f}s"

    def test_first_hop_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            n = int(rng.integers(4, 9))
            S = n + int(rng.integers(1, 5))
            B = 3
            T, M, cols, n0, observed = random_problem(rng, n, B, k=3)
            Ts = rng.random((n, S))
            Ts /= Ts.sum(axis=0)
            s0 = rng.random(S)
            s0 *= 10.0 / s0.sum()
            _, grad = pg.loss_and_grad_Ts(T, Ts, s0, observed, cols, B, eps=1e-8)
            fd = np.zeros_like(Ts)
            h = 1e-6
            for i in range(n):
                for j in range(S):
                    up = Ts.copy(); up[i, j] += h
                    dn = Ts.copy(); dn[i, j] -= h
                    fd[i, j] = (pg.loss_Ts(T, up, s0, observed, cols, B, 1e-8)
                                - pg.loss_Ts(T, dn, s0, observed, cols, B, 1e-8)) / (2 * h)
            assert max_relative_error(grad, fd) < 1e-4

    def test_gradient_vanishes_at_reproducing_matrix(self):
        """When the matrix reproduces the observations exactly and columns are
        stochastic, the data term's pull balances to the divergence floor."""
        rng = np.random.default_rng(3)
        n, B, k = 5, 3, 3
        T, M, cols, n0, _ = random_problem(rng, n, B, k)
        nodes = pg.forward_nodes(T, n0, k)
        observed = np.stack([pg.blocks_from_nodes(cols, nodes[t], B)
                             for t in range(k + 1)])
        loss, grad = pg.loss_and_grad_T(T, n0, observed, cols, B, eps=1e-12)
        assert loss == pytest.approx(0.0, abs=1e-10)
        # moving along any admissible direction that keeps columns stochastic
        # cannot decrease the loss: projected gradient must be ~uniform per column
        proj = grad - grad.mean(axis=0, keepdims=True)
        mass = nodes[:k].sum(axis=0)  # columns that carry any mass
        active = mass > 1e-12
        assert np.max(np.abs(proj[:, active] * M[:, active])) < 1e-6
