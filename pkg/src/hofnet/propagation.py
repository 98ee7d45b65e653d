"""Forward density propagation through a network and the matching loss.

Given a per-block start vector b(0) (length B+1, exit entry last), mass is
spread onto nodes, advanced by repeated matrix-vector products with the
transition matrix (powers of T are never materialized), and projected back to
blocks for comparison against observed counts.  The fit measure is the
Kullback-Leibler divergence accumulated over steps 1..k, with a small epsilon
guarding empty estimated bins:

    L = sum_t sum_i b_i(t) * ln(b_i(t) / (bhat_i(t) + eps))

A squared column-sum penalty keeps iterates near the stochastic set while the
transition matrix is being optimized.
"""

from __future__ import annotations

import numpy as np


def blocks_from_nodes(node_columns: np.ndarray, nvec: np.ndarray,
                      block_count: int) -> np.ndarray:
    return np.bincount(node_columns, weights=nvec, minlength=block_count + 1)


def forward_nodes(T: np.ndarray, n0: np.ndarray, k: int) -> np.ndarray:
    """Node mass vectors for steps 0..k, shape (k+1, N)."""
    out = np.empty((k + 1, n0.shape[0]))
    out[0] = n0
    for t in range(1, k + 1):
        out[t] = T @ out[t - 1]
    return out


def estimate_series(network, b0: np.ndarray, k: int,
                    start_mode: str = "approximate") -> np.ndarray:
    """Estimated per-block mass for steps 0..k, shape (k+1, B+1)."""
    n0 = network.start_nodes(b0, mode=start_mode)
    nodes = forward_nodes(network.T, n0, k)
    cols = network.node_columns
    out = np.empty((k + 1, network.block_count + 1))
    for t in range(k + 1):
        out[t] = blocks_from_nodes(cols, nodes[t], network.block_count)
    return out


def estimate_blocks(network, b0: np.ndarray, t: int,
                    start_mode: str = "approximate") -> np.ndarray:
    """Estimated per-block mass at step t (length B+1)."""
    if t < 0:
        raise ValueError("step must be non-negative")
    return estimate_series(network, b0, t, start_mode)[t]


def kld_loss(observed: np.ndarray, estimated: np.ndarray, eps: float,
             normalize: bool = False) -> float:
    """Accumulated divergence over steps 1..k (step 0 is the shared start).

    ``observed`` and ``estimated`` are (k+1, B+1) series.  With ``normalize``
    the value is divided by the total particle count, turning it into the
    per-particle error used for reporting.
    """
    b = observed[1:]
    e = estimated[1:]
    mask = b > 0
    total = float(np.sum(b[mask] * np.log(b[mask] / (e[mask] + eps))))
    if normalize:
        total /= float(observed[0].sum())
    return total


def kld_per_step(observed: np.ndarray, estimated: np.ndarray, eps: float,
                 normalize: bool = False) -> np.ndarray:
    vals = []
    scale = float(observed[0].sum()) if normalize else 1.0
    for t in range(1, observed.shape[0]):
        b = observed[t]
        e = estimated[t]
        mask = b > 0
        vals.append(float(np.sum(b[mask] * np.log(b[mask] / (e[mask] + eps)))) / scale)
    return np.asarray(vals)


def column_penalty(T: np.ndarray) -> float:
    c = T.sum(axis=0) - 1.0
    return float(np.dot(c, c))


def regularized_loss(observed, estimated, T, eps, normalize=False) -> float:
    return kld_loss(observed, estimated, eps, normalize) + column_penalty(T)


def _series_blocks(node_columns, nodes, block_count):
    k = nodes.shape[0] - 1
    out = np.empty((k + 1, block_count + 1))
    for t in range(k + 1):
        out[t] = blocks_from_nodes(node_columns, nodes[t], block_count)
    return out


def loss_and_grad_T(T: np.ndarray, n0: np.ndarray, observed: np.ndarray,
                    node_columns: np.ndarray, block_count: int,
                    eps: float) -> tuple[float, np.ndarray]:
    """Regularized loss and its gradient with respect to T.

    ``observed`` is the (k+1, B+1) target series; the estimate is rolled
    forward from ``n0``.  Gradients are accumulated by reverse sweeps of the
    same vector products used forward.
    """
    k = observed.shape[0] - 1
    nodes = forward_nodes(T, n0, k)
    est = _series_blocks(node_columns, nodes, block_count)
    loss = kld_loss(observed, est, eps) + column_penalty(T)

    # dL/dbhat_t = -b_t / (bhat_t + eps); pulled back to nodes via the block map.
    u = -(observed[1:] / (est[1:] + eps))
    adj = np.empty((k, n0.shape[0]))
    adj[k - 1] = u[k - 1][node_columns]
    for t in range(k - 2, -1, -1):
        adj[t] = u[t][node_columns] + T.T @ adj[t + 1]
    grad = adj.T @ nodes[:k]
    grad += 2.0 * (T.sum(axis=0) - 1.0)[None, :]
    return loss, grad


def loss_T(T, n0, observed, node_columns, block_count, eps) -> float:
    k = observed.shape[0] - 1
    nodes = forward_nodes(T, n0, k)
    est = _series_blocks(node_columns, nodes, block_count)
    return kld_loss(observed, est, eps) + column_penalty(T)


def forward_from_states(T: np.ndarray, Ts: np.ndarray, s0: np.ndarray,
                        k: int) -> np.ndarray:
    """Node masses for steps 1..k when the first hop leaves from states."""
    out = np.empty((k, T.shape[0]))
    out[0] = Ts @ s0
    for t in range(1, k):
        out[t] = T @ out[t - 1]
    return out


def loss_and_grad_Ts(T: np.ndarray, Ts: np.ndarray, s0: np.ndarray,
                     observed: np.ndarray, node_columns: np.ndarray,
                     block_count: int, eps: float) -> tuple[float, np.ndarray]:
    """Regularized loss and gradient for the state-to-node first-hop matrix."""
    k = observed.shape[0] - 1
    nodes = forward_from_states(T, Ts, s0, k)
    est = np.empty((k, block_count + 1))
    for t in range(k):
        est[t] = blocks_from_nodes(node_columns, nodes[t], block_count)
    b = observed[1:]
    mask = b > 0
    loss = float(np.sum(b[mask] * np.log(b[mask] / (est[mask] + eps))))
    loss += column_penalty(Ts)

    u = -(b / (est + eps))
    acc = u[k - 1][node_columns]
    for t in range(k - 2, -1, -1):
        acc = T.T @ acc + u[t][node_columns]
    grad = np.outer(acc, s0)
    grad += 2.0 * (Ts.sum(axis=0) - 1.0)[None, :]
    return loss, grad


def loss_Ts(T, Ts, s0, observed, node_columns, block_count, eps) -> float:
    k = observed.shape[0] - 1
    nodes = forward_from_states(T, Ts, s0, k)
    est = np.empty((k, block_count + 1))
    for t in range(k):
        est[t] = blocks_from_nodes(node_columns, nodes[t], block_count)
    b = observed[1:]
    mask = b > 0
    loss = float(np.sum(b[mask] * np.log(b[mask] / (est[mask] + eps))))
    return loss + column_penalty(Ts)
