"""Agglomerative grouping of same-block states by transition behavior.

The distance between two clusters is the transition-count-weighted average of
pairwise Euclidean distances between member states' next-block distributions:

    d(ci, cj) = sum_{u in ci, v in cj} w_u * w_v * ||p_u - p_v||
                / (sum_{u in ci} w_u * sum_{v in cj} w_v)

which satisfies the Lance-Williams recurrence
``d(ci+cj, ck) = (W_i * d(ci, ck) + W_j * d(cj, ck)) / (W_i + W_j)``.
Merging continues while the smallest distance is below the threshold.  Ties
are broken deterministically toward the pair with the lexicographically
smallest (min member index, other min member index), so the result does not
depend on input ordering.  States with zero outgoing transitions carry no
behavioral evidence and are attached to their block's heaviest cluster
afterwards.
"""

from __future__ import annotations

import numpy as np


def cluster_block_states(indices: np.ndarray, dists: np.ndarray,
                         weights: np.ndarray, threshold: float) -> list[list[int]]:
    """Group the states of one block.

    ``indices`` are global state indices (ascending), ``dists`` their
    next-block distributions (rows), ``weights`` their outgoing transition
    counts.  Returns clusters as lists of global state indices, ordered by
    their smallest member.
    """
    indices = np.asarray(indices)
    weights = np.asarray(weights, dtype=np.float64)
    pos = np.nonzero(weights > 0)[0]
    zero = np.nonzero(weights == 0)[0]

    clusters: list[list[int]] = []
    totals: list[float] = []
    if pos.size:
        members = [[int(i)] for i in pos]
        w = weights[pos].copy()
        p = dists[pos]
        m = pos.size
        diff = p[:, None, :] - p[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        active = np.ones(m, dtype=bool)
        np.fill_diagonal(d, np.inf)
        d[~active] = np.inf

        def pair_key(i, j):
            a = int(indices[members[i][0]])
            b = int(indices[members[j][0]])
            return (min(a, b), max(a, b))

        while active.sum() > 1:
            dview = d.copy()
            dview[~active, :] = np.inf
            dview[:, ~active] = np.inf
            dmin = dview.min()
            if not np.isfinite(dmin) or dmin >= threshold:
                break
            cand = np.argwhere(dview == dmin)
            cand = [(i, j) for i, j in cand if i < j]
            i, j = min(cand, key=lambda ij: pair_key(*ij))
            wi, wj = w[i], w[j]
            wsum = wi + wj
            # Lance-Williams update for the weighted average linkage.
            d[i, :] = (wi * d[i, :] + wj * d[j, :]) / wsum
            d[:, i] = d[i, :]
            d[i, i] = np.inf
            members[i] = sorted(members[i] + members[j])
            w[i] = wsum
            active[j] = False

        for i in np.nonzero(active)[0]:
            clusters.append(sorted(int(indices[r]) for r in members[i]))
            totals.append(float(w[i]))

    if zero.size:
        if clusters:
            # Heaviest cluster wins; ties go to the one with the smallest member.
            best = max(range(len(clusters)), key=lambda c: (totals[c], -clusters[c][0]))
            for r in zero:
                clusters[best].append(int(indices[r]))
            clusters[best].sort()
        else:
            clusters.append(sorted(int(indices[r]) for r in zero))

    clusters.sort(key=lambda c: c[0])
    return clusters
