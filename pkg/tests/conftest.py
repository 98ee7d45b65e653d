"""Shared fixtures: small corpora and fields with hand-checkable structure."""

from __future__ import annotations

import numpy as np
import pytest

import hofnet as hn


@pytest.fixture(scope="session")
def branching_corpus():
    """Two merging streams with history-dependent separation.

    Blocks: 0 and 1 are sources, 2 and 3 form a shared corridor, 4 and 5 are
    sinks.  Stream from 0 always continues to 4; stream from 1 mostly turns
    to 5 (8 of 10) but sometimes to 4 (2 of 10).  First-order statistics at
    block 3 are exactly 50/50, while the history-aware split is 100/0 and
    20/80 — the smallest corpus where memory visibly changes propagation.
    """
    blue = [np.array([0, 2, 3, 4, -1], dtype=np.int32)] * 6
    red58 = [np.array([1, 2, 3, 5, -1], dtype=np.int32)] * 8
    red4 = [np.array([1, 2, 3, 4, -1], dtype=np.int32)] * 2
    return blue + red58 + red4


@pytest.fixture(scope="session")
def tiny_grid_field():
    """A 12-cube sampling of the mixing field over its natural domain."""
    return hn.GridField.from_analytic(hn.SinusoidalMixingField(), (12, 12, 12))


@pytest.fixture(scope="session")
def tiny_setup(tiny_grid_field):
    """Field, blocks, and a small three-way corpus traced from it."""
    field = tiny_grid_field
    grid = hn.block_grid_for(field, (3, 3, 3))
    seeds = hn.generate_split_seeds(field.lo, field.hi, (240, 120, 300), seed=5)
    h = hn.default_step(grid)
    splits = [hn.trace_block_sequences(field, grid, s, h, 400) for s in seeds]
    return {"field": field, "grid": grid, "train": splits[0],
            "validation": splits[1], "test": splits[2]}
