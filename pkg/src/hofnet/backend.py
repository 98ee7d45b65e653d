"""Backend selection for the tracing hot loop.

At import time this module picks the compiled extension if it is available
and falls back to the pure numpy implementation otherwise.  Setting the
environment variable ``HOFNET_PURE_PYTHON=1`` forces the fallback, which is
useful for testing and for the benchmark in ``benchmarks/bench_tracing.py``.
Both backends implement identical arithmetic, so results do not depend on
the selection.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built; numpy fallback only
    _compiled = None

_CHUNK = 4096


def active_backend() -> str:
    if os.environ.get("HOFNET_PURE_PYTHON", "") == "1" or _compiled is None:
        return "python"
    return "compiled"


def have_compiled() -> bool:
    return _compiled is not None


def trace_grid_blocks(field, grid, seeds, h, max_steps, zero_tol, force=None):
    """Trace seeds through a grid field, returning block sequences.

    Returns ``(blocks, terms)`` like the kernels: a list of int32 arrays of
    deduplicated block ids (no terminal marker) plus termination codes.
    ``force`` may be "python" or "compiled" to bypass the default selection.
    """
    backend = force or active_backend()
    seeds = np.ascontiguousarray(seeds, dtype=np.float64)
    if backend == "python" or _compiled is None:
        return _kernels_py.trace_grid_blocks(
            field.data, field.origin, field.spacing,
            grid.lo, grid.hi, grid.nblocks, seeds, h, max_steps, zero_tol)
    return _trace_compiled(field, grid, seeds, h, max_steps, zero_tol)


def _trace_compiled(field, grid, seeds, h, max_steps, zero_tol):
    n = seeds.shape[0]
    lo = np.asarray(field.lo)
    hi = np.asarray(field.hi)
    if np.any((seeds < lo) | (seeds > hi)):
        raise ValueError("seed outside the field domain")
    bext = tuple(h_ - l_ for l_, h_ in zip(grid.lo, grid.hi))
    blocks: list[np.ndarray] = []
    terms = np.empty(n, dtype=np.int8)
    width = int(max_steps) + 1
    for start in range(0, n, _CHUNK):
        chunk = seeds[start:start + _CHUNK]
        c = chunk.shape[0]
        out_blocks = np.empty((c, width), dtype=np.int32)
        out_lens = np.empty(c, dtype=np.int64)
        out_terms = np.empty(c, dtype=np.int8)
        _compiled.trace_grid_blocks_chunk(
            field.data,
            field.origin[0], field.origin[1], field.origin[2],
            field.spacing[0], field.spacing[1], field.spacing[2],
            grid.lo[0], grid.lo[1], grid.lo[2],
            bext[0], bext[1], bext[2],
            grid.nblocks[0], grid.nblocks[1], grid.nblocks[2],
            chunk, float(h), int(max_steps), float(zero_tol),
            out_blocks, out_lens, out_terms)
        for i in range(c):
            blocks.append(out_blocks[i, :out_lens[i]].copy())
        terms[start:start + c] = out_terms
    return blocks, terms
