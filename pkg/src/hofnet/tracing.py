"""Particle tracing and block-sequence corpus generation.

Particles are advected through a steady field with fixed-step RK4 until they
leave the domain, reach a stagnant region, or exhaust the step budget.  Their
paths are reduced to sequences of visited block ids (consecutive duplicates
removed); a trailing ``-1`` marks sequences whose particle actually left the
flow, distinguishing them from sequences truncated by the step budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels_py, backend
from .fields import BlockGrid, DomainError, GridField

TERMINAL_ID = -1


class Termination(enum.IntEnum):
    MAX_STEPS = _kernels_py.TERM_MAX_STEPS
    OUT_OF_BOUNDS = _kernels_py.TERM_OUT_OF_BOUNDS
    ZERO_VELOCITY = _kernels_py.TERM_ZERO_VELOCITY


@dataclass
class Streamline:
    points: np.ndarray  # (n, 3) float64, n >= 1
    termination: Termination


def default_step(grid: BlockGrid) -> float:
    """Default integration step: a quarter of the smallest block edge."""
    return 0.25 * min(grid.edge_lengths)


def default_zero_tol(lo, hi, max_steps: int) -> float:
    diag = math.sqrt(sum((h - l) ** 2 for l, h in zip(lo, hi)))
    return 1e-8 * diag / max_steps


def rk4_step(field, pos, h: float) -> np.ndarray:
    """One classic Runge-Kutta step.  Raises ``DomainError`` if any stage
    position (or the result) falls outside the field domain."""
    pos = np.asarray(pos, dtype=np.float64)
    lo = np.asarray(field.lo)
    hi = np.asarray(field.hi)

    def check(p):
        if np.any((p < lo) | (p > hi)):
            raise DomainError(f"stage position {tuple(p)} left the domain")

    check(pos)
    sample = _kernels_py.raw_sampler(field)
    hh = 0.5 * h
    h6 = h / 6.0
    k1 = sample(pos[None, :])[0]
    p2 = pos + hh * k1
    check(p2)
    k2 = sample(p2[None, :])[0]
    p3 = pos + hh * k2
    check(p3)
    k3 = sample(p3[None, :])[0]
    p4 = pos + h * k3
    check(p4)
    k4 = sample(p4[None, :])[0]
    pn = pos + h6 * (((k1 + 2.0 * k2) + 2.0 * k3) + k4)
    check(pn)
    return pn


def trace_streamline(field, seed, h: float, max_steps: int,
                     zero_tol: float | None = None) -> Streamline:
    """Trace a single streamline, keeping every visited position."""
    lines = trace_polylines(field, np.asarray(seed, dtype=np.float64)[None, :],
                            h, max_steps, zero_tol)
    return lines[0]


def trace_polylines(field, seeds, h: float, max_steps: int,
                    zero_tol: float | None = None) -> list[Streamline]:
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if zero_tol is None:
        zero_tol = default_zero_tol(field.lo, field.hi, max_steps)
    sample = _kernels_py.raw_sampler(field)
    try:
        lines, terms = _kernels_py.trace_polylines(
            sample, field.lo, field.hi, seeds, h, max_steps, zero_tol)
    except ValueError as e:
        raise DomainError(str(e)) from e
    return [Streamline(points=p, termination=Termination(int(t)))
            for p, t in zip(lines, terms)]


def to_block_sequence(streamline: Streamline, grid: BlockGrid) -> np.ndarray:
    """Reduce a streamline to deduplicated block ids, appending the terminal
    marker when the particle actually left the flow."""
    ids = grid.block_of(streamline.points)
    ids = np.atleast_1d(ids)
    keep = np.empty(ids.shape[0], dtype=bool)
    keep[0] = True
    keep[1:] = ids[1:] != ids[:-1]
    seq = ids[keep].astype(np.int32)
    if streamline.termination in (Termination.OUT_OF_BOUNDS, Termination.ZERO_VELOCITY):
        seq = np.append(seq, np.int32(TERMINAL_ID))
    return seq


def trace_block_sequences(field, grid: BlockGrid, seeds, h: float,
                          max_steps: int, zero_tol: float | None = None,
                          force_backend: str | None = None) -> list[np.ndarray]:
    """Trace seeds and return their block sequences (terminal marker included
    for particles that left the flow)."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if zero_tol is None:
        zero_tol = default_zero_tol(field.lo, field.hi, max_steps)
    seeds = np.ascontiguousarray(seeds, dtype=np.float64)
    try:
        if isinstance(field, GridField):
            blocks, terms = backend.trace_grid_blocks(
                field, grid, seeds, h, max_steps, zero_tol, force=force_backend)
        else:
            sample = _kernels_py.raw_sampler(field)
            blocks, terms = _kernels_py.trace_blocks_lockstep(
                sample, field.lo, field.hi, grid.lo, grid.hi, grid.nblocks,
                seeds, h, max_steps, zero_tol)
    except ValueError as e:
        raise DomainError(str(e)) from e
    out = []
    for seq, t in zip(blocks, terms):
        if int(t) != Termination.MAX_STEPS:
            seq = np.append(seq, np.int32(TERMINAL_ID))
        out.append(np.asarray(seq, dtype=np.int32))
    return out


def stratified_seeds(rng: np.random.Generator, lo, hi, n: int) -> np.ndarray:
    """Evenly spread seed positions: one jittered sample per cell of a uniform
    grid covering the domain, cells chosen by a seeded permutation."""
    if n < 1:
        raise ValueError("need at least one seed")
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    m = int(math.ceil(n ** (1.0 / 3.0)))
    while m * m * m < n:  # guard against float rounding in the cube root
        m += 1
    chosen = rng.permutation(m * m * m)[:n]
    ix = chosen % m
    iy = (chosen // m) % m
    iz = chosen // (m * m)
    cells = np.stack([ix, iy, iz], axis=1).astype(np.float64)
    jitter = rng.random((n, 3))
    return lo + (cells + jitter) * ((hi - lo) / m)


def generate_split_seeds(lo, hi, counts, seed: int) -> list[np.ndarray]:
    """Seed positions for the (train, validation, test) splits, drawn from one
    root RNG so the splits are disjoint and the whole corpus is reproducible."""
    rng = np.random.default_rng(seed)
    return [stratified_seeds(rng, lo, hi, n) for n in counts]
