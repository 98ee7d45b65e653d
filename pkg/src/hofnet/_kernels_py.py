"""Pure numpy tracing kernels (lockstep over particles).

This module is the reference implementation of the particle-advection inner
loop.  The compiled extension (``hofnet._kernels``) reimplements
``trace_grid_blocks`` with scalar C arithmetic that follows the exact same
operation order, so the two backends produce identical trajectories; keep the
formulas here and there in sync.

Conventions shared by both backends:

* classic fourth-order Runge-Kutta with fixed step ``h``;
* per step, checks happen in this order: zero-velocity at the current
  position, then out-of-bounds at each intermediate stage position, then
  out-of-bounds at the stepped position.  The first failed check terminates
  the particle at its last valid position;
* grid sampling is trilinear with cell indices clamped to the grid interior
  (queries outside the hull extrapolate; callers terminate those lanes before
  the value is ever used);
* block ids use half-open boxes with the upper domain boundary folded into
  the last block: ``min(floor((x - lo) / (hi - lo) * nb), nb - 1)``.
"""

from __future__ import annotations

import numpy as np

from .fields import GridField, _trilinear

TERM_MAX_STEPS = 0
TERM_OUT_OF_BOUNDS = 1
TERM_ZERO_VELOCITY = 2


def raw_sampler(field):
    """Velocity callable without domain validation, for use inside the loop."""
    if isinstance(field, GridField):
        data = field.data
        origin = field.origin
        spacing = field.spacing

        def sample(pts):
            out = np.empty_like(pts)
            _trilinear(data, origin, spacing, pts[:, 0], pts[:, 1], pts[:, 2], out)
            return out

        return sample
    return field.velocity


def _oob_mask(pts, lo, hi):
    return np.any((pts < lo) | (pts > hi), axis=1)


def _block_ids(pts, blo, bext, nbf, nb):
    frac = (pts - blo) / bext
    idx = np.floor(frac * nbf).astype(np.int64)
    idx = np.minimum(idx, nb - 1)
    return idx[:, 0] + nb[0] * (idx[:, 1] + nb[1] * idx[:, 2])


def trace_blocks_lockstep(sample, lo, hi, blo, bhi, nblocks, seeds,
                          h, max_steps, zero_tol):
    """Advect all seeds in lockstep, emitting deduplicated block id sequences.

    Returns ``(blocks, terms)`` where ``blocks`` is a list of int32 arrays
    (one per seed, consecutive duplicates removed, no terminal marker) and
    ``terms`` the per-seed termination codes.
    """
    seeds = np.asarray(seeds, dtype=np.float64)
    n = seeds.shape[0]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    blo = np.asarray(blo, dtype=np.float64)
    bext = np.asarray(bhi, dtype=np.float64) - blo
    nb = np.asarray(nblocks, dtype=np.int64)
    nbf = nb.astype(np.float64)
    if np.any(_oob_mask(seeds, lo, hi)):
        raise ValueError("seed outside the field domain")

    hh = 0.5 * h
    h6 = h / 6.0
    tol2 = zero_tol * zero_tol

    terms = np.full(n, TERM_MAX_STEPS, dtype=np.int8)
    pos = seeds.copy()
    active = np.arange(n, dtype=np.int64)
    last_block = _block_ids(pos, blo, bext, nbf, nb)

    # Appended (particle, block) records in visit order; stable-sorted later.
    rec_idx = [active.copy()]
    rec_blk = [last_block.copy()]

    p = pos
    last = last_block
    for _ in range(max_steps):
        if active.size == 0:
            break
        k1 = sample(p)
        zv = (k1[:, 0] * k1[:, 0] + k1[:, 1] * k1[:, 1] + k1[:, 2] * k1[:, 2]) < tol2
        p2 = p + hh * k1
        k2 = sample(p2)
        p3 = p + hh * k2
        k3 = sample(p3)
        p4 = p + h * k3
        k4 = sample(p4)
        pn = p + h6 * (((k1 + 2.0 * k2) + 2.0 * k3) + k4)
        oob = (_oob_mask(p2, lo, hi) | _oob_mask(p3, lo, hi)
               | _oob_mask(p4, lo, hi) | _oob_mask(pn, lo, hi))
        dead_zv = zv
        dead_oob = oob & ~zv
        if dead_zv.any():
            terms[active[dead_zv]] = TERM_ZERO_VELOCITY
        if dead_oob.any():
            terms[active[dead_oob]] = TERM_OUT_OF_BOUNDS
        keep = ~(dead_zv | dead_oob)
        active = active[keep]
        if active.size == 0:
            break
        p = pn[keep]
        last = last[keep]
        blk = _block_ids(p, blo, bext, nbf, nb)
        changed = blk != last
        if changed.any():
            rec_idx.append(active[changed])
            rec_blk.append(blk[changed])
        last = blk

    all_idx = np.concatenate(rec_idx)
    all_blk = np.concatenate(rec_blk)
    order = np.argsort(all_idx, kind="stable")
    all_idx = all_idx[order]
    all_blk = all_blk[order].astype(np.int32)
    counts = np.bincount(all_idx, minlength=n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    blocks = [all_blk[offsets[i]:offsets[i + 1]] for i in range(n)]
    return blocks, terms


def trace_grid_blocks(data, origin, spacing, blo, bhi, nblocks, seeds,
                      h, max_steps, zero_tol):
    """Grid-field specialization of :func:`trace_blocks_lockstep`."""
    def sample(pts):
        out = np.empty_like(pts)
        _trilinear(data, origin, spacing, pts[:, 0], pts[:, 1], pts[:, 2], out)
        return out

    dims = data.shape[:3]
    lo = np.asarray(origin, dtype=np.float64)
    hi = lo + (np.asarray(dims, dtype=np.float64) - 1.0) * np.asarray(spacing)
    return trace_blocks_lockstep(sample, lo, hi, blo, bhi, nblocks, seeds,
                                 h, max_steps, zero_tol)


def trace_polylines(sample, lo, hi, seeds, h, max_steps, zero_tol):
    """Advect seeds in lockstep keeping every visited position.

    Returns ``(lines, terms)``: per seed an (m, 3) float64 array of positions
    (starting with the seed) and the termination code.  Uses the same
    arithmetic and check order as the block tracers.
    """
    seeds = np.asarray(seeds, dtype=np.float64)
    n = seeds.shape[0]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(_oob_mask(seeds, lo, hi)):
        raise ValueError("seed outside the field domain")

    hh = 0.5 * h
    h6 = h / 6.0
    tol2 = zero_tol * zero_tol

    terms = np.full(n, TERM_MAX_STEPS, dtype=np.int8)
    active = np.arange(n, dtype=np.int64)
    p = seeds.copy()
    pts = [[seeds[i]] for i in range(n)]
    for _ in range(max_steps):
        if active.size == 0:
            break
        k1 = sample(p)
        zv = (k1[:, 0] * k1[:, 0] + k1[:, 1] * k1[:, 1] + k1[:, 2] * k1[:, 2]) < tol2
        p2 = p + hh * k1
        k2 = sample(p2)
        p3 = p + hh * k2
        k3 = sample(p3)
        p4 = p + h * k3
        k4 = sample(p4)
        pn = p + h6 * (((k1 + 2.0 * k2) + 2.0 * k3) + k4)
        oob = (_oob_mask(p2, lo, hi) | _oob_mask(p3, lo, hi)
               | _oob_mask(p4, lo, hi) | _oob_mask(pn, lo, hi))
        dead_zv = zv
        dead_oob = oob & ~zv
        if dead_zv.any():
            terms[active[dead_zv]] = TERM_ZERO_VELOCITY
        if dead_oob.any():
            terms[active[dead_oob]] = TERM_OUT_OF_BOUNDS
        keep = ~(dead_zv | dead_oob)
        active = active[keep]
        if active.size == 0:
            break
        p = pn[keep]
        for row, i in enumerate(active):
            pts[i].append(p[row])
    lines = [np.asarray(v, dtype=np.float64) for v in pts]
    return lines, terms
