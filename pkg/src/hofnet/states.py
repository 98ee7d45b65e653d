"""Higher-order state extraction from block-sequence corpora.

A state is a block together with a bounded window of previously visited
blocks (most recent first).  Extraction walks every training sequence and
keeps, at each position, the longest window available up to the configured
order; windows shorter than the maximum therefore occur only near sequence
starts.  One absorbing exit state stands in for the terminal marker.

States and contexts are packed into int64 keys (16 bits per entry, offset by
two so the terminal marker and the empty slot stay distinct), which keeps the
per-position work vectorized.  This caps supported block counts at 65533 and
window orders at 4, both checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tracing import TERMINAL_ID

MAX_ORDER = 4
MAX_BLOCKS = (1 << 16) - 3
EXIT_KEY = np.int64(TERMINAL_ID + 2)  # exit state: current = -1, empty history


@dataclass
class FlatCorpus:
    """Concatenated sequences with per-position bookkeeping."""

    flat: np.ndarray     # int64 entries, terminal markers included
    lengths: np.ndarray  # int64 per-sequence lengths
    starts: np.ndarray   # int64 offset of each sequence in ``flat``
    pos: np.ndarray      # int64 position of each entry within its sequence

    @classmethod
    def from_sequences(cls, seqs: list[np.ndarray]) -> "FlatCorpus":
        if not seqs:
            raise ValueError("empty corpus")
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
        pos = np.arange(flat.shape[0], dtype=np.int64) - np.repeat(starts, lengths)
        return cls(flat=flat, lengths=lengths, starts=starts, pos=pos)

    @property
    def size(self) -> int:
        return int(self.flat.shape[0])

    def has_next(self) -> np.ndarray:
        """Mask of positions with a successor inside the same sequence."""
        ends = self.starts + self.lengths - 1
        mask = np.ones(self.size, dtype=bool)
        mask[ends] = False
        return mask


def window_keys(fc: FlatCorpus, k: int) -> np.ndarray:
    """Packed key of the longest window (up to k entries) ending at each position.

    Terminal positions always map to the exit key regardless of history.
    """
    if not 1 <= k <= MAX_ORDER:
        raise ValueError(f"window order must be in 1..{MAX_ORDER}, got {k}")
    keys = fc.flat + 2
    for j in range(1, k):
        prev = np.zeros(fc.size, dtype=np.int64)
        prev[j:] = fc.flat[:-j] + 2
        prev[fc.pos < j] = 0
        keys = keys + (prev << np.int64(16 * j))
    keys[fc.flat == TERMINAL_ID] = EXIT_KEY
    return keys


def unpack_key(key: int) -> tuple[int, tuple[int, ...]]:
    """Decode a packed key into (current block, history most-recent-first)."""
    current = (key & 0xFFFF) - 2
    history = []
    key >>= 16
    while key:
        history.append((key & 0xFFFF) - 2)
        key >>= 16
    return int(current), tuple(history)


def key_order(key: int) -> int:
    o = 0
    while key:
        o += 1
        key >>= 16
    return o


def suffix_key(key: int, order: int) -> int:
    """Keep only the ``order`` most recent entries of a packed key."""
    return key & ((1 << (16 * order)) - 1)


@dataclass
class StateSpace:
    """Extracted states plus their training statistics.

    ``trans`` counts transitions from each state to its successor's block,
    with targets indexed 0..B-1 for blocks and B for the exit.  States are in
    canonical order (block ascending, then order, then history; exit last),
    so indices are independent of corpus ordering.
    """

    k: int
    block_count: int
    keys: np.ndarray            # (S,) int64
    current: np.ndarray         # (S,) int64 block id, -1 for exit
    orders: np.ndarray          # (S,) int64
    occ: np.ndarray             # (S,) float64 occurrences in training
    trans: np.ndarray           # (S, B+1) float64
    exit_index: int
    _lookup: dict = field(repr=False, default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.keys.shape[0])

    @property
    def support(self) -> np.ndarray:
        return self.trans.sum(axis=1)

    def history_of(self, idx: int) -> tuple[int, ...]:
        return unpack_key(int(self.keys[idx]))[1]

    def index_of_key(self, key: int) -> int:
        return self._lookup[int(key)]

    def target_column(self, block_id: int) -> int:
        return self.block_count if block_id == TERMINAL_ID else block_id


def _canonical_order(keys: np.ndarray) -> np.ndarray:
    decoded = [unpack_key(int(kk)) for kk in keys]
    def sort_key(i):
        cur, hist = decoded[i]
        return (cur == TERMINAL_ID, cur, len(hist) + 1, hist)
    return np.array(sorted(range(len(decoded)), key=sort_key), dtype=np.int64)


def extract_states(train_seqs: list[np.ndarray], block_count: int, k: int) -> StateSpace:
    """Enumerate observed states of order <= k and count their statistics.

    The exit state is always present.  So that every block can receive mass
    from the start distribution, a block never observed in training still
    contributes a (zero-occurrence) first-order state.
    """
    if block_count > MAX_BLOCKS:
        raise ValueError(f"at most {MAX_BLOCKS} blocks supported, got {block_count}")
    fc = FlatCorpus.from_sequences(train_seqs)
    if np.any(fc.flat >= block_count):
        raise ValueError("sequence references a block id outside the grid")
    keys = window_keys(fc, k)
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)

    extra = []
    seen_blocks = np.zeros(block_count, dtype=bool)
    cur_all = (uniq & 0xFFFF) - 2
    seen_blocks[cur_all[cur_all >= 0]] = True
    for b in np.nonzero(~seen_blocks)[0]:
        extra.append(np.int64(b + 2))
    if EXIT_KEY not in uniq:
        extra.append(EXIT_KEY)
    if extra:
        uniq = np.concatenate([uniq, np.array(extra, dtype=np.int64)])
        counts = np.concatenate([counts, np.zeros(len(extra), dtype=counts.dtype)])

    order = _canonical_order(uniq)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])
    keys_c = uniq[order]
    occ = counts[order].astype(np.float64)
    inv_c = rank[inv]  # state index per corpus position

    current = (keys_c & 0xFFFF) - 2
    orders = np.zeros(keys_c.shape[0], dtype=np.int64)
    tmp = keys_c.copy()
    while np.any(tmp):
        orders[tmp != 0] += 1
        tmp >>= np.int64(16)

    s = keys_c.shape[0]
    bp1 = block_count + 1
    nxt = fc.has_next()
    targets = fc.flat.copy()
    targets[targets == TERMINAL_ID] = block_count
    pair = inv_c[:-1][nxt[:-1]] * bp1 + targets[1:][nxt[:-1]]
    trans = np.bincount(pair, minlength=s * bp1).astype(np.float64).reshape(s, bp1)

    exit_index = int(np.nonzero(current == TERMINAL_ID)[0][0])
    space = StateSpace(k=k, block_count=block_count, keys=keys_c, current=current,
                       orders=orders, occ=occ, trans=trans, exit_index=exit_index,
                       _lookup={int(kk): i for i, kk in enumerate(keys_c)})
    return space


def lift_exact(space: StateSpace, seqs: list[np.ndarray]) -> tuple[FlatCorpus, np.ndarray]:
    """State index per position for sequences drawn from the training corpus."""
    fc = FlatCorpus.from_sequences(seqs)
    keys = window_keys(fc, space.k)
    sorter = np.argsort(space.keys)
    pos = np.searchsorted(space.keys, keys, sorter=sorter)
    if np.any(pos >= space.size):
        raise KeyError("sequence contains a state never seen in training")
    idx = sorter[pos]
    if np.any(space.keys[idx] != keys):
        raise KeyError("sequence contains a state never seen in training")
    return fc, idx.astype(np.int64)


def lift_longest_suffix(space: StateSpace, seqs: list[np.ndarray]) -> tuple[FlatCorpus, np.ndarray]:
    """State index per position using the longest training-observed suffix.

    Positions whose full window was never seen in training fall back to
    shorter windows, then to the block's first-order state.  A block that was
    only ever observed deep inside sequences has no short-window states at
    all; such positions land on the block's canonically first state, so the
    lift is total and deterministic for any in-range sequence.
    """
    fc = FlatCorpus.from_sequences(seqs)
    if np.any(fc.flat >= space.block_count):
        raise ValueError("sequence references a block id outside the grid")
    out = np.full(fc.size, -1, dtype=np.int64)
    sorter = np.argsort(space.keys)
    skeys = space.keys[sorter]
    for j in range(space.k, 0, -1):
        todo = out < 0
        if not todo.any():
            break
        keys = window_keys(fc, j)[todo]
        pos = np.searchsorted(skeys, keys)
        pos[pos >= space.size] = space.size - 1
        hit = skeys[pos] == keys
        tgt = np.nonzero(todo)[0][hit]
        out[tgt] = sorter[pos[hit]]
    todo = out < 0
    if todo.any():
        first = np.full(space.block_count, -1, dtype=np.int64)
        for i in range(space.size):  # canonical order: block, then order/history
            b = int(space.current[i])
            if b >= 0 and first[b] < 0:
                first[b] = i
        out[todo] = first[fc.flat[todo]]
    if np.any(out < 0):  # pragma: no cover - every block has at least one state
        raise KeyError(f"no state for block {int(fc.flat[out < 0][0])}")
    return fc, out


def context_statistics(train_seqs: list[np.ndarray], block_count: int,
                       max_k: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per order j in 1..max_k: observed exact-order-j context keys and their
    next-block count rows (targets indexed like ``StateSpace.trans``).

    Contexts cover every position with at least j-1 predecessors, so a
    lower-order context aggregates all observations of its extensions.
    """
    fc = FlatCorpus.from_sequences(train_seqs)
    nxt = fc.has_next()
    bp1 = block_count + 1
    result = {}
    for j in range(1, max_k + 1):
        keys = window_keys(fc, j)
        valid = (fc.pos >= j - 1) & (fc.flat != TERMINAL_ID)
        uniq = np.unique(keys[valid])
        use = valid[:-1] & nxt[:-1]
        if not np.any(use):
            result[j] = (uniq, np.zeros((uniq.shape[0], bp1)))
            continue
        from_keys = keys[:-1][use]
        targets = fc.flat[1:][use]
        targets = np.where(targets == TERMINAL_ID, block_count, targets)
        fidx = np.searchsorted(uniq, from_keys)
        counts = np.bincount(fidx * bp1 + targets, minlength=uniq.shape[0] * bp1)
        result[j] = (uniq, counts.astype(np.float64).reshape(-1, bp1))
    return result
