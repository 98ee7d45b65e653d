"""Block-sequence corpora: validation, file IO, and density series.

A corpus holds one block-id sequence per particle, split into train /
validation / test.  The on-disk format is plain UTF-8 text, one sequence per
line, space-separated signed decimal block ids, with ``-1`` allowed only as
the final entry of a line.  This is also the ingestion path for sequences
produced by other tools.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .tracing import TERMINAL_ID

SPLIT_FILES = ("train.seq", "validation.seq", "test.seq")


class SequenceFormatError(ValueError):
    """A block-sequence file or array violates the sequence contract."""


def validate_sequence(seq: np.ndarray, block_count: int | None = None) -> None:
    if seq.ndim != 1 or seq.size == 0:
        raise SequenceFormatError("sequences must be non-empty 1-d arrays")
    if np.any(seq[:-1] == TERMINAL_ID):
        raise SequenceFormatError("terminal marker -1 may only appear last")
    body = seq[:-1] if seq[-1] == TERMINAL_ID else seq
    if body.size == 0:
        raise SequenceFormatError("a sequence must contain at least one block id")
    if np.any(body < 0):
        raise SequenceFormatError("block ids must be non-negative")
    if block_count is not None and np.any(body >= block_count):
        raise SequenceFormatError(
            f"block id {int(body.max())} out of range for {block_count} blocks")
    if np.any(body[1:] == body[:-1]):
        raise SequenceFormatError("consecutive duplicate block ids are not allowed")


@dataclass
class SequenceCorpus:
    train: list[np.ndarray]
    validation: list[np.ndarray]
    test: list[np.ndarray]
    block_count: int

    def splits(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def validate(self) -> None:
        for seqs in (self.train, self.validation, self.test):
            for s in seqs:
                validate_sequence(s, self.block_count)

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for name, seqs in zip(SPLIT_FILES, (self.train, self.validation, self.test)):
            write_sequences(os.path.join(out_dir, name), seqs)

    @classmethod
    def load(cls, out_dir: str, block_count: int) -> "SequenceCorpus":
        splits = []
        for name in SPLIT_FILES:
            path = os.path.join(out_dir, name)
            if not os.path.exists(path):
                raise FileNotFoundError(f"missing corpus file {path}")
            splits.append(read_sequences(path, block_count))
        return cls(splits[0], splits[1], splits[2], block_count)


def write_sequences(path: str, seqs: list[np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            f.write(" ".join(str(int(v)) for v in s))
            f.write("\n")


def read_sequences(path: str, block_count: int | None = None) -> list[np.ndarray]:
    seqs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                seq = np.array([int(tok) for tok in line.split()], dtype=np.int32)
            except ValueError as e:
                raise SequenceFormatError(f"{path}:{lineno}: {e}") from e
            try:
                validate_sequence(seq, block_count)
            except SequenceFormatError as e:
                raise SequenceFormatError(f"{path}:{lineno}: {e}") from e
            seqs.append(seq)
    return seqs


def corpus_hash(out_dir: str) -> str:
    """SHA-256 over the three split files, in fixed order."""
    digest = hashlib.sha256()
    for name in SPLIT_FILES:
        with open(os.path.join(out_dir, name), "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


def density_series(seqs: list[np.ndarray], block_count: int, k: int) -> np.ndarray:
    """Observed particle counts per block for steps 0..k.

    Returns a (k+1, block_count+1) float array; the last column is the exit
    entry.  A particle contributes to the block of its t-th sequence entry;
    from its terminal marker onward (or past the end of a truncated sequence)
    it is counted in the exit column, so total mass is constant across steps.
    """
    out = np.zeros((k + 1, block_count + 1), dtype=np.float64)
    exit_col = block_count
    for s in seqs:
        n = s.shape[0]
        upto = min(k + 1, n)
        for t in range(upto):
            v = int(s[t])
            out[t, exit_col if v == TERMINAL_ID else v] += 1.0
        for t in range(upto, k + 1):
            out[t, exit_col] += 1.0
    return out
