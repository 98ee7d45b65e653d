"""Sequence-file format, validation, and observed density series."""

import numpy as np
import pytest

import hofnet as hn
from hofnet.corpus import (SequenceFormatError, corpus_hash, density_series,
                           read_sequences, validate_sequence, write_sequences)


class TestValidation:
    def test_accepts_plain_and_terminated(self):
        validate_sequence(np.array([0, 1, 2], dtype=np.int32), 3)
        validate_sequence(np.array([0, 1, -1], dtype=np.int32), 3)

    def test_rejects_empty(self):
        with pytest.raises(SequenceFormatError):
            validate_sequence(np.array([], dtype=np.int32), 3)

    def test_rejects_terminal_marker_inside(self):
        with pytest.raises(SequenceFormatError):
            validate_sequence(np.array([0, -1, 1], dtype=np.int32), 3)

    def test_rejects_out_of_range_ids(self):
        with pytest.raises(SequenceFormatError):
            validate_sequence(np.array([0, 3], dtype=np.int32), 3)
        with pytest.raises(SequenceFormatError):
            validate_sequence(np.array([-2, 0], dtype=np.int32), 3)

    def test_rejects_consecutive_duplicates(self):
        with pytest.raises(SequenceFormatError):
            validate_sequence(np.array([0, 1, 1, 2], dtype=np.int32), 3)


class TestFiles:
    def test_roundtrip(self, tmp_path):
        seqs = [np.array([0, 1, 2, -1], dtype=np.int32),
                np.array([2, 1], dtype=np.int32)]
        path = str(tmp_path / "x.seq")
        write_sequences(path, seqs)
        back = read_sequences(path, 3)
        assert len(back) == 2
        assert all(np.array_equal(a, b) for a, b in zip(seqs, back))

    def test_reports_line_number_on_error(self, tmp_path):
        path = str(tmp_path / "bad.seq")
        with open(path, "w") as f:
            f.write("0 1 2\n")
            f.write("0 0 1\n")
        with pytest.raises(SequenceFormatError, match="bad.seq:2"):
            read_sequences(path, 3)

    def test_corpus_hash_tracks_content(self, tmp_path):
        c = hn.SequenceCorpus([np.array([0, 1])], [np.array([1, 0])],
                              [np.array([0, 1, -1])], 2)
        c.save(str(tmp_path))
        h1 = corpus_hash(str(tmp_path))
        assert len(h1) == 64
        c2 = hn.SequenceCorpus([np.array([0, 1])], [np.array([1, 0])],
                               [np.array([1, 0, -1])], 2)
        c2.save(str(tmp_path))
        assert corpus_hash(str(tmp_path)) != h1


class TestDensitySeries:
    def test_counts_per_step_with_exit(self):
        seqs = [np.array([0, 1, -1], dtype=np.int32)]
        out = density_series(seqs, 2, 3)
        assert out.shape == (4, 3)
        assert out[0].tolist() == [1, 0, 0]
        assert out[1].tolist() == [0, 1, 0]
        assert out[2].tolist() == [0, 0, 1]   # terminal marker
        assert out[3].tolist() == [0, 0, 1]   # stays in the exit column

    def test_truncated_sequences_move_to_exit(self):
        seqs = [np.array([0], dtype=np.int32), np.array([1, 0], dtype=np.int32)]
        out = density_series(seqs, 2, 2)
        assert out[0].tolist() == [1, 1, 0]
        assert out[1].tolist() == [1, 0, 1]
        assert out[2].tolist() == [0, 0, 2]

    def test_mass_is_conserved(self, branching_corpus):
        out = density_series(branching_corpus, 6, 8)
        assert np.allclose(out.sum(axis=1), len(branching_corpus))
