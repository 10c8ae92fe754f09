import struct

import numpy as np
import pytest

from streamvq.core import (
    BadMagicError,
    BadSpecError,
    ConfigError,
    IdOutOfRangeError,
    MalformedDelayedGridError,
    SeededRng,
    TokenGrid,
    TruncatedFileError,
    UnknownKindError,
    VersionMismatchError,
)
from streamvq.delay import apply_delay
from streamvq.fileio import (
    parse_config,
    parse_synth_spec,
    read_codebooks,
    read_features,
    read_grid,
    synth_cluster_means,
    synth_features,
    write_codebooks,
    write_features,
    write_grid,
)
from streamvq.quantizer import Codebook, CodebookSet


def make_cbs(kind, n_books=3, n_words=4, sub_dim=2, group_size=1, input_dim=None):
    gen = np.random.default_rng(0)
    books = [
        Codebook(
            gen.normal(size=(n_words, sub_dim)),
            gen.random(n_words) * 10,
            gen.normal(size=(n_words, sub_dim)),
        )
        for _ in range(n_books)
    ]
    if input_dim is None:
        input_dim = sub_dim if kind == "rq" else n_books * sub_dim
    return CodebookSet(kind, books, group_size, input_dim)


class TestFeatures:
    def test_round_trip_values(self, tmp_path):
        m = np.random.default_rng(1).normal(size=(7, 5))
        p = tmp_path / "a.sofm"
        write_features(m, p)
        back = read_features(p)
        # values survive the f32 truncation exactly once
        assert np.array_equal(back, m.astype(np.float32).astype(np.float64))

    def test_write_read_write_bit_exact(self, tmp_path):
        m = np.random.default_rng(2).normal(size=(4, 3))
        p1, p2 = tmp_path / "a", tmp_path / "b"
        write_features(m, p1)
        write_features(read_features(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        p = tmp_path / "a"
        write_features(np.zeros((2, 3)), p)
        raw = p.read_bytes()
        assert raw[:4] == b"SOFM"
        assert struct.unpack("<III", raw[4:16]) == (1, 2, 3)
        assert len(raw) == 16 + 4 * 6

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "a"
        p.write_bytes(b"XXXX" + struct.pack("<III", 1, 1, 1) + b"\0" * 4)
        with pytest.raises(BadMagicError):
            read_features(p)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "a"
        p.write_bytes(b"SOFM" + struct.pack("<III", 9, 1, 1) + b"\0" * 4)
        with pytest.raises(VersionMismatchError):
            read_features(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "a"
        write_features(np.zeros((2, 3)), p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError):
            read_features(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "a"
        write_features(np.zeros((2, 3)), p)
        p.write_bytes(p.read_bytes() + b"\0")
        with pytest.raises(TruncatedFileError):
            read_features(p)


class TestCodebooks:
    @pytest.mark.parametrize("kind,group", [("pq", 1), ("rq", 1), ("opq", 2)])
    def test_round_trip(self, tmp_path, kind, group):
        cbs = make_cbs(kind, n_books=4, group_size=group)
        p = tmp_path / "c.socb"
        write_codebooks(cbs, p)
        back = read_codebooks(p)
        assert back.kind == kind
        assert back.group_size == group
        assert back.input_dim == cbs.input_dim
        assert len(back.codebooks) == len(cbs.codebooks)
        for a, b in zip(cbs.codebooks, back.codebooks):
            f32 = lambda x: x.astype(np.float32).astype(np.float64)
            assert np.array_equal(b.codewords, f32(a.codewords))
            assert np.array_equal(b.usage_counts, f32(a.usage_counts))
            assert np.array_equal(b.embed_sums, f32(a.embed_sums))

    def test_write_read_write_bit_exact(self, tmp_path):
        cbs = make_cbs("pq")
        p1, p2 = tmp_path / "a", tmp_path / "b"
        write_codebooks(cbs, p1)
        write_codebooks(read_codebooks(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unknown_kind_byte(self, tmp_path):
        cbs = make_cbs("pq")
        p = tmp_path / "a"
        write_codebooks(cbs, p)
        raw = bytearray(p.read_bytes())
        raw[8] = 7  # kind byte directly after magic+version
        p.write_bytes(bytes(raw))
        with pytest.raises(UnknownKindError):
            read_codebooks(p)

    def test_truncated_book(self, tmp_path):
        cbs = make_cbs("pq")
        p = tmp_path / "a"
        write_codebooks(cbs, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(TruncatedFileError):
            read_codebooks(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "a"
        p.write_bytes(b"SOFM" + b"\0" * 32)
        with pytest.raises(BadMagicError):
            read_codebooks(p)


class TestGrids:
    def test_plain_round_trip(self, tmp_path):
        g = TokenGrid(np.random.default_rng(3).integers(0, 100, size=(9, 4)), 100)
        p = tmp_path / "g.sotg"
        write_grid(g, p)
        assert read_grid(p) == g

    def test_delayed_round_trip(self, tmp_path):
        g = TokenGrid(np.random.default_rng(4).integers(0, 50, size=(6, 3)), 50)
        dg = apply_delay(g, 2)
        p = tmp_path / "g"
        write_grid(dg, p)
        back = read_grid(p)
        assert back == dg
        assert back.delay == 2 and back.pad_id == dg.pad_id

    def test_write_read_write_bit_exact(self, tmp_path):
        g = TokenGrid(np.random.default_rng(5).integers(0, 20, size=(5, 2)), 20)
        p1, p2 = tmp_path / "a", tmp_path / "b"
        write_grid(apply_delay(g, 1), p1)
        write_grid(read_grid(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_id_out_of_range(self, tmp_path):
        g = TokenGrid(np.array([[3]]), 10)
        p = tmp_path / "a"
        write_grid(g, p)
        raw = bytearray(p.read_bytes())
        struct.pack_into("<I", raw, len(raw) - 4, 10)  # id == vocab
        p.write_bytes(bytes(raw))
        with pytest.raises(IdOutOfRangeError):
            read_grid(p)

    def test_malformed_delayed_rejected_on_load(self, tmp_path):
        g = TokenGrid(np.array([[0, 1], [2, 3]]), 4)
        dg = apply_delay(g, 1)
        p = tmp_path / "a"
        write_grid(dg, p)
        raw = bytearray(p.read_bytes())
        # clobber the required pad in the first delayed frame with a token
        # (header is 40 bytes; ids[0, 1] is the second u32 of the payload)
        struct.pack_into("<I", raw, 40 + 4, 0)
        p.write_bytes(bytes(raw))
        with pytest.raises(MalformedDelayedGridError):
            read_grid(p)

    def test_truncated(self, tmp_path):
        g = TokenGrid(np.zeros((3, 3), dtype=int), 5)
        p = tmp_path / "a"
        write_grid(g, p)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(TruncatedFileError):
            read_grid(p)


class TestSynth:
    def test_deterministic(self):
        for spec in ["anisotropic-gaussian(8, 2)", "clusters(4, 3, 0.1)", "ar1(5, 0.9)"]:
            a = synth_features(spec, 100, 7)
            b = synth_features(spec, 100, 7)
            assert np.array_equal(a, b)
            c = synth_features(spec, 100, 8)
            assert not np.array_equal(a, c)

    def test_anisotropic_variance_decay(self):
        x = synth_features("anisotropic-gaussian(6, 2)", 50_000, 0)
        v = x.var(axis=0)
        expected = np.arange(1, 7, dtype=float) ** -2.0
        assert np.allclose(v, expected, rtol=0.05)
        # coordinate importance strictly decreases
        assert np.all(np.diff(v) < 0)

    def test_clusters_near_true_means(self):
        spec = "clusters(5, 4, 0.05)"
        x = synth_features(spec, 2000, 11)
        means = synth_cluster_means(spec, 11)
        assert means.shape == (5, 4)
        d = np.linalg.norm(x[:, None, :] - means[None, :, :], axis=2).min(axis=1)
        # every point sits within a few noise standard deviations of a center
        assert d.max() < 0.05 * 6

    def test_ar1_autocorrelation(self):
        x = synth_features("ar1(1, 0.8)", 200_000, 3).ravel()
        x = x - x.mean()
        rho = (x[1:] * x[:-1]).sum() / (x * x).sum()
        assert rho == pytest.approx(0.8, abs=0.02)

    def test_spec_parsing(self):
        assert parse_synth_spec(" ar1( 5 , 0.5 ) ") == ("ar1", [5.0, 0.5])
        for bad in ["", "nope", "ar1(a,b)", "clusters(1)"]:
            with pytest.raises(BadSpecError):
                if "(" in bad:
                    synth_features(bad, 10, 0)
                else:
                    parse_synth_spec(bad)

    def test_unknown_distribution(self):
        with pytest.raises(BadSpecError):
            synth_features("mystery(1, 2)", 10, 0)


class TestConfig:
    KEYS = {"seed", "streams", "delay"}

    def test_basic(self):
        text = "seed = 3\n# comment\nstreams=4  # trailing\n\ndelay = 1\n"
        assert parse_config(text, self.KEYS) == {
            "seed": "3",
            "streams": "4",
            "delay": "1",
        }

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config("bogus = 1", self.KEYS)

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config("seed 3", self.KEYS)

    def test_last_assignment_wins(self):
        assert parse_config("seed = 1\nseed = 2", self.KEYS)["seed"] == "2"
