"""Binary file formats (SOFM/SOCB/SOTG), config files, synthetic data.

All multi-byte values are little-endian; reals are 32-bit IEEE-754 on disk
(float64 in memory, truncated on write). Bit-exactness is defined at the
file level: write-read-write produces identical bytes.
"""

from __future__ import annotations

import re
import struct

import numpy as np

from .core import (
    BadMagicError,
    BadSpecError,
    ConfigError,
    DelayedGrid,
    IdOutOfRangeError,
    SeededRng,
    TokenGrid,
    TruncatedFileError,
    UnknownKindError,
    VersionMismatchError,
)
from .quantizer import KIND_OPQ, KIND_PQ, KIND_RQ, Codebook, CodebookSet

VERSION = 1
_KIND_CODES = {KIND_PQ: 0, KIND_RQ: 1, KIND_OPQ: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.path}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def floats(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64)

    def u32s(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<u4", count=count).astype(np.int64)

    def done(self):
        if self.pos != len(self.data):
            raise TruncatedFileError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes"
            )


def _check_header(r: _Reader, magic: bytes):
    got = r.take(4)
    if got != magic:
        raise BadMagicError(f"{r.path}: magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise VersionMismatchError(f"{r.path}: version {version}, expected {VERSION}")


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# SOFM: feature matrices
# ---------------------------------------------------------------------------

def write_features(m: np.ndarray, path) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "wb") as f:
        f.write(b"SOFM")
        f.write(struct.pack("<III", VERSION, m.shape[0], m.shape[1]))
        f.write(_f32_bytes(m))


def read_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    _check_header(r, b"SOFM")
    rows, cols = r.unpack("II")
    data = r.floats(rows * cols).reshape(rows, cols)
    r.done()
    return data


# ---------------------------------------------------------------------------
# SOCB: codebook sets
# ---------------------------------------------------------------------------

def write_codebooks(cbs: CodebookSet, path) -> None:
    k0 = cbs.codebooks[0]
    with open(path, "wb") as f:
        f.write(b"SOCB")
        f.write(
            struct.pack(
                "<IBBHIIII",
                VERSION,
                _KIND_CODES[cbs.kind],
                cbs.group_size,
                0,
                cbs.num_codebooks,
                k0.num_codewords,
                k0.sub_dim,
                cbs.input_dim,
            )
        )
        for cb in cbs.codebooks:
            f.write(_f32_bytes(cb.codewords))
            f.write(_f32_bytes(cb.usage_counts))
            f.write(_f32_bytes(cb.embed_sums))


def read_codebooks(path) -> CodebookSet:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    _check_header(r, b"SOCB")
    kind_code, group_size, _reserved, n_books, n_words, sub_dim, input_dim = r.unpack(
        "BBHIIII"
    )
    if kind_code not in _CODE_KINDS:
        raise UnknownKindError(f"{path}: kind byte {kind_code}")
    books = []
    for _ in range(n_books):
        cw = r.floats(n_words * sub_dim).reshape(n_words, sub_dim)
        usage = r.floats(n_words)
        sums = r.floats(n_words * sub_dim).reshape(n_words, sub_dim)
        books.append(Codebook(cw, usage, sums))
    r.done()
    return CodebookSet(_CODE_KINDS[kind_code], books, group_size, input_dim)


# ---------------------------------------------------------------------------
# SOTG: token grids (plain or delayed)
# ---------------------------------------------------------------------------

def write_grid(g: TokenGrid | DelayedGrid, path) -> None:
    delayed = isinstance(g, DelayedGrid)
    if delayed:
        d, pad, bos, eos = g.delay, g.pad_id, g.bos_id, g.eos_id
    else:
        from .core import special_ids

        d = 0
        pad, bos, eos = special_ids(g.vocab_size)
    with open(path, "wb") as f:
        f.write(b"SOTG")
        f.write(
            struct.pack(
                "<IBBHIIIIIII",
                VERSION,
                1 if delayed else 0,
                0,
                0,
                g.frames,
                g.streams,
                g.vocab_size,
                d,
                pad,
                bos,
                eos,
            )
        )
        f.write(np.ascontiguousarray(g.ids, dtype="<u4").tobytes())


def read_grid(path) -> TokenGrid | DelayedGrid:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    _check_header(r, b"SOTG")
    delayed_flag, _r1, _r2, frames, streams, vocab, d, pad, bos, eos = r.unpack(
        "BBHIIIIIII"
    )
    ids = r.u32s(frames * streams).reshape(frames, streams)
    r.done()
    if delayed_flag:
        dg = DelayedGrid(ids, vocab, d, pad, bos, eos)
        # surface malformed grids at load time
        from .delay import remove_delay

        remove_delay(dg)
        return dg
    if ids.size and ids.max() >= vocab:
        raise IdOutOfRangeError(f"{path}: id {int(ids.max())} >= vocab {vocab}")
    return TokenGrid(ids, vocab)


# ---------------------------------------------------------------------------
# Synthetic feature matrices
# ---------------------------------------------------------------------------

_SPEC_RE = re.compile(r"^\s*([a-z0-9-]+)\s*\(([^)]*)\)\s*$")


def parse_synth_spec(spec: str):
    m = _SPEC_RE.match(spec)
    if not m:
        raise BadSpecError(f"cannot parse distribution spec {spec!r}")
    name = m.group(1)
    try:
        args = [float(x) for x in m.group(2).split(",") if x.strip()]
    except ValueError as e:
        raise BadSpecError(f"bad arguments in {spec!r}") from e
    return name, args


def synth_features(spec: str, n: int, seed: int) -> np.ndarray:
    """Deterministic synthetic data for quantizer experiments.

    Specs:
      anisotropic-gaussian(dim, p)  independent zero-mean Gaussian
          coordinates with variance i^-p for coordinate i = 1..dim
          (axis-aligned, so coordinate order matches importance order)
      clusters(k, dim, spread)      k standard-normal cluster centers,
          points = center + spread * noise
      ar1(dim, a)                   rows follow x_t = a*x_{t-1} +
          sqrt(1-a^2)*noise per coordinate
    """
    name, args = parse_synth_spec(spec)
    rng = SeededRng(seed)
    if name == "anisotropic-gaussian":
        if len(args) != 2:
            raise BadSpecError("anisotropic-gaussian(dim, exponent)")
        dim, p = int(args[0]), args[1]
        scales = np.arange(1, dim + 1, dtype=np.float64) ** (-p / 2.0)
        return rng.normal((n, dim)) * scales
    if name == "clusters":
        if len(args) != 3:
            raise BadSpecError("clusters(k, dim, spread)")
        k, dim, spread = int(args[0]), int(args[1]), args[2]
        means = rng.normal((k, dim))
        labels = rng.uniform_ints(0, k - 1, n)
        return means[labels] + spread * rng.normal((n, dim))
    if name == "ar1":
        if len(args) != 2:
            raise BadSpecError("ar1(dim, coefficient)")
        dim, a = int(args[0]), args[1]
        noise = rng.normal((n, dim)) * np.sqrt(max(0.0, 1.0 - a * a))
        out = np.empty((n, dim))
        prev = rng.normal(dim)
        for t in range(n):
            prev = a * prev + noise[t]
            out[t] = prev
        return out
    raise BadSpecError(f"unknown distribution {name!r}")


def synth_cluster_means(spec: str, seed: int) -> np.ndarray:
    """True cluster centers for a clusters(...) spec (same seed stream)."""
    name, args = parse_synth_spec(spec)
    if name != "clusters":
        raise BadSpecError("only clusters(...) has cluster means")
    k, dim = int(args[0]), int(args[1])
    return SeededRng(seed).normal((k, dim))


# ---------------------------------------------------------------------------
# key = value config files
# ---------------------------------------------------------------------------

def parse_config(text: str, known_keys) -> dict[str, str]:
    """Parse `key = value` lines with # comments; unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known_keys:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def read_config(path, known_keys) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), known_keys)
