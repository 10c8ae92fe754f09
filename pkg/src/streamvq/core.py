"""Shared domain types, errors, and the deterministic RNG contract."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class StreamVQError(Exception):
    """Base class for all streamvq errors."""


class NonFiniteError(StreamVQError):
    def __init__(self, value, row, col):
        super().__init__(f"non-finite value {value!r} at ({row}, {col})")
        self.value = value
        self.row = row
        self.col = col


class EmptyMatrixError(StreamVQError):
    pass


class InvalidRangeError(StreamVQError):
    pass


class IndivisibleDimensionError(StreamVQError):
    pass


class DimensionMismatchError(StreamVQError):
    pass


class IndexOutOfRangeError(StreamVQError):
    pass


class InvalidKeepCountError(StreamVQError):
    pass


class WrongKindError(StreamVQError):
    pass


class InsufficientDataError(StreamVQError):
    pass


class ShapeMismatchError(StreamVQError):
    pass


class TooShortError(StreamVQError):
    pass


class MalformedDelayedGridError(StreamVQError):
    pass


class InconsistentCorpusError(StreamVQError):
    pass


class DegenerateDistributionError(StreamVQError):
    pass


class BadMagicError(StreamVQError):
    pass


class VersionMismatchError(StreamVQError):
    pass


class TruncatedFileError(StreamVQError):
    pass


class UnknownKindError(StreamVQError):
    pass


class IdOutOfRangeError(StreamVQError):
    pass


class BadSpecError(StreamVQError):
    pass


class ConfigError(StreamVQError):
    pass


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

def as_matrix(data) -> np.ndarray:
    """Coerce to a 2-D float64 C-contiguous array without validating values."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def validate_matrix(m: np.ndarray) -> None:
    """Check the feature-matrix invariants: non-empty and all values finite.

    Raises EmptyMatrixError or NonFiniteError (reporting the first offending
    cell in row-major order).
    """
    if m.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise EmptyMatrixError(f"matrix shape {m.shape} has an empty axis")
    finite = np.isfinite(m)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise NonFiniteError(m[row, col], int(row), int(col))


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

class SeededRng:
    """Deterministic random source backed by numpy's PCG64.

    PCG64 with a fixed integer seed produces the same stream on every
    platform numpy supports, which is what all sampling, dropout draws, and
    synthetic-data generation in this package rely on. Instances are
    single-owner: pass them by handle, never share across threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform_int(self, lo: int, hi: int) -> int:
        """Draw an integer uniformly from [lo, hi] inclusive."""
        if lo > hi:
            raise InvalidRangeError(f"lo={lo} > hi={hi}")
        return int(self._gen.integers(lo, hi + 1))

    def uniform_ints(self, lo: int, hi: int, n: int) -> np.ndarray:
        """Vectorized uniform_int: n draws from [lo, hi] inclusive."""
        if lo > hi:
            raise InvalidRangeError(f"lo={lo} > hi={hi}")
        return self._gen.integers(lo, hi + 1, size=n)

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_rows(self, n_rows: int, k: int) -> np.ndarray:
        """k distinct row indices out of n_rows."""
        return self._gen.choice(n_rows, size=k, replace=False)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)


def uniform_int(rng: SeededRng, lo: int, hi: int) -> int:
    return rng.uniform_int(lo, hi)


# ---------------------------------------------------------------------------
# Token grids
# ---------------------------------------------------------------------------

@dataclass
class TokenGrid:
    """T x m grid of token ids, one token per stream per frame.

    All ids are in [0, vocab_size); special ids (pad/bos/eos) never appear
    here, only inside a DelayedGrid.
    """

    ids: np.ndarray  # (T, m) integer array
    vocab_size: int

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 2:
            raise ShapeMismatchError("token grid must be 2-D (frames x streams)")
        if self.streams < 1:
            raise ShapeMismatchError("token grid needs at least one stream")
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise IdOutOfRangeError(
                f"token ids must lie in [0, {self.vocab_size})"
            )

    @property
    def frames(self) -> int:
        return self.ids.shape[0]

    @property
    def streams(self) -> int:
        return self.ids.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.ids.shape == other.ids.shape
            and bool(np.array_equal(self.ids, other.ids))
        )


@dataclass
class DelayedGrid:
    """A TokenGrid after the delayed-pattern shift.

    Stream j (1-indexed) is shifted by delay*(j-1) frames; every position
    outside a stream's real-token window holds pad_id. Special ids live
    strictly above the token vocabulary: pad = V, bos = V+1, eos = V+2 by
    default (see special_ids).
    """

    ids: np.ndarray  # (T + d*(m-1), m)
    vocab_size: int
    delay: int
    pad_id: int = field(default=-1)
    bos_id: int = field(default=-1)
    eos_id: int = field(default=-1)

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 2:
            raise ShapeMismatchError("delayed grid must be 2-D")
        if self.delay < 0:
            raise InvalidRangeError("delay must be >= 0")
        if self.pad_id < 0:
            self.pad_id, self.bos_id, self.eos_id = special_ids(self.vocab_size)
        specials = {self.pad_id, self.bos_id, self.eos_id}
        if len(specials) != 3 or min(specials) < self.vocab_size:
            raise InvalidRangeError(
                "pad/bos/eos ids must be distinct and >= vocab_size"
            )

    @property
    def frames(self) -> int:
        return self.ids.shape[0]

    @property
    def streams(self) -> int:
        return self.ids.shape[1]

    @property
    def token_frames(self) -> int:
        """T of the underlying TokenGrid."""
        return self.frames - self.delay * (self.streams - 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DelayedGrid):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.delay == other.delay
            and (self.pad_id, self.bos_id, self.eos_id)
            == (other.pad_id, other.bos_id, other.eos_id)
            and self.ids.shape == other.ids.shape
            and bool(np.array_equal(self.ids, other.ids))
        )


def special_ids(vocab_size: int) -> tuple[int, int, int]:
    """(pad, bos, eos) placed just above the token vocabulary."""
    return vocab_size, vocab_size + 1, vocab_size + 2
