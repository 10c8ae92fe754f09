"""Product, residual, and ordered product quantization with EMA training.

Ordered product quantization (OPQ) here means product quantization whose
streams are trained under stream-wise nested dropout so that low streams
carry the most important information. It is unrelated to the classic
rotation-based "optimized product quantization".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    DimensionMismatchError,
    IndexOutOfRangeError,
    IndivisibleDimensionError,
    InsufficientDataError,
    InvalidKeepCountError,
    SeededRng,
    WrongKindError,
    validate_matrix,
)

KIND_PQ = "pq"
KIND_RQ = "rq"
KIND_OPQ = "opq"
KINDS = (KIND_PQ, KIND_RQ, KIND_OPQ)


@dataclass
class Codebook:
    """One codebook plus its EMA accumulators."""

    codewords: np.ndarray  # (K, sub_dim)
    usage_counts: np.ndarray = field(default=None)  # (K,)
    embed_sums: np.ndarray = field(default=None)  # (K, sub_dim)

    def __post_init__(self):
        self.codewords = np.ascontiguousarray(self.codewords, dtype=np.float64)
        if self.usage_counts is None:
            self.usage_counts = np.zeros(self.num_codewords)
        if self.embed_sums is None:
            self.embed_sums = np.zeros_like(self.codewords)
        self.usage_counts = np.ascontiguousarray(self.usage_counts, dtype=np.float64)
        self.embed_sums = np.ascontiguousarray(self.embed_sums, dtype=np.float64)

    @property
    def num_codewords(self) -> int:
        return self.codewords.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.codewords.shape[1]


@dataclass
class CodebookSet:
    """Ordered list of codebooks plus quantizer kind and stream grouping."""

    kind: str
    codebooks: list[Codebook]
    group_size: int
    input_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise WrongKindError(f"unknown quantizer kind {self.kind!r}")
        if self.group_size < 1 or len(self.codebooks) % self.group_size:
            raise WrongKindError(
                "codebook count must be a multiple of group_size"
            )
        if self.kind == KIND_RQ:
            if self.group_size != 1:
                raise WrongKindError("RQ uses group_size 1")
            for cb in self.codebooks:
                if cb.sub_dim != self.input_dim:
                    raise DimensionMismatchError(
                        "RQ codebooks must span the full input dimension"
                    )
        else:
            if sum(cb.sub_dim for cb in self.codebooks) != self.input_dim:
                raise DimensionMismatchError(
                    "PQ/OPQ codebook sub-dimensions must sum to input_dim"
                )

    @property
    def num_codebooks(self) -> int:
        return len(self.codebooks)

    @property
    def streams(self) -> int:
        return self.num_codebooks // self.group_size

    def stream_books(self, j: int) -> list[Codebook]:
        """Member codebooks of stream j (0-indexed)."""
        lo = j * self.group_size
        return self.codebooks[lo : lo + self.group_size]

    def stream_vocab(self, j: int) -> int:
        v = 1
        for cb in self.stream_books(j):
            v *= cb.num_codewords
        return v

    def stream_dim(self, j: int) -> int:
        if self.kind == KIND_RQ:
            return self.input_dim
        return sum(cb.sub_dim for cb in self.stream_books(j))


@dataclass
class QuantizeResult:
    stream_ids: np.ndarray  # (m,) combined indices
    quantized: np.ndarray  # reconstructed vector (post-dropout in training)
    kept_streams: int


@dataclass
class TrainConfig:
    ema_decay: float = 0.99
    iterations: int = 100
    dead_code_threshold: float = 1e-2
    smoothing_epsilon: float = 1e-5
    # When False, streams dropped by nested dropout do not contribute EMA
    # statistics in that pass. Default mirrors the mask applying to the
    # output vector only, not to the quantization step.
    update_dropped: bool = True

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise InvalidKeepCountError("ema_decay must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def chunk(e: np.ndarray, n_sub: int) -> list[np.ndarray]:
    """Split a vector into n_sub equal-dimension sub-vectors."""
    e = np.asarray(e, dtype=np.float64).ravel()
    if e.size % n_sub:
        raise IndivisibleDimensionError(
            f"dimension {e.size} not divisible by {n_sub}"
        )
    return list(e.reshape(n_sub, -1))


def nearest_codeword(sub: np.ndarray, cb: Codebook) -> tuple[int, np.ndarray]:
    """Index and value of the nearest codeword (ties to the lowest index)."""
    sub = np.asarray(sub, dtype=np.float64).ravel()
    if sub.size != cb.sub_dim:
        raise DimensionMismatchError(
            f"sub-vector dim {sub.size} != codebook sub_dim {cb.sub_dim}"
        )
    idx, _ = kernels.assign_nearest(sub[None, :], cb.codewords)
    i = int(idx[0])
    return i, cb.codewords[i].copy()


def combine_indices(i1: int, i2: int, size2: int) -> int:
    """Merge two codebook indices into one id: i1 * size2 + i2."""
    if not 0 <= i2 < size2:
        raise IndexOutOfRangeError(f"i2={i2} out of range for size {size2}")
    if i1 < 0:
        raise IndexOutOfRangeError(f"i1={i1} negative")
    return i1 * size2 + i2


def split_index(combined: int, size2: int) -> tuple[int, int]:
    """Inverse of combine_indices."""
    return combined // size2, combined % size2


def nested_dropout(streams: list[np.ndarray], b: int) -> list[np.ndarray]:
    """Keep the first b stream sub-vectors, zero the rest."""
    m = len(streams)
    if not 1 <= b <= m:
        raise InvalidKeepCountError(f"keep count {b} not in [1, {m}]")
    return [
        s.copy() if j < b else np.zeros_like(s) for j, s in enumerate(streams)
    ]


# ---------------------------------------------------------------------------
# Batch encode / decode (the single-vector API wraps these)
# ---------------------------------------------------------------------------

def _check_pq_input(data: np.ndarray, cbs: CodebookSet) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != cbs.input_dim:
        raise DimensionMismatchError(
            f"input dim {data.shape[1]} != quantizer dim {cbs.input_dim}"
        )
    return data


def pq_encode_batch(data: np.ndarray, cbs: CodebookSet):
    """Encode rows with grouped product quantization (no dropout).

    Returns (ids (N, m), quantized (N, D), book_ids (N, n_books)).
    """
    if cbs.kind == KIND_RQ:
        raise WrongKindError("pq_encode requires a PQ or OPQ codebook set")
    data = _check_pq_input(data, cbs)
    n = data.shape[0]
    book_ids = np.empty((n, cbs.num_codebooks), dtype=np.int64)
    quant = np.empty_like(data)
    col = 0
    for i, cb in enumerate(cbs.codebooks):
        sl = slice(col, col + cb.sub_dim)
        idx, _ = kernels.assign_nearest(data[:, sl], cb.codewords)
        book_ids[:, i] = idx
        quant[:, sl] = cb.codewords[idx]
        col += cb.sub_dim
    ids = _combine_book_ids(book_ids, cbs)
    return ids, quant, book_ids


def _combine_book_ids(book_ids: np.ndarray, cbs: CodebookSet) -> np.ndarray:
    n = book_ids.shape[0]
    ids = np.zeros((n, cbs.streams), dtype=np.int64)
    for j in range(cbs.streams):
        acc = np.zeros(n, dtype=np.int64)
        for g, cb in enumerate(cbs.stream_books(j)):
            acc = acc * cb.num_codewords + book_ids[:, j * cbs.group_size + g]
        ids[:, j] = acc
    return ids


def _split_stream_ids(ids: np.ndarray, cbs: CodebookSet) -> np.ndarray:
    """(N, m) combined ids -> (N, n_books) member indices."""
    n = ids.shape[0]
    book_ids = np.empty((n, cbs.num_codebooks), dtype=np.int64)
    for j in range(cbs.streams):
        rest = ids[:, j].copy()
        books = cbs.stream_books(j)
        for g in range(len(books) - 1, -1, -1):
            size = books[g].num_codewords
            book_ids[:, j * cbs.group_size + g] = rest % size
            rest //= size
        if (rest < 0).any() or (ids[:, j] >= cbs.stream_vocab(j)).any():
            raise IndexOutOfRangeError(f"stream {j} id out of range")
    return book_ids


def rq_encode_batch(data: np.ndarray, cbs: CodebookSet):
    """Greedy multi-stage residual quantization.

    Returns (ids (N, m), quantized (N, D), residuals list per stage).
    """
    if cbs.kind != KIND_RQ:
        raise WrongKindError("rq_encode requires an RQ codebook set")
    data = _check_pq_input(data, cbs)
    n = data.shape[0]
    ids = np.empty((n, cbs.streams), dtype=np.int64)
    approx = np.zeros_like(data)
    stage_inputs = []
    for k, cb in enumerate(cbs.codebooks):
        residual = data - approx
        stage_inputs.append(residual)
        idx, _ = kernels.assign_nearest(residual, cb.codewords)
        ids[:, k] = idx
        approx = approx + cb.codewords[idx]
    return ids, approx, stage_inputs


def encode_batch(data: np.ndarray, cbs: CodebookSet):
    """Inference-mode encode for any kind: (ids (N, m), quantized (N, D))."""
    if cbs.kind == KIND_RQ:
        ids, quant, _ = rq_encode_batch(data, cbs)
    else:
        ids, quant, _ = pq_encode_batch(data, cbs)
    return ids, quant


def decode_batch(ids: np.ndarray, cbs: CodebookSet, prefix: int | None = None) -> np.ndarray:
    """Reconstruct rows from the first `prefix` streams (all when None)."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    m = cbs.streams
    b = m if prefix is None else prefix
    if not 1 <= b <= m:
        raise InvalidKeepCountError(f"prefix {b} not in [1, {m}]")
    if ids.shape[1] != m:
        raise DimensionMismatchError(f"expected {m} stream ids per row")
    n = ids.shape[0]
    if cbs.kind == KIND_RQ:
        out = np.zeros((n, cbs.input_dim))
        for k in range(b):
            cb = cbs.codebooks[k]
            col = ids[:, k]
            if (col < 0).any() or (col >= cb.num_codewords).any():
                raise IndexOutOfRangeError(f"stage {k} id out of range")
            out += cb.codewords[col]
        return out
    book_ids = _split_stream_ids(ids, cbs)
    out = np.zeros((n, cbs.input_dim))
    col = 0
    for i, cb in enumerate(cbs.codebooks):
        sl = slice(col, col + cb.sub_dim)
        if i // cbs.group_size < b:
            out[:, sl] = cb.codewords[book_ids[:, i]]
        col += cb.sub_dim
    return out


# ---------------------------------------------------------------------------
# Single-vector API
# ---------------------------------------------------------------------------

def pq_encode(e: np.ndarray, cbs: CodebookSet) -> QuantizeResult:
    ids, quant, _ = pq_encode_batch(e, cbs)
    return QuantizeResult(ids[0], quant[0], cbs.streams)


def rq_encode(e: np.ndarray, cbs: CodebookSet) -> QuantizeResult:
    ids, quant, _ = rq_encode_batch(e, cbs)
    return QuantizeResult(ids[0], quant[0], cbs.streams)


def opq_encode_train(e: np.ndarray, cbs: CodebookSet, rng: SeededRng) -> QuantizeResult:
    """Training-mode OPQ encode: product quantize, then nested dropout."""
    if cbs.kind != KIND_OPQ:
        raise WrongKindError("opq_encode requires an OPQ codebook set")
    ids, quant, _ = pq_encode_batch(e, cbs)
    m = cbs.streams
    b = rng.uniform_int(1, m)
    streams = _stream_slices(cbs)
    masked = quant[0].copy()
    for j in range(b, m):
        masked[streams[j]] = 0.0
    return QuantizeResult(ids[0], masked, b)


def opq_encode_infer(e: np.ndarray, cbs: CodebookSet) -> QuantizeResult:
    """Inference-mode OPQ encode: dropout disabled, full representation."""
    if cbs.kind != KIND_OPQ:
        raise WrongKindError("opq_encode requires an OPQ codebook set")
    return pq_encode(e, cbs)


def decode(stream_ids: np.ndarray, cbs: CodebookSet, prefix: int | None = None) -> np.ndarray:
    return decode_batch(stream_ids, cbs, prefix)[0]


def _stream_slices(cbs: CodebookSet) -> list[slice]:
    slices = []
    col = 0
    for j in range(cbs.streams):
        w = cbs.stream_dim(j)
        slices.append(slice(col, col + w))
        col += w
    return slices


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _sample_spread_rows(data: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    """k distinct row indices, D^2-weighted so picks spread across the data.

    Greedy distance-weighted seeding (k-means++ style): without it, two
    initial codewords landing in one tight cluster is a stable local
    optimum that EMA updates never escape.
    """
    n = data.shape[0]
    chosen = [rng.uniform_int(0, n - 1)]
    d2 = ((data - data[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total <= 0:
            # remaining rows duplicate the chosen ones; take any unchosen
            taken = set(chosen)
            chosen.extend(i for i in range(n) if i not in taken)
            chosen = chosen[:k]
            break
        u = rng.random() * total
        i = min(int(np.searchsorted(np.cumsum(d2), u, side="right")), n - 1)
        chosen.append(i)
        d2 = np.minimum(d2, ((data - data[i]) ** 2).sum(axis=1))
    return np.asarray(chosen[:k])


def codebook_init(
    data: np.ndarray,
    kind: str,
    num_codebooks: int,
    num_codewords: int,
    rng: SeededRng,
    group_size: int | None = None,
) -> CodebookSet:
    """Initialize a codebook set by sampling distinct data rows.

    PQ/OPQ codebooks take the matching chunk of sampled rows; RQ stage 1
    takes raw rows and later stages start near zero (residual scale).
    Rows are picked with distance-weighted sampling, see _sample_spread_rows.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    validate_matrix(data)
    n, dim = data.shape
    if n < num_codewords:
        raise InsufficientDataError(
            f"{n} rows < {num_codewords} codewords"
        )
    if group_size is None:
        group_size = 1 if kind == KIND_RQ else 2
    books = []
    if kind == KIND_RQ:
        scale = 1e-3 * float(data.std() or 1.0)
        for k in range(num_codebooks):
            if k == 0:
                rows = _sample_spread_rows(data, num_codewords, rng)
                cw = data[rows].copy()
            else:
                cw = scale * rng.normal((num_codewords, dim))
            books.append(Codebook(cw))
    else:
        if dim % num_codebooks:
            raise IndivisibleDimensionError(
                f"input dim {dim} not divisible into {num_codebooks} chunks"
            )
        sub = dim // num_codebooks
        for i in range(num_codebooks):
            sl = data[:, i * sub : (i + 1) * sub]
            rows = _sample_spread_rows(sl, num_codewords, rng)
            books.append(Codebook(sl[rows].copy()))
    return CodebookSet(kind, books, group_size, dim)


def _ema_update(cb: Codebook, counts, sums, cfg: TrainConfig):
    d = cfg.ema_decay
    cb.usage_counts = d * cb.usage_counts + (1.0 - d) * counts
    cb.embed_sums = d * cb.embed_sums + (1.0 - d) * sums
    total = cb.usage_counts.sum()
    k = cb.num_codewords
    if total > 0:
        # Laplace-smoothed counts keep the division stable for rare codes
        smoothed = (
            (cb.usage_counts + cfg.smoothing_epsilon)
            / (total + k * cfg.smoothing_epsilon)
            * total
        )
        cb.codewords = cb.embed_sums / smoothed[:, None]


def _reseed_dead(cb: Codebook, source: np.ndarray, cfg: TrainConfig, rng: SeededRng):
    dead = np.flatnonzero(cb.usage_counts < cfg.dead_code_threshold)
    if dead.size == 0:
        return
    rows = rng.uniform_ints(0, source.shape[0] - 1, dead.size)
    cb.codewords[dead] = source[rows]
    cb.usage_counts[dead] = 1.0
    cb.embed_sums[dead] = cb.codewords[dead]


def ema_train(
    data: np.ndarray,
    cbs: CodebookSet,
    cfg: TrainConfig,
    rng: SeededRng,
) -> tuple[CodebookSet, list[float]]:
    """Train codebooks in place with EMA updates; returns the loss trace.

    Each iteration encodes every row (with per-row nested dropout for OPQ),
    folds the assignment statistics into the EMA accumulators, recomputes
    codewords, and reseeds codewords whose EMA usage has gone dead. The
    trace holds the mean-square distortion between the data and the
    delivered (post-mask for OPQ) quantized output, one value per iteration.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    validate_matrix(data)
    if data.shape[1] != cbs.input_dim:
        raise DimensionMismatchError(
            f"data cols {data.shape[1]} != quantizer dim {cbs.input_dim}"
        )
    largest = max(cb.num_codewords for cb in cbs.codebooks)
    if data.shape[0] < largest:
        raise InsufficientDataError(
            f"{data.shape[0]} rows < largest codebook size {largest}"
        )
    n = data.shape[0]
    losses = []
    for _ in range(cfg.iterations):
        if cbs.kind == KIND_RQ:
            ids, quant, stage_inputs = rq_encode_batch(data, cbs)
            for k, cb in enumerate(cbs.codebooks):
                idx = ids[:, k]
                counts = np.bincount(idx, minlength=cb.num_codewords).astype(float)
                sums = np.zeros_like(cb.embed_sums)
                np.add.at(sums, idx, stage_inputs[k])
                _ema_update(cb, counts, sums, cfg)
                _reseed_dead(cb, stage_inputs[k], cfg, rng)
            losses.append(float(np.mean((data - quant) ** 2)))
            continue

        _, quant, book_ids = pq_encode_batch(data, cbs)
        if cbs.kind == KIND_OPQ:
            b = rng.uniform_ints(1, cbs.streams, n)
        else:
            b = None
        col = 0
        for i, cb in enumerate(cbs.codebooks):
            sl = slice(col, col + cb.sub_dim)
            idx = book_ids[:, i]
            sub = data[:, sl]
            if b is not None and not cfg.update_dropped:
                keep = b > (i // cbs.group_size)
                idx = idx[keep]
                sub = sub[keep]
            counts = np.bincount(idx, minlength=cb.num_codewords).astype(float)
            sums = np.zeros_like(cb.embed_sums)
            np.add.at(sums, idx, sub)
            _ema_update(cb, counts, sums, cfg)
            _reseed_dead(cb, data[:, sl], cfg, rng)
            col += cb.sub_dim
        if b is not None:
            # VQ loss is measured against the masked output actually delivered
            streams = _stream_slices(cbs)
            masked = quant.copy()
            for j in range(1, cbs.streams):
                masked[b <= j, streams[j]] = 0.0
            losses.append(float(np.mean((data - masked) ** 2)))
        else:
            losses.append(float(np.mean((data - quant) ** 2)))
    return cbs, losses
