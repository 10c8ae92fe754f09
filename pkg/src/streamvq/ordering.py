"""Prefix-reconstruction analysis, distortion metrics, and Clip&Shuffle."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    NonFiniteError,
    SeededRng,
    ShapeMismatchError,
    TooShortError,
    validate_matrix,
)
from .quantizer import CodebookSet, decode_batch, encode_batch


@dataclass
class LossWeights:
    """Non-negative weights for the four loss terms."""

    lambda1: float = 1.0
    lambda2: float = 1000.0
    lambda3: float = 10.0
    lambda4: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise NonFiniteError(v, 0, 0)


@dataclass
class OrderingReport:
    """Per-prefix-length distortion: one (b, mse, mcd_db) record per stream."""

    quantizer_kind: str
    streams: int
    records: list[tuple[int, float, float | None]]
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("kind,m,b,mse,mcd_db\n")
        for b, mse, mcd_db in self.records:
            mcd_str = "" if mcd_db is None else repr(mcd_db)
            buf.write(f"{self.quantizer_kind},{self.streams},{b},{mse!r},{mcd_str}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_csv())


def _check_shapes(x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"shape {x.shape} != {y.shape}")
    return x, y


def l2_loss(x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared elementwise difference (mean-square convention)."""
    x, y = _check_shapes(x, y)
    return float(np.mean((x - y) ** 2))


def total_loss(vq: float, sem: float, acou: float, adv: float, w: LossWeights) -> float:
    """Weighted combination of the four scalar loss terms.

    The adversarial term is an externally supplied scalar; nothing here
    evaluates a discriminator.
    """
    terms = (vq, sem, acou, adv)
    for v in terms:
        if not math.isfinite(v) or v < 0:
            raise NonFiniteError(v, 0, 0)
    return w.lambda1 * vq + w.lambda2 * sem + w.lambda3 * acou + w.lambda4 * adv


MCD_CONST = (10.0 / math.log(10.0)) * math.sqrt(2.0)


def mcd(x: np.ndarray, y: np.ndarray, skip_first_coeff: bool = False) -> float:
    """Mel-cepstral distortion in dB between two cepstral sequences.

    (10/ln 10)*sqrt(2) times the mean over frames of the Euclidean norm of
    the per-frame coefficient difference. Columns are cepstral
    coefficients; set skip_first_coeff to exclude column 0 (the energy
    term) from the distance.
    """
    x, y = _check_shapes(x, y)
    if skip_first_coeff:
        x, y = x[:, 1:], y[:, 1:]
    per_frame = np.sqrt(np.sum((x - y) ** 2, axis=1))
    return float(MCD_CONST * per_frame.mean())


def prefix_curve(
    data: np.ndarray,
    cbs: CodebookSet,
    cepstral: bool = False,
    metadata: dict | None = None,
) -> OrderingReport:
    """Distortion of reconstruction from the first b streams, for b = 1..m.

    Rows are encoded once at inference (no dropout) and decoded at every
    prefix length with dropped streams zero-filled, mirroring the
    training-time mask semantics.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    validate_matrix(data)
    ids, _ = encode_batch(data, cbs)
    records = []
    for b in range(1, cbs.streams + 1):
        recon = decode_batch(ids, cbs, prefix=b)
        mse = l2_loss(data, recon)
        mcd_db = mcd(data, recon) if cepstral else None
        records.append((b, mse, mcd_db))
    meta = dict(metadata or {})
    meta.setdefault("rows", data.shape[0])
    meta.setdefault("metric", "mse+mcd" if cepstral else "mse")
    meta.setdefault(
        "config_hash",
        hashlib.sha256(
            b"".join(np.ascontiguousarray(cb.codewords).tobytes() for cb in cbs.codebooks)
        ).hexdigest()[:16],
    )
    return OrderingReport(cbs.kind, cbs.streams, records, meta)


def clip_and_shuffle(a: np.ndarray, frame_rate: int, rng: SeededRng) -> np.ndarray:
    """Segment-sample-and-slice-shuffle transform.

    Draws a segment covering 25-75% of the input frames at a uniform random
    start, chunks it into one-second slices (frame_rate rows each, final
    partial slice kept), and returns the slices in a uniformly random
    order. Destroys short-time ordering while preserving content.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    rows = a.shape[0]
    if rows < frame_rate:
        raise TooShortError(f"{rows} rows < one second ({frame_rate} frames)")
    fraction = 0.25 + 0.5 * rng.random()
    length = max(1, int(round(fraction * rows)))
    start = rng.uniform_int(0, rows - length)
    segment = a[start : start + length]
    slices = [segment[i : i + frame_rate] for i in range(0, length, frame_rate)]
    order = rng.permutation(len(slices))
    return np.concatenate([slices[i] for i in order], axis=0)
