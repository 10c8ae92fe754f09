"""Sampling stack and delayed autoregressive decoding over a pluggable model.

The conditional model here is a count-based Markov model, a desk-scale
stand-in for a neural LM: it is enough to exercise the delayed decoding
loop (chain-rule order within a frame, pad forcing, EOS protocol) and the
full sampling pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateDistributionError,
    DelayedGrid,
    InconsistentCorpusError,
    SeededRng,
    StreamVQError,
    TokenGrid,
    special_ids,
)
from .delay import remove_delay


class ModelFailureError(StreamVQError):
    pass


class NoProgressError(StreamVQError):
    pass


@dataclass
class SamplingConfig:
    temperature: float = 0.8
    top_p: float = 0.8
    top_k: int = 10
    repetition_penalty: float = 2.0
    seed: int = 0
    # Repetition history per stream by default; False pools all streams.
    per_stream_history: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise NonPositiveTemperature(self.temperature)
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")


class NonPositiveTemperature(StreamVQError):
    pass


# ---------------------------------------------------------------------------
# Sampling pipeline: penalty -> temperature -> softmax -> top-k -> top-p -> draw
# ---------------------------------------------------------------------------

def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise NonPositiveTemperature(temperature)
    return np.asarray(logits, dtype=np.float64) / temperature


def apply_repetition_penalty(logits: np.ndarray, history, penalty: float) -> np.ndarray:
    """CTRL-style penalty: seen ids get logit/penalty if positive, logit*penalty if not."""
    out = np.array(logits, dtype=np.float64, copy=True)
    if penalty == 1.0:
        return out
    for i in history:
        if out[i] > 0:
            out[i] /= penalty
        else:
            out[i] *= penalty
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    hi = np.max(logits)
    if not np.isfinite(hi):
        if hi == -np.inf:
            raise DegenerateDistributionError("all logits are -inf")
        raise ModelFailureError("non-finite logits")
    z = np.exp(logits - hi)
    return z / z.sum()


def top_k_filter(probs: np.ndarray, k: int) -> np.ndarray:
    """Keep the k most probable entries (ties to lowest index), renormalize."""
    probs = np.asarray(probs, dtype=np.float64)
    if k >= probs.size:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    out = np.zeros_like(probs)
    keep = order[:k]
    out[keep] = probs[keep]
    total = out.sum()
    if total <= 0:
        raise DegenerateDistributionError("top-k removed all mass")
    return out / total


def top_p_filter(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest probability-sorted prefix with mass >= p, renormalize."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    # fp guard so p == total mass keeps everything
    cut = int(np.searchsorted(cum, p - 1e-12)) + 1
    out = np.zeros_like(probs)
    keep = order[:cut]
    out[keep] = probs[keep]
    total = out.sum()
    if total <= 0:
        raise DegenerateDistributionError("top-p removed all mass")
    return out / total


def sample(probs: np.ndarray, rng: SeededRng) -> int:
    probs = np.asarray(probs, dtype=np.float64)
    total = probs.sum()
    if total <= 0:
        raise DegenerateDistributionError("all probability mass is zero")
    u = rng.random() * total
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.size - 1)


def sample_from_logits(
    logits: np.ndarray, cfg: SamplingConfig, rng: SeededRng, history=()
) -> int:
    """Full pipeline on raw scores. History ids feed the repetition penalty."""
    z = apply_repetition_penalty(logits, history, cfg.repetition_penalty)
    z = apply_temperature(z, cfg.temperature)
    probs = softmax(z)
    probs = top_k_filter(probs, cfg.top_k)
    probs = top_p_filter(probs, cfg.top_p)
    return sample(probs, rng)


# ---------------------------------------------------------------------------
# Markov reference model
# ---------------------------------------------------------------------------

class MarkovModel:
    """Count-based conditional model over delayed frames.

    Context for position (frame f, stream j) is the previous `order`
    delayed frames (BOS frames before the start) plus this frame's already
    fixed streams 1..j-1. Scores are log-probabilities over the extended
    vocabulary [0, vocab + 3) with add-constant smoothing at query time.
    """

    def __init__(self, order: int, streams: int, delay: int, vocab: int,
                 smoothing: float = 0.0):
        if order < 0:
            raise ValueError("order must be >= 0")
        self.order = order
        self.streams = streams
        self.delay = delay
        self.vocab = vocab
        self.smoothing = float(smoothing)
        self.pad_id, self.bos_id, self.eos_id = special_ids(vocab)
        self.counts: dict[tuple, np.ndarray] = {}

    @property
    def extended_vocab(self) -> int:
        return self.vocab + 3

    def _key(self, context_frames, j: int, partial) -> tuple:
        return (tuple(int(x) for x in np.ravel(context_frames)), j,
                tuple(int(x) for x in partial))

    def observe(self, context_frames, j: int, partial, target: int) -> None:
        key = self._key(context_frames, j, partial)
        row = self.counts.get(key)
        if row is None:
            row = np.zeros(self.extended_vocab)
            self.counts[key] = row
        row[target] += 1.0

    def scores(self, history: np.ndarray, partial, j: int) -> np.ndarray:
        """Log-probabilities for stream j given delayed-frame history."""
        context = history[-self.order :] if self.order else history[:0]
        if context.shape[0] < self.order:
            bos_rows = np.full(
                (self.order - context.shape[0], self.streams), self.bos_id
            )
            context = np.vstack([bos_rows, context]) if context.size else bos_rows
        row = self.counts.get(self._key(context, j, partial))
        if row is None:
            row = np.zeros(self.extended_vocab)
        probs = row + self.smoothing
        total = probs.sum()
        if total <= 0:
            # unseen context: fall back to a uniform guess over real tokens
            probs = np.zeros(self.extended_vocab)
            probs[: self.vocab] = 1.0
            total = probs.sum()
        with np.errstate(divide="ignore"):
            return np.log(probs / total)

    # -- JSON persistence (deterministic: sorted keys) ----------------------

    def to_json(self) -> str:
        entries = {}
        for (ctx, j, partial), row in self.counts.items():
            key = "%s|%d|%s" % (
                ",".join(map(str, ctx)),
                j,
                ",".join(map(str, partial)),
            )
            nz = np.flatnonzero(row)
            entries[key] = {str(int(t)): row[t] for t in nz}
        doc = {
            "order": self.order,
            "streams": self.streams,
            "delay": self.delay,
            "vocab": self.vocab,
            "smoothing": self.smoothing,
            "counts": entries,
        }
        return json.dumps(doc, sort_keys=True, indent=0)

    @classmethod
    def from_json(cls, text: str) -> "MarkovModel":
        doc = json.loads(text)
        model = cls(doc["order"], doc["streams"], doc["delay"], doc["vocab"],
                    doc["smoothing"])
        for key, row in doc["counts"].items():
            ctx_s, j_s, partial_s = key.split("|")
            ctx = tuple(int(x) for x in ctx_s.split(",")) if ctx_s else ()
            partial = tuple(int(x) for x in partial_s.split(",")) if partial_s else ()
            arr = np.zeros(model.extended_vocab)
            for tok, c in row.items():
                arr[int(tok)] = c
            model.counts[(ctx, int(j_s), partial)] = arr
        return model


def markov_fit(corpus: list[DelayedGrid], order: int, smoothing: float = 0.0) -> MarkovModel:
    """Accumulate counts over every query position of every grid.

    Positions the delay layout forces to pad are skipped (generation never
    queries them); the frame after stream 1's last real token contributes
    an EOS target so generation learns to stop.
    """
    if not corpus:
        raise InconsistentCorpusError("empty corpus")
    first = corpus[0]
    m, d, v = first.streams, first.delay, first.vocab_size
    for g in corpus[1:]:
        if (g.streams, g.delay, g.vocab_size) != (m, d, v):
            raise InconsistentCorpusError("grids disagree on m, d, or vocab")
    model = MarkovModel(order, m, d, v, smoothing)
    for g in corpus:
        t_len = g.token_frames
        bos_row = np.full((1, m), model.bos_id)
        frames = np.vstack([bos_row, g.ids]) if g.frames else bos_row
        total = g.frames
        for f in range(1, total + 2):  # 1-indexed over delayed frames, +EOS slot
            context = frames[max(0, f - order) : f] if order else frames[:0]
            if context.shape[0] < order:
                pad_rows = np.full((order - context.shape[0], m), model.bos_id)
                context = np.vstack([pad_rows, context])
            if f == total + 1:
                # virtual stop position for stream 1
                model.observe(context, 1, (), model.eos_id)
                break
            row = frames[f]
            for j in range(1, m + 1):
                t0 = f - d * (j - 1)  # 1-indexed original frame
                if t0 < 1 or t0 > t_len:
                    if j == 1 and t0 == t_len + 1:
                        model.observe(context, 1, tuple(), model.eos_id)
                    continue
                model.observe(context, j, tuple(row[: j - 1]), int(row[j - 1]))
    return model


# ---------------------------------------------------------------------------
# Delayed generation loop
# ---------------------------------------------------------------------------

def generate(
    model,
    cfg: SamplingConfig,
    m: int,
    d: int,
    max_frames: int,
    vocab: int,
    strict: bool = False,
):
    """Generate a delayed grid frame by frame with chain-rule stream order.

    Within a frame, streams are queried j = 1..m; the model sees all
    completed delayed frames (starting with a BOS frame) plus this frame's
    streams 1..j-1. Positions the delay layout forces to pad are set to
    pad_id without querying. Stops when stream 1 emits EOS (then flushes
    the trailing d*(m-1) frames) or when stream 1 reaches max_frames.

    Returns (DelayedGrid, TokenGrid, stop_reason) with stop_reason in
    {"eos", "max_frames", "no_progress"}.
    """
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    pad, bos, eos = special_ids(vocab)
    rng = SeededRng(cfg.seed)
    history = [np.full(m, bos, dtype=np.int64)]
    grid_rows: list[np.ndarray] = []
    per_stream_hist: list[list[int]] = [[] for _ in range(m)]
    pooled_hist: list[int] = []
    t_real: int | None = None  # T, fixed once stream 1 stops
    stop_reason = "max_frames"
    f = 0
    while True:
        f += 1
        if t_real is None and f > max_frames:
            t_real = max_frames
        row = np.full(m, pad, dtype=np.int64)
        for j in range(1, m + 1):
            t0 = f - d * (j - 1)
            if t0 < 1 or (t_real is not None and t0 > t_real):
                continue  # forced pad
            hist_arr = np.asarray(history)
            logits = np.array(
                model.scores(hist_arr, tuple(row[: j - 1]), j), dtype=np.float64
            )
            if logits.shape != (vocab + 3,):
                raise ModelFailureError(
                    f"model returned shape {logits.shape}, expected ({vocab + 3},)"
                )
            if not np.all(np.isfinite(logits) | (logits == -np.inf)):
                raise ModelFailureError("model returned NaN/inf scores")
            logits[pad] = -np.inf
            logits[bos] = -np.inf
            if j != 1 or t_real is not None:
                logits[eos] = -np.inf
            hist_ids = per_stream_hist[j - 1] if cfg.per_stream_history else pooled_hist
            tok = sample_from_logits(logits, cfg, rng, hist_ids)
            if tok == eos:
                t_real = t0 - 1
                stop_reason = "eos"
                if t_real == 0:
                    if strict:
                        raise NoProgressError("EOS at the first real position")
                    empty = DelayedGrid(
                        np.full((d * (m - 1), m), pad, dtype=np.int64),
                        vocab, d, pad, bos, eos,
                    )
                    return empty, remove_delay(empty), "no_progress"
                continue
            row[j - 1] = tok
            per_stream_hist[j - 1].append(tok)
            pooled_hist.append(tok)
        # re-apply pad forcing in case EOS landed mid-frame
        if t_real is not None:
            for j in range(1, m + 1):
                t0 = f - d * (j - 1)
                if t0 < 1 or t0 > t_real:
                    row[j - 1] = pad
        grid_rows.append(row)
        history.append(row)
        if t_real is not None and f >= t_real + d * (m - 1):
            break
    ids = np.asarray(grid_rows[: t_real + d * (m - 1)], dtype=np.int64)
    dg = DelayedGrid(ids, vocab, d, pad, bos, eos)
    return dg, remove_delay(dg), stop_reason
