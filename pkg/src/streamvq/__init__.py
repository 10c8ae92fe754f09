"""streamvq: ordered product quantization and multi-stream sequence tools.

Subpackages map onto the major pieces:

- core: domain types, errors, deterministic RNG
- quantizer: PQ / RQ / OPQ encode-decode and EMA codebook training
- ordering: prefix-reconstruction analysis, distortion metrics, Clip&Shuffle
- delay: delayed-pattern transform, inverse, visibility predicate
- lmsim: sampling stack and delayed autoregressive generation
- fileio + cli: binary formats, synthetic data, batch CLI
- kernels: compiled assignment kernel with pure-Python fallback
"""

from .core import SeededRng, TokenGrid, DelayedGrid, special_ids, validate_matrix
from .kernels import BACKEND
from .quantizer import (
    Codebook,
    CodebookSet,
    QuantizeResult,
    TrainConfig,
    chunk,
    codebook_init,
    combine_indices,
    decode,
    ema_train,
    nearest_codeword,
    nested_dropout,
    opq_encode_infer,
    opq_encode_train,
    pq_encode,
    rq_encode,
    split_index,
)
from .ordering import LossWeights, OrderingReport, clip_and_shuffle, l2_loss, mcd, prefix_curve, total_loss
from .delay import apply_delay, frame_layout, remove_delay, visible
from .lmsim import MarkovModel, SamplingConfig, generate, markov_fit

__version__ = "0.1.0"
