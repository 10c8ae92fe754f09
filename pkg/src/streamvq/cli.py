"""Batch CLI wiring the library modules together.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand is
deterministic given --seed. Flags override values from a `key = value`
config file passed with --config.
"""

from __future__ import annotations

import argparse
import hashlib
import sys

import numpy as np

from . import fileio
from .core import DelayedGrid, SeededRng, StreamVQError, TokenGrid, validate_matrix
from .delay import apply_delay, remove_delay
from .lmsim import MarkovModel, SamplingConfig, generate, markov_fit
from .ordering import clip_and_shuffle, prefix_curve
from .quantizer import KINDS, TrainConfig, codebook_init, ema_train, encode_batch, decode_batch

# keys accepted in config files; each maps to the matching CLI flag
CONFIG_KEYS = {
    "kind": str,
    "codebooks": int,
    "codewords": int,
    "dim": int,
    "group_size": int,
    "ema_decay": float,
    "iterations": int,
    "dead_code_threshold": float,
    "smoothing_epsilon": float,
    "update_dropped": lambda s: s.lower() in ("1", "true", "yes"),
    "temperature": float,
    "top_p": float,
    "top_k": int,
    "repetition_penalty": float,
    "seed": int,
    "delay": int,
    "order": int,
    "smoothing": float,
    "max_frames": int,
    "frame_rate": int,
    "prefix": int,
    "spec": str,
    "rows": int,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve(args, key, default=None):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    cfg = getattr(args, "_config_values", {})
    if key in cfg:
        return CONFIG_KEYS[key](cfg[key])
    return default


def _require(args, key, default=None):
    val = _resolve(args, key, default)
    if val is None:
        raise SystemExit_usage(f"missing required option --{key.replace('_', '-')}")
    return val


class SystemExit_usage(Exception):
    pass


def _sampling_config(args) -> SamplingConfig:
    return SamplingConfig(
        temperature=_resolve(args, "temperature", 0.8),
        top_p=_resolve(args, "top_p", 0.8),
        top_k=_resolve(args, "top_k", 10),
        repetition_penalty=_resolve(args, "repetition_penalty", 2.0),
        seed=_resolve(args, "seed", 0),
    )


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_synth(args):
    spec = _require(args, "spec")
    rows = _require(args, "rows")
    data = fileio.synth_features(spec, rows, _resolve(args, "seed", 0))
    fileio.write_features(data, args.out)
    return 0


def _cmd_train(args):
    data = fileio.read_features(args.features)
    validate_matrix(data)
    kind = _require(args, "kind")
    if kind not in KINDS:
        raise SystemExit_usage(f"--kind must be one of {', '.join(KINDS)}")
    n_books = _require(args, "codebooks")
    n_words = _resolve(args, "codewords", 128)
    dim = _resolve(args, "dim", data.shape[1])
    if dim != data.shape[1]:
        raise StreamVQError(
            f"--dim {dim} does not match feature file columns {data.shape[1]}"
        )
    group = _resolve(args, "group_size", 1 if kind == "rq" else 2)
    seed = _resolve(args, "seed", 0)
    rng = SeededRng(seed)
    cbs = codebook_init(data, kind, n_books, n_words, rng, group)
    cfg = TrainConfig(
        ema_decay=_resolve(args, "ema_decay", 0.99),
        iterations=_resolve(args, "iterations", 100),
        dead_code_threshold=_resolve(args, "dead_code_threshold", 1e-2),
        smoothing_epsilon=_resolve(args, "smoothing_epsilon", 1e-5),
        update_dropped=_resolve(args, "update_dropped", True),
    )
    cbs, losses = ema_train(data, cbs, cfg, rng)
    fileio.write_codebooks(cbs, args.out)
    if args.loss_csv:
        with open(args.loss_csv, "w", encoding="utf-8", newline="\n") as f:
            f.write("iteration,vq_loss\n")
            for i, v in enumerate(losses):
                f.write(f"{i},{v!r}\n")
    return 0


def _grid_vocab(cbs) -> int:
    vocabs = {cbs.stream_vocab(j) for j in range(cbs.streams)}
    if len(vocabs) != 1:
        raise StreamVQError("streams have differing vocabularies; cannot write a grid")
    return vocabs.pop()


def _cmd_encode(args):
    cbs = fileio.read_codebooks(args.codebooks)
    data = fileio.read_features(args.features)
    validate_matrix(data)
    ids, _ = encode_batch(data, cbs)
    fileio.write_grid(TokenGrid(ids, _grid_vocab(cbs)), args.out)
    return 0


def _cmd_decode(args):
    cbs = fileio.read_codebooks(args.codebooks)
    g = fileio.read_grid(args.grid)
    if isinstance(g, DelayedGrid):
        g = remove_delay(g)
    recon = decode_batch(g.ids, cbs, prefix=_resolve(args, "prefix"))
    fileio.write_features(recon, args.out)
    return 0


def _cmd_prefix_curve(args):
    cbs = fileio.read_codebooks(args.codebooks)
    data = fileio.read_features(args.features)
    validate_matrix(data)
    report = prefix_curve(
        data,
        cbs,
        cepstral=args.cepstral,
        metadata={"dataset": args.features, "seed": _resolve(args, "seed", 0)},
    )
    report.write_csv(args.out)
    return 0


def _cmd_delay(args):
    g = fileio.read_grid(args.grid)
    if isinstance(g, DelayedGrid):
        raise StreamVQError(f"{args.grid} is already delayed")
    d = _require(args, "delay")
    fileio.write_grid(apply_delay(g, d), args.out)
    return 0


def _cmd_undelay(args):
    g = fileio.read_grid(args.grid)
    if not isinstance(g, DelayedGrid):
        raise StreamVQError(f"{args.grid} is not a delayed grid")
    fileio.write_grid(remove_delay(g), args.out)
    return 0


def _cmd_clip_shuffle(args):
    data = fileio.read_features(args.features)
    validate_matrix(data)
    rate = _require(args, "frame_rate")
    out = clip_and_shuffle(data, rate, SeededRng(_resolve(args, "seed", 0)))
    fileio.write_features(out, args.out)
    return 0


def _cmd_fit_markov(args):
    grids = []
    for path in args.grids:
        g = fileio.read_grid(path)
        if not isinstance(g, DelayedGrid):
            raise StreamVQError(f"{path} is not a delayed grid")
        grids.append(g)
    model = markov_fit(
        grids, _require(args, "order"), _resolve(args, "smoothing", 0.0)
    )
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(model.to_json())
    return 0


def _cmd_generate(args):
    with open(args.model, "r", encoding="utf-8") as f:
        model = MarkovModel.from_json(f.read())
    cfg = _sampling_config(args)
    max_frames = _require(args, "max_frames")
    dg, tg, reason = generate(
        model, cfg, model.streams, model.delay, max_frames, model.vocab
    )
    fileio.write_grid(tg, args.out)
    if args.delayed_out:
        fileio.write_grid(dg, args.delayed_out)
    if args.log:
        cfg_hash = hashlib.sha256(
            f"{cfg.temperature},{cfg.top_p},{cfg.top_k},"
            f"{cfg.repetition_penalty},{cfg.seed}".encode()
        ).hexdigest()[:16]
        with open(args.log, "w", encoding="utf-8", newline="\n") as f:
            f.write("seed,config_hash,frames,stop_reason\n")
            f.write(f"{cfg.seed},{cfg_hash},{tg.frames},{reason}\n")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--config", default=None, help="key = value config file")


def build_parser() -> _Parser:
    parser = _Parser(prog="streamvq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic feature matrix")
    p.add_argument("--spec", default=None,
                   help="anisotropic-gaussian(dim,p) | clusters(k,dim,spread) | ar1(dim,a)")
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train codebooks on a feature file")
    p.add_argument("--kind", choices=KINDS, default=None)
    p.add_argument("--codebooks", type=int, default=None)
    p.add_argument("--codewords", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--ema-decay", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--dead-code-threshold", type=float, default=None)
    p.add_argument("--smoothing-epsilon", type=float, default=None)
    p.add_argument("--features", required=True, help="input SOFM file")
    p.add_argument("--out", required=True, help="output SOCB file")
    p.add_argument("--loss-csv", default=None, help="optional VQ-loss trace CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="encode features to a token grid")
    p.add_argument("--codebooks", required=True, help="SOCB file")
    p.add_argument("--features", required=True, help="SOFM file")
    p.add_argument("--out", required=True, help="output SOTG file")
    _add_common(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="reconstruct features from a token grid")
    p.add_argument("--codebooks", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--prefix", type=int, default=None,
                   help="decode from the first b streams only")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("prefix-curve", help="per-prefix distortion report CSV")
    p.add_argument("--codebooks", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--cepstral", action="store_true",
                   help="also report MCD (columns are cepstral coefficients)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_prefix_curve)

    p = sub.add_parser("delay", help="apply the delayed-pattern shift")
    p.add_argument("--grid", required=True)
    p.add_argument("--delay", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_delay)

    p = sub.add_parser("undelay", help="invert the delayed-pattern shift")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_undelay)

    p = sub.add_parser("clip-shuffle", help="segment-sample and shuffle slices")
    p.add_argument("--features", required=True)
    p.add_argument("--frame-rate", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_clip_shuffle)

    p = sub.add_parser("fit-markov", help="fit a Markov model on delayed grids")
    p.add_argument("--grids", nargs="+", required=True)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--smoothing", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_fit_markov)

    p = sub.add_parser("generate", help="delayed autoregressive generation")
    p.add_argument("--model", required=True, help="Markov model JSON")
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--repetition-penalty", type=float, default=None)
    p.add_argument("--out", required=True, help="output SOTG (un-delayed)")
    p.add_argument("--delayed-out", default=None, help="also write the delayed grid")
    p.add_argument("--log", default=None, help="run-log CSV path")
    _add_common(p)
    p.set_defaults(func=_cmd_generate)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    if args.config:
        try:
            args._config_values = fileio.read_config(args.config, CONFIG_KEYS)
        except (StreamVQError, OSError) as e:
            print(f"streamvq: {e}", file=sys.stderr)
            return 2
    else:
        args._config_values = {}
    try:
        return args.func(args)
    except SystemExit_usage as e:
        print(f"streamvq: error: {e}", file=sys.stderr)
        return 1
    except (StreamVQError, OSError, ValueError) as e:
        print(f"streamvq: {e}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
