"""Command-line interface: ``tiedlm {train,eval,predict,subspace,sweep,grid}``.

Configuration is a flat ``key=value`` file using the same keys as the
checkpoint header.  Precedence, lowest first: profile defaults, ``--config``
file, ``TIEDLM_<KEY>`` environment variables, command-line flags.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .corpus import Vocabulary, load_corpus, load_splits
from .data import tiny_corpus_dir
from .experiment import SweepSpec, run_sweep, run_variant_grid
from .linalg import ContractError
from .loss import LossConfig
from .net import CheckpointError, ModelConfig, load_checkpoint, predict_proba, save_checkpoint
from .subspace import model_subspace_distance
from .trainer import PROFILES, VARIANTS, NonFiniteError, TrainConfig, evaluate_perplexity, train

log = logging.getLogger("tiedlm")

ENV_PREFIX = "TIEDLM_"

# flat key -> (section, field type, help)
CONFIG_KEYS = {
    "vocab_size": ("model", int, "vocabulary size; must match the corpus when given"),
    "embed_dim": ("model", int, "word embedding dimension"),
    "hidden_dim": ("model", int, "LSTM units per layer"),
    "num_layers": ("model", int, "number of LSTM layers"),
    "tie_weights": ("model", bool, "reuse the embedding as output projection (no output bias)"),
    "dropout_p": ("model", float, "variational dropout probability"),
    "unit_norm_embeddings": ("model", bool, "renormalize word vectors to unit norm after each step"),
    "mode": ("loss", str, "loss mode: baseline, alpha_form or beta_mixture"),
    "tau": ("loss", float, "temperature of the augmented loss"),
    "alpha": ("loss", float, "augmented loss weight (overrides gamma)"),
    "gamma": ("loss", float, "alpha = gamma * tau when alpha is unset"),
    "beta": ("loss", float, "augmented loss proportion in beta_mixture mode"),
    "stop_gradient_through_target": ("loss", bool, "treat the target distribution as a constant"),
    "lr_init": ("train", float, "initial learning rate"),
    "decay_start_epoch": ("train", int, "last epoch trained at the initial learning rate"),
    "decay_rate": ("train", float, "per-epoch learning-rate decay factor after the start epoch"),
    "clip_norm": ("train", float, "global gradient-norm clipping threshold"),
    "epochs": ("train", int, "number of training epochs"),
    "bptt_steps": ("train", int, "unroll length"),
    "batch_size": ("train", int, "training batch size"),
    "eval_batch_size": ("train", int, "rows used when evaluating perplexity"),
    "seed": ("train", int, "seed for every random stream"),
    "precision": ("train", str, "float64 or float32 training arithmetic"),
    "log_subspace": ("train", bool, "log the L^T/W subspace distance every epoch"),
}


class ConfigError(ValueError):
    pass


def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(key, value):
    kind = CONFIG_KEYS[key][1]
    if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "")):
        return None
    try:
        return parse_bool(value) if kind is bool else kind(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def read_config_file(path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment line."""
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key=value")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{n}: unknown config key {key!r}")
        values[key] = coerce(key, value.strip())
    return values


def env_config(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    return {k: coerce(k, environ[ENV_PREFIX + k.upper()])
            for k in CONFIG_KEYS if ENV_PREFIX + k.upper() in environ}


def flat_config(config: TrainConfig) -> dict:
    flat = {}
    for k, (section, _, _) in CONFIG_KEYS.items():
        obj = {"model": config.model, "loss": config.loss, "train": config}[section]
        flat[k] = getattr(obj, k)
    return flat


def format_config(config: TrainConfig) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if v is None:
            return "none"
        return repr(v) if isinstance(v, float) else str(v)

    return "".join(f"{k}={fmt(v)}\n" for k, v in flat_config(config).items())


def build_config(flat: dict) -> TrainConfig:
    sections = {"model": {}, "loss": {}, "train": {}}
    for k, v in flat.items():
        sections[CONFIG_KEYS[k][0]][k] = v
    seed = flat.get("seed", 0)
    try:
        model = ModelConfig(seed=seed, **sections["model"])
        loss = LossConfig(**sections["loss"])
        return TrainConfig(model=model, loss=loss, **sections["train"])
    except (ContractError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def default_flat(profile: str, variant: str, vocab_size: int) -> dict:
    p = PROFILES[profile]
    mode, tie = VARIANTS[variant]
    return {
        "vocab_size": vocab_size, "embed_dim": p["size"], "hidden_dim": p["size"],
        "num_layers": 2, "tie_weights": tie, "dropout_p": p["dropout"],
        "unit_norm_embeddings": False, "mode": mode, "tau": 20.0, "alpha": None,
        "gamma": p["gamma"] if mode != "baseline" else None, "beta": 0.0,
        "stop_gradient_through_target": True, "lr_init": 1.0,
        "decay_start_epoch": p["decay_start"], "decay_rate": p["rate"],
        "clip_norm": p["clip"], "epochs": p["epochs"], "bptt_steps": 35, "batch_size": 20,
        "eval_batch_size": 10, "seed": 0, "precision": "float64", "log_subspace": False,
    }


def resolve_config(args, vocab_size: int, environ=None) -> TrainConfig:
    flat = default_flat(args.profile, args.variant, vocab_size)
    if args.config:
        flat.update(read_config_file(args.config))
    flat.update(env_config(environ))
    for k in CONFIG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            flat[k] = coerce(k, v)
    if flat["vocab_size"] != vocab_size:
        raise ConfigError(f"vocab_size={flat['vocab_size']} but the corpus has {vocab_size} tokens")
    return build_config(flat)


def _corpus_paths(args):
    if args.train:
        train = Path(args.train)
        valid = Path(args.valid) if args.valid else None
        test = Path(args.test) if args.test else None
    else:
        d = Path(args.data_dir) if args.data_dir else tiny_corpus_dir()
        train, valid, test = d / "train.txt", d / "valid.txt", d / "test.txt"
        valid = valid if valid.exists() else None
        test = test if test.exists() else None
    for p in (train, valid, test):
        if p is not None and not p.is_file():
            raise FileNotFoundError(f"corpus file not found: {p}")
    return train, valid, test


def _load_streams(args):
    train_p, valid_p, test_p = _corpus_paths(args)
    train_s, vocab = load_corpus(train_p, split="train", max_vocab=getattr(args, "max_vocab", None))
    streams = {"train": train_s}
    if valid_p:
        streams["valid"] = load_corpus(valid_p, vocab, split="valid")[0]
    if test_p:
        streams["test"] = load_corpus(test_p, vocab, split="test")[0]
    return streams, vocab


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    streams, vocab = _load_streams(args)
    config = resolve_config(args, len(vocab))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config))
    vocab.save(out / "vocab.txt")

    def progress(r):
        print(f"# epoch {r.epoch} lr {r.lr:.6g} train_ppl {r.train_ppl:.3f} "
              f"valid_ppl {r.valid_ppl:.3f} ({r.seconds:.1f}s)", flush=True)

    params, train_log = train(streams["train"], streams.get("valid"), config, out_dir=out,
                              progress=None if args.quiet else progress)
    save_checkpoint(out / "final.ckpt", params)
    save_checkpoint(out / "best.ckpt", train_log.best_params)
    (out / "train_log.csv").write_text(train_log.to_csv())
    return 0


def _sibling(path, name):
    return Path(path).resolve().parent / name


def _load_model(args):
    params = load_checkpoint(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else _sibling(args.checkpoint, "vocab.txt")
    vocab = Vocabulary.load(vocab_path)
    if len(vocab) != params.config.vocab_size:
        raise ConfigError(f"checkpoint has vocab_size {params.config.vocab_size} but "
                          f"{vocab_path} lists {len(vocab)} tokens")
    return params, vocab


def cmd_eval(args) -> int:
    params, vocab = _load_model(args)
    batch_size, steps = 10, 35
    cfg_path = _sibling(args.checkpoint, "config.txt")
    if cfg_path.exists():
        saved = read_config_file(cfg_path)
        batch_size = saved.get("eval_batch_size", batch_size)
        steps = saved.get("bptt_steps", steps)
    batch_size = args.batch_size or batch_size
    steps = args.bptt_steps or steps
    splits = args.split or ["valid", "test"]
    d = Path(args.data_dir) if args.data_dir else tiny_corpus_dir()
    paths = {s: Path(getattr(args, s, None) or d / f"{s}.txt") for s in splits}
    for s, p in paths.items():
        if not p.is_file():
            raise FileNotFoundError(f"corpus file not found: {p}")
    for s, p in paths.items():
        stream = load_corpus(p, vocab, split=s)[0]
        print(f"{s},{evaluate_perplexity(params, stream, batch_size, steps)!r}")
    return 0


@dataclass
class PredictionReport:
    context: list[str]
    predictions: list[tuple[str, float]]


def predict(params, vocab: Vocabulary, prompt: str, k: int = 10) -> PredictionReport:
    """Top-``k`` next-token probabilities after ``prompt`` (dropout off)."""
    tokens = prompt.split()
    if not tokens:
        tokens = [corpus_mod.EOS]
    if k > len(vocab):
        log.warning("k=%d exceeds the vocabulary size; using %d", k, len(vocab))
        k = len(vocab)
    probs, _ = predict_proba(params, vocab.encode(tokens))
    order = np.argsort(-probs, kind="stable")[:k]
    return PredictionReport(tokens, [(vocab.id_to_token[i], float(probs[i])) for i in order])


def cmd_predict(args) -> int:
    params, vocab = _load_model(args)
    report = predict(params, vocab, args.prompt, args.k)
    for tok, p in report.predictions:
        print(f"{tok}\t{p!r}")
    return 0


def cmd_subspace(args) -> int:
    params = load_checkpoint(args.checkpoint)
    report = model_subspace_distance(params)
    print(repr(report.distance))
    if report.tied:
        print("tied")
    else:
        print("principal_cosines " + " ".join(f"{c:.6f}" for c in report.principal_cosines))
    return 0


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def sweep_spec_from_args(args) -> SweepSpec:
    kwargs = {}
    for name in ("runs", "slice_length", "hidden_dim", "epochs", "lr", "batch_size",
                 "bptt_steps", "clip_norm", "seed", "precision"):
        v = getattr(args, name, None)
        if v is not None:
            kwargs[name] = v
    if args.tau is not None:
        kwargs["fixed_tau"] = args.tau
    if args.beta is not None:
        kwargs["fixed_beta"] = args.beta
    if args.paper_scale:
        return SweepSpec.paper_scale(args.sweep, args.values, **kwargs)
    return SweepSpec(args.sweep, tuple(args.values), **kwargs)


def cmd_sweep(args) -> int:
    streams, vocab = _load_streams(args)
    spec = sweep_spec_from_args(args)

    def progress(value, seed, dist):
        print(f"# {spec.variable}={value!r} seed={seed} distance={dist!r}", flush=True)

    result = run_sweep(spec, streams["train"], len(vocab), out_dir=args.out,
                       workers=args.workers, progress=progress)
    for p in result.points:
        print(f"{spec.variable}={p.value!r} mean={p.mean:.6f} std={p.std:.6f} n={p.n}")
    failed = sum(len(p.failed) for p in result.points)
    if failed:
        print(f"# {failed} run(s) diverged and were excluded", file=sys.stderr)
    return 0


def cmd_grid(args) -> int:
    streams, vocab = _load_streams(args)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    rows = run_variant_grid(streams, len(vocab), args.profile, seeds=args.seeds,
                            out_csv=Path(args.out), **overrides)
    for r in rows:
        print(f"{r.variant},{r.seed},{r.parameters},{r.valid_ppl:.3f},{r.test_ppl:.3f}")
    return 0


# -- parser --------------------------------------------------------------------

def _add_corpus_args(p):
    p.add_argument("--data-dir", help="directory with train.txt/valid.txt/test.txt "
                   "(default: the bundled tiny corpus)")
    p.add_argument("--train", help="training corpus file (overrides --data-dir)")
    p.add_argument("--valid", help="validation corpus file")
    p.add_argument("--test", help="test corpus file")
    p.add_argument("--max-vocab", type=int, help="keep only the most frequent tokens")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiedlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_corpus_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--profile", default="tiny", choices=sorted(PROFILES),
                   help="hyperparameter preset (default: tiny)")
    p.add_argument("--variant", default="baseline", choices=list(VARIANTS),
                   help="baseline, al (augmented loss), re (reused embeddings) or real (both)")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch progress lines")
    for key, (_, kind, help_text) in CONFIG_KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, metavar=kind.__name__.upper(),
                       help=help_text)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print split,perplexity lines for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt next to the checkpoint)")
    p.add_argument("--data-dir", help="directory with the split files (default: tiny corpus)")
    p.add_argument("--valid", help="validation corpus file")
    p.add_argument("--test", help="test corpus file")
    p.add_argument("--split", action="append", choices=["train", "valid", "test"],
                   help="split to evaluate; repeatable (default: valid and test)")
    p.add_argument("--train", help="training corpus file")
    p.add_argument("--batch-size", type=int, help="evaluation rows (default: from config.txt or 10)")
    p.add_argument("--bptt-steps", type=int, help="window length (default: from config.txt or 35)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-k next-word predictions for a prompt")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt next to the checkpoint)")
    p.add_argument("--prompt", required=True, help="whitespace-tokenized context")
    p.add_argument("-k", type=int, default=10, help="number of predictions (default: 10)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("subspace", help="distance between the spans of L^T and W")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.set_defaults(func=cmd_subspace)

    p = sub.add_parser("sweep", help="subspace distance sweep over beta or tau")
    _add_corpus_args(p)
    p.add_argument("--sweep", required=True, choices=["beta", "tau"], help="variable to sweep")
    p.add_argument("--values", required=True, type=_floats, help="comma-separated values")
    p.add_argument("--tau", type=float, help="fixed temperature for a beta sweep (default: 10)")
    p.add_argument("--beta", type=float, help="fixed beta for a tau sweep (default: 1)")
    p.add_argument("--runs", type=int, help="independent runs per value")
    p.add_argument("--slice-length", type=int, help="tokens in the contiguous training slice")
    p.add_argument("--hidden-dim", type=int, help="LSTM units per layer")
    p.add_argument("--epochs", type=int, help="training epochs per run")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--batch-size", type=int, help="training batch size")
    p.add_argument("--bptt-steps", type=int, help="unroll length")
    p.add_argument("--clip-norm", type=float, help="gradient clipping threshold")
    p.add_argument("--seed", type=int, help="first seed; runs use seed, seed+1, ...")
    p.add_argument("--precision", choices=["float64", "float32"], help="training arithmetic")
    p.add_argument("--paper-scale", action="store_true",
                   help="20k-token slice, 300 units, 10 runs")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", required=True, help="output directory for the CSV files")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grid", help="train the four variants and write a comparison CSV")
    _add_corpus_args(p)
    p.add_argument("--profile", default="tiny", choices=sorted(PROFILES),
                   help="size profile (default: tiny)")
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], default=[0],
                   help="comma-separated seeds")
    p.add_argument("--epochs", type=int, help="override the profile's epoch budget")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, CheckpointError, ContractError,
            corpus_mod.CorpusError) as exc:
        print(f"tiedlm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"tiedlm {args.command}: training aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
