"""SGD training loop, learning-rate schedule, clipping and perplexity evaluation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import TokenStream, batchify
from .linalg import ContractError, global_norm
from .loss import LossConfig, total_loss
from .net import (ModelConfig, ModelParams, backward, forward, init_params,
                  renormalize_embedding_rows, sample_masks, save_checkpoint)
from .seeding import child_rng
from .subspace import model_subspace_distance

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN or infinite."""


@dataclass
class TrainConfig:
    model: ModelConfig
    loss: LossConfig = field(default_factory=LossConfig)
    lr_init: float = 1.0
    decay_start_epoch: int = 5
    decay_rate: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 13
    bptt_steps: int = 35
    batch_size: int = 20
    eval_batch_size: int = 10
    seed: int = 0
    precision: str = "float64"
    log_subspace: bool = False

    def __post_init__(self):
        if not self.lr_init > 0:
            raise ContractError("lr_init must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ContractError("decay_rate must be in (0, 1]")
        if not self.clip_norm > 0:
            raise ContractError("clip_norm must be positive")
        if self.epochs < 0 or self.bptt_steps < 1 or self.batch_size < 1 or self.eval_batch_size < 1:
            raise ContractError("epochs, bptt_steps and batch sizes must be positive")
        if self.precision not in ("float64", "float32"):
            raise ContractError(f"precision must be float64 or float32, got {self.precision!r}")


# Size presets.  Epoch budgets follow the usual medium/large LSTM language
# model schedules; ``tiny`` is a desk-scale preset for the bundled corpus.
# Its gamma was picked on validation perplexity: with 32-dim embeddings the
# soft targets at tau=20 are nearly flat, and gamma=0.65 over-regularizes.
PROFILES = {
    "ptb-small": dict(size=200, dropout=0.7, decay_start=5, rate=0.9, clip=5.0, gamma=0.65, epochs=40),
    "ptb-medium": dict(size=650, dropout=0.5, decay_start=10, rate=0.9, clip=5.0, gamma=0.65, epochs=39),
    "ptb-large": dict(size=1500, dropout=0.35, decay_start=1, rate=0.97, clip=6.0, gamma=0.65, epochs=55),
    "wt2-small": dict(size=200, dropout=0.8, decay_start=5, rate=0.9, clip=5.0, gamma=1.25, epochs=40),
    "wt2-medium": dict(size=650, dropout=0.6, decay_start=10, rate=0.9, clip=5.0, gamma=1.25, epochs=39),
    "tiny": dict(size=32, dropout=0.3, decay_start=10, rate=0.9, clip=5.0, gamma=0.1, epochs=30),
}

VARIANTS = {
    "baseline": ("baseline", False),
    "al": ("alpha_form", False),
    "re": ("baseline", True),
    "real": ("alpha_form", True),
}


def profile_config(profile: str, vocab_size: int, variant: str = "baseline",
                   seed: int = 0, **overrides) -> TrainConfig:
    """TrainConfig for a named profile and one of the four model variants."""
    try:
        p = PROFILES[profile]
    except KeyError:
        raise ContractError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}") from None
    try:
        mode, tie = VARIANTS[variant]
    except KeyError:
        raise ContractError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
    model = ModelConfig(vocab_size, p["size"], p["size"], tie_weights=tie,
                        dropout_p=p["dropout"], seed=seed)
    loss = LossConfig(mode=mode, tau=20.0, gamma=p["gamma"] if mode != "baseline" else None)
    cfg = TrainConfig(model=model, loss=loss, decay_start_epoch=p["decay_start"],
                      decay_rate=p["rate"], clip_norm=p["clip"], epochs=p["epochs"], seed=seed)
    return replace(cfg, **overrides) if overrides else cfg


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``.

    Constant through ``decay_start_epoch``, then multiplied by
    ``decay_rate`` once per further epoch.
    """
    if epoch < 1:
        raise ContractError("epochs are numbered from 1")
    return config.lr_init * config.decay_rate ** max(0, epoch - config.decay_start_epoch)


def clip_gradients(grads: ModelParams, clip_norm: float) -> tuple[ModelParams, float]:
    """Rescale ``grads`` in place if their global norm exceeds ``clip_norm``.

    Returns the gradients and their norm before clipping.
    """
    norm = global_norm(grads.tensors.values())
    if not math.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.tensors.values():
            g *= scale
    return grads, norm


def sgd_step(params: ModelParams, grads: ModelParams, lr: float, clip_norm: float) -> ModelParams:
    """Clipped SGD update, in place.  Nothing is written if a gradient is not finite."""
    for name, g in grads.tensors.items():
        if g.shape != params[name].shape:
            raise ContractError(f"gradient {name} has shape {g.shape}, expected {params[name].shape}")
    clip_gradients(grads, clip_norm)
    with np.errstate(over="ignore", invalid="ignore"):
        updated = {name: params[name] - lr * g for name, g in grads.tensors.items()}
    for name, value in updated.items():
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"update would make {name} non-finite")
    for name, value in updated.items():
        params[name][...] = value
    return params


def _perplexity(mean_nll: float) -> float:
    try:
        return math.exp(mean_nll)
    except OverflowError:
        return math.inf


def evaluate_perplexity(params: ModelParams, stream: TokenStream, batch_size: int = 10,
                        steps: int = 35) -> float:
    """exp of the mean next-token cross-entropy over ``stream``, dropout off.

    The stream is laid out in ``batch_size`` contiguous rows (the remainder
    is dropped) and the hidden state is carried through each row.
    """
    if len(stream) < 2:
        raise ContractError("need at least two tokens to evaluate")
    batch_size = max(1, min(batch_size, len(stream) // 2))
    state = None
    nll = 0.0
    count = 0
    for batch in batchify(stream, batch_size, steps):
        _, logits, state = forward(params, batch.inputs, None, state)
        br = total_loss(logits, batch.targets, params["L"], LossConfig())
        nll += br.ce * batch.targets.size
        count += batch.targets.size
    return _perplexity(nll / count)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_ppl: float
    valid_ppl: float
    subspace_distance: float | None
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_params: ModelParams | None = field(default=None, repr=False)

    CSV_HEADER = "epoch,lr,train_ppl,valid_ppl,subspace_distance"

    def csv_row(self, r: EpochRecord) -> str:
        dist = "" if r.subspace_distance is None else repr(r.subspace_distance)
        return f"{r.epoch},{r.lr!r},{r.train_ppl!r},{r.valid_ppl!r},{dist}"

    def to_csv(self) -> str:
        """CSV text; wall-clock time goes on ``#`` comment lines."""
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(self.csv_row(r))
            lines.append(f"# epoch {r.epoch} seconds {r.seconds:.3f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        """Inverse of :meth:`to_csv` (best-params are not stored in the CSV)."""
        lines = text.splitlines()
        if not lines or lines[0] != cls.CSV_HEADER:
            raise ContractError("not a training log")
        records = []
        for line in lines[1:]:
            if line.startswith("# epoch") and records:
                records[-1].seconds = float(line.split()[-1])
            elif line and not line.startswith("#"):
                ep, lr, tr, va, dist = line.split(",")
                records.append(EpochRecord(int(ep), float(lr), float(tr), float(va),
                                           float(dist) if dist else None, 0.0))
        return cls(records)


def _cast(params: ModelParams, precision: str) -> ModelParams:
    dtype = np.float32 if precision == "float32" else np.float64
    return params if params["L"].dtype == dtype else params.astype(dtype)


def train_window(params, batch, config: TrainConfig, state, masks, lr):
    """One forward/backward/update on a window.  Returns (ce, new_state).

    The update follows the usual convention for this SGD recipe: the loss
    is summed over the time steps of the window and averaged over the
    batch, i.e. the per-token mean scaled by the window length.
    """
    tape, logits, new_state = forward(params, batch.inputs, masks, state)
    br = total_loss(logits, batch.targets, params["L"], config.loss)
    if not math.isfinite(br.total):
        raise NonFiniteError("non-finite loss")
    scale = batch.steps
    grads = backward(tape, params, (scale * br.d_logits).astype(params["L"].dtype, copy=False))
    if br.d_embedding is not None:
        grads["L"] += scale * br.d_embedding
    sgd_step(params, grads, lr, config.clip_norm)
    if config.model.unit_norm_embeddings:
        renormalize_embedding_rows(params)
    return br.ce, new_state


def train(train_stream: TokenStream, valid_stream: TokenStream | None, config: TrainConfig,
          out_dir=None, params: ModelParams | None = None, progress=None):
    """Train a model and return ``(params, log)``.

    Per epoch: the state is reset, then carried across consecutive windows;
    each window gets fresh dropout masks.  With ``out_dir`` the final and
    best-validation checkpoints and ``train_log.csv`` are written there after
    every epoch.  ``progress`` is an optional callable receiving each
    :class:`EpochRecord`.
    """
    mcfg = config.model
    if params is None:
        params = init_params(mcfg, config.seed)
    params = _cast(params.copy(), config.precision)
    dtype = params["L"].dtype
    dropout_rng = child_rng(config.seed, "dropout")
    batches = batchify(train_stream, config.batch_size, config.bptt_steps)
    train_log = TrainLog()
    best_valid = math.inf
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(config, epoch)
        state = None
        nll = 0.0
        count = 0
        for i, batch in enumerate(batches):
            masks = None
            if mcfg.dropout_p > 0:
                masks = [m.astype(dtype) for m in sample_masks(mcfg, config.batch_size, dropout_rng)]
            try:
                ce, state = train_window(params, batch, config, state, masks, lr)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {i}: {exc}") from exc
            nll += ce * batch.targets.size
            count += batch.targets.size
        train_ppl = _perplexity(nll / count)
        eval_params = params.astype(np.float64)
        valid_ppl = math.nan
        if valid_stream is not None:
            valid_ppl = evaluate_perplexity(eval_params, valid_stream,
                                            config.eval_batch_size, config.bptt_steps)
        dist = model_subspace_distance(eval_params).distance if config.log_subspace else None
        rec = EpochRecord(epoch, lr, train_ppl, valid_ppl, dist, time.perf_counter() - t0)
        train_log.records.append(rec)
        if valid_stream is None or valid_ppl < best_valid:
            best_valid = valid_ppl
            train_log.best_epoch = epoch
            train_log.best_params = eval_params
        log.info("epoch %d lr %.4g train ppl %.3f valid ppl %.3f (%.1fs)",
                 epoch, lr, train_ppl, valid_ppl, rec.seconds)
        if progress is not None:
            progress(rec)
        if out is not None:
            save_checkpoint(out / "final.ckpt", eval_params)
            save_checkpoint(out / "best.ckpt", train_log.best_params)
            (out / "train_log.csv").write_text(train_log.to_csv())
    final = params.astype(np.float64)
    if train_log.best_params is None:
        train_log.best_params = final
    return final, train_log

