"""Subspace-distance sweeps and the four-variant comparison grid.

A sweep trains untied models on a contiguous slice of the training stream
with the mixture loss ``beta * aug * tau**2 |V| + (1 - beta) * ce`` and
records the distance between the column spaces of ``L^T`` and ``W`` after
training.  Either ``beta`` (at fixed ``tau``) or ``tau`` (at fixed
``beta``) is varied.  Results are keyed by ``(value, seed)`` so interrupted
sweeps resume without repeating finished runs.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import TokenStream, random_offset, take_contiguous
from .linalg import ContractError
from .loss import LossConfig
from .net import ModelConfig, parameter_count
from .subspace import model_subspace_distance
from .trainer import NonFiniteError, TrainConfig, evaluate_perplexity, profile_config, train

log = logging.getLogger(__name__)

RUNS_HEADER = ["variable", "value", "seed", "distance"]
SUMMARY_HEADER = ["variable", "value", "mean", "std", "n"]


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep and how each run is trained.

    The defaults are the desk-scale setup; :meth:`paper_scale` restores the
    20k-token slice, 300 units and 10 runs.
    """

    variable: str
    values: tuple[float, ...]
    fixed_tau: float = 10.0
    fixed_beta: float = 1.0
    runs: int = 3
    slice_length: int = 5000
    hidden_dim: int = 100
    epochs: int = 30
    lr: float = 1.0
    batch_size: int = 20
    bptt_steps: int = 35
    clip_norm: float = 5.0
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.variable not in ("beta", "tau"):
            raise ContractError(f"sweep variable must be 'beta' or 'tau', got {self.variable!r}")
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ContractError("sweep values must be non-empty and strictly increasing")
        if self.runs < 1:
            raise ContractError("runs must be at least 1")

    @classmethod
    def paper_scale(cls, variable, values, **kwargs):
        kwargs = {"runs": 10, "slice_length": 20000, "hidden_dim": 300, **kwargs}
        return cls(variable, tuple(values), **kwargs)

    def seeds(self):
        return [self.seed + r for r in range(self.runs)]

    def loss_config(self, value) -> LossConfig:
        if self.variable == "beta":
            return LossConfig(mode="beta_mixture", tau=self.fixed_tau, beta=value)
        return LossConfig(mode="beta_mixture", tau=value, beta=self.fixed_beta)

    def train_config(self, value, seed, vocab_size) -> TrainConfig:
        model = ModelConfig(vocab_size, self.hidden_dim, self.hidden_dim, tie_weights=False,
                            dropout_p=0.0, unit_norm_embeddings=True, seed=seed)
        return TrainConfig(model=model, loss=self.loss_config(value), lr_init=self.lr,
                           decay_start_epoch=self.epochs, decay_rate=1.0,
                           clip_norm=self.clip_norm, epochs=self.epochs,
                           bptt_steps=self.bptt_steps, batch_size=self.batch_size,
                           seed=seed, precision=self.precision)


@dataclass
class SweepPoint:
    value: float
    distances: dict[int, float] = field(default_factory=dict)  # seed -> distance (nan if failed)

    @property
    def ok(self) -> list[float]:
        return [d for _, d in sorted(self.distances.items()) if not math.isnan(d)]

    @property
    def failed(self) -> list[int]:
        return [s for s, d in sorted(self.distances.items()) if math.isnan(d)]

    @property
    def n(self) -> int:
        return len(self.ok)

    @property
    def mean(self) -> float:
        return float(np.mean(self.ok)) if self.ok else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.ok, ddof=1)) if self.n > 1 else 0.0


@dataclass
class SweepResult:
    variable: str
    points: list[SweepPoint]

    def point(self, value) -> SweepPoint:
        for p in self.points:
            if p.value == float(value):
                return p
        raise KeyError(value)

    @property
    def values(self):
        return [p.value for p in self.points]

    @property
    def means(self):
        return [p.mean for p in self.points]

    @property
    def stds(self):
        return [p.std for p in self.points]

    def add(self, value, seed, distance):
        value = float(value)
        try:
            p = self.point(value)
        except KeyError:
            p = SweepPoint(value)
            self.points.append(p)
            self.points.sort(key=lambda q: q.value)
        p.distances[int(seed)] = float(distance)


def sweep_run(spec: SweepSpec, value: float, seed: int, stream: TokenStream, vocab_size: int):
    """Train one model of a sweep and return its subspace distance (nan on divergence)."""
    offset = random_offset(len(stream), spec.slice_length, seed)
    piece = take_contiguous(stream, offset, spec.slice_length)
    cfg = spec.train_config(value, seed, vocab_size)
    try:
        params, _ = train(piece, None, cfg)
        return model_subspace_distance(params).distance
    except (NonFiniteError, FloatingPointError) as exc:
        log.warning("run %s=%g seed %d diverged: %s", spec.variable, value, seed, exc)
        return math.nan


def _run_job(args):
    spec, value, seed, stream, vocab_size = args
    return value, seed, sweep_run(spec, value, seed, stream, vocab_size)


def read_runs_csv(path) -> SweepResult | None:
    path = Path(path)
    if not path.exists():
        return None
    result = None
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            if result is None:
                result = SweepResult(row["variable"], [])
            result.add(float(row["value"]), int(row["seed"]), float(row["distance"]))
    return result


def write_summary_csv(result: SweepResult, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for p in result.points:
            w.writerow([result.variable, repr(p.value), repr(p.mean), repr(p.std), p.n])


def read_summary_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{"variable": r["variable"], "value": float(r["value"]), "mean": float(r["mean"]),
                 "std": float(r["std"]), "n": int(r["n"])} for r in csv.DictReader(fh)]


def run_sweep(spec: SweepSpec, stream: TokenStream, vocab_size: int, out_dir=None,
              workers: int = 1, progress=None) -> SweepResult:
    """Run every ``(value, seed)`` pair not already recorded in ``out_dir``.

    Each finished run is appended to ``sweep_runs.csv`` immediately; the
    aggregated ``sweep_summary.csv`` is rewritten at the end.
    """
    result = SweepResult(spec.variable, [])
    runs_path = summary_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        runs_path = out / "sweep_runs.csv"
        summary_path = out / "sweep_summary.csv"
        previous = read_runs_csv(runs_path)
        if previous is not None:
            if previous.variable != spec.variable:
                raise ContractError(f"{runs_path} holds a {previous.variable} sweep")
            result = previous
        else:
            runs_path.write_text(",".join(RUNS_HEADER) + "\n")
    for v in spec.values:
        if v not in result.values:
            result.points.append(SweepPoint(v))
    result.points.sort(key=lambda p: p.value)

    todo = [(v, s) for v in spec.values for s in spec.seeds()
            if s not in result.point(v).distances]

    def record(value, seed, dist):
        result.add(value, seed, dist)
        if runs_path is not None:
            with runs_path.open("a") as fh:
                fh.write(f"{spec.variable},{value!r},{seed},{dist!r}\n")
        if progress is not None:
            progress(value, seed, dist)

    jobs = [(spec, v, s, stream, vocab_size) for v, s in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for value, seed, dist in pool.map(_run_job, jobs):
                record(value, seed, dist)
    else:
        for job in jobs:
            record(*_run_job(job))

    if summary_path is not None:
        write_summary_csv(result, summary_path)
    return result


def run_beta_sweep(spec: SweepSpec, stream: TokenStream, vocab_size: int,
                   train_budget: int | None = None, **kwargs) -> SweepResult:
    if spec.variable != "beta":
        raise ContractError("run_beta_sweep needs a beta sweep spec")
    if train_budget is not None:
        spec = replace(spec, epochs=train_budget)
    return run_sweep(spec, stream, vocab_size, **kwargs)


def run_tau_sweep(spec: SweepSpec, stream: TokenStream, vocab_size: int,
                  train_budget: int | None = None, **kwargs) -> SweepResult:
    if spec.variable != "tau":
        raise ContractError("run_tau_sweep needs a tau sweep spec")
    if train_budget is not None:
        spec = replace(spec, epochs=train_budget)
    return run_sweep(spec, stream, vocab_size, **kwargs)


def trend_violations(means, stds, tolerance_std=1.0) -> list[int]:
    """Indices ``i`` where ``means[i+1]`` exceeds ``means[i]`` by more than
    ``tolerance_std`` standard deviations (the larger of the two points)."""
    bad = []
    for i in range(len(means) - 1):
        slack = tolerance_std * max(stds[i], stds[i + 1])
        if means[i + 1] > means[i] + slack:
            bad.append(i)
    return bad


# -- variant grid -------------------------------------------------------------

GRID_HEADER = ["variant", "seed", "parameters", "valid_ppl", "test_ppl"]
VARIANT_ORDER = ("baseline", "al", "re", "real")


@dataclass
class GridRow:
    variant: str
    seed: int
    parameters: int
    valid_ppl: float
    test_ppl: float


def run_variant_grid(streams: dict[str, TokenStream], vocab_size: int, size_profile: str,
                     seeds=(0,), out_csv=None, **overrides) -> list[GridRow]:
    """Train the four variants with identical seeds and schedule.

    ``streams`` needs ``train`` and ``valid``; ``test`` is optional (its
    perplexity is reported as nan when absent).
    """
    for split in ("train", "valid"):
        if split not in streams:
            raise ContractError(f"variant grid needs a {split} stream")
    rows = []
    for seed in seeds:
        for variant in VARIANT_ORDER:
            cfg = profile_config(size_profile, vocab_size, variant, seed=seed, **overrides)
            params, train_log = train(streams["train"], streams["valid"], cfg)
            best = train_log.best_params
            valid = evaluate_perplexity(best, streams["valid"], cfg.eval_batch_size, cfg.bptt_steps)
            test = (evaluate_perplexity(best, streams["test"], cfg.eval_batch_size, cfg.bptt_steps)
                    if "test" in streams else math.nan)
            rows.append(GridRow(variant, seed, parameter_count(cfg.model), valid, test))
            log.info("%s seed %d: valid %.2f test %.2f", variant, seed, valid, test)
    if out_csv is not None:
        write_grid_csv(rows, out_csv)
    return rows


def write_grid_csv(rows, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for r in rows:
            w.writerow([r.variant, r.seed, r.parameters, repr(r.valid_ppl), repr(r.test_ppl)])


def read_grid_csv(path) -> list[GridRow]:
    with Path(path).open(newline="") as fh:
        return [GridRow(r["variant"], int(r["seed"]), int(r["parameters"]),
                        float(r["valid_ppl"]), float(r["test_ppl"])) for r in csv.DictReader(fh)]
