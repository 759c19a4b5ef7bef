"""Weight tying saves a |V| x (d+1) block; the subspace distance says how far
an untied output projection is from the embedding span.

Run: python demos/02_tying_and_subspace.py   (a few seconds)
"""
# %%
import numpy as np

from tiedlm.corpus import load_splits
from tiedlm.data import tiny_corpus_dir
from tiedlm.experiment import SweepSpec, sweep_run
from tiedlm.net import ModelConfig, init_params, parameter_count
from tiedlm.subspace import model_subspace_distance, subspace_distance

# %% Parameter savings for the usual model sizes on a 10k vocabulary.
for d in (200, 650, 1500):
    untied = parameter_count(ModelConfig(10_000, d, d))
    tied = parameter_count(ModelConfig(10_000, d, d, tie_weights=True))
    print(f"d={d:>4}: untied {untied:>11,}  tied {tied:>11,}  saved {untied - tied:,}")

# %% Random subspaces of a large space are nearly orthogonal.
rng = np.random.default_rng(1)
for V in (200, 1000, 5000):
    x, y = rng.normal(size=(V, 30)), rng.normal(size=(V, 30))
    print(f"|V|={V:>4}: d(random, random) = {subspace_distance(x, y).distance:.3f}")
fresh = init_params(ModelConfig(1000, 30, 30, seed=2))
print("fresh untied model:", round(model_subspace_distance(fresh).distance, 3))
tied = model_subspace_distance(init_params(ModelConfig(1000, 30, 30, tie_weights=True)))
print("tied model:", tied.distance, tied.notes)

# %% A small beta sweep: cross-entropy only (beta=0) versus augmented loss only (beta=1).
# At this size the gap is modest; `tiedlm sweep` runs the full desk-scale version.
streams, vocab = load_splits(tiny_corpus_dir())
spec = SweepSpec("beta", (0.0, 1.0), slice_length=2000, hidden_dim=20, epochs=5, runs=1)
for beta in spec.values:
    dist = sweep_run(spec, beta, 0, streams["train"], len(vocab))
    print(f"beta={beta}: distance between span(L^T) and span(W) = {dist:.3f}")
