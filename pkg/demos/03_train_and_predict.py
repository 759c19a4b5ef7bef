"""Train the four variants briefly on the bundled corpus and look at predictions.

Run: python demos/03_train_and_predict.py   (about three minutes on one core)
"""
# %%
import numpy as np

from tiedlm.corpus import load_splits
from tiedlm.data import tiny_corpus_dir
from tiedlm.net import predict_proba
from tiedlm.trainer import evaluate_perplexity, profile_config, train

streams, vocab = load_splits(tiny_corpus_dir())
print(f"|V| = {len(vocab)}; a uniform model has perplexity {len(vocab)}")

# %% Same seed and schedule for every variant; only the loss and the tying differ.
models = {}
for variant in ("baseline", "al", "re", "real"):
    cfg = profile_config("tiny", len(vocab), variant, seed=0, epochs=15)
    params, log = train(streams["train"], streams["valid"], cfg)
    models[variant] = params
    print(f"{variant:>8}: {params.parameter_count():>7,} parameters, "
          f"valid ppl {log.records[-1].valid_ppl:.1f}")

# %% The corpus always follows "a" with "b"; every model should pick that up.
for variant, params in models.items():
    probs, _ = predict_proba(params, vocab.encode(["a"]))
    best = np.argsort(-probs)[:3]
    print(f"{variant:>8}: after 'a' ->",
          ", ".join(f"{vocab.id_to_token[i]} {probs[i]:.2f}" for i in best))

# %% Test perplexity of the tied + augmented model.
print("real test ppl:", round(evaluate_perplexity(models["real"], streams["test"]), 1))
