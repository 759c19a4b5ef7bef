"""Soft targets built from word embeddings, and what temperature does to them.

Run: python demos/01_augmented_loss.py
"""
# %%
import numpy as np

from tiedlm.linalg import softmax_with_temperature
from tiedlm.loss import (augmented_loss, estimate_target_distribution,
                         logit_matching_residual)

rng = np.random.default_rng(0)
V, d = 12, 4
L = rng.normal(size=(d, V))
L[:, 1] = L[:, 0] + 0.1 * rng.normal(size=d)  # word 1 is a near-synonym of word 0

# %% The soft target for word 0 puts weight on its neighbours in embedding space.
for tau in (0.5, 2.0, 10.0):
    y = estimate_target_distribution(L, 0, tau)
    top = np.argsort(-y)[:3]
    print(f"tau={tau:>4}: top words {top.tolist()}  mass {np.round(y[top], 3).tolist()}")

# %% The augmented loss is a KL divergence: zero when the model matches the soft target.
y_tilde = estimate_target_distribution(L, 0, 2.0)
logits = L.T @ L[:, 0]
print("KL at the matching logits:", augmented_loss(softmax_with_temperature(logits, 2.0), y_tilde))
print("KL at random logits:      ", augmented_loss(softmax_with_temperature(rng.normal(size=V), 2.0),
                                                   y_tilde))

# %% At high temperature the scaled gradient approaches the plain logit difference.
L0 = L - L.mean(axis=1, keepdims=True)
z = rng.normal(size=V)
for tau in (2, 10, 50, 250):
    print(f"tau={tau:>3}: relative error {logit_matching_residual(z, L0, 0, tau)[2]:.4f}")
