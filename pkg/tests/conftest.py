import numpy as np
import pytest

from tiedlm.loss import LossConfig, total_loss
from tiedlm.net import ModelConfig, backward, forward, init_params, sample_masks


def toy_model(tied=False, dropout=0.0, vocab=20, dim=8, seed=0):
    cfg = ModelConfig(vocab, dim, dim, tie_weights=tied, dropout_p=dropout, seed=seed)
    params = init_params(cfg)
    # the stock init is tiny; spread the weights so every gate path matters
    rng = np.random.default_rng(seed + 100)
    for name, t in params.tensors.items():
        t[...] = rng.normal(scale=0.4, size=t.shape)
    return params


def toy_batch(vocab=20, batch=2, steps=3, seed=0):
    rng = np.random.default_rng(seed + 200)
    return rng.integers(0, vocab, (batch, steps)), rng.integers(0, vocab, (batch, steps))


def scalar_loss(params, inputs, targets, loss_cfg, masks, y_tilde=None):
    _, logits, _ = forward(params, inputs, masks)
    return total_loss(logits, targets, params["L"], loss_cfg, y_tilde=y_tilde).total


def analytic_grads(params, inputs, targets, loss_cfg, masks):
    tape, logits, _ = forward(params, inputs, masks)
    br = total_loss(logits, targets, params["L"], loss_cfg)
    grads = backward(tape, params, br.d_logits)
    if br.d_embedding is not None:
        grads["L"] += br.d_embedding
    return grads, br


def fd_max_rel_error(params, inputs, targets, loss_cfg, masks, eps=1e-5):
    """Worst relative error of the analytic gradient against central differences.

    With the stop-gradient flag on, the target distributions are pinned to
    their value at the unperturbed parameters, which is the function whose
    gradient the analytic path computes.
    """
    grads, br = analytic_grads(params, inputs, targets, loss_cfg, masks)
    pinned = br.y_tilde if loss_cfg.stop_gradient_through_target else None
    worst = 0.0
    for name, t in params.tensors.items():
        num = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + eps
            up = scalar_loss(params, inputs, targets, loss_cfg, masks, pinned)
            t[idx] = old - eps
            down = scalar_loss(params, inputs, targets, loss_cfg, masks, pinned)
            t[idx] = old
            num[idx] = (up - down) / (2 * eps)
        err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(num), 1e-12)
        worst = max(worst, err)
    return worst


LOSS_MODES = {
    "baseline": LossConfig(),
    "alpha_form": LossConfig(mode="alpha_form", tau=20.0, alpha=10.0),
    "beta_mixture": LossConfig(mode="beta_mixture", tau=10.0, beta=0.5),
}


@pytest.fixture
def fixed_masks():
    def make(params, batch=2):
        cfg = params.config
        return sample_masks(cfg, batch, 7) if cfg.dropout_p > 0 else None
    return make
