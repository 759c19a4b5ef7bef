"""Cross-entropy, the embedding-derived target distribution and the augmented loss.

For a target word with embedding ``u`` the target distribution is
``softmax(L^T u / tau)``.  The augmented loss is ``KL(y_tilde || y_hat)`` with
``y_hat = softmax(logits / tau)``.  Two ways of combining it with
cross-entropy are supported:

* ``alpha_form``:    ``ce + alpha * aug``
* ``beta_mixture``:  ``beta * aug * tau**2 * |V| + (1 - beta) * ce``

All per-token quantities are averaged over the tokens of a window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ContractError, log_softmax, softmax_with_temperature

MODES = ("baseline", "alpha_form", "beta_mixture")


@dataclass
class LossConfig:
    mode: str = "baseline"
    tau: float = 20.0
    alpha: float | None = None
    gamma: float | None = None
    beta: float = 0.0
    stop_gradient_through_target: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown loss mode {self.mode!r}; expected one of {MODES}")
        if not self.tau > 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"beta must be in [0, 1], got {self.beta}")
        if self.alpha is not None and self.alpha < 0:
            raise ContractError("alpha must be nonnegative")
        if self.gamma is not None and self.gamma < 0:
            raise ContractError("gamma must be nonnegative")

    @property
    def effective_alpha(self) -> float:
        """``alpha`` if given, else ``gamma * tau``, else 0."""
        if self.alpha is not None:
            return float(self.alpha)
        if self.gamma is not None:
            return float(self.gamma) * self.tau
        return 0.0


@dataclass
class LossBreakdown:
    ce: float
    aug: float
    total: float
    d_logits: np.ndarray
    d_embedding: np.ndarray | None = None  # extra dL through y_tilde, when not stopped
    y_tilde: np.ndarray | None = None


def cross_entropy(y, target_id) -> float:
    return float(-np.log(np.asarray(y, dtype=np.float64)[target_id]))


def target_distributions(L, target_ids, tau):
    """Rows ``softmax(L^T u_t / tau)`` for every target id (any shape)."""
    L = np.asarray(L)
    ids = np.asarray(target_ids)
    u = L[:, ids.reshape(-1)]                 # d x N
    scores = u.T @ L                          # N x V, row n = L^T u_n
    return softmax_with_temperature(scores, tau).reshape(ids.shape + (L.shape[1],))


def estimate_target_distribution(L, target_id, tau):
    L = np.asarray(L, dtype=np.float64)
    if not 0 <= target_id < L.shape[1]:
        raise ContractError(f"target id {target_id} out of range")
    return softmax_with_temperature(L.T @ L[:, target_id], tau)


def augmented_loss(y_hat, y_tilde) -> float:
    """``KL(y_tilde || y_hat)``; zero-probability target entries contribute 0."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    if y_hat.shape != y_tilde.shape:
        raise ContractError("distributions differ in length")
    nz = y_tilde > 0
    return float(np.sum(y_tilde[nz] * (np.log(y_tilde[nz]) - np.log(y_hat[nz]))))


def augmented_loss_grad_logits(y_hat, y_tilde, tau):
    """Gradient of the augmented loss with respect to the (unscaled) logits."""
    return (np.asarray(y_hat) - np.asarray(y_tilde)) / tau


def total_loss(logits, targets, L, config: LossConfig, y_tilde=None) -> LossBreakdown:
    """Window loss and its exact gradient with respect to the logits.

    ``logits`` is ``batch x steps x |V|`` and ``targets`` ``batch x steps``.
    ``y_tilde`` may be supplied to pin the target distributions (it is
    otherwise computed from ``L``).  When ``stop_gradient_through_target`` is
    off, ``d_embedding`` carries the gradient that reaches ``L`` through the
    target distributions.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if logits.ndim != 3 or logits.shape[:2] != targets.shape:
        raise ContractError(
            f"logits {logits.shape} and targets {targets.shape} are inconsistent")
    V = logits.shape[-1]
    n = targets.size
    flat = logits.reshape(n, V)
    tgt = targets.reshape(n)
    rows = np.arange(n)

    logp = log_softmax(flat)
    ce = float(-logp[rows, tgt].sum() / n)
    d = np.exp(logp)
    d[rows, tgt] -= 1.0

    mode = config.mode
    if mode == "baseline":
        return LossBreakdown(ce, 0.0, ce, (d / n).reshape(logits.shape))

    tau = config.tau
    if y_tilde is None:
        L = np.asarray(L)
        log_tilde = log_softmax(L[:, tgt].T @ L, tau)
        y_tilde = np.exp(log_tilde)
    else:
        y_tilde = np.asarray(y_tilde).reshape(n, V)
        with np.errstate(divide="ignore"):
            log_tilde = np.where(y_tilde > 0, np.log(y_tilde), 0.0)
    log_hat = log_softmax(flat, tau)
    y_hat = np.exp(log_hat)
    kl_rows = np.sum(y_tilde * (log_tilde - log_hat), axis=1)
    aug = float(kl_rows.sum() / n)
    d_aug = (y_hat - y_tilde) / tau

    if mode == "alpha_form":
        w_ce, w_aug = 1.0, config.effective_alpha
    else:
        w_ce, w_aug = 1.0 - config.beta, config.beta * tau * tau * V
    total = w_ce * ce + w_aug * aug
    d_logits = (w_ce * d + w_aug * d_aug) / n

    d_embedding = None
    if not config.stop_gradient_through_target and w_aug != 0.0:
        L = np.asarray(L)
        # d KL / d (target scores / tau), then through scores = u^T L
        g = y_tilde * ((log_tilde - log_hat) - kl_rows[:, None])
        ds = (w_aug / (n * tau)) * g          # N x V
        u = L[:, tgt]
        d_embedding = u @ ds                  # sum_n u_n ds_n^T
        np.add.at(d_embedding.T, tgt, (L @ ds.T).T)
    return LossBreakdown(ce, aug, total, d_logits.reshape(logits.shape), d_embedding,
                         y_tilde.reshape(logits.shape))


def logit_matching_residual(logits, L, target_id, tau):
    """Compare the scaled augmented gradient with the logit difference.

    Returns ``(grad_scaled, reference, rel_err)`` where ``grad_scaled`` is
    ``tau**2 |V|`` times the augmented-loss gradient and ``reference`` is
    ``logits - L^T u`` with its mean removed (softmax ignores constant
    shifts).  At high temperature and with zero-mean embedding inner
    products the two agree.  ``rel_err`` is ``inf`` if the reference
    vanishes while the gradient does not.
    """
    logits = np.asarray(logits, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    V = logits.shape[0]
    y_hat = softmax_with_temperature(logits, tau)
    y_tilde = estimate_target_distribution(L, target_id, tau)
    grad_scaled = tau * tau * V * augmented_loss_grad_logits(y_hat, y_tilde, tau)
    grad_scaled = grad_scaled - grad_scaled.mean()
    reference = logits - L.T @ L[:, target_id]
    reference = reference - reference.mean()
    ref_norm = np.linalg.norm(reference)
    diff = np.linalg.norm(grad_scaled - reference)
    if ref_norm == 0.0:
        rel_err = 0.0 if np.linalg.norm(grad_scaled) <= 1e-12 else float("inf")
    else:
        rel_err = float(diff / ref_norm)
    return grad_scaled, reference, rel_err
