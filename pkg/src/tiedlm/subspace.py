"""Distance between the column spaces of two matrices.

With orthonormal bases ``U`` and ``V`` of the two column spaces, the residual
of projecting ``V`` onto ``span(U)`` is ``R = V - U U^T V`` and the distance
is ``d = sqrt(||R||_F^2 / C)`` for ``C`` columns.  Equivalently
``d^2 = mean(1 - rho_i^2)`` where ``rho_i`` are the singular values of
``U^T V`` (cosines of the principal angles).  Both routes are reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractError, frobenius_norm_sq, qr_orthonormalize, singular_values


@dataclass
class SubspaceReport:
    distance: float
    distance_sq: float
    principal_cosines: np.ndarray
    num_columns: int
    symmetric: bool = True
    tied: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def distance_sq_from_angles(self) -> float:
        rho = self.principal_cosines
        return float(np.sum(1.0 - rho * rho) / self.num_columns)


def subspace_distance(x, y) -> SubspaceReport:
    """Distance between ``span(x)`` and ``span(y)``.

    Both matrices need the same number of rows and full column rank.  With
    unequal column counts the residual of ``y`` projected onto ``span(x)`` is
    used and the report is marked as not symmetric.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ContractError("subspace_distance expects matrices")
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    u = qr_orthonormalize(x)
    v = qr_orthonormalize(y)
    utv = u.T @ v
    residual = v - u @ utv
    c = v.shape[1]
    d2 = frobenius_norm_sq(residual) / c
    report = SubspaceReport(
        distance=float(np.sqrt(max(d2, 0.0))),
        distance_sq=d2,
        principal_cosines=singular_values(utv),
        num_columns=c,
    )
    if x.shape[1] != y.shape[1]:
        report.symmetric = False
        report.notes.append(
            f"column counts differ ({x.shape[1]} vs {y.shape[1]}); distance is one-directional")
    return report


def model_subspace_distance(params) -> SubspaceReport:
    """Distance between the column spaces of ``L^T`` and ``W``.

    A tied model has ``W = L^T`` by construction, so the report is zero
    and flagged ``tied``.
    """
    if params.tied:
        d = params["L"].shape[0]
        return SubspaceReport(0.0, 0.0, np.ones(d), d, tied=True,
                              notes=["tied: output projection is L^T"])
    return subspace_distance(params["L"].T, params["W"])
