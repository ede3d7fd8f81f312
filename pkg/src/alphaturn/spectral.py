"""Spectral turnover-reduction coefficient from the top eigenpair of a
correlation matrix, plus the turnover estimate and diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from . import panel as panel_mod

# Relative gap below which eigenvalues are treated as a degenerate top
# eigenspace.
DEGEN_TOL = 1e-10


@dataclass
class SpectralSummary:
    """Top eigenpair of a correlation matrix with the derived turnover
    reduction coefficient and mean-correlation diagnostics."""

    psi1: float
    v1: np.ndarray
    rho_star: float
    rho_prime: float
    gamma: float
    mean_corr: float

    def to_json(self):
        return json.dumps(
            {
                "psi1": self.psi1,
                "rho_star": self.rho_star,
                "rho_prime": self.rho_prime,
                "gamma": self.gamma,
                "mean_corr": self.mean_corr,
                "v1": list(self.v1),
            }
        )


@dataclass
class TurnoverInputs:
    """Per-alpha turnovers and combination weights (sum of |w| = 1)."""

    taus: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.taus < 0):
            raise ValidationError("turnovers must be nonnegative")
        if abs(np.sum(np.abs(self.weights)) - 1.0) > 1e-12:
            raise ValidationError("weights must satisfy sum(|w_i|) = 1")
        if self.taus.shape != self.weights.shape:
            raise ValidationError("taus and weights must have the same length")


def _top_eigenvector(w, v):
    """Top eigenvector; within a degenerate top eigenspace, the direction
    obtained by projecting the uniform vector (falls back to the last
    eigenvector when the projection vanishes)."""
    n = len(w)
    psi1 = w[-1]
    degen = w >= psi1 - DEGEN_TOL * max(psi1, 1.0)
    basis = v[:, degen]
    if basis.shape[1] == 1:
        vec = basis[:, 0]
    else:
        coeff = basis.T @ np.ones(n)
        if np.linalg.norm(coeff) > 1e-8:
            vec = basis @ coeff
        else:
            vec = basis[:, -1]
    vec = vec / np.linalg.norm(vec)
    if np.sum(vec) < 0:
        vec = -vec
    return psi1, vec


def spectral_summary(corr, canonicalize=False):
    """Compute the top eigenpair and the turnover-reduction coefficient
    rho_star = psi1 * |sum(V1)| / N^(3/2)."""
    if canonicalize:
        _, corr = panel_mod.canonicalize_signs(corr)
    psi = corr.psi
    n = corr.n
    if np.max(np.abs(psi - psi.T)) > 1e-12:
        raise ValidationError("matrix must be symmetric")
    w, v = np.linalg.eigh(psi)
    psi1, v1 = _top_eigenvector(w, v)
    rho_star = psi1 * abs(np.sum(v1)) / n**1.5
    total = float(np.sum(psi))
    rho_prime = total / n**2
    mean_corr = (total - n) / (n * (n - 1))
    gamma = rho_star / rho_prime if rho_prime > 0 else float("nan")
    return SpectralSummary(
        psi1=float(psi1),
        v1=v1,
        rho_star=float(rho_star),
        rho_prime=float(rho_prime),
        gamma=float(gamma),
        mean_corr=float(mean_corr),
    )


def turnover_estimate(summary, inputs):
    """Aggregate turnover estimate rho_star * sum(tau_i * |w_i|)."""
    return summary.rho_star * float(np.sum(inputs.taus * np.abs(inputs.weights)))


def gamma_diagnostic(summary):
    """Ratio gamma = rho_star / rho_prime."""
    if summary.rho_prime <= 0:
        raise ValidationError(
            "rho_prime <= 0; apply sign canonicalization before computing gamma"
        )
    return summary.rho_star / summary.rho_prime
