"""Cluster-count estimation: largest-eigenvalue lower bound, residual
correlation sweep for the upper bound, and the new-cluster F-test."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .panel import PSD_TOL, FLOAT_FMT

# Residual variance below which a sweep step is skipped.
RESIDUAL_VAR_FLOOR = 1e-10


@dataclass
class SweepCurve:
    """Mean and median off-diagonal residual correlation after removing the
    top-K principal components, per K."""

    ks: list
    zeta1: list
    zeta2: list
    rank_used: int
    skipped: list = field(default_factory=list)

    def to_csv(self):
        lines = ["K,zeta1,zeta2"]
        for k, z1, z2 in zip(self.ks, self.zeta1, self.zeta2):
            lines.append(f"{k},{FLOAT_FMT % z1},{FLOAT_FMT % z2}")
        return "\n".join(lines) + "\n"


@dataclass
class ClusterCountEstimate:
    """Lower bound N / psi_star on the cluster count."""

    lower_bound: float
    psi_star: float
    knee: int = None

    @property
    def lower_bound_ceiling(self):
        return math.ceil(self.lower_bound - 1e-12)


@dataclass
class FTestReport:
    """Per-time F-statistics for the F- and (F+1)-cluster regressions."""

    times: list
    f_old: np.ndarray
    f_new: np.ndarray
    median_old: float
    median_new: float
    verdict: bool
    skipped_times: list = field(default_factory=list)

    def to_csv(self):
        lines = ["time,f_old,f_new"]
        for t, fo, fn in zip(self.times, self.f_old, self.f_new):
            lines.append(f"{t},{FLOAT_FMT % fo},{FLOAT_FMT % fn}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps(
            {
                "median_f_old": self.median_old,
                "median_f_new": self.median_new,
                "verdict": self.verdict,
                "n_times": len(self.times),
                "skipped_times": list(self.skipped_times),
            }
        )


def lower_bound_from_psi(n, psi_star):
    """The bound F >~ N / psi_star."""
    return ClusterCountEstimate(lower_bound=n / psi_star, psi_star=float(psi_star))


def lower_bound_F(corr):
    """Lower-bound the cluster count by N over the largest eigenvalue."""
    w = np.linalg.eigvalsh(corr.psi)
    return lower_bound_from_psi(corr.n, w[-1])


def residual_correlation_sweep(corr, k_max, loadings=None):
    """Mean/median off-diagonal correlation of the residuals of the
    normalized alphas regressed (through the origin) on the top-K principal
    components, for K = 1..k_max.

    `loadings` overrides the principal components with caller-supplied
    columns. Steps with a residual variance below the floor are skipped.
    """
    psi = corr.psi
    n = corr.n
    if k_max < 1 or k_max >= n:
        raise ValidationError(f"need 1 <= k_max < N, got k_max={k_max}, N={n}")
    w, v = np.linalg.eigh(psi)
    if w[0] <= PSD_TOL * max(w[-1], 1.0):
        raise ValidationError(
            "correlation matrix is not positive definite; deform it first"
        )
    rank_used = int(np.sum(w > PSD_TOL * max(w[-1], 1.0)))
    order = np.argsort(w)[::-1]
    pcs = v[:, order]

    off = ~np.eye(n, dtype=bool)
    ks, z1s, z2s, skipped = [], [], [], []
    for k in range(1, k_max + 1):
        if loadings is not None:
            lam = np.asarray(loadings, dtype=float)[:, :k]
            y = lam @ np.linalg.solve(lam.T @ lam, lam.T)
        else:
            lam = pcs[:, :k]
            y = lam @ lam.T
        resid = (np.eye(n) - y) @ psi @ (np.eye(n) - y)
        var = np.diag(resid)
        if np.any(var < RESIDUAL_VAR_FLOOR):
            skipped.append(k)
            continue
        scale = np.sqrt(var)
        corr_resid = resid / np.outer(scale, scale)
        vals = corr_resid[off]
        ks.append(k)
        z1s.append(float(np.mean(vals)))
        z2s.append(float(np.median(vals)))
    return SweepCurve(ks=ks, zeta1=z1s, zeta2=z2s, rank_used=rank_used, skipped=skipped)


def knee_estimate(curve, rel_drop=0.05, window=3):
    """Smallest K whose |zeta1| stops changing by more than rel_drop
    (relatively) over the next `window` steps. Returns (K, flat) where flat
    is False when the curve never levels off (K is then the last value)."""
    z = np.abs(np.asarray(curve.zeta1))
    ks = curve.ks
    if len(ks) < window + 1:
        raise ValidationError(f"curve needs at least {window + 1} points")
    for idx in range(len(ks) - window):
        ref = z[idx]
        change = abs(ref - z[idx + window]) / ref if ref > 0 else 0.0
        if change < rel_drop:
            return ks[idx], True
    return ks[-1], False


def _through_origin_fstat(y, x):
    """F-statistic of a no-intercept regression: (ESS/p) / (RSS/(n-p))."""
    n, p = x.shape
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    yhat = x @ beta
    ess = float(np.sum(yhat**2))
    rss = float(np.sum((y - yhat) ** 2))
    if rss <= 0:
        return float("inf")
    return (ess / p) / (rss / (n - p))


def _check_binary_loadings(omega, name):
    omega = np.asarray(omega, dtype=float)
    if not np.isin(omega, (0.0, 1.0)).all() or not np.all(omega.sum(axis=1) == 1.0):
        raise ValidationError(f"{name}: rows must assign each alpha to exactly one cluster")
    empty = np.where(omega.sum(axis=0) == 0)[0]
    if empty.size:
        raise ValidationError(f"{name}: cluster column {empty[0] + 1} is empty")
    return omega


def winsorize(series, quantile):
    """Clip a series at its `quantile` and 1 - `quantile` quantiles."""
    s = np.asarray(series, dtype=float)
    finite = s[np.isfinite(s)]
    if finite.size == 0:
        return s
    lo, hi = np.quantile(finite, [quantile, 1.0 - quantile])
    return np.clip(s, lo, hi)


def new_cluster_ftest(panel, omega_old, panel_new, omega_new, winsor=0.05):
    """Compare per-time cross-sectional F-statistics of the F-cluster model
    on the old alphas against the (F+1)-cluster model on old plus new
    alphas. Verdict: the new cluster is supported when the winsorized
    median F-statistic improves."""
    omega_old = _check_binary_loadings(omega_old, "omega_old")
    omega_new = _check_binary_loadings(omega_new, "omega_new")
    if list(panel.times) != list(panel_new.times):
        raise ValidationError("panels must share identical time labels")
    if omega_old.shape[0] != panel.n_alphas:
        raise ValidationError("omega_old rows must match the old panel width")
    if omega_new.shape[0] != panel_new.n_alphas:
        raise ValidationError("omega_new rows must match the new panel width")

    times, f_old, f_new, skipped = [], [], [], []
    for s, t in enumerate(panel.times):
        y_o = panel.values[s]
        y_n = panel_new.values[s]
        m_o = ~np.isnan(y_o)
        m_n = ~np.isnan(y_n)
        x_o = omega_old[m_o]
        x_n = omega_new[m_n]
        if (
            m_o.sum() <= omega_old.shape[1]
            or m_n.sum() <= omega_new.shape[1]
            or np.any(x_o.sum(axis=0) == 0)
            or np.any(x_n.sum(axis=0) == 0)
        ):
            skipped.append(t)
            continue
        times.append(t)
        f_old.append(_through_origin_fstat(y_o[m_o], x_o))
        f_new.append(_through_origin_fstat(y_n[m_n], x_n))

    f_old = np.asarray(f_old)
    f_new = np.asarray(f_new)
    w_old = winsorize(f_old, winsor)
    w_new = winsorize(f_new, winsor)
    med_old = float(np.median(w_old))
    med_new = float(np.median(w_new))
    return FTestReport(
        times=times,
        f_old=f_old,
        f_new=f_new,
        median_old=med_old,
        median_new=med_new,
        verdict=bool(med_new > med_old),
        skipped_times=skipped,
    )
