"""Alpha panels: CSV ingestion, pairwise-complete correlation, factor
regression, sign canonicalization and positive-definite repair of
correlation matrices.

Missing values are carried as NaN throughout.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Relative eigenvalue floor below which a correlation matrix is treated as
# not positive definite.
PSD_TOL = 1e-10

FLOAT_FMT = "%.17g"


def _times_ascending(times):
    """True if the time labels are strictly increasing (numerically when
    they all parse as numbers, lexicographically otherwise)."""
    try:
        vals = [float(t) for t in times]
    except ValueError:
        vals = list(times)
    return all(a < b for a, b in zip(vals, vals[1:]))


@dataclass
class AlphaPanel:
    """N alpha return series over M+1 observations; cells may be NaN."""

    labels: list
    times: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        m1, n = self.values.shape
        if n < 2:
            raise ValidationError(f"need at least 2 alphas, got {n}")
        if m1 < 2:
            raise ValidationError(f"need at least 2 observations, got {m1}")
        if len(self.labels) != n or len(self.times) != m1:
            raise ValidationError("labels/times length does not match values shape")
        if len(set(self.labels)) != n:
            raise ValidationError("alpha labels must be unique")
        if not _times_ascending(self.times):
            raise ValidationError("time labels must be strictly increasing")
        counts = np.sum(~np.isnan(self.values), axis=0)
        bad = np.where(counts < 2)[0]
        if bad.size:
            raise ValidationError(
                f"column {self.labels[bad[0]]!r} has fewer than 2 observations"
            )

    @property
    def n_alphas(self):
        return self.values.shape[1]

    @property
    def n_obs(self):
        return self.values.shape[0]


@dataclass
class CorrelationMatrix:
    """Symmetric unit-diagonal correlation matrix with companion volatilities."""

    psi: np.ndarray
    vols: np.ndarray
    psd: bool
    min_overlap: int = 0
    labels: list = field(default=None)

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.vols = np.asarray(self.vols, dtype=float)
        n = self.psi.shape[0]
        if self.psi.shape != (n, n):
            raise ValidationError("correlation matrix must be square")
        if np.max(np.abs(self.psi - self.psi.T)) > 1e-12:
            raise ValidationError("correlation matrix must be symmetric to 1e-12")
        if np.max(np.abs(np.diag(self.psi) - 1.0)) != 0.0:
            raise ValidationError("correlation matrix diagonal must be exactly 1")
        if np.max(np.abs(self.psi)) > 1.0 + 1e-12:
            raise ValidationError("off-diagonal correlations must lie in [-1, 1]")
        if self.vols.shape != (n,) or np.any(self.vols <= 0):
            raise ValidationError("volatilities must be positive, one per alpha")
        if self.labels is None:
            self.labels = [f"a{i + 1}" for i in range(n)]

    @property
    def n(self):
        return self.psi.shape[0]


@dataclass
class SignVector:
    """Per-alpha signs chosen to raise the total correlation sum."""

    signs: np.ndarray
    objective: float


def _is_psd(psi):
    w = np.linalg.eigvalsh(psi)
    return bool(w[0] > PSD_TOL * max(w[-1], 1.0))


def load_panel(path, na_policy="empty_cell"):
    """Read a panel CSV (header ``time,<label1>,...``) into an AlphaPanel.

    na_policy "empty_cell" treats only empty cells as missing; "literal_NA"
    additionally accepts the token NA.
    """
    if na_policy not in ("empty_cell", "literal_NA"):
        raise ValidationError(f"unknown na_policy {na_policy!r}")
    if not os.path.exists(path):
        raise ValidationError(f"panel file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 3 or rows[0][0] != "time":
        raise ValidationError(f"{path}: header must be 'time,<label1>,...,<labelN>'")
    labels = rows[0][1:]
    times = []
    data = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(labels) + 1:
            raise ValidationError(
                f"{path}: row {r} has {len(row)} fields, expected {len(labels) + 1}"
            )
        times.append(row[0])
        vals = []
        for c, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            if cell == "" or (na_policy == "literal_NA" and cell == "NA"):
                vals.append(np.nan)
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValidationError(
                        f"{path}: row {r}, column {c}: cannot parse {cell!r}"
                    ) from None
        data.append(vals)
    return AlphaPanel(labels=labels, times=times, values=np.array(data))


def save_panel(panel, path):
    """Write a panel back to CSV (NaN cells emitted empty)."""
    lines = ["time," + ",".join(panel.labels)]
    for s, t in enumerate(panel.times):
        cells = [
            "" if np.isnan(v) else FLOAT_FMT % v for v in panel.values[s]
        ]
        lines.append(str(t) + "," + ",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pairwise_correlation(panel, min_overlap=12):
    """Pearson correlation over pairwise-complete observations.

    Volatilities are full-sample standard deviations per column (ddof=1).
    Raises if any pair has fewer than min_overlap joint observations or a
    column has zero variance.
    """
    x = panel.values
    n = panel.n_alphas
    obs = (~np.isnan(x)).astype(float)
    x0 = np.where(np.isnan(x), 0.0, x)

    cnt = obs.T @ obs  # joint observation counts
    i, j = np.unravel_index(np.argmin(cnt), cnt.shape)
    if cnt[i, j] < min_overlap:
        raise ValidationError(
            f"pair ({panel.labels[i]!r}, {panel.labels[j]!r}) has only "
            f"{int(cnt[i, j])} joint observations (min_overlap={min_overlap})"
        )

    sxy = x0.T @ x0
    sx = x0.T @ obs  # (i, j): sum of x_i over rows where j observed
    sxx = (x0 * x0).T @ obs
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = sxy - sx * sx.T / cnt
        var_i = sxx - sx * sx / cnt  # variance of i over the (i, j) overlap
        denom = np.sqrt(var_i * var_i.T)
        psi = cov / denom

    zero_var = np.where(np.diag(var_i) <= 1e-30)[0]
    if zero_var.size:
        raise ValidationError(
            f"column {panel.labels[zero_var[0]]!r} has zero variance"
        )
    bad = np.argwhere(denom <= 0)
    if bad.size:
        i, j = bad[0]
        raise ValidationError(
            f"pair ({panel.labels[i]!r}, {panel.labels[j]!r}) has zero "
            "variance over its joint observations"
        )
    psi = np.clip((psi + psi.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(psi, 1.0)

    counts = np.sum(obs, axis=0)
    means = np.sum(x0, axis=0) / counts
    ss = np.sum(x0 * x0, axis=0) - counts * means**2
    vols = np.sqrt(ss / (counts - 1))

    return CorrelationMatrix(
        psi=psi,
        vols=vols,
        psd=_is_psd(psi),
        min_overlap=int(cnt.min()),
        labels=list(panel.labels),
    )


def regress_out(panel, factors):
    """Residualize each alpha on the factor columns (time-series OLS with
    intercept); missing cells stay missing."""
    if list(panel.times) != list(factors.times):
        raise ValidationError("panel and factor time labels must align exactly")
    f = factors.values
    m1 = panel.n_obs
    design_full = np.column_stack([np.ones(m1), f])
    finite = ~np.isnan(f).any(axis=1)
    if np.linalg.matrix_rank(design_full[finite]) < design_full.shape[1]:
        raise ValidationError("factor matrix (with intercept) is rank deficient")

    out = np.full_like(panel.values, np.nan)
    for k in range(panel.n_alphas):
        y = panel.values[:, k]
        rows = ~np.isnan(y)
        if np.isnan(f[rows]).any():
            raise ValidationError(
                f"factors have missing values where alpha {panel.labels[k]!r} "
                "is observed"
            )
        design = design_full[rows]
        beta, *_ = np.linalg.lstsq(design, y[rows], rcond=None)
        out[rows, k] = y[rows] - design @ beta
    return AlphaPanel(labels=list(panel.labels), times=list(panel.times), values=out)


def canonicalize_signs(corr, max_passes=None):
    """Greedy sign flipping maximizing the total correlation sum.

    Scans indices in ascending order and flips any sign whose row sum is
    negative; stops after a full pass with no flip. Returns the sign vector
    and the re-signed matrix.
    """
    psi = corr.psi
    n = corr.n
    if max_passes is None:
        max_passes = 100 * n
    s = np.ones(n)
    for _ in range(max_passes):
        flipped = False
        for i in range(n):
            row = s[i] * np.dot(psi[i], s) - psi[i, i]  # exclude diagonal
            if row < 0:
                s[i] = -s[i]
                flipped = True
        if not flipped:
            break
    new_psi = psi * np.outer(s, s)
    np.fill_diagonal(new_psi, 1.0)
    objective = float(s @ psi @ s)
    sign_vec = SignVector(signs=s.copy(), objective=objective)
    new_corr = CorrelationMatrix(
        psi=new_psi,
        vols=corr.vols.copy(),
        psd=corr.psd,
        min_overlap=corr.min_overlap,
        labels=list(corr.labels),
    )
    return sign_vec, new_corr


def deform_correlation(corr, noise_floor=1e-10):
    """Make a correlation matrix positive definite by replacing every
    eigenvalue at or below noise_floor * lambda_max with the smallest
    eigenvalue above that threshold, then rescaling to unit diagonal."""
    psi = corr.psi
    w, v = np.linalg.eigh(psi)
    thresh = noise_floor * w[-1]
    keep = w > thresh
    if not keep.any():
        raise ValidationError("all eigenvalues lie below the noise floor")
    w_new = np.where(keep, w, w[keep].min())
    recon = (v * w_new) @ v.T
    d = np.sqrt(np.diag(recon))
    psi_new = recon / np.outer(d, d)
    psi_new = (psi_new + psi_new.T) / 2.0
    np.fill_diagonal(psi_new, 1.0)
    psi_new = np.clip(psi_new, -1.0, 1.0)
    np.fill_diagonal(psi_new, 1.0)
    return CorrelationMatrix(
        psi=psi_new,
        vols=corr.vols.copy(),
        psd=True,
        min_overlap=corr.min_overlap,
        labels=list(corr.labels),
    )


def load_correlation(path):
    """Read a correlation matrix CSV (label header row and column)."""
    if not os.path.exists(path):
        raise ValidationError(f"correlation file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValidationError(f"{path}: expected at least a 2x2 matrix")
    labels = rows[0][1:]
    n = len(labels)
    if len(rows) != n + 1:
        raise ValidationError(f"{path}: expected {n} matrix rows, got {len(rows) - 1}")
    psi = np.empty((n, n))
    vols = np.ones(n)
    for r, row in enumerate(rows[1:]):
        if len(row) != n + 1 or row[0] != labels[r]:
            raise ValidationError(f"{path}: row {r + 2} does not match header labels")
        try:
            psi[r] = [float(c) for c in row[1:]]
        except ValueError:
            raise ValidationError(
                f"{path}: row {r + 2} contains a non-numeric cell"
            ) from None
    psi = (psi + psi.T) / 2.0
    np.fill_diagonal(psi, 1.0)
    return CorrelationMatrix(psi=psi, vols=vols, psd=_is_psd(psi), labels=labels)


def save_correlation(corr, path):
    lines = ["," + ",".join(corr.labels)]
    for i, lab in enumerate(corr.labels):
        lines.append(lab + "," + ",".join(FLOAT_FMT % v for v in corr.psi[i]))
    _atomic_write(path, "\n".join(lines) + "\n")
