"""Factor-model covariance assembly and closed-form eigenstructures.

Covers binary clusters with and without specific risk, non-diagonal factor
covariance via the reduced F x F problem, non-binary loadings via the
Gram-matrix reduction, the uniform-correlation secular equation, and the
demeaned-loadings bound on the top eigenvalue.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalError, ValidationError
from .panel import CorrelationMatrix, _is_psd
from . import spectral as spectral_mod


@dataclass
class ClusterSpec:
    """Binary cluster layout: sizes, 1-based assignment, per-cluster factor
    variances phi and specific risks xi."""

    sizes: np.ndarray
    assignment: np.ndarray
    phi: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=int)
        self.assignment = np.asarray(self.assignment, dtype=int)
        self.phi = np.asarray(self.phi, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        f = len(self.sizes)
        if np.any(self.sizes < 1):
            raise ValidationError("cluster sizes must be positive")
        if self.phi.shape != (f,) or np.any(self.phi <= 0):
            raise ValidationError("phi must be positive, one per cluster")
        if self.xi.shape != (f,) or np.any(self.xi < 0):
            raise ValidationError("xi must be nonnegative, one per cluster")
        counts = np.bincount(self.assignment - 1, minlength=f)
        if len(counts) != f or not np.array_equal(counts, self.sizes):
            raise ValidationError("assignment counts do not match sizes")

    @classmethod
    def from_sizes(cls, sizes, phi=None, xi=None):
        sizes = np.asarray(sizes, dtype=int)
        f = len(sizes)
        assignment = np.repeat(np.arange(1, f + 1), sizes)
        if phi is None:
            phi = np.ones(f)
        if xi is None:
            xi = np.zeros(f)
        return cls(sizes=sizes, assignment=assignment, phi=phi, xi=xi)

    @property
    def n(self):
        return int(self.sizes.sum())

    @property
    def f(self):
        return len(self.sizes)

    @property
    def zeta(self):
        """Specific-to-factor variance ratios xi^2 / phi per cluster."""
        return self.xi**2 / self.phi

    def to_factor_model(self):
        n, f = self.n, self.f
        omega = np.zeros((n, f))
        omega[np.arange(n), self.assignment - 1] = 1.0
        return FactorModel(
            omega=omega,
            phi_cov=np.diag(self.phi),
            xi=self.xi[self.assignment - 1],
            mode="binary",
        )


@dataclass
class FactorModel:
    """Loadings, factor covariance and specific risks; assembles
    Gamma = diag(xi^2) + Omega Phi Omega^T."""

    omega: np.ndarray
    phi_cov: np.ndarray
    xi: np.ndarray
    mode: str = "dense"

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.phi_cov = np.asarray(self.phi_cov, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        n, f = self.omega.shape
        if self.phi_cov.shape != (f, f):
            raise ValidationError("factor covariance shape does not match loadings")
        if np.max(np.abs(self.phi_cov - self.phi_cov.T)) > 1e-12:
            raise ValidationError("factor covariance must be symmetric")
        if np.linalg.eigvalsh(self.phi_cov)[0] <= 0:
            raise ValidationError("factor covariance must be positive definite")
        if self.xi.shape != (n,) or np.any(self.xi < 0):
            raise ValidationError("specific risks must be nonnegative, one per alpha")
        if self.mode == "binary":
            binary = np.isin(self.omega, (0.0, 1.0)).all()
            if not binary or not np.all(self.omega.sum(axis=1) == 1.0):
                raise ValidationError(
                    "binary mode requires exactly one unit entry per loadings row"
                )

    @property
    def n(self):
        return self.omega.shape[0]

    @property
    def f(self):
        return self.omega.shape[1]

    def to_json(self):
        doc = {
            "mode": self.mode,
            "phi": self.phi_cov.tolist(),
            "xi": self.xi.tolist(),
        }
        if self.mode == "binary":
            assignment = (np.argmax(self.omega, axis=1) + 1).tolist()
            doc["assignment"] = assignment
            doc["sizes"] = np.bincount(
                np.asarray(assignment) - 1, minlength=self.f
            ).tolist()
        else:
            doc["omega"] = self.omega.tolist()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        mode = doc.get("mode", "dense")
        phi = np.asarray(doc["phi"], dtype=float)
        if phi.ndim == 1:
            phi = np.diag(phi)
        if mode == "binary":
            assignment = np.asarray(doc["assignment"], dtype=int)
            f = phi.shape[0]
            n = len(assignment)
            omega = np.zeros((n, f))
            omega[np.arange(n), assignment - 1] = 1.0
        else:
            omega = np.asarray(doc["omega"], dtype=float)
            n = omega.shape[0]
        xi = np.asarray(doc.get("xi", np.zeros(n)), dtype=float)
        return cls(omega=omega, phi_cov=phi, xi=xi, mode=mode)


@dataclass
class EigenStructure:
    """Eigenvalues with multiplicities plus the implied turnover-reduction
    coefficient; reduced_vectors holds the F x F eigenvector matrix when a
    reduction applies."""

    values: list
    rho_star: float
    top_cluster: int
    reduced_vectors: np.ndarray = field(default=None)

    def eigenvalues(self):
        """Flat descending eigenvalue array, multiplicities expanded."""
        out = []
        for val, mult in self.values:
            out.extend([val] * mult)
        return np.sort(np.asarray(out))[::-1]

    @property
    def total(self):
        return sum(v * m for v, m in self.values)

    def to_json(self):
        return json.dumps(
            {
                "values": [{"value": v, "mult": m} for v, m in self.values],
                "rho_star": self.rho_star,
                "top_cluster": self.top_cluster,
            }
        )


@dataclass
class AllocationPlan:
    """Cluster sizes minimizing the turnover-reduction coefficient at fixed
    N and F: F_plus ceilings and F_minus floors."""

    f_minus: int
    f_plus: int
    size_floor: int
    size_ceiling: int
    rho_star_min: float

    @property
    def sizes(self):
        return [self.size_ceiling] * self.f_plus + [self.size_floor] * self.f_minus


@dataclass
class NonbinaryBound:
    """Estimate of the top eigenvalue and rho_star from column means of
    normalized loadings."""

    lambda_bar: np.ndarray
    chi: float
    q: float
    psi_star_est: float
    zeta_star_est: float
    rho_star_est: float


def build_covariance(model):
    """Assemble Gamma = diag(xi^2) + Omega Phi Omega^T and its correlation
    matrix."""
    gamma = np.diag(model.xi**2) + model.omega @ model.phi_cov @ model.omega.T
    var = np.diag(gamma)
    if np.any(var <= 0):
        i = int(np.argmin(var))
        raise ValidationError(f"alpha {i} has zero total variance")
    sig = np.sqrt(var)
    psi = gamma / np.outer(sig, sig)
    psi = (psi + psi.T) / 2.0
    np.fill_diagonal(psi, 1.0)
    corr = CorrelationMatrix(psi=psi, vols=sig, psd=_is_psd(psi))
    return gamma, corr


def _binary_top(spec):
    """Index (0-based) of the cluster with the largest single-multiplicity
    eigenvalue; ties broken by larger size, then lower index."""
    psi_a = (spec.xi**2 + spec.sizes * spec.phi) / (spec.xi**2 + spec.phi)
    order = sorted(
        range(spec.f), key=lambda a: (-psi_a[a], -spec.sizes[a], a)
    )
    return order[0], psi_a


def binary_eigensystem(spec):
    """Closed-form eigenvalues of the binary-cluster correlation matrix:
    one (xi^2 + N_A phi) / (xi^2 + phi) per cluster plus xi^2 / (xi^2 + phi)
    with multiplicity N_A - 1."""
    top, psi_a = _binary_top(spec)
    psi_t = spec.xi**2 / (spec.xi**2 + spec.phi)
    values = [(float(psi_a[a]), 1) for a in range(spec.f)]
    values += [
        (float(psi_t[a]), int(spec.sizes[a] - 1))
        for a in range(spec.f)
        if spec.sizes[a] > 1
    ]
    rho, _ = rho_star_binary(spec)
    return EigenStructure(values=values, rho_star=rho, top_cluster=top + 1)


def rho_star_binary(spec):
    """Turnover-reduction coefficient of the binary model: the top cluster's
    eigenvalue times sqrt(N_A) / N^(3/2)."""
    top, psi_a = _binary_top(spec)
    n = spec.n
    rho = float(psi_a[top] * math.sqrt(spec.sizes[top]) / n**1.5)
    return rho, top + 1


def optimal_allocation(n, f):
    """Most even split of N alphas into F clusters and the limiting
    rho_star = F^(-3/2)."""
    if not 1 <= f <= n:
        raise ValidationError(f"need 1 <= F <= N, got F={f}, N={n}")
    floor = n // f
    f_plus = n - f * floor
    return AllocationPlan(
        f_minus=f - f_plus,
        f_plus=f_plus,
        size_floor=floor,
        size_ceiling=floor + 1 if f_plus else floor,
        rho_star_min=f**-1.5,
    )


def reduce_nondiagonal(sizes, factor_corr):
    """Eigenstructure of the binary model with non-diagonal factor
    covariance, solved in the reduced F x F problem Q PsiHat Q with
    Q = diag(sqrt(N_A))."""
    sizes = np.asarray(sizes, dtype=int)
    factor_corr = np.asarray(factor_corr, dtype=float)
    f = len(sizes)
    n = int(sizes.sum())
    if np.any(sizes < 1):
        raise ValidationError("cluster sizes must be positive")
    if factor_corr.shape != (f, f) or np.max(np.abs(factor_corr - factor_corr.T)) > 1e-12:
        raise ValidationError("factor correlation must be symmetric F x F")
    if np.linalg.eigvalsh(factor_corr)[0] <= 0:
        raise ValidationError("factor correlation must be positive definite")
    q = np.sqrt(sizes.astype(float))
    reduced = factor_corr * np.outer(q, q)
    w, chi = np.linalg.eigh(reduced)
    if abs(w.sum() - n) > 1e-9 * max(n, 1):
        raise NumericalError("reduced eigenvalues do not sum to N")
    top = int(np.argmax(w))
    rho = float(w[top] * abs(np.dot(q, chi[:, top])) / n**1.5)
    values = [(float(x), 1) for x in w[::-1]]
    if n > f:
        values.append((0.0, n - f))
    # order reduced vectors to match descending eigenvalues
    order = np.argsort(w)[::-1]
    return EigenStructure(
        values=values,
        rho_star=rho,
        top_cluster=int(np.where(order == top)[0][0]) + 1,
        reduced_vectors=chi[:, order],
    )


def embed_reduced_vectors(sizes, chi):
    """Lift reduced eigenvectors chi (F x K) to N-space:
    V_i = chi[G(i)] / sqrt(N_G(i))."""
    sizes = np.asarray(sizes, dtype=int)
    assignment = np.repeat(np.arange(len(sizes)), sizes)
    scale = 1.0 / np.sqrt(sizes.astype(float))
    return chi[assignment] * scale[assignment][:, None]


def reduce_nonbinary(model):
    """Eigenstructure of a zero-specific-risk model with arbitrary loadings,
    via the F x F Gram matrix of the normalized loadings."""
    if np.any(model.xi != 0):
        raise ValidationError(
            "nonzero specific risk: use the dense path (dense_rho_star)"
        )
    chol = np.linalg.cholesky(model.phi_cov)
    omega_t = model.omega @ chol
    sig = np.linalg.norm(omega_t, axis=1)
    if np.any(sig <= 0):
        i = int(np.argmin(sig))
        raise ValidationError(f"alpha {i} has zero total variance")
    lam = omega_t / sig[:, None]
    q = lam.T @ lam
    w, vecs = np.linalg.eigh(q)
    if w[0] <= 1e-10 * max(w[-1], 1.0):
        small = vecs[:, 0]
        cols = np.argsort(-np.abs(small))[:2]
        raise ValidationError(
            f"loadings columns are linearly dependent (columns {sorted(cols.tolist())})"
        )
    n, f = model.n, model.f
    top = int(np.argmax(w))
    v_top = lam @ vecs[:, top] / math.sqrt(w[top])
    rho = float(w[top] * abs(v_top.sum()) / n**1.5)
    values = [(float(x), 1) for x in w[::-1]]
    if n > f:
        values.append((0.0, n - f))
    order = np.argsort(w)[::-1]
    return EigenStructure(
        values=values,
        rho_star=rho,
        top_cluster=int(np.where(order == top)[0][0]) + 1,
        reduced_vectors=vecs[:, order],
    )


def nonbinary_eigenvectors(model):
    """Full N x F orthonormal eigenvector matrix for the zero-specific-risk
    non-binary model, columns ordered by descending eigenvalue."""
    chol = np.linalg.cholesky(model.phi_cov)
    omega_t = model.omega @ chol
    sig = np.linalg.norm(omega_t, axis=1)
    lam = omega_t / sig[:, None]
    q = lam.T @ lam
    w, vecs = np.linalg.eigh(q)
    order = np.argsort(w)[::-1]
    return lam @ vecs[:, order] / np.sqrt(w[order])[None, :]


def dense_rho_star(model):
    """Oracle path: assemble the full correlation matrix and delegate to the
    spectral solver."""
    _, corr = build_covariance(model)
    return spectral_mod.spectral_summary(corr)


def _secular_poles(sizes, rho):
    """Distinct pole positions (1-rho) N_C with their multiplicities."""
    uniq, counts = np.unique(np.asarray(sizes, dtype=int), return_counts=True)
    return uniq, counts, (1.0 - rho) * uniq.astype(float)


def secular_roots(sizes, rho):
    """Eigenvalues of the uniform-factor-correlation reduced matrix, as the
    roots of rho * sum_C N_C / (psi - (1-rho) N_C) = 1.

    Returns F values in descending order. rho = 1 is handled analytically
    (one eigenvalue N, the rest zero).
    """
    sizes = np.asarray(sizes, dtype=int)
    if np.any(sizes < 1):
        raise ValidationError("cluster sizes must be positive")
    f = len(sizes)
    n = float(sizes.sum())
    if rho < 0 or rho > 1:
        raise ValidationError("factor correlation must lie in [0, 1]")
    if rho == 1.0:
        return np.array([n] + [0.0] * (f - 1))
    if rho == 0.0:
        return np.sort(sizes.astype(float))[::-1]
    if f == 1:
        return np.array([n])

    uniq, counts, poles = _secular_poles(sizes, rho)
    weights = counts * uniq.astype(float)

    def fun(psi):
        return rho * np.sum(weights / (psi - poles)) - 1.0

    roots = []
    # m-fold duplicated sizes pin m-1 eigenvalues exactly at their pole
    for p, m in zip(poles, counts):
        roots.extend([p] * (m - 1))
    # one root strictly inside each gap between consecutive distinct poles
    for k in range(len(poles) - 1):
        gap = poles[k + 1] - poles[k]
        a = poles[k] + 1e-13 * gap
        b = poles[k + 1] - 1e-13 * gap
        if a >= b or fun(a) <= 0 or fun(b) >= 0:
            roots.append(0.5 * (poles[k] + poles[k + 1]))
            continue
        roots.append(brentq(fun, a, b, rtol=1e-14, xtol=1e-300, maxiter=200))
    # one root above the largest pole
    gap = n * (1.0 + rho) - poles[-1]
    a = poles[-1] + 1e-13 * gap
    b = n * (1.0 + rho)
    roots.append(brentq(fun, a, b, rtol=1e-14, xtol=1e-300, maxiter=200))

    roots = np.sort(np.asarray(roots))[::-1]
    if abs(roots.sum() - n) > 1e-9 * max(n, 1.0):
        raise NumericalError("secular roots do not sum to N")
    return roots


def secular_eigenvector(sizes, rho, psi):
    """Reduced eigenvector (components chi_C) for a simple secular root,
    normalized to unit length."""
    sizes = np.asarray(sizes, dtype=float)
    comp = np.sqrt(sizes) / (psi - (1.0 - rho) * sizes)
    return comp / np.linalg.norm(comp)


@dataclass
class SecularRootCheck:
    root: float
    chi_tilde_sq: float
    identity_rhs: float
    discrepancy: float
    skipped: bool = False


def secular_identity_check(sizes, rho, step=1e-5):
    """Verify, per simple root, that (sum_B sqrt(N_B) chi_B)^2 equals
    psi + (1-rho) d(psi)/d(rho) via central differences."""
    if not (0 < rho - step and rho + step < 1):
        raise ValidationError("need rho +/- step inside (0, 1)")
    uniq, counts, poles = _secular_poles(sizes, rho)
    weights = counts * uniq.astype(float)
    roots = secular_roots(sizes, rho)
    roots_lo = np.sort(secular_roots(sizes, rho - step))
    roots_hi = np.sort(secular_roots(sizes, rho + step))
    order = np.argsort(roots)
    reports = [None] * len(roots)
    for pos, idx in enumerate(order):
        psi = roots[idx]
        if np.any(np.abs(psi - poles) < 1e-9 * max(psi, 1.0)):
            reports[idx] = SecularRootCheck(
                root=psi, chi_tilde_sq=float("nan"), identity_rhs=float("nan"),
                discrepancy=float("nan"), skipped=True,
            )
            continue
        s2 = np.sum(weights / (psi - poles) ** 2)
        chi_tilde_sq = 1.0 / (rho**2 * s2)
        dpsi = (roots_hi[pos] - roots_lo[pos]) / (2.0 * step)
        rhs = psi + (1.0 - rho) * dpsi
        reports[idx] = SecularRootCheck(
            root=psi,
            chi_tilde_sq=float(chi_tilde_sq),
            identity_rhs=float(rhs),
            discrepancy=float(abs(chi_tilde_sq - rhs)),
        )
    return reports


def secular_f2_closed_form(n1, n2, rho):
    """Two-cluster eigenvalues
    (N1 + N2 +/- sqrt((N1 - N2)^2 + 4 N1 N2 rho^2)) / 2."""
    disc = math.sqrt((n1 - n2) ** 2 + 4.0 * n1 * n2 * rho**2)
    return (n1 + n2 + disc) / 2.0, (n1 + n2 - disc) / 2.0


def nonbinary_bound(lam):
    """Bound the top eigenvalue and rho_star from the column means of
    row-normalized loadings: psi* ~ N chi^2 + q with chi = ||column means||
    and q the mean eigenvalue of the demeaned Gram matrix."""
    lam = np.asarray(lam, dtype=float)
    n, f = lam.shape
    row_norms = np.sum(lam**2, axis=1)
    if np.max(np.abs(row_norms - 1.0)) > 1e-8:
        raise ValidationError("loadings rows must have unit norm (to 1e-8)")
    lambda_bar = lam.mean(axis=0)
    chi = float(np.linalg.norm(lambda_bar))
    if chi < 1e-12:
        raise ValidationError(
            "column means vanish; sign-canonicalize the alphas first "
            "(a vanishing chi implies negative row sums)"
        )
    demeaned = lam - lambda_bar
    q = float(np.trace(demeaned.T @ demeaned)) / f
    psi_star = n * chi**2 + q
    zeta_star = n * chi / math.sqrt(psi_star)
    rho_star = psi_star * zeta_star / n**1.5
    return NonbinaryBound(
        lambda_bar=lambda_bar,
        chi=chi,
        q=q,
        psi_star_est=float(psi_star),
        zeta_star_est=float(zeta_star),
        rho_star_est=float(rho_star),
    )
