"""Zero-mean matrix-variate normal prior with Kronecker-factored covariance.

A p x d weight matrix W gets the prior density

    p(W) = exp(-tr(S_r^{-1} W S_c^{-1} W.T) / 2)
           / ((2*pi)^{pd/2} det(S_r)^{d/2} det(S_c)^{p/2})

with row covariance S_r (p x p) and column covariance S_c (d x d);
equivalently vec(W) is multivariate normal with covariance S_c kron S_r.
Training works with the precision matrices O_r = S_r^{-1}, O_c = S_c^{-1}
instead, and every formula below is written in terms of traces and
log-determinants of the precisions, so matrix square roots are never
materialized outside of sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotPD
from .spectral import SpectralBounds, SymMatrix, eigh

__all__ = [
    "MatrixNormalPrior",
    "PrecisionPair",
    "log_density",
    "sample",
    "regularizer_value",
    "regularizer_grad",
]

# Slack allowed on precision spectra relative to the [u, v] bounds.
SPECTRUM_SLACK = 1e-8


@dataclass(frozen=True)
class MatrixNormalPrior:
    """Matrix-variate normal with zero mean and PD row/column covariances."""

    row_cov: SymMatrix
    col_cov: SymMatrix
    # Cached spectra of the covariances; populated on construction.
    _row_eig: object = field(init=False, repr=False, compare=False)
    _col_eig: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "row_cov", SymMatrix.wrap(self.row_cov))
        object.__setattr__(self, "col_cov", SymMatrix.wrap(self.col_cov))
        row_eig = eigh(self.row_cov)
        col_eig = eigh(self.col_cov)
        for name, dec in (("row", row_eig), ("column", col_eig)):
            if dec.eigenvalues[-1] <= 0.0:
                raise NotPD(
                    f"{name} covariance has non-positive eigenvalue "
                    f"{dec.eigenvalues[-1]:.3e}"
                )
        object.__setattr__(self, "_row_eig", row_eig)
        object.__setattr__(self, "_col_eig", col_eig)

    @property
    def p(self) -> int:
        return self.row_cov.dim

    @property
    def d(self) -> int:
        return self.col_cov.dim


@dataclass(frozen=True)
class PrecisionPair:
    """Row/column precision matrices constrained to spectra in [u, v].

    These are the inverse covariances of the corresponding
    :class:`MatrixNormalPrior`; construction verifies the spectrum bounds
    (within 1e-8 slack) and caches the eigendecompositions for cheap
    log-determinants and inversion.
    """

    omega_r: SymMatrix
    omega_c: SymMatrix
    bounds: SpectralBounds
    _row_eig: object = field(init=False, repr=False, compare=False)
    _col_eig: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "omega_r", SymMatrix.wrap(self.omega_r))
        object.__setattr__(self, "omega_c", SymMatrix.wrap(self.omega_c))
        row_eig = eigh(self.omega_r)
        col_eig = eigh(self.omega_c)
        lo = self.bounds.u - SPECTRUM_SLACK
        hi = self.bounds.v + SPECTRUM_SLACK
        for name, dec in (("omega_r", row_eig), ("omega_c", col_eig)):
            vals = dec.eigenvalues
            if vals[-1] < lo or vals[0] > hi:
                raise ValueError(
                    f"{name} spectrum [{vals[-1]:.6g}, {vals[0]:.6g}] leaves "
                    f"[{self.bounds.u:.6g}, {self.bounds.v:.6g}]"
                )
        object.__setattr__(self, "_row_eig", row_eig)
        object.__setattr__(self, "_col_eig", col_eig)

    @property
    def p(self) -> int:
        return self.omega_r.dim

    @property
    def d(self) -> int:
        return self.omega_c.dim

    @classmethod
    def identity(cls, p: int, d: int, bounds: SpectralBounds) -> "PrecisionPair":
        return cls(SymMatrix(np.eye(p)), SymMatrix(np.eye(d)), bounds)

    def logdet_r(self) -> float:
        return float(np.sum(np.log(self._row_eig.eigenvalues)))

    def logdet_c(self) -> float:
        return float(np.sum(np.log(self._col_eig.eigenvalues)))

    def to_prior(self) -> MatrixNormalPrior:
        """Invert both precisions into the covariance parametrization."""
        row = _from_spectrum(self._row_eig, 1.0 / self._row_eig.eigenvalues)
        col = _from_spectrum(self._col_eig, 1.0 / self._col_eig.eigenvalues)
        return MatrixNormalPrior(row, col)


def _from_spectrum(dec, new_vals: np.ndarray) -> SymMatrix:
    q = dec.eigenvectors
    return SymMatrix((q * new_vals) @ q.T)


def log_density(w, prior: MatrixNormalPrior) -> float:
    """Log density of the matrix-variate normal prior at W.

    Equals the multivariate normal log density of vec(W) under covariance
    S_c kron S_r (checked against that construction in the tests).
    """
    w = np.asarray(w, dtype=float)
    p, d = prior.p, prior.d
    if w.shape != (p, d):
        raise DimensionMismatch(f"W has shape {w.shape}, prior expects {(p, d)}")
    row_inv = _from_spectrum(prior._row_eig, 1.0 / prior._row_eig.eigenvalues)
    col_inv = _from_spectrum(prior._col_eig, 1.0 / prior._col_eig.eigenvalues)
    m = row_inv.entries @ w @ col_inv.entries
    trace_term = float(np.sum(m * w))
    logdet_r = float(np.sum(np.log(prior._row_eig.eigenvalues)))
    logdet_c = float(np.sum(np.log(prior._col_eig.eigenvalues)))
    return (
        -0.5 * trace_term
        - 0.5 * p * d * math.log(2.0 * math.pi)
        - 0.5 * d * logdet_r
        - 0.5 * p * logdet_c
    )


def sample(prior: MatrixNormalPrior, seed, size: int | None = None) -> np.ndarray:
    """Draw W = S_r^{1/2} Z S_c^{1/2} with Z i.i.d. standard normal.

    vec(W) then has covariance S_c kron S_r.  Deterministic given ``seed``
    (a PCG64 generator drives the draws).  ``size=None`` returns one (p, d)
    matrix; an integer returns a (size, p, d) stack from a single stream.
    """
    p, d = prior.p, prior.d
    sqrt_r = _from_spectrum(prior._row_eig, np.sqrt(prior._row_eig.eigenvalues))
    sqrt_c = _from_spectrum(prior._col_eig, np.sqrt(prior._col_eig.eigenvalues))
    rng = np.random.default_rng(seed)
    n = 1 if size is None else int(size)
    z = rng.standard_normal(size=(n, p, d))
    out = sqrt_r.entries @ z @ sqrt_c.entries
    return out[0] if size is None else out


def regularizer_value(w, precisions: PrecisionPair, lam: float) -> float:
    """Penalty lam * tr(O_r W O_c W.T) - lam * (d*logdet O_r + p*logdet O_c).

    The trace term equals the squared Frobenius norm of
    O_r^{1/2} W O_c^{1/2}, i.e. a Tikhonov penalty with structure matrix
    O_c^{1/2} kron O_r^{1/2}; it is evaluated without square roots.
    """
    w = np.asarray(w, dtype=float)
    p, d = precisions.p, precisions.d
    if w.shape != (p, d):
        raise DimensionMismatch(
            f"W has shape {w.shape}, precisions expect {(p, d)}"
        )
    trace_term = float(
        np.sum((precisions.omega_r.entries @ w @ precisions.omega_c.entries) * w)
    )
    logdets = d * precisions.logdet_r() + p * precisions.logdet_c()
    return lam * trace_term - lam * logdets


def regularizer_grad(w, precisions: PrecisionPair, lam: float) -> np.ndarray:
    """Gradient of the trace penalty with respect to W: 2*lam * O_r W O_c."""
    w = np.asarray(w, dtype=float)
    p, d = precisions.p, precisions.d
    if w.shape != (p, d):
        raise DimensionMismatch(
            f"W has shape {w.shape}, precisions expect {(p, d)}"
        )
    return (2.0 * lam) * (
        precisions.omega_r.entries @ w @ precisions.omega_c.entries
    )
