"""Closed-form solvers on the bounded-spectrum cone.

The constraint set is C = {symmetric A : u*I <= A <= v*I} with 0 < u <= v
and u*v = 1.  Everything here reduces to one symmetric eigendecomposition
followed by elementwise clamping of the spectrum: Euclidean projection onto
C clamps the eigenvalues themselves, and the precision subproblem

    minimize  tr(omega @ delta) - m * log det(omega)   over omega in C

is solved exactly by clamping m / r_i, where r_i are the eigenvalues of the
(PSD) data matrix delta.

The eigensolver is a self-contained cyclic Jacobi scheme: dimensions in this
package are at most a few hundred, and a deterministic, high-accuracy solver
matters more here than peak speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, NotPD, NotPSD

__all__ = [
    "SymMatrix",
    "SpectralBounds",
    "EigenDecomposition",
    "threshold",
    "eigh",
    "project_to_cone",
    "inv_threshold",
    "subproblem_objective",
]

# Symmetry deviation tolerated by SymMatrix before symmetrization.
SYMMETRY_ATOL = 1e-10


class SymMatrix:
    """A dense real symmetric matrix.

    Construction symmetrizes the input, ``A <- (A + A.T) / 2``, and rejects
    non-square or non-finite input.  ``entries`` is a defensive copy; treat
    it as read-only.
    """

    __slots__ = ("entries",)

    def __init__(self, entries):
        a = np.asarray(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("matrix entries must be finite")
        self.entries = (a + a.T) / 2.0

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def wrap(cls, a) -> "SymMatrix":
        """Pass through SymMatrix instances, symmetrize raw arrays."""
        return a if isinstance(a, cls) else cls(a)

    def __repr__(self) -> str:
        return f"SymMatrix(dim={self.dim})"


@dataclass(frozen=True)
class SpectralBounds:
    """Eigenvalue bounds (u, v) with 0 < u <= v and u*v = 1.

    Prefer :meth:`from_v`, which derives ``u = 1/v`` from a single parameter
    ``v >= 1``.
    """

    u: float
    v: float

    def __post_init__(self):
        if not (0.0 < self.u <= self.v):
            raise ValueError(f"need 0 < u <= v, got u={self.u}, v={self.v}")
        if abs(self.u * self.v - 1.0) > 1e-12:
            raise ValueError(f"need u*v = 1, got u*v = {self.u * self.v!r}")

    @classmethod
    def from_v(cls, v: float) -> "SpectralBounds":
        if v < 1.0:
            raise ValueError(f"need v >= 1, got {v}")
        return cls(1.0 / v, float(v))


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectrum of a symmetric matrix: A = Q diag(eigenvalues) Q.T.

    ``eigenvalues`` is sorted in descending order and ``eigenvectors`` holds
    the matching orthonormal columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def threshold(x: float, bounds: SpectralBounds) -> float:
    """Clamp ``x`` into [u, v]; +inf maps to v."""
    return max(bounds.u, min(bounds.v, x))


def _jacobi_rotate(a: np.ndarray, q: np.ndarray, p: int, r: int) -> None:
    """Zero a[p, r] (p < r) with a two-sided Givens rotation, in place.

    ``a`` stays symmetric; ``q`` accumulates the rotations so that the
    original matrix equals q @ a @ q.T throughout.
    """
    apq = a[p, r]
    app = a[p, p]
    aqq = a[r, r]
    tau = (aqq - app) / (2.0 * apq)
    # Smaller-angle root of t^2 + 2*tau*t - 1 = 0; stable for large |tau|.
    if tau >= 0.0:
        t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
    else:
        t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
    c = 1.0 / math.sqrt(1.0 + t * t)
    s = t * c

    row_p = a[p, :].copy()
    row_r = a[r, :].copy()
    a[p, :] = c * row_p - s * row_r
    a[r, :] = s * row_p + c * row_r
    col_p = a[:, p].copy()
    col_r = a[:, r].copy()
    a[:, p] = c * col_p - s * col_r
    a[:, r] = s * col_p + c * col_r
    # Exact values on the 2x2 block kill roundoff drift.
    a[p, p] = app - t * apq
    a[r, r] = aqq + t * apq
    a[p, r] = 0.0
    a[r, p] = 0.0

    qp = q[:, p].copy()
    qr = q[:, r].copy()
    q[:, p] = c * qp - s * qr
    q[:, r] = s * qp + c * qr


def eigh(a) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Sweeps run until every off-diagonal magnitude drops below
    ``1e-12 * ||A||_F``; the Frobenius norm is rotation-invariant, so the
    bound is fixed up front.  Deterministic up to the sign of eigenvector
    columns.

    Raises ConvergenceFailure if the sweep cap (100 * dim**2) is exceeded,
    which for Jacobi iteration would indicate corrupted input rather than
    slow convergence.
    """
    sym = SymMatrix.wrap(a)
    n = sym.dim
    work = sym.entries.copy()
    q = np.eye(n)
    if n == 1:
        return EigenDecomposition(work.diagonal().copy(), q)

    fro = math.sqrt(float(np.sum(work * work)))
    tol = 1e-12 * fro
    if fro > 0.0:
        upper = ~np.tri(n, dtype=bool)
        max_sweeps = 100 * n * n
        for _ in range(max_sweeps):
            if np.max(np.abs(work[upper])) <= tol:
                break
            for p in range(n - 1):
                for r in range(p + 1, n):
                    if abs(work[p, r]) > tol:
                        _jacobi_rotate(work, q, p, r)
        else:
            raise ConvergenceFailure(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps"
            )

    vals = work.diagonal().copy()
    order = np.argsort(-vals, kind="stable")
    return EigenDecomposition(vals[order], np.ascontiguousarray(q[:, order]))


def project_to_cone(a, bounds: SpectralBounds) -> SymMatrix:
    """Euclidean (Frobenius) projection of a symmetric matrix onto C.

    Decompose A = Q diag(lam) Q.T and clamp the eigenvalues into [u, v]; the
    result is the unique nearest member of C.  Idempotent.
    """
    dec = eigh(a)
    clamped = np.clip(dec.eigenvalues, bounds.u, bounds.v)
    return _assemble(dec.eigenvectors, clamped)


def inv_threshold(delta, m: int, bounds: SpectralBounds) -> SymMatrix:
    """Exact minimizer of tr(omega @ delta) - m*log det(omega) over C.

    ``delta`` must be symmetric PSD (eigenvalues slightly below zero, down
    to -1e-6 * ||delta||_2, are treated as numerical noise and clamped).
    With delta = Q diag(r) Q.T the minimizer is Q diag(clamp(m / r)) Q.T,
    where m / 0 = +inf clamps to v: zero eigenvalues of a rank-deficient
    delta put no data constraint on that direction, so the precision takes
    its largest admissible value.
    """
    if m <= 0:
        raise ValueError(f"m must be a positive integer, got {m}")
    dec = eigh(delta)
    r = dec.eigenvalues
    spec_norm = max(abs(r[0]), abs(r[-1]))
    if r[-1] < -1e-6 * spec_norm:
        raise NotPSD(
            f"matrix has eigenvalue {r[-1]:.3e} below -1e-6 * ||delta||_2"
        )
    r = np.maximum(r, 0.0)
    inverted = np.full_like(r, np.inf)
    positive = r > 0.0
    inverted[positive] = m / r[positive]
    clamped = np.clip(inverted, bounds.u, bounds.v)
    return _assemble(dec.eigenvectors, clamped)


def subproblem_objective(omega, delta, m: int) -> float:
    """Value of tr(omega @ delta) - m * log det(omega).

    The log-determinant is the sum of log eigenvalues; raises NotPD when
    ``omega`` has an eigenvalue <= 0.
    """
    om = SymMatrix.wrap(omega)
    de = SymMatrix.wrap(delta)
    vals = eigh(om).eigenvalues
    if vals[-1] <= 0.0:
        raise NotPD(f"omega has non-positive eigenvalue {vals[-1]:.3e}")
    trace_term = float(np.sum(om.entries * de.entries))
    return trace_term - m * float(np.sum(np.log(vals)))


def _assemble(q: np.ndarray, spectrum: np.ndarray) -> SymMatrix:
    """Rebuild Q diag(spectrum) Q.T as a SymMatrix.

    A uniform spectrum t is returned as exactly t*I: mathematically
    Q (t I) Q.T = t I, and skipping the product avoids roundoff (and keeps
    the u = v = 1 case bit-exact identity).
    """
    if spectrum.size and spectrum[0] == spectrum[-1]:
        return SymMatrix(spectrum[0] * np.eye(q.shape[0]))
    return SymMatrix((q * spectrum) @ q.T)
