"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np


def sym(X: np.ndarray) -> np.ndarray:
    """Return (X + X^T) / 2. Plain transpose, also for complex input."""
    return 0.5 * (X + X.T)


def vec(X: np.ndarray) -> np.ndarray:
    """Stack the columns of X."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`vec` for square n x n matrices."""
    return np.asarray(v).reshape((n, n), order="F")


def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def numerical_rank(M: np.ndarray, rtol: float = 1e-8) -> int:
    """Rank counting singular values above ``rtol * sigma_max``."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def min_eig_sym(M: np.ndarray) -> float:
    return float(np.min(np.linalg.eigvalsh(sym(M))))


def hermitian_to_real(M: np.ndarray) -> np.ndarray:
    """Real 2p x 2p embedding [[Re, -Im], [Im, Re]] of a p x p Hermitian matrix.

    For h = a + jb, ``h^H M h == [a; b]^T E [a; b]``.
    """
    re, im = M.real, M.imag
    return np.block([[re, -im], [im, re]])


def real_to_complex_vector(v: np.ndarray) -> np.ndarray:
    p = v.shape[0] // 2
    return v[:p] + 1j * v[p:]


def top_generalized_eigvec(M: np.ndarray, N: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenpair of the symmetric-definite pencil (M, N).

    ``N`` must be symmetric positive definite. Ties resolve to the last
    column returned by ``scipy.linalg.eigh`` (ascending, deterministic).
    """
    from scipy.linalg import eigh

    w, V = eigh(sym(M), sym(N))
    return float(w[-1]), V[:, -1]
