"""
Dense numerical primitives: row softmax, generalized symmetric eigenpairs, 2-D DFT amplitude.
"""
import numpy as np

from app.core.exceptions import (
    EigenSolverException,
    NonFiniteInputException,
    NumericsException,
)


SYMMETRY_TOLERANCE = 1e-9


def ensure_finite(array: np.ndarray, what: str = "input") -> None:
    """
    Reject arrays carrying NaN or Inf.

    Raises:
        NonFiniteInputException: If any entry is not finite
    """
    if not np.all(np.isfinite(array)):
        bad = np.argwhere(~np.isfinite(array))[0]
        raise NonFiniteInputException(
            f"Non-finite value in {what} at index {tuple(int(i) for i in bad)}"
        )


def softmax_kernel(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction; no validation."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """
    Row-wise softmax of a matrix (or a stack of matrices).

    Args:
        logits: Array whose last axis holds the row entries

    Returns:
        Array of the same shape whose rows are probability vectors

    Raises:
        NonFiniteInputException: If logits contain NaN or Inf
    """
    logits = np.asarray(logits)
    ensure_finite(logits, "softmax logits")
    return softmax_kernel(logits)


def generalized_eigen_pair(
    laplacian: np.ndarray,
    degree: np.ndarray
) -> tuple[tuple[float, np.ndarray], tuple[float, np.ndarray]]:
    """
    Two smallest eigenpairs of L y = lambda D y for symmetric L and positive diagonal D.

    The problem is symmetrized as D^-1/2 L D^-1/2 and solved densely in 64-bit;
    returned eigenvectors are D-orthonormal.

    Args:
        laplacian: Symmetric n x n matrix L
        degree: Diagonal n x n matrix D with strictly positive diagonal

    Returns:
        ((lambda0, y0), (lambda1, y1)) with lambda0 <= lambda1

    Raises:
        EigenSolverException: If L is not symmetric, D is not positive diagonal,
            or the dense solver fails
    """
    L = np.asarray(laplacian, dtype=np.float64)
    D = np.asarray(degree, dtype=np.float64)
    ensure_finite(L, "Laplacian")
    ensure_finite(D, "degree matrix")

    if L.ndim != 2 or L.shape[0] != L.shape[1] or D.shape != L.shape:
        raise EigenSolverException(
            f"Expected matching square matrices, got L {L.shape} and D {D.shape}"
        )
    if L.shape[0] < 2:
        raise EigenSolverException("Need at least 2 nodes for two eigenpairs")
    if np.max(np.abs(L - L.T)) > SYMMETRY_TOLERANCE:
        raise EigenSolverException("L is not symmetric within 1e-9")

    diag = np.diag(D)
    if np.any(np.abs(D - np.diag(diag)) > 0):
        raise EigenSolverException("D must be diagonal")
    if np.any(diag <= 0):
        bad = int(np.argmin(diag))
        raise EigenSolverException(
            f"D must have a strictly positive diagonal; entry {bad} is {diag[bad]}"
        )

    inv_sqrt = 1.0 / np.sqrt(diag)
    standard = inv_sqrt[:, None] * L * inv_sqrt[None, :]
    standard = 0.5 * (standard + standard.T)
    try:
        values, vectors = np.linalg.eigh(standard)
    except np.linalg.LinAlgError as e:
        raise EigenSolverException(f"Dense symmetric solve failed: {e}") from e

    y = inv_sqrt[:, None] * vectors[:, :2]
    return (float(values[0]), y[:, 0]), (float(values[1]), y[:, 1])


def dft2_amplitude(grid: np.ndarray) -> np.ndarray:
    """
    Channel-averaged 2-D DFT amplitude spectrum of an h x w x c grid.

    The complex coefficients are averaged over channels before taking the
    modulus, so the spectrum is that of the channel-mean map.

    Args:
        grid: Real array of shape (h, w, c) or (h, w)

    Returns:
        Array of shape (h, w) with unshifted amplitudes, DC at (0, 0)

    Raises:
        NumericsException: If the grid is empty or smaller than 2 x 2
    """
    values = np.asarray(grid, dtype=np.float64)
    if values.size == 0:
        raise NumericsException("Cannot transform an empty grid")
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise NumericsException(f"Expected an h x w x c grid, got shape {values.shape}")
    h, w, _ = values.shape
    if h < 2 or w < 2:
        raise NumericsException(f"Grid must be at least 2 x 2, got {h} x {w}")
    ensure_finite(values, "DFT grid")

    coefficients = np.fft.fft2(values, axes=(0, 1))
    return np.abs(coefficients.mean(axis=2))
