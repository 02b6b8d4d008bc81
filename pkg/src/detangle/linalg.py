"""Dense Hermitian linear algebra for few-spin systems (dimension <= 64).

Basis convention: spin 1 is the least significant qubit, so a multi-spin
operator is ``kron(op_L, ..., op_2, op_1)``.  With ``sigma_z = diag(1, -1)``
this reproduces the two-spin TIM matrix bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

HERMITIAN_TOL = 1e-10
DEFAULT_EPS = 1e-12

SIGMA = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
I2 = np.eye(2, dtype=complex)


class NotHermitianError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class NegativeEigenvalueError(ValueError):
    """A density matrix has an eigenvalue below the allowed negative floor."""

    def __init__(self, min_eig: float, tol: float):
        super().__init__(f"eigenvalue {min_eig:.3e} below -{tol:.1e}")
        self.min_eig = min_eig
        self.tol = tol


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # real, ascending
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T


def hermitize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.conj().T)


def is_hermitian(A: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return A.shape[0] == A.shape[1] and np.max(np.abs(A - A.conj().T), initial=0.0) <= tol


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def expect(op: np.ndarray, rho: np.ndarray) -> float:
    """Real part of Tr(op rho)."""
    # sum_ij op_ij rho_ji without forming the product
    return float(np.einsum("ij,ji->", op, rho).real)


def kron(*mats: np.ndarray) -> np.ndarray:
    """Kronecker product of square matrices, left factor most significant."""
    for m in mats:
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("kron expects square matrices")
    return reduce(kron2, mats)


def kron2(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Two-factor Kronecker product without np.kron's dispatch overhead."""
    m, n = A.shape[0], B.shape[0]
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(m * n, m * n)


def n_spins(dim: int) -> int:
    L = int(dim).bit_length() - 1
    if dim < 1 or 2**L != dim:
        raise ValueError(f"dimension {dim} is not a power of 2")
    return L


def _check_spin(l: int, L: int) -> None:
    if not 1 <= l <= L:
        raise IndexError(f"spin index {l} outside 1..{L}")


def pauli(l: int, axis: str, L: int) -> np.ndarray:
    """sigma_axis acting on spin ``l`` of ``L`` (1-based, spin 1 least significant)."""
    _check_spin(l, L)
    return _pauli_cached(l, axis, L).copy()


@lru_cache(maxsize=None)
def _pauli_cached(l: int, axis: str, L: int) -> np.ndarray:
    if axis not in SIGMA:
        raise ValueError(f"unknown axis {axis!r}")
    factors = [SIGMA[axis] if k == l else I2 for k in range(L, 0, -1)]
    out = kron(*factors)
    out.setflags(write=False)
    return out


def _axis_of(l: int, L: int) -> int:
    # spin l lives on tensor axis L - l (most significant first)
    return L - l


def partial_trace(rho: np.ndarray, keep, L: int | None = None) -> np.ndarray:
    """Reduced matrix on the spins in ``keep`` (ascending, 1-based).

    The result uses the same ordering convention: the lowest kept spin is the
    least significant qubit of the output.
    """
    if L is None:
        L = n_spins(rho.shape[0])
    keep = tuple(keep)
    if not keep or any(b <= a for a, b in zip(keep, keep[1:])):
        raise ValueError(f"keep must be nonempty and strictly ascending, got {keep}")
    for l in keep:
        _check_spin(l, L)
    if len(keep) == L:
        return rho.copy()
    t = rho.reshape((2,) * (2 * L))
    kept_axes = sorted(_axis_of(l, L) for l in keep)
    traced = [ax for ax in range(L) if ax not in kept_axes]
    # move traced row/col axes to the end, then trace them out pairwise
    rows = kept_axes + traced
    cols = [L + ax for ax in kept_axes] + [L + ax for ax in traced]
    t = t.transpose(rows + cols)
    dk, dt = 2 ** len(keep), 2 ** len(traced)
    t = t.reshape(dk, dt, dk, dt)
    return np.einsum("ajbj->ab", t)


def embed_pair(M: np.ndarray, pair, L: int) -> np.ndarray:
    """Lift a 4x4 operator on spins ``pair=(a, b)`` to the full 2**L space.

    ``M`` is written in the pair's own basis with the lower-numbered spin as
    the least significant qubit.  This is the adjoint of ``partial_trace``:
    ``Tr(embed_pair(M) rho) == Tr(M partial_trace(rho, (a, b)))``.
    """
    a, b = pair
    if a == b:
        raise ValueError("pair needs two distinct spins")
    _check_spin(a, L)
    _check_spin(b, L)
    if M.shape != (4, 4):
        raise ValueError("pair operator must be 4x4")
    if a > b:
        # reorder M's tensor legs so the lower spin is least significant
        M = M.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)
        a, b = b, a
    if L == 2:
        return np.array(M, dtype=complex)
    perm, inv = _pair_permutation(a, b, L)
    rest = 2 ** (L - 2)
    full = np.kron(np.eye(rest), M)  # pair occupies the two least significant axes
    t = full.reshape((2,) * (2 * L)).transpose(inv + [L + ax for ax in inv])
    return t.reshape(2**L, 2**L)


@lru_cache(maxsize=None)
def _pair_permutation(a: int, b: int, L: int):
    # axis order placing the other spins first, then b, then a
    others = [_axis_of(l, L) for l in range(L, 0, -1) if l not in (a, b)]
    perm = others + [_axis_of(b, L), _axis_of(a, L)]
    inv = [0] * L
    for new, old in enumerate(perm):
        inv[old] = new
    return perm, inv


def herm_eig(A: np.ndarray, method: str = "lapack", tol: float = HERMITIAN_TOL) -> SpectralDecomposition:
    """Eigendecomposition of a Hermitian matrix with ascending eigenvalues.

    ``method="jacobi"`` runs the cyclic Jacobi solver below; the default calls
    LAPACK, which is what the integrator uses on its hot path.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    if not is_hermitian(A, tol * max(1.0, np.max(np.abs(A), initial=0.0))):
        raise NotHermitianError("matrix is not Hermitian")
    if method == "jacobi":
        w, V = jacobi_eigh(A)
    elif method == "lapack":
        w, V = np.linalg.eigh(hermitize(A))
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpectralDecomposition(w, V)


def jacobi_eigh(A: np.ndarray, max_sweeps: int = 100, offdiag_tol: float = 1e-13):
    """Cyclic Jacobi eigensolver for complex Hermitian matrices.

    Each rotation first removes the phase of ``A[p, q]`` and then applies the
    real symmetric 2x2 rotation.  Stops once the off-diagonal Frobenius norm
    falls below ``offdiag_tol * ||A||_F``.
    """
    a = hermitize(np.array(A, dtype=complex))
    n = a.shape[0]
    V = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= offdiag_tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                b = abs(apq)
                if b <= 1e-300:
                    continue
                phase = apq / b
                theta = (a[q, q].real - a[p, p].real) / (2.0 * b)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                J = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ J
                a[idx, :] = J.conj().T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                V[:, idx] = V[:, idx] @ J
    else:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).real
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def apply_spectral(A: np.ndarray, fn) -> np.ndarray:
    """``fn`` applied to the eigenvalues of a Hermitian matrix."""
    w, V = np.linalg.eigh(hermitize(A))
    return hermitize((V * fn(w)) @ V.conj().T)


def matrix_log_floored(rho: np.ndarray, eps: float = DEFAULT_EPS, neg_tol: float | None = None) -> np.ndarray:
    """log(rho) with eigenvalues floored at ``eps``.

    Raises NegativeEigenvalueError when an eigenvalue lies below ``-neg_tol``
    (default ``eps``).
    """
    w, V = np.linalg.eigh(hermitize(rho))
    tol = eps if neg_tol is None else neg_tol
    if w[0] < -tol:
        raise NegativeEigenvalueError(float(w[0]), tol)
    logw = np.log(np.maximum(w, eps))
    return hermitize((V * logw) @ V.conj().T)


def is_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> bool:
    if not is_hermitian(rho, tol):
        return False
    if abs(np.trace(rho).real - 1.0) > tol:
        return False
    return np.linalg.eigvalsh(hermitize(rho))[0] >= -tol


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-ensemble density matrix of the given rank (full rank by default)."""
    k = dim if rank is None else rank
    X = rng.normal(size=(dim, k)) + 1j * rng.normal(size=(dim, k))
    rho = X @ X.conj().T
    return hermitize(rho / np.trace(rho).real)


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * hermitize(X)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    Q, R = np.linalg.qr(X)
    d = np.diag(R)
    return Q * (d / np.abs(d))
