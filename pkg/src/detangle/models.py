"""Hamiltonians and analytic reference quantities for the spin systems."""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .linalg import SIGMA, herm_eig, hermitize, pauli


@dataclass(frozen=True)
class TimParams:
    """Transverse Ising ring; energies in units of the field (B = 1 by default)."""

    L: int = 2
    B: float = 1.0
    J: float = 0.0

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("TIM ring needs L >= 2")
        if self.B < 0 or self.J < 0:
            raise ValueError("B and J must be non-negative")


@dataclass(frozen=True)
class PumpParams:
    """Parallel pumping of two spins at twice the Larmor frequency."""

    omega_L: float = 1.0
    omega_1: float = 2.0
    theta: float = 0.0  # demagnetization asymmetry

    @property
    def field(self) -> float:
        """Rotating-frame field, -omega_1 / 2."""
        return -self.omega_1 / 2

    @property
    def coupling(self) -> float:
        """Rotating-frame coupling, -omega_1 * theta / 4."""
        return -self.omega_1 * self.theta / 4

    @classmethod
    def from_ratio(cls, ratio: float, field_magnitude: float = 1.0, omega_L: float = 1.0) -> "PumpParams":
        """Parameters with |field| = ``field_magnitude`` and coupling/field = ``ratio``."""
        omega_1 = 2 * field_magnitude
        # coupling / field = theta / 2
        return cls(omega_L=omega_L, omega_1=omega_1, theta=2 * ratio)


def total_spin(axis: str, L: int) -> np.ndarray:
    return sum(pauli(l, axis, L) for l in range(1, L + 1))


def ring_bonds(L: int):
    """Nearest-neighbour bonds (l, l+1) with closure (L, 1); for L=2 the closure repeats (1, 2)."""
    return [(l, l % L + 1) for l in range(1, L + 1)]


def tim_hamiltonian(p: TimParams) -> np.ndarray:
    L = p.L
    H = -p.B * total_spin("z", L)
    for a, b in ring_bonds(L):
        H = H - p.J * (pauli(a, "x", L) @ pauli(b, "x", L))
    return hermitize(H)


def rwa_pump_hamiltonian(p: PumpParams) -> np.ndarray:
    B, J = p.field, p.coupling
    H = np.zeros((4, 4), dtype=complex)
    H[0, 0], H[3, 3] = -2 * B, 2 * B
    H[0, 3] = H[3, 0] = -2 * J
    return H


def lab_pump_hamiltonian(p: PumpParams, t: float) -> np.ndarray:
    omega_z = -p.omega_L + p.omega_1 * np.cos(2 * p.omega_L * t)
    sx, sy, sz = (total_spin(ax, 2) for ax in "xyz")
    H = omega_z * sz / 2 + p.omega_L * p.theta * (sy @ sy - sx @ sx) / 4
    return hermitize(H)


def mirror_operator(L: int) -> np.ndarray:
    """Product of sigma_z over all spins; maps sigma_x -> -sigma_x on every spin."""
    return reduce(np.kron, [SIGMA["z"]] * L)


def gibbs_state(H: np.ndarray, beta: float) -> np.ndarray:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    dec = herm_eig(H)
    w = np.exp(-beta * (dec.eigenvalues - dec.eigenvalues[0]))
    w /= w.sum()
    V = dec.eigenvectors
    return hermitize((V * w) @ V.conj().T)


def mfa_magnetization(ratio: float) -> tuple[float, ...]:
    """Mean-field magnetization for J/B = ``ratio``: (0,) below 2J/B = 1, else (+m, -m).

    At the threshold itself both branches coincide at 0.
    """
    if ratio < 0:
        raise ValueError("J/B must be non-negative")
    if 2 * ratio < 1:
        return (0.0,)
    m = float(np.sqrt(max(1.0 - (1.0 / (2 * ratio)) ** 2, 0.0)))
    return (m, -m)


def fix_phase(v: np.ndarray, tie_tol: float = 1e-9) -> np.ndarray:
    """Scale ``v`` so its first largest-magnitude component is real positive."""
    mags = np.abs(v)
    k = int(np.flatnonzero(mags >= mags.max() - tie_tol)[0])
    return v * (abs(v[k]) / v[k])


def energy_basis(H: np.ndarray, cluster_tol: float = 1e-9):
    """Eigenvalues and deterministic eigenvectors of ``H``.

    Inside a degenerate cluster the vectors are rebuilt by Gram-Schmidt on the
    computational basis vectors projected into the cluster, in index order.
    Each vector is then phase fixed.
    """
    dec = herm_eig(H)
    w, V = dec.eigenvalues, dec.eigenvectors.copy()
    n = len(w)
    i = 0
    while i < n:
        j = i + 1
        while j < n and w[j] - w[i] <= cluster_tol * max(1.0, abs(w[i])):
            j += 1
        if j - i > 1:
            P = V[:, i:j] @ V[:, i:j].conj().T
            basis: list[np.ndarray] = []
            for k in range(n):
                u = P[:, k].copy()
                for b in basis:
                    u -= (b.conj() @ u) * b
                nrm = np.linalg.norm(u)
                if nrm > 1e-8:
                    basis.append(u / nrm)
                if len(basis) == j - i:
                    break
            V[:, i:j] = np.column_stack(basis)
        i = j
    for k in range(n):
        V[:, k] = fix_phase(V[:, k])
    return w, V


def tim2_energies(B: float, J: float) -> np.ndarray:
    r = 2 * np.hypot(B, J)
    return np.array([-r, -2 * J, 2 * J, r])


def pure_class_state(s: float, phi: float, ratio: float, B: float = 1.0) -> np.ndarray:
    """Superposition of the two lowest TIM(L=2) levels at J/B = ``ratio``.

    Amplitudes are cos(s/2) and sin(s/2); the sign of the second one is kept
    so that s and -s are mirror images.
    """
    _, V = energy_basis(tim_hamiltonian(TimParams(2, B, ratio * B)))
    c1 = np.exp(0.5j * phi) * np.cos(s / 2)
    c2 = np.exp(-0.5j * phi) * np.sin(s / 2)
    return c1 * V[:, 0] + c2 * V[:, 1]


def analytic_sigma_x(s: float, ratio: float) -> float:
    """Total <sigma_x> on the pure class with phi = 0."""
    return 2.0 * (1.0 + np.exp(-2.0 * np.arcsinh(ratio))) ** -0.5 * np.sin(s)
