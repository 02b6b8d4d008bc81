"""Pairwise disentanglement operator and the entanglement quantifier tau.

Every kernel is a 4x4 Hermitian operator built from the correlation part
``Delta = rho_ab - rho_a (x) rho_b`` of a pair marginal, lifted to the full
space with ``embed_pair``.  All of them vanish on product states and are
covariant under local unitaries.

``gradient``
    The functional derivative of ``Tr(Delta**2)`` with respect to the pair
    marginal, shifted by a multiple of the identity so that
    ``Tr(rho_ab K) = Tr(Delta**2)``.  With this kernel the disentangling term
    is a descent flow of tau, which is what makes the effective-free-energy
    picture carry over to the dynamics.
``quadratic``
    ``Delta**2`` used directly as the operator.
``linear``
    ``Delta``; tau is not sign definite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .linalg import embed_pair, hermitize, kron2, partial_trace

VARIANTS = ("gradient", "quadratic", "linear")
DEFAULT_VARIANT = "gradient"
_I2 = np.eye(2)


@dataclass(frozen=True)
class PairTopology:
    L: int
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for a, b in self.pairs:
            if not (1 <= a < b <= self.L):
                raise ValueError(f"invalid pair {(a, b)} for L={self.L}")

    @classmethod
    def ring(cls, L: int) -> "PairTopology":
        """Nearest-neighbour ring pairs; the single pair (1, 2) for L = 2."""
        return cls.neighbours(L, 1)

    @classmethod
    def neighbours(cls, L: int, distance: int) -> "PairTopology":
        pairs = {tuple(sorted((l, (l - 1 + distance) % L + 1))) for l in range(1, L + 1)}
        return cls(L, tuple(sorted(p for p in pairs if p[0] != p[1])))

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown quantifier variant {variant!r}; choose from {VARIANTS}")


class _Marginals:
    """Per-evaluation cache of single-spin and pair marginals."""

    def __init__(self, rho: np.ndarray, L: int):
        self.rho = rho
        self.L = L
        self._single: dict[int, np.ndarray] = {}
        self._pair: dict[tuple[int, int], np.ndarray] = {}

    def single(self, l: int) -> np.ndarray:
        if l not in self._single:
            self._single[l] = partial_trace(self.rho, (l,), self.L)
        return self._single[l]

    def pair(self, a: int, b: int) -> np.ndarray:
        if (a, b) not in self._pair:
            self._pair[(a, b)] = partial_trace(self.rho, (a, b), self.L)
        return self._pair[(a, b)]


def _ordered(pair) -> tuple[int, int]:
    a, b = pair
    if a == b:
        raise ValueError("pair needs two distinct spins")
    return (a, b) if a < b else (b, a)


def _delta(m: _Marginals, a: int, b: int) -> np.ndarray:
    # lower spin a is the least significant factor
    return m.pair(a, b) - kron2(m.single(b), m.single(a))


def pair_delta(rho: np.ndarray, pair, L: int | None = None) -> np.ndarray:
    """Correlation part ``rho_ab - rho_a (x) rho_b`` of the pair marginal."""
    L = L or int(np.log2(rho.shape[0]))
    a, b = _ordered(pair)
    return _delta(_Marginals(rho, L), a, b)


def _kernel(m: _Marginals, a: int, b: int, variant: str) -> np.ndarray:
    D = _delta(m, a, b)
    if variant == "linear":
        return D
    if variant == "quadratic":
        return D @ D
    # gradient: d Tr(D^2) / d rho_ab = 2 (D - G_a (x) 1 - 1 (x) G_b)
    rho_a, rho_b = m.single(a), m.single(b)
    Dt = D.reshape(2, 2, 2, 2)  # (b, a, b', a')
    G_a = np.einsum("iajb,ji->ab", Dt, rho_b)
    G_b = np.einsum("aibj,ji->ab", Dt, rho_a)
    K = 2.0 * (D - kron2(_I2, G_a) - kron2(G_b, _I2))
    f = np.einsum("ij,ji->", D, D).real
    shift = f - np.einsum("ij,ji->", m.pair(a, b), K).real
    return hermitize(K + shift * np.eye(4))


def pair_kernel(rho: np.ndarray, pair, variant: str = DEFAULT_VARIANT, L: int | None = None) -> np.ndarray:
    """4x4 kernel of the disentanglement operator for one pair, in the pair basis."""
    _check_variant(variant)
    L = L or int(np.log2(rho.shape[0]))
    a, b = _ordered(pair)
    return _kernel(_Marginals(rho, L), a, b, variant)


def q_disentangle(rho: np.ndarray, topology: PairTopology, variant: str = DEFAULT_VARIANT) -> np.ndarray:
    """Sum over pairs of the embedded kernels."""
    _check_variant(variant)
    L = topology.L
    m = _Marginals(rho, L)
    Q = np.zeros_like(rho, dtype=complex)
    for a, b in topology:
        Q += embed_pair(_kernel(m, a, b, variant), (a, b), L)
    return hermitize(Q)


def tau_pair(rho: np.ndarray, pair, variant: str = DEFAULT_VARIANT, L: int | None = None) -> float:
    """<Q> restricted to one pair, evaluated on the pair marginal."""
    _check_variant(variant)
    L = L or int(np.log2(rho.shape[0]))
    a, b = _ordered(pair)
    m = _Marginals(rho, L)
    return float(np.einsum("ij,ji->", m.pair(a, b), _kernel(m, a, b, variant)).real)


def tau_pairs(rho: np.ndarray, pairs: Iterable, variant: str = DEFAULT_VARIANT, L: int | None = None) -> np.ndarray:
    """tau for several pairs, sharing marginals."""
    _check_variant(variant)
    L = L or int(np.log2(rho.shape[0]))
    m = _Marginals(rho, L)
    out = []
    for pair in pairs:
        a, b = _ordered(pair)
        out.append(np.einsum("ij,ji->", m.pair(a, b), _kernel(m, a, b, variant)).real)
    return np.array(out, dtype=float)


def tau_total(rho: np.ndarray, topology: PairTopology, variant: str = DEFAULT_VARIANT) -> float:
    return float(tau_pairs(rho, topology.pairs, variant, topology.L).sum())
