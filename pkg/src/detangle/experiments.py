"""Experiment drivers: TIM phase transition, landscape, five-spin ring, pumping.

Each driver returns plain result objects; ``detangle.io`` turns them into
CSV rows.  Sweep points run in a process pool and are gathered back in grid
order, so results never depend on completion order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import engine as E
from .disentangle import DEFAULT_VARIANT, PairTopology, tau_pair, tau_total
from .linalg import expect, kron
from .models import (
    PumpParams,
    TimParams,
    energy_basis,
    gibbs_state,
    mfa_magnetization,
    mirror_operator,
    pure_class_state,
    rwa_pump_hamiltonian,
    tim_hamiltonian,
    total_spin,
)

BRANCHES = ("symmetric", "plus", "minus")
SEED_S0 = np.pi / 4
DEPOLARIZE = 1e-2
# a steady state farther than this from its mirror image counts as symmetry broken
BASIN_SEPARATION = 1e-4

TIM_RATES = E.EvolutionParams(g_h=50, g_d=100, theta_t=10)
RING_RATES = E.EvolutionParams(g_h=5, g_d=100, theta_t=10)
PUMP_RATES = E.EvolutionParams(g_h=5, g_d=100, theta_t=10)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    seeds: tuple[str, ...] = BRANCHES

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", v)
        if not v:
            raise ValueError("sweep grid is empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep grid must be strictly increasing")
        bad = set(self.seeds) - set(BRANCHES)
        if bad:
            raise ValueError(f"unknown seed labels {sorted(bad)}")


@dataclass
class BranchRecord:
    value: float
    branch: str
    sigma_x: float
    tau_total: float
    energies: np.ndarray
    populations: np.ndarray
    classification: str
    period: float | None = None
    residual: float = 0.0
    final_state: np.ndarray | None = field(default=None, repr=False)
    stats: E.IntegratorStats | None = field(default=None, repr=False)


def populations(rho: np.ndarray, V: np.ndarray) -> np.ndarray:
    """p_n = <n|rho|n> in the columns of V."""
    p = np.einsum("in,ij,jn->n", V.conj(), rho, V).real
    return np.clip(p, 0.0, None)


def _pool_map(fn: Callable, tasks: Sequence, workers: int | None) -> list:
    workers = resolve_workers(workers)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


WORKERS_ENV = "DETANGLE_WORKERS"


def resolve_workers(workers: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, workers or 1)


# seeds


def symmetric_seed(H: np.ndarray, beta: float) -> np.ndarray:
    d = H.shape[0]
    return (1 - DEPOLARIZE) * gibbs_state(H, beta) + DEPOLARIZE * np.eye(d) / d


def tim_seed(branch: str, H: np.ndarray, ratio: float, B: float, beta: float) -> np.ndarray:
    if branch == "symmetric":
        return symmetric_seed(H, beta)
    psi = pure_class_state(SEED_S0 if branch == "plus" else -SEED_S0, 0.0, ratio, B)
    return np.outer(psi, psi.conj())


def spin_state(direction) -> np.ndarray:
    x, y, z = direction
    return 0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]], dtype=complex)


def pump_seed(branch: str, H: np.ndarray, beta: float) -> np.ndarray:
    """Symmetric: depolarized Gibbs state; plus/minus: both spins along +-x."""
    if branch == "symmetric":
        return symmetric_seed(H, beta)
    sgn = 1.0 if branch == "plus" else -1.0
    return kron(spin_state((sgn, 0, 0)), spin_state((sgn, 0, 0)))


# relaxation of one seed


@dataclass(frozen=True)
class _Task:
    value: float
    branch: str
    H: np.ndarray
    rho0: np.ndarray
    params: E.EvolutionParams
    variant: str
    t_end: float
    window: float | None
    record_every: float | None
    stop_when_steady: bool


def _relax(task: _Task) -> BranchRecord:
    topo = PairTopology.ring(2)
    params = task.params
    try:
        tr = E.integrate(
            task.rho0, task.H, params, task.t_end, topology=topo, variant=task.variant,
            record_every=task.record_every, stop_when_steady=task.stop_when_steady,
        )
    except E.IntegrationError:
        return BranchRecord(task.value, task.branch, np.nan, np.nan, np.full(4, np.nan), np.full(4, np.nan), "undecided")
    res = E.classify_asymptotics(tr, params, window=task.window)
    rho = tr.final_state
    w, V = energy_basis(task.H)
    return BranchRecord(
        value=task.value,
        branch=task.branch,
        sigma_x=float(tr.sigma_x[-1]),
        tau_total=tau_total(rho, topo, task.variant),
        energies=w,
        populations=populations(rho, V),
        classification=res.kind,
        period=res.period,
        residual=res.residual,
        final_state=rho,
        stats=tr.stats,
    )


# TIM phase transition


@dataclass
class TimPtResult:
    records: list[BranchRecord]
    onset: float | None
    params: E.EvolutionParams

    def branch(self, label: str) -> list[BranchRecord]:
        return [r for r in self.records if r.branch == label]


def run_tim_pt(
    sweep: SweepSpec,
    params: E.EvolutionParams = TIM_RATES,
    B: float = 1.0,
    variant: str = DEFAULT_VARIANT,
    t_end: float = 5.0,
    workers: int | None = None,
) -> TimPtResult:
    """Relax the three seeds at every J/B of ``sweep``.

    The onset is the smallest J/B whose broken seeds settle on states that
    are not mirror symmetric; None when no sweep point does.
    """
    tasks = []
    for ratio in sweep.values:
        H = tim_hamiltonian(TimParams(2, B, ratio * B))
        for branch in sweep.seeds:
            rho0 = tim_seed(branch, H, ratio, B, params.beta)
            tasks.append(_Task(ratio, branch, H, rho0, params, variant, t_end, None, None, True))
    records = _pool_map(_relax, tasks, workers)
    return TimPtResult(records, _onset(records, sweep), params)


def _onset(records: list[BranchRecord], sweep: SweepSpec) -> float | None:
    """Smallest value whose broken seeds settle on states that are not mirror symmetric."""
    M = mirror_operator(2)
    by_key = {(r.value, r.branch): r for r in records}
    for v in sweep.values:
        broken = [by_key.get((v, b)) for b in ("plus", "minus")]
        if any(b is None or b.final_state is None for b in broken):
            continue
        if all(np.max(np.abs(b.final_state - M @ b.final_state @ M)) > BASIN_SEPARATION for b in broken):
            return v
    return None


def mfa_overlay(values: Sequence[float]) -> list[tuple[float, float, float]]:
    """(J/B, m_plus, m_minus) of the mean-field magnetization; both 0 below threshold."""
    rows = []
    for v in values:
        m = mfa_magnetization(v)
        rows.append((float(v), m[0], m[-1]))
    return rows


# effective free-energy landscape


@dataclass
class LandscapeResult:
    J_over_B: float
    ratios: np.ndarray
    s: np.ndarray
    u_eff: np.ndarray  # (len(ratios), len(s))
    minima: np.ndarray  # local-minimum count per ratio
    critical_ratio: float | None
    status: str  # ok | out-of-range


def _class_terms(s: np.ndarray, J_over_B: float, B: float, beta: float, variant: str, full: bool):
    H = tim_hamiltonian(TimParams(2, B, J_over_B * B))
    energy = np.empty(len(s))
    tau = np.empty(len(s))
    for i, si in enumerate(s):
        psi = pure_class_state(si, 0.0, J_over_B, B)
        rho = np.outer(psi, psi.conj())
        energy[i] = (psi.conj() @ H @ psi).real
        if full:
            # entropy part of <U_H>; zero up to roundoff on pure states
            w = np.clip(np.linalg.eigvalsh(rho), 0, None)
            energy[i] += float(np.sum(w[w > 0] * np.log(w[w > 0]))) / beta
        tau[i] = tau_pair(rho, (1, 2), variant)
    return energy, tau


def u_eff(s, ratio: float, J_over_B: float, B: float = 1.0, beta: float = 10.0,
          variant: str = DEFAULT_VARIANT, full_free_energy: bool = False) -> np.ndarray:
    """<H> + beta^-1 (gamma_D/gamma_H) tau on psi(s, 0).

    ``ratio`` is gamma_D / (2 gamma_H B beta), so the tau weight is 2 B ratio.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    energy, tau = _class_terms(s, J_over_B, B, beta, variant, full_free_energy)
    return energy + 2 * B * ratio * tau


def count_minima(u: np.ndarray) -> int:
    """Strict local minima of a periodic sampled curve."""
    return int(np.sum((u < np.roll(u, 1)) & (u < np.roll(u, -1))))


def curvature_at_origin(ratio: float, J_over_B: float, B: float = 1.0, variant: str = DEFAULT_VARIANT,
                        h: float = 1e-3) -> float:
    u = u_eff([-h, 0.0, h], ratio, J_over_B, B, variant=variant)
    return float((u[0] - 2 * u[1] + u[2]) / h**2)


def critical_ratio(lo: float, hi: float, J_over_B: float, B: float = 1.0, variant: str = DEFAULT_VARIANT,
                   xtol: float = 1e-10) -> float | None:
    """Bisection on the sign change of the curvature of U_eff at s = 0."""
    c_lo = curvature_at_origin(lo, J_over_B, B, variant)
    c_hi = curvature_at_origin(hi, J_over_B, B, variant)
    if c_lo == 0:
        return lo
    if np.sign(c_lo) == np.sign(c_hi):
        return None
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        c = curvature_at_origin(mid, J_over_B, B, variant)
        if np.sign(c) == np.sign(c_lo):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def run_landscape(
    J_over_B: float,
    ratios: Sequence[float],
    n_s: int = 721,
    B: float = 1.0,
    beta: float = 10.0,
    variant: str = DEFAULT_VARIANT,
    full_free_energy: bool = False,
) -> LandscapeResult:
    """U_eff on a periodic s grid, symmetric about 0, for every ratio."""
    ratios = np.asarray(ratios, dtype=float)
    m = max(n_s // 2, 2)
    k = np.arange(-m, m)  # periodic grid on [-pi, pi), contains 0
    step = np.pi / m
    s = step * k
    # evaluate on |s| only so U(s) = U(-s) holds bit for bit
    e_half, t_half = _class_terms(step * np.arange(m + 1), J_over_B, B, beta, variant, full_free_energy)
    energy, tau = e_half[np.abs(k)], t_half[np.abs(k)]
    u = energy[None, :] + 2 * B * ratios[:, None] * tau[None, :]
    minima = np.array([count_minima(row) for row in u])
    crit = critical_ratio(ratios[0], ratios[-1], J_over_B, B, variant) if len(ratios) > 1 else None
    return LandscapeResult(J_over_B, ratios, s, u, minima, crit, "ok" if crit is not None else "out-of-range")


# Figs. 3-4: five-spin ring


@dataclass
class Ring5Result:
    trajectory: E.Trajectory
    mirrored: E.Trajectory | None
    classification: E.SteadyStateResult
    nn_pairs: tuple
    snn_pairs: tuple
    tau_nn: float
    tau_snn: float

    @property
    def ratio(self) -> float:
        return self.tau_nn / self.tau_snn if self.tau_snn > 0 else np.inf


def ring_initial_state(L: int = 5) -> np.ndarray:
    """Spin l along (cos 2pi(l-1)/L, sin 2pi(l-1)/L, 0)."""
    spins = [spin_state((np.cos(2 * np.pi * l / L), np.sin(2 * np.pi * l / L), 0.0)) for l in range(L)]
    return kron(*reversed(spins))  # spin 1 is the least significant factor


def _ring_run(args) -> E.Trajectory:
    rho0, H, params, t_end, variant, record_every = args
    L = 5
    nn, snn = PairTopology.ring(L), PairTopology.neighbours(L, 2)
    return E.integrate(
        rho0, H, params, t_end, topology=nn, variant=variant, record_every=record_every,
        observe_pairs=nn.pairs + snn.pairs, stop_when_steady=True,
    )


def run_ring5(
    params: E.EvolutionParams = RING_RATES,
    J_over_B: float = 2.0,
    B: float = 1.0,
    t_end: float = 20.0,
    record_every: float = 0.02,
    variant: str = DEFAULT_VARIANT,
    mirrored: bool = True,
    workers: int | None = None,
) -> Ring5Result:
    L = 5
    H = tim_hamiltonian(TimParams(L, B, J_over_B * B))
    rho0 = ring_initial_state(L)
    M = mirror_operator(L)
    jobs = [(rho0, H, params, t_end, variant, record_every)]
    if mirrored:
        jobs.append((M @ rho0 @ M, H, params, t_end, variant, record_every))
    trajs = _pool_map(_ring_run, jobs, workers)
    tr = trajs[0]
    nn, snn = PairTopology.ring(L), PairTopology.neighbours(L, 2)
    res = E.classify_asymptotics(tr, params)
    last = tr.tau[-1]
    n = len(nn)
    return Ring5Result(
        trajectory=tr,
        mirrored=trajs[1] if mirrored else None,
        classification=res,
        nn_pairs=nn.pairs,
        snn_pairs=snn.pairs,
        tau_nn=float(np.mean(last[:n])),
        tau_snn=float(np.mean(last[n:])),
    )


# parallel pumping


@dataclass
class PumpResult:
    records: list[BranchRecord]
    params: E.EvolutionParams
    featured: E.Trajectory | None = None
    featured_result: E.SteadyStateResult | None = None


def pump_trajectory(
    ratio: float,
    params: E.EvolutionParams = PUMP_RATES,
    t_end: float = 20.0,
    record_every: float = 0.01,
    branch: str = "plus",
    variant: str = DEFAULT_VARIANT,
) -> E.Trajectory:
    """Full trajectory at one coupling ratio, for Bloch-sphere plots and cycle checks."""
    H = rwa_pump_hamiltonian(PumpParams.from_ratio(ratio))
    return E.integrate(
        pump_seed(branch, H, params.beta), H, params, t_end, topology=PairTopology.ring(2),
        variant=variant, record_every=record_every,
    )


def run_parallel_pump(
    sweep: SweepSpec,
    params: E.EvolutionParams = PUMP_RATES,
    variant: str = DEFAULT_VARIANT,
    t_end: float = 20.0,
    record_every: float = 0.01,
    window: float = 5.0,
    featured: float | None = None,
    workers: int | None = None,
) -> PumpResult:
    """Relax the seeds at every coupling ratio and classify the asymptotics.

    Runs go to ``t_end`` without early stopping so that a cycle can show
    itself in the trailing ``window``.
    """
    tasks = []
    for ratio in sweep.values:
        H = rwa_pump_hamiltonian(PumpParams.from_ratio(ratio))
        for branch in sweep.seeds:
            rho0 = pump_seed(branch, H, params.beta)
            tasks.append(_Task(ratio, branch, H, rho0, params, variant, t_end, window, record_every, False))
    records = _pool_map(_relax, tasks, workers)
    out = PumpResult(records, params)
    if featured is not None:
        out.featured = pump_trajectory(featured, params, t_end, record_every, variant=variant)
        out.featured_result = E.classify_asymptotics(out.featured, params, window=window)
    return out


def spin_expectations(rho: np.ndarray, L: int) -> dict[str, float]:
    return {a: expect(total_spin(a, L), rho) for a in "xyz"}
