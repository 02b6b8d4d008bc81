"""Nonlinear master equation: generator assembly, integration, classification.

Units: hbar = 1 and the field scale is 1, so the dimensionless rate groups
map to internal rates as ``gamma_H = g_h``, ``beta = theta_t`` and
``gamma_D = g_d * theta_t``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .disentangle import DEFAULT_VARIANT, PairTopology, _Marginals, q_disentangle, tau_pairs
from .linalg import (
    SIGMA,
    NegativeEigenvalueError,
    expect,
    hermitize,
    matrix_log_floored,
    n_spins,
)

log = logging.getLogger(__name__)

# RK stage states are not projected; this only guards against blow-up
STAGE_NEG_TOL = 1e-6


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionParams:
    g_h: float
    g_d: float
    theta_t: float = 10.0
    eps_floor: float = 1e-12
    tol_abs: float = 1e-12
    tol_rel: float = 1e-11
    t_steady: float | None = None
    norm_tol: float = 1e-7

    def __post_init__(self):
        if self.g_h < 0 or self.g_d < 0:
            raise ValueError("rate groups g_h, g_d must be non-negative")
        if not self.theta_t > 0:
            raise ValueError("theta_t must be positive")

    @property
    def gamma_h(self) -> float:
        return self.g_h

    @property
    def beta(self) -> float:
        return self.theta_t

    @property
    def gamma_d(self) -> float:
        return self.g_d * self.theta_t

    @property
    def steady_window(self) -> float:
        if self.t_steady is not None:
            return self.t_steady
        rates = [g for g in (self.gamma_h, self.gamma_d) if g > 0]
        return 5.0 / min(rates) if rates else 1.0

    def with_(self, **changes) -> "EvolutionParams":
        from dataclasses import replace

        return replace(self, **changes)


def q_thermal(rho: np.ndarray, H: np.ndarray, beta: float, eps_floor: float = 1e-12, neg_tol: float | None = None):
    """beta * (Helmholtz free energy operator) = beta H + log rho."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    return hermitize(beta * H + matrix_log_floored(rho, eps_floor, neg_tol))


def theta(
    rho: np.ndarray,
    H: np.ndarray,
    params: EvolutionParams,
    topology: PairTopology | None = None,
    variant: str = DEFAULT_VARIANT,
    neg_tol: float | None = None,
) -> np.ndarray:
    Th = np.zeros_like(rho, dtype=complex)
    if params.gamma_h > 0:
        Th += params.gamma_h * q_thermal(rho, H, params.beta, params.eps_floor, neg_tol)
    if params.gamma_d > 0 and topology is not None and len(topology):
        Th += params.gamma_d * q_disentangle(rho, topology, variant)
    return hermitize(Th)


def me_rhs(rho: np.ndarray, H: np.ndarray, Th: np.ndarray) -> np.ndarray:
    """i[rho, H] - Theta rho - rho Theta + 2 <Theta> rho."""
    Thr = Th @ rho
    out = 1j * (rho @ H - H @ rho) - Thr - Thr.conj().T + 2.0 * np.trace(Thr).real * rho
    return hermitize(out)


def rhs(rho, H, params: EvolutionParams, topology=None, variant: str = DEFAULT_VARIANT, neg_tol=None):
    return me_rhs(rho, H, theta(rho, H, params, topology, variant, neg_tol))


# Dormand-Prince 5(4)
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class IntegratorStats:
    steps: int = 0
    rejects: int = 0
    repairs: int = 0
    rhs_evals: int = 0

    @property
    def repair_rate(self) -> float:
        return self.repairs / self.steps if self.steps else 0.0

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "rejects": self.rejects,
            "repairs": self.repairs,
            "rhs_evals": self.rhs_evals,
            "repair_rate": self.repair_rate,
        }

    def merge(self, other: "IntegratorStats") -> None:
        self.steps += other.steps
        self.rejects += other.rejects
        self.repairs += other.repairs
        self.rhs_evals += other.rhs_evals


@dataclass
class Trajectory:
    """Observables sampled on a uniform time grid."""

    times: np.ndarray
    bloch: np.ndarray  # (n_t, L, 3)
    tau: np.ndarray  # (n_t, n_pairs)
    tau_pairs: tuple[tuple[int, int], ...]
    energy: np.ndarray  # <U_H> = <H> + <log rho> / beta
    purity: np.ndarray
    logdet: np.ndarray
    rhs_norm: np.ndarray
    states: list[np.ndarray] = field(default_factory=list)
    final_state: np.ndarray | None = None
    stats: IntegratorStats = field(default_factory=IntegratorStats)
    stopped_steady: bool = False

    @property
    def sigma_x(self) -> np.ndarray:
        return self.bloch[:, :, 0].sum(axis=1)

    @property
    def total_bloch(self) -> np.ndarray:
        return self.bloch.sum(axis=1)


def bloch_vectors(rho: np.ndarray, L: int | None = None, marginals: _Marginals | None = None) -> np.ndarray:
    L = L or n_spins(rho.shape[0])
    m = marginals or _Marginals(rho, L)
    return np.array([[expect(SIGMA[ax], m.single(l)) for ax in "xyz"] for l in range(1, L + 1)])


def project_density(rho: np.ndarray, eps_floor: float) -> tuple[np.ndarray, bool]:
    """Hermitize, renormalize, and zero negative eigenvalues.

    Negatives down to ``-10 eps`` are roundoff and are flushed silently; a
    deeper one counts as a repair (second return value).
    """
    rho = hermitize(rho)
    rho = rho / np.trace(rho).real
    w, V = np.linalg.eigh(rho)
    if w[0] >= 0.0:
        return rho, False
    repaired = bool(w[0] < -10 * eps_floor)
    w = np.clip(w, 0.0, None)
    rho = (V * w) @ V.conj().T
    return hermitize(rho / np.trace(rho).real), repaired


def _as_source(hamiltonian) -> Callable[[float], np.ndarray]:
    if callable(hamiltonian):
        return hamiltonian
    H = np.asarray(hamiltonian, dtype=complex)
    return lambda t: H


def integrate(
    rho0: np.ndarray,
    hamiltonian,
    params: EvolutionParams,
    t_end: float,
    topology: PairTopology | None = None,
    variant: str = DEFAULT_VARIANT,
    record_every: float | None = None,
    observe_pairs=None,
    fixed_theta: np.ndarray | None = None,
    keep_states: bool = False,
    stop_when_steady: bool = False,
    dt_init: float | None = None,
    dt_min: float = 1e-12,
    max_repair_rate: float = 0.01,
) -> Trajectory:
    """Integrate the master equation from ``rho0`` up to ``t_end``.

    ``hamiltonian`` is a matrix or a callable ``t -> H``.  Theta is rebuilt
    at every stage unless ``fixed_theta`` is given.  Observables are recorded
    every ``record_every`` (steps are clipped to land on the record times).
    With ``stop_when_steady`` the run ends once ``||drho/dt||_max`` has
    stayed below ``params.norm_tol`` for a full steady window.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    L = n_spins(rho0.shape[0])
    source = _as_source(hamiltonian)
    record_every = record_every or t_end / 200
    pairs = tuple(observe_pairs) if observe_pairs is not None else (topology.pairs if topology else ())

    def f(t, y):
        H = source(t)
        if fixed_theta is not None:
            return me_rhs(y, H, fixed_theta)
        return rhs(y, H, params, topology, variant, neg_tol=STAGE_NEG_TOL)

    stats = IntegratorStats()
    rec: dict[str, list] = {k: [] for k in ("t", "bloch", "tau", "energy", "purity", "logdet", "norm")}
    states: list[np.ndarray] = []

    def record(t, y, k):
        m = _Marginals(y, L)
        w = np.linalg.eigvalsh(y)
        rec["t"].append(t)
        rec["bloch"].append(bloch_vectors(y, L, m))
        rec["tau"].append(tau_pairs(y, pairs, variant, L) if pairs else np.zeros(0))
        wp = np.maximum(w, params.eps_floor)
        rec["energy"].append(expect(source(t), y) + float(np.sum(w * np.log(wp))) / params.beta)
        rec["purity"].append(float(np.sum(w * w)))
        rec["logdet"].append(float(np.sum(np.log(w))) if w[0] > 0 else -np.inf)
        rec["norm"].append(float(np.max(np.abs(k))))
        if keep_states:
            states.append(y.copy())

    y, _ = project_density(np.asarray(rho0, dtype=complex), params.eps_floor)
    t = 0.0
    k1 = f(t, y)
    stats.rhs_evals += 1
    record(t, y, k1)
    next_rec = record_every
    dt = dt_init or min(record_every, 1e-3)
    window = params.steady_window
    steady_since: float | None = None
    stopped = False
    order_exp = 1.0 / 5.0

    while t < t_end * (1 - 1e-12):
        t_target = min(next_rec, t_end)
        h = min(dt, t_target - t)
        if h < dt_min and t_target - t > dt_min:
            raise IntegrationError(f"step size underflow at t={t:.6g} (dt={h:.3e})")
        ks = [k1]
        try:
            for i in range(1, 7):
                yi = y + h * sum(a * kk for a, kk in zip(_A[i], ks))
                ks.append(f(t + _C[i] * h, yi))
            stats.rhs_evals += 6
        except NegativeEigenvalueError:
            stats.rejects += 1
            dt = h * 0.25
            continue
        y_new = y + h * sum(b * kk for b, kk in zip(_B5, ks) if b != 0)
        err_vec = h * sum(e * kk for e, kk in zip(_E, ks))
        scale = params.tol_abs + params.tol_rel * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))
        if not np.isfinite(err):
            stats.rejects += 1
            dt = h * 0.1
            continue
        if err > 1.0:
            stats.rejects += 1
            dt = h * max(0.2, 0.9 * err ** -order_exp)
            continue
        # accepted
        stats.steps += 1
        t = t + h
        y_new, repaired = project_density(y_new, params.eps_floor)
        if repaired:
            stats.repairs += 1
        k1 = f(t, y_new)
        stats.rhs_evals += 1
        y = y_new
        grow = 5.0 if err == 0 else min(5.0, 0.9 * err ** -order_exp)
        # keep the proposed step independent of record clipping
        if h >= dt * (1 - 1e-12) or grow < 1:
            dt = h * grow
        if t >= t_target * (1 - 1e-12):
            t = t_target
            record(t, y, k1)
            next_rec = t + record_every
            if stop_when_steady:
                if rec["norm"][-1] <= params.norm_tol:
                    steady_since = t if steady_since is None else steady_since
                    if t - steady_since >= window:
                        stopped = True
                        break
                else:
                    steady_since = None

    if stats.repair_rate > max_repair_rate:
        log.warning("projection repairs on %.1f%% of steps; tolerances may be too loose", 100 * stats.repair_rate)

    return Trajectory(
        times=np.array(rec["t"]),
        bloch=np.array(rec["bloch"]),
        tau=np.array(rec["tau"]).reshape(len(rec["t"]), len(pairs)),
        tau_pairs=pairs,
        energy=np.array(rec["energy"]),
        purity=np.array(rec["purity"]),
        logdet=np.array(rec["logdet"]),
        rhs_norm=np.array(rec["norm"]),
        states=states,
        final_state=y,
        stats=stats,
        stopped_steady=stopped,
    )


@dataclass
class SteadyStateResult:
    kind: str  # fixed_point | limit_cycle | undecided
    final_state: np.ndarray | None
    residual: float
    period: float | None = None
    amplitude: float = 0.0
    correlation: float | None = None
    cycle_samples: np.ndarray | None = None


AMPLITUDE_FLOOR = 1e-3
CYCLE_CORRELATION = 0.99


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Pearson correlation between ``x[:-lag]`` and ``x[lag:]`` for a (n, m) series."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = x - x.mean(axis=0)
    out = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        a, b = x[: len(x) - lag], x[lag:]
        den = np.sqrt(np.sum(a * a) * np.sum(b * b))
        out[lag] = np.sum(a * b) / den if den > 0 else 0.0
    return out


def estimate_period(series: np.ndarray, dt: float, threshold: float = CYCLE_CORRELATION):
    """First autocorrelation maximum with correlation >= ``threshold``.

    Returns ``(period, correlation)`` or ``(None, best_correlation)``.  The
    peak position is refined by a parabola through the three nearest lags.
    """
    n = len(series)
    max_lag = n // 2
    if max_lag < 3:
        return None, 0.0
    r = autocorrelation(series, max_lag)
    # skip the central lobe
    below = np.flatnonzero(r < threshold)
    if below.size == 0:
        return None, float(r[-1])
    start = int(below[0])
    best = float(np.max(r[start:])) if start < len(r) else 0.0
    for k in range(max(start, 1), max_lag):
        if r[k] >= threshold and r[k] >= r[k - 1] and r[k] >= r[k + 1]:
            denom = r[k - 1] - 2 * r[k] + r[k + 1]
            shift = 0.5 * (r[k - 1] - r[k + 1]) / denom if denom != 0 else 0.0
            return (k + shift) * dt, float(r[k])
    return None, best


def classify_asymptotics(
    traj: Trajectory,
    params: EvolutionParams,
    window: float | None = None,
    amplitude_floor: float = AMPLITUDE_FLOOR,
    threshold: float = CYCLE_CORRELATION,
) -> SteadyStateResult:
    """Fixed point, limit cycle, or undecided, judged on the trailing window."""
    window = window or params.steady_window
    t = traj.times
    sel = t >= t[-1] - window * (1 - 1e-9)
    residual = float(traj.rhs_norm[-1])
    if np.all(traj.rhs_norm[sel] <= params.norm_tol):
        return SteadyStateResult("fixed_point", traj.final_state, residual)
    series = traj.bloch[sel].reshape(int(sel.sum()), -1)
    amp = float(np.max(series.max(axis=0) - series.min(axis=0)) / 2)
    if amp < amplitude_floor or sel.sum() < 8:
        return SteadyStateResult("undecided", traj.final_state, residual, amplitude=amp)
    dt = float(np.median(np.diff(t[sel])))
    period, corr = estimate_period(series, dt, threshold)
    if period is None:
        return SteadyStateResult("undecided", traj.final_state, residual, amplitude=amp, correlation=corr)
    # a decaying transient fails this: both halves must swing alike
    half = len(series) // 2
    a1 = np.ptp(series[:half], axis=0).max()
    a2 = np.ptp(series[half:], axis=0).max()
    if abs(a1 - a2) > 0.05 * max(a1, a2):
        return SteadyStateResult("undecided", traj.final_state, residual, period=period, amplitude=amp, correlation=corr)
    n_cycle = max(1, int(round(period / dt)))
    return SteadyStateResult(
        "limit_cycle",
        traj.final_state,
        residual,
        period=period,
        amplitude=amp,
        correlation=corr,
        cycle_samples=series[-n_cycle:],
    )


@dataclass
class LogDetCheck:
    times: np.ndarray
    finite_difference: np.ndarray
    analytic: np.ndarray
    flagged: np.ndarray  # rank-deficient samples, skipped

    @property
    def residual(self) -> np.ndarray:
        return self.finite_difference - self.analytic


def logdet_rate(rho: np.ndarray, Th: np.ndarray) -> float:
    """-2 Tr(Theta - <Theta>), the analytic d log det(rho) / dt."""
    d = rho.shape[0]
    return float(-2.0 * (np.trace(Th).real - d * expect(Th, rho)))


def diagnostics_logdet(
    times: np.ndarray,
    states: list[np.ndarray],
    theta_of: Callable[[np.ndarray, float], np.ndarray],
    eps_floor: float = 1e-12,
    stride: int = 1,
) -> LogDetCheck:
    """Central-difference d log det(rho)/dt against -2 Tr(Theta - <Theta>).

    ``theta_of(rho, t)`` returns the generator at a sample.  Samples whose
    smallest eigenvalue is at most ``10 * eps_floor`` are flagged and skipped.
    """
    n = len(states)
    idx = np.arange(stride, n - stride)
    fd = np.full(idx.size, np.nan)
    an = np.full(idx.size, np.nan)
    flagged = np.zeros(idx.size, dtype=bool)
    logdets = []
    for rho in states:
        w = np.linalg.eigvalsh(hermitize(rho))
        logdets.append(np.sum(np.log(w)) if w[0] > 10 * eps_floor else np.nan)
    logdets = np.array(logdets)
    for j, i in enumerate(idx):
        lo, hi = logdets[i - stride], logdets[i + stride]
        if not (np.isfinite(lo) and np.isfinite(hi) and np.isfinite(logdets[i])):
            flagged[j] = True
            continue
        fd[j] = (hi - lo) / (times[i + stride] - times[i - stride])
        an[j] = logdet_rate(states[i], theta_of(states[i], times[i]))
    return LogDetCheck(np.asarray(times)[idx], fd, an, flagged)
