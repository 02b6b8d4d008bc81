"""Run configuration, result files, plot data and the experiment runner."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from . import engine as E
from . import experiments as X
from .disentangle import VARIANTS, DEFAULT_VARIANT

EXPERIMENTS = ("tim-pt", "landscape", "ring5", "pump", "identities")


class ConfigError(ValueError):
    """Base class; the CLI maps it to exit status 2."""


class ConfigParseError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class MissingKeyError(ConfigError):
    pass


class RangeError(ConfigError):
    pass


# configuration


@dataclass(frozen=True)
class RateConfig:
    g_h: float
    g_d: float
    theta_t: float = 10.0
    eps_floor: float = 1e-12
    tol_abs: float = 1e-12
    tol_rel: float = 1e-11
    norm_tol: float = 1e-7

    def params(self) -> E.EvolutionParams:
        return E.EvolutionParams(**dataclasses.asdict(self))


@dataclass(frozen=True)
class ModelConfig:
    B: float = 1.0
    J_over_B: float = 2.0  # ring5 and landscape; tim-pt and pump sweep it


@dataclass(frozen=True)
class SweepConfig:
    values: tuple[float, ...]


@dataclass(frozen=True)
class RunOptions:
    t_end: float | None = None
    record_every: float | None = None
    window: float = 5.0  # pump: trailing window for classification
    featured: float | None = None  # pump: ratio whose trajectory is exported
    s_points: int = 721  # landscape
    full_free_energy: bool = False  # landscape
    mirrored: bool = True  # ring5


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    rates: RateConfig | None = None
    model: ModelConfig = ModelConfig()
    sweep: SweepConfig | None = None
    options: RunOptions = RunOptions()
    variant: str = DEFAULT_VARIANT
    seed: int = 0
    out: str | None = None
    workers: int = 1

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, tuple):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items() if v is not None}
            return x

        return clean(dataclasses.asdict(self))


_SECTIONS = {"rates": RateConfig, "model": ModelConfig, "sweep": SweepConfig, "options": RunOptions}
_NEEDS_RATES = {"tim-pt", "ring5", "pump"}
_NEEDS_SWEEP = {"tim-pt", "pump", "landscape"}


def _check_keys(data: dict, cls, where: str) -> None:
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in allowed:
            raise UnknownKeyError(f"unknown key '{key}' in {where} (allowed: {', '.join(sorted(allowed))})")
    for f in dataclasses.fields(cls):
        required = f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        if required and f.name not in data:
            raise MissingKeyError(f"missing required key '{f.name}' in {where}")


def _number(value, where: str, *, positive=False, nonneg=False, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RangeError(f"{where} must be a number, got {value!r}")
    if integer and not float(value).is_integer():
        raise RangeError(f"{where} must be an integer, got {value!r}")
    if not np.isfinite(value):
        raise RangeError(f"{where} must be finite")
    if positive and not value > 0:
        raise RangeError(f"{where} must be > 0, got {value}")
    if nonneg and value < 0:
        raise RangeError(f"{where} must be >= 0, got {value}")
    return int(value) if integer else float(value)


def _build(data: dict, experiment: str | None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigParseError("top level of the config must be a JSON object")
    data = dict(data)
    if experiment is not None:
        if "experiment" in data and data["experiment"] != experiment:
            raise ConfigError(f"config is for experiment '{data['experiment']}', not '{experiment}'")
        data["experiment"] = experiment
    _check_keys(data, RunConfig, "config")
    exp = data["experiment"]
    if exp not in EXPERIMENTS:
        raise RangeError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {exp!r}")

    kw: dict[str, Any] = {"experiment": exp}
    for name, cls in _SECTIONS.items():
        sec = data.get(name)
        if sec is None:
            continue
        if not isinstance(sec, dict):
            raise ConfigParseError(f"section '{name}' must be an object")
        _check_keys(sec, cls, f"section '{name}'")
        kw[name] = sec

    if exp in _NEEDS_RATES and "rates" not in kw:
        raise MissingKeyError(f"experiment '{exp}' requires a 'rates' section")
    if exp in _NEEDS_SWEEP and "sweep" not in kw:
        raise MissingKeyError(f"experiment '{exp}' requires a 'sweep' section")

    if "rates" in kw:
        r = kw["rates"]
        vals = {k: _number(v, f"rates.{k}", nonneg=True) for k, v in r.items()}
        for k in ("theta_t", "eps_floor", "tol_abs", "tol_rel", "norm_tol"):
            if k in vals:
                _number(vals[k], f"rates.{k}", positive=True)
        kw["rates"] = RateConfig(**vals)
    if "model" in kw:
        m = kw["model"]
        vals = {k: _number(v, f"model.{k}", nonneg=True) for k, v in m.items()}
        if "B" in vals:
            _number(vals["B"], "model.B", positive=True)
        kw["model"] = ModelConfig(**vals)
    if "sweep" in kw:
        v = kw["sweep"]["values"]
        if not isinstance(v, list) or not v:
            raise RangeError("sweep.values must be a nonempty list")
        v = tuple(_number(x, "sweep.values[]", nonneg=True) for x in v)
        if any(b <= a for a, b in zip(v, v[1:])):
            raise RangeError("sweep.values must be strictly increasing")
        kw["sweep"] = SweepConfig(v)
    if "options" in kw:
        o = dict(kw["options"])
        for k in ("t_end", "record_every", "window", "featured"):
            if o.get(k) is not None:
                o[k] = _number(o[k], f"options.{k}", positive=k != "featured", nonneg=True)
        if "s_points" in o:
            o["s_points"] = _number(o["s_points"], "options.s_points", positive=True, integer=True)
            if o["s_points"] < 5:
                raise RangeError("options.s_points must be at least 5")
        for k in ("full_free_energy", "mirrored"):
            if k in o and not isinstance(o[k], bool):
                raise RangeError(f"options.{k} must be true or false")
        kw["options"] = RunOptions(**o)

    if "variant" in data:
        if data["variant"] not in VARIANTS:
            raise RangeError(f"variant must be one of {', '.join(VARIANTS)}, got {data['variant']!r}")
        kw["variant"] = data["variant"]
    if "seed" in data:
        kw["seed"] = _number(data["seed"], "seed", nonneg=True, integer=True)
    if "workers" in data:
        kw["workers"] = _number(data["workers"], "workers", positive=True, integer=True)
    if "out" in data:
        if not isinstance(data["out"], str) or not data["out"]:
            raise RangeError("out must be a nonempty string")
        kw["out"] = data["out"]
    return RunConfig(**kw)


def parse_config(text: str, experiment: str | None = None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return _build(data, experiment)


def load_config(path, experiment: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except UnicodeDecodeError as e:
        raise ConfigParseError(f"config is not UTF-8 text: {e}") from None
    return parse_config(text, experiment)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# tabular output


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def csv_text(rows: Iterable[Sequence], schema: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(schema)
    for row in rows:
        if len(row) != len(schema):
            raise ValueError(f"row has {len(row)} fields, schema has {len(schema)}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_files(files: dict[str, str], out_dir) -> None:
    """Write each ``name -> text`` entry atomically under ``out_dir``."""
    for name, text in files.items():
        _atomic_write(Path(out_dir) / name, text)


def write_results(rows, schema, path) -> Path:
    path = Path(path)
    _atomic_write(path, csv_text(rows, schema))
    return path


TIM_SCHEMA = ("J_over_B", "branch", "sigma_x", "tau_total", "E1", "E2", "E3", "E4",
              "p1", "p2", "p3", "p4", "classification")
PUMP_SCHEMA = ("coupling_ratio", "branch", "sigma_x", "tau_total", "E1", "E2", "E3", "E4",
               "p1", "p2", "p3", "p4", "classification", "period")
MFA_SCHEMA = ("J_over_B", "m_plus", "m_minus")
LANDSCAPE_SCHEMA = ("ratio", "s", "U_eff")
MINIMA_SCHEMA = ("ratio", "n_minima")
BLOCH_SCHEMA = ("t", "kx", "ky", "kz")
TAU_SCHEMA = ("gamma_D_t", "pair", "pair_kind", "tau")
IDENTITY_SCHEMA = ("identity", "value", "tolerance", "passed")

_BRANCH_ORDER = {b: i for i, b in enumerate(X.BRANCHES)}


def branch_rows(records: list[X.BranchRecord], with_period: bool = False) -> list[tuple]:
    recs = sorted(records, key=lambda r: (r.value, _BRANCH_ORDER[r.branch]))
    rows = []
    for r in recs:
        row = (r.value, r.branch, r.sigma_x, r.tau_total, *r.energies, *r.populations, r.classification)
        rows.append(row + ((r.period,) if with_period else ()))
    return rows


# plot data


PLOT_SCRIPT = '''"""Plot the data files in this directory (needs matplotlib)."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(here, name)) as fh:
        rows = list(csv.DictReader(fh))
    return rows


for path in sorted(glob.glob(os.path.join(here, "bloch_*.csv"))):
    rows = load(os.path.basename(path))
    ax = plt.figure().add_subplot(projection="3d")
    ax.plot(*[[float(r[k]) for r in rows] for k in ("kx", "ky", "kz")])
    ax.set_xlabel("kx"); ax.set_ylabel("ky"); ax.set_zlabel("kz")
    ax.set_title(os.path.basename(path))
    plt.savefig(path[:-4] + ".png")

if os.path.exists(os.path.join(here, "tau.csv")):
    rows = load("tau.csv")
    fig, ax = plt.subplots()
    for pair in sorted({r["pair"] for r in rows}):
        sel = [r for r in rows if r["pair"] == pair]
        style = "-" if sel[0]["pair_kind"] == "NN" else "--"
        ax.plot([float(r["gamma_D_t"]) for r in sel], [float(r["tau"]) for r in sel], style, label=pair)
    ax.set_xlabel("gamma_D t"); ax.set_ylabel("tau"); ax.legend(fontsize=6)
    fig.savefig(os.path.join(here, "tau.png"))

if os.path.exists(os.path.join(here, "landscape.csv")):
    rows = load("landscape.csv")
    fig, ax = plt.subplots()
    for ratio in sorted({float(r["ratio"]) for r in rows}):
        sel = [r for r in rows if float(r["ratio"]) == ratio]
        ax.plot([float(r["s"]) for r in sel], [float(r["U_eff"]) for r in sel], label=f"{ratio:g}")
    ax.set_xlabel("s"); ax.set_ylabel("U_eff"); ax.legend(fontsize=6)
    fig.savefig(os.path.join(here, "landscape.png"))

for name, x in (("tim_pt.csv", "J_over_B"), ("pump.csv", "coupling_ratio")):
    if os.path.exists(os.path.join(here, name)):
        rows = load(name)
        fig, (a1, a2) = plt.subplots(2, sharex=True)
        for branch in ("symmetric", "plus", "minus"):
            sel = [r for r in rows if r["branch"] == branch]
            a1.plot([float(r[x]) for r in sel], [float(r["sigma_x"]) for r in sel], "o-", label=branch)
            a2.plot([float(r[x]) for r in sel], [float(r["tau_total"]) for r in sel], "o-")
        a1.set_ylabel("sigma_x"); a2.set_ylabel("tau"); a2.set_xlabel(x); a1.legend()
        fig.savefig(os.path.join(here, name[:-4] + ".png"))
'''


def emit_plot_data(result, kind: str, params: E.EvolutionParams | None = None) -> dict[str, str]:
    """Data files (name -> CSV text) for one result, plus ``plot.py``."""
    files: dict[str, str] = {}
    if kind in ("ring5", "pump"):
        tr: E.Trajectory = result.trajectory if kind == "ring5" else result
        L = tr.bloch.shape[1]
        for l in range(L):
            rows = [(t, *k) for t, k in zip(tr.times, tr.bloch[:, l])]
            files[f"bloch_spin{l + 1}.csv"] = csv_text(rows, BLOCH_SCHEMA)
        if kind == "ring5":
            gd = params.gamma_d if params else 1.0
            n_nn = len(result.nn_pairs)
            rows = []
            for j, pair in enumerate(tr.tau_pairs):
                label = f"{pair[0]}-{pair[1]}"
                k = "NN" if j < n_nn else "SNN"
                rows.extend((gd * t, label, k, v) for t, v in zip(tr.times, tr.tau[:, j]))
            files["tau.csv"] = csv_text(rows, TAU_SCHEMA)
    elif kind == "landscape":
        rows = [(r, s, u) for r, line in zip(result.ratios, result.u_eff) for s, u in zip(result.s, line)]
        files["landscape.csv"] = csv_text(rows, LANDSCAPE_SCHEMA)
    else:
        raise ValueError(f"no plot data for kind {kind!r}")
    files["plot.py"] = PLOT_SCRIPT
    return files


# identities


def identity_checks(seed: int = 0) -> list[tuple[str, float, float, bool]]:
    """Invariant suite: (name, value, tolerance, passed).

    Values are worst-case residuals, except ``logdet_order`` which is a
    convergence order that must reach its threshold.
    """
    from .disentangle import PairTopology
    from .linalg import expect, random_density_matrix, random_hermitian, random_pure_state
    from .models import TimParams, gibbs_state, tim_hamiltonian

    rng = np.random.default_rng(seed)
    out = []
    tr_w = herm_w = pure_w = var_w = 0.0
    for dim in (4, 32):
        for _ in range(50):
            rho = random_density_matrix(dim, rng)
            Th, H = random_hermitian(dim, rng), random_hermitian(dim, rng)
            d = E.me_rhs(rho, H, Th)
            tr_w = max(tr_w, abs(np.trace(d)))
            herm_w = max(herm_w, np.max(np.abs(d - d.conj().T)))
            psi = random_pure_state(dim, rng)
            pure_w = max(pure_w, abs(2 * np.trace(psi @ E.me_rhs(psi, H, Th)).real))
            d0 = E.me_rhs(rho, np.zeros_like(H), Th)
            m = expect(Th, rho)
            var_w = max(var_w, abs(expect(Th, d0) + 2 * (expect(Th @ Th, rho) - m * m)))
    out += [("trace", tr_w, 1e-12), ("hermiticity", herm_w, 1e-12),
            ("purity", pure_w, 1e-10), ("variance", var_w, 1e-10)]

    H = tim_hamiltonian(TimParams(2, 1.0, 1.0))
    p = E.EvolutionParams(5, 0, theta_t=1)
    out.append(("gibbs_fixed_point", float(np.max(np.abs(E.rhs(gibbs_state(H, 1.0), H, p)))), 1e-9))

    topo = PairTopology.ring(2)
    q = E.EvolutionParams(2, 1, theta_t=1)
    tr = E.integrate(random_density_matrix(4, rng), H, q, 0.4, topology=topo, keep_states=True, record_every=0.005)
    order = logdet_order(tr, lambda r, t: E.theta(r, H, q, topo))
    rows = [(n, float(v), tol, bool(v <= tol)) for n, v, tol in out]
    # finite differences at spacing 2h and h: the error ratio should be ~4
    rows.append(("logdet_order", order, 1.8, bool(order >= 1.8)))
    return rows


def logdet_order(tr: E.Trajectory, theta_of) -> float:
    """Observed convergence order of the finite-difference log-det rate."""
    n = len(tr.times)
    errs = []
    for stride in (2, 1):
        chk = E.diagnostics_logdet(tr.times, tr.states, theta_of, stride=stride)
        centres = np.arange(stride, n - stride)
        keep = (centres >= 2) & (centres < n - 2)
        errs.append(np.nanmax(np.abs(chk.residual[keep])))
    return float(np.log2(errs[0] / errs[1]))


# runner


@dataclass
class RunOutcome:
    status: int
    out_dir: Path | None
    manifest: dict = field(default_factory=dict)
    message: str = ""


def _stats_of(records) -> E.IntegratorStats:
    total = E.IntegratorStats()
    for r in records:
        if r.stats is not None:
            total.merge(r.stats)
    return total


def execute(cfg: RunConfig, workers: int | None = None) -> tuple[dict[str, str], E.IntegratorStats, dict]:
    """Run the experiment; returns (file name -> text, integrator stats, summary)."""
    workers = workers or cfg.workers
    opt = cfg.options
    files: dict[str, str] = {}
    stats = E.IntegratorStats()
    summary: dict[str, Any] = {}
    exp = cfg.experiment

    if exp == "tim-pt":
        sweep = X.SweepSpec("J_over_B", cfg.sweep.values)
        res = X.run_tim_pt(sweep, cfg.rates.params(), cfg.model.B, cfg.variant, opt.t_end or 5.0, workers)
        files["tim_pt.csv"] = csv_text(branch_rows(res.records), TIM_SCHEMA)
        files["mfa.csv"] = csv_text(X.mfa_overlay(sweep.values), MFA_SCHEMA)
        files["plot.py"] = PLOT_SCRIPT
        stats = _stats_of(res.records)
        summary["onset_J_over_B"] = res.onset
    elif exp == "landscape":
        res = X.run_landscape(cfg.model.J_over_B, cfg.sweep.values, opt.s_points, cfg.model.B,
                              cfg.rates.theta_t if cfg.rates else 10.0, cfg.variant, opt.full_free_energy)
        files.update(emit_plot_data(res, "landscape"))
        files["minima.csv"] = csv_text(zip(res.ratios, res.minima), MINIMA_SCHEMA)
        summary["critical_ratio"] = res.critical_ratio
        summary["critical_status"] = res.status
    elif exp == "ring5":
        params = cfg.rates.params()
        res = X.run_ring5(params, cfg.model.J_over_B, cfg.model.B, opt.t_end or 20.0,
                          opt.record_every or 0.02, cfg.variant, opt.mirrored, workers)
        files.update(emit_plot_data(res, "ring5", params))
        stats.merge(res.trajectory.stats)
        summary.update(
            classification=res.classification.kind,
            sigma_x=float(res.trajectory.sigma_x[-1]),
            tau_nn=res.tau_nn, tau_snn=res.tau_snn, tau_ratio=res.ratio,
        )
        if res.mirrored is not None:
            stats.merge(res.mirrored.stats)
            summary["sigma_x_mirrored"] = float(res.mirrored.sigma_x[-1])
    elif exp == "pump":
        sweep = X.SweepSpec("coupling_ratio", cfg.sweep.values)
        params = cfg.rates.params()
        res = X.run_parallel_pump(sweep, params, cfg.variant, opt.t_end or 20.0, opt.record_every or 0.01,
                                  opt.window, opt.featured, workers)
        files["pump.csv"] = csv_text(branch_rows(res.records, with_period=True), PUMP_SCHEMA)
        stats = _stats_of(res.records)
        if res.featured is not None:
            files.update(emit_plot_data(res.featured, "pump"))
            stats.merge(res.featured.stats)
            summary["featured"] = {"ratio": opt.featured, "classification": res.featured_result.kind,
                                   "period": res.featured_result.period}
        files["plot.py"] = PLOT_SCRIPT
    elif exp == "identities":
        rows = identity_checks(cfg.seed)
        files["identities.csv"] = csv_text(rows, IDENTITY_SCHEMA)
        summary["all_passed"] = all(r[3] for r in rows)
    else:  # pragma: no cover - validated in load_config
        raise ConfigError(f"unknown experiment {exp}")
    return files, stats, summary


def content_hash(files: dict[str, str]) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode() + b"\0" + files[name].encode() + b"\0")
    return h.hexdigest()


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def run(cfg: RunConfig, out_dir=None, workers: int | None = None) -> RunOutcome:
    """Execute and publish results; files appear only if everything succeeded."""
    out = Path(out_dir or cfg.out or f"results/{cfg.experiment}")
    t0 = time.perf_counter()
    files, stats, summary = execute(cfg, workers)
    wall = time.perf_counter() - t0
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "version": __version__,
        "integrator": stats.as_dict(),
        "summary": summary,
        "wall_time_s": wall,
        "content_hash": content_hash(files),
    }
    if cfg.rates is not None:
        p = cfg.rates.params()
        manifest["raw_rates"] = {"gamma_h": p.gamma_h, "beta": p.beta, "gamma_d": p.gamma_d}
    files = dict(files)
    files["manifest.json"] = json.dumps(_json_safe(manifest), indent=2, sort_keys=True) + "\n"

    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        for name, text in files.items():
            (staging / name).write_text(text, encoding="utf-8", newline="")
        if out.exists():
            shutil.rmtree(out)
        os.replace(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    status = 0
    if cfg.experiment == "identities" and not summary["all_passed"]:
        status = 1
    return RunOutcome(status, out, manifest)
