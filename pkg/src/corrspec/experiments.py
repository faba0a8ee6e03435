"""Monte Carlo experiments: sizes, powers, QQ samples, spectral densities and CLT checks.

Every replication draws from its own generator, keyed by (master seed, cell,
replication index) through ``numpy.random.SeedSequence``.  BLAS is pinned to one
thread inside every replication, so a table does not depend on how many worker
processes produced it.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import dataclasses
import hashlib
import io
import json
import math
import multiprocessing as mp
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .clt import CltContext, Elliptical, Linear, clt_moments, resolve_test_function
from .correlation import RescaledSpec, _sym_sqrt, sample_correlation_of
from .errors import ConfigurationError, CorrspecError, NumericalError
from .htest import null_params
from .population import (EntryLaw, Kind, PopulationSpec, RadiusLaw, generate_batch,
                         population_correlation)
from .spectral import centering_integral, esd_measure, lsd_cdf, lsd_density, support_interval

EXPERIMENTS = ("Size", "Power", "QQ", "LSD", "CLT")
MODELS = ("Model1", "Model2", "Scenario1", "Scenario2", "Custom")
STRUCTURES = ("elliptical", "linear")
RESCALINGS = ("identity", "inverse")

# fields that do not change the numbers in a table
_RUNTIME_FIELDS = ("workers", "output")


# --- configuration ----------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str = "Size"
    model: str = "Model1"
    p_grid: list = field(default_factory=lambda: [100])
    y_grid: list = field(default_factory=lambda: [0.5])
    replications: int = 2000
    alpha: float = 0.05
    structure: str = "elliptical"
    radius_law: str = "ChiSq"
    entry_law: str = "Gaussian"
    theta: float = 0.0
    seed: int = 0
    workers: int = 1
    num_nodes: int = 1024
    variant: str = "corrected"
    g: list = field(default_factory=lambda: ["x", "x^2"])
    rescale: str = "identity"
    R: Optional[list] = None
    tau: Optional[float] = None
    beta_x: Optional[float] = None
    output: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}, got {self.model!r}")
        if (self.model == "Custom") != (self.R is not None):
            raise ConfigurationError("an explicit R goes with model 'Custom' and only with it")
        if not self.p_grid or not self.y_grid:
            raise ConfigurationError("p_grid and y_grid must be non-empty")
        for p in self.p_grid:
            if int(p) != p or p < 2:
                raise ConfigurationError(f"dimensions must be integers >= 2, got {p!r}")
        for y in self.y_grid:
            if not (isinstance(y, (int, float)) and y > 0 and math.isfinite(y)):
                raise ConfigurationError(f"ratios must be positive, got {y!r}")
        self.p_grid = [int(p) for p in self.p_grid]
        self.y_grid = [float(y) for y in self.y_grid]
        for p in self.p_grid:
            for y in self.y_grid:
                if self.n_for(p, y) < 3:
                    raise ConfigurationError(f"p={p}, y={y} gives fewer than 3 observations")
        statistical = self.experiment != "LSD" and not (self.experiment == "CLT" and self.replications == 0)
        if statistical and self.replications < 100:
            raise ConfigurationError(f"replications must be >= 100, got {self.replications}")
        if self.replications < 0:
            raise ConfigurationError("replications must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.structure not in STRUCTURES:
            raise ConfigurationError(f"structure must be one of {STRUCTURES}")
        try:
            RadiusLaw(self.radius_law)
            EntryLaw(self.entry_law)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.rescale not in RESCALINGS:
            raise ConfigurationError(f"rescale must be one of {RESCALINGS}")
        if self.variant not in ("corrected", "legacy"):
            raise ConfigurationError("variant must be 'corrected' or 'legacy'")
        if not math.isfinite(self.theta):
            raise ConfigurationError("theta must be finite")
        if self.experiment in ("Size", "QQ") and self.model.startswith("Scenario") and self.theta != 0:
            raise ConfigurationError(f"{self.experiment} runs under H0; set theta = 0")
        if self.experiment == "Power" and not self.model.startswith("Scenario"):
            raise ConfigurationError("power experiments use Scenario1 or Scenario2")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if int(self.workers) < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.num_nodes < 64:
            raise ConfigurationError("num_nodes must be >= 64")
        for g in self.g:
            resolve_test_function(g)

    @staticmethod
    def n_for(p: int, y: float) -> int:
        return int(round(p / y))

    def cells(self):
        for p in self.p_grid:
            for y in self.y_grid:
                yield p, y, self.n_for(p, y)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(d)

    def content_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _RUNTIME_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# --- results ------------------------------------------------------------------------

def mc_se(q: float, reps: int) -> float:
    """Monte Carlo standard error of a rejection percentage."""
    return 100.0 * math.sqrt(q * (1.0 - q) / reps)


def _version() -> str:
    from . import __version__
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class ResultTable:
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, **row) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row is missing {sorted(missing)}")
        self.rows.append({c: _clean(row[c]) for c in self.columns})

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def where(self, **match) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in self.columns])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": self.rows, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def write(self, out_dir, stem: str = "table") -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.csv").write_text(self.to_csv())
        (out / f"{stem}.json").write_text(self.to_json())
        return [f"{stem}.csv", f"{stem}.json"]


RATE_COLUMNS = ["p", "n", "y", "population", "statistic", "replications", "rejections",
                "percent", "se", "status"]


def _metadata(config: ExperimentConfig) -> dict:
    return {"experiment": config.experiment, "model": config.model,
            "config_hash": config.content_hash(), "seed": int(config.seed),
            "replications": int(config.replications), "version": _version()}


# --- populations -------------------------------------------------------------------

def _spd_sqrt(S: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(S)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise ConfigurationError(f"Sigma is not positive definite (smallest eigenvalue {w[0]:.3e})")
    return _sym_sqrt(S)


def _model2_sigma(p: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((p, p))
    _, U = np.linalg.eigh(Z.T @ Z)
    D = rng.uniform(0.0, 1.0, size=p)
    S = (U * (1.0 + D)) @ U.T
    return 0.5 * (S + S.T)


def build_gamma(model: str, p: int, theta: float, rng, R=None) -> np.ndarray:
    """Gamma with Sigma = Gamma Gamma^T for one of the named population models."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if model == "Model1":
        return np.eye(p)
    if model == "Model2":
        return _spd_sqrt(_model2_sigma(p, rng))
    if model == "Scenario1":
        bound = p ** (-2.0 / 3.0)
        A = rng.uniform(-bound, bound, size=(p, p))
        return np.eye(p) + theta * A
    if model == "Scenario2":
        S = _model2_sigma(p, rng) + theta * np.ones((p, p))
        return _spd_sqrt(S)
    if model == "Custom":
        R = np.asarray(R, dtype=float)
        if R.shape != (p, p):
            raise ConfigurationError(f"R has shape {R.shape}, expected {(p, p)}")
        if not np.allclose(np.diag(R), 1.0, atol=1e-10):
            raise ConfigurationError("R must have unit diagonal")
        return _spd_sqrt(R)
    raise ConfigurationError(f"unknown model {model!r}")


def build_scenario(model: str, p: int, theta: float, rng, structure: str = "elliptical",
                   radius_law: str = "ChiSq", entry_law: str = "Gaussian", R=None,
                   tau: Optional[float] = None, beta_x: Optional[float] = None) -> PopulationSpec:
    """PopulationSpec for a named model with perturbation strength ``theta``.

    ``tau`` / ``beta_x`` override the value implied by the law (the sampler is unchanged).
    """
    gamma = build_gamma(model, p, theta, rng, R=R)
    if structure == "elliptical":
        return PopulationSpec(kind=Kind.ELLIPTICAL, gamma=gamma, radius_law=radius_law, tau=tau)
    if structure == "linear":
        return PopulationSpec(kind=Kind.LINEAR, gamma=gamma, entry_law=entry_law, beta_x=beta_x)
    raise ConfigurationError(f"structure must be one of {STRUCTURES}")


def structure_of(spec: PopulationSpec):
    if spec.kind is Kind.ELLIPTICAL:
        return Elliptical(spec.tau)
    return Linear(spec.beta_x)


# --- seeding and parallel replication ---------------------------------------------------

def cell_key(*parts) -> int:
    """Stable 32-bit id for a table cell."""
    h = hashlib.sha256("|".join(str(x) for x in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


def population_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key, 0)))


def replication_rng(seed: int, key: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key, 1, int(rep))))


@dataclass(frozen=True, eq=False)
class _Job:
    spec: PopulationSpec
    n: int
    seed: int
    key: int
    kind: str                       # "stats" -> (T1, T2); "lss" -> one LSS per test function
    R0: Optional[np.ndarray] = None
    R0_isqrt: Optional[np.ndarray] = None
    M_sqrt: Optional[np.ndarray] = None
    g: tuple = ()


def _one(job: _Job, rep: int) -> np.ndarray:
    batch = generate_batch(job.spec, job.n, rng=replication_rng(job.seed, job.key, rep))
    Rhat = sample_correlation_of(batch)
    if job.kind == "stats":
        A = job.R0_isqrt @ Rhat @ job.R0_isqrt
        A[np.diag_indices_from(A)] -= 1.0
        D = Rhat - job.R0
        return np.array([np.sum(A * A), np.sum(D * D)])
    A = Rhat if job.M_sqrt is None else job.M_sqrt @ Rhat @ job.M_sqrt
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return np.array([np.sum(resolve_test_function(g)(ev)) for g in job.g])


def _chunk(job: _Job, reps: Sequence[int]) -> np.ndarray:
    with threadpool_limits(limits=1):
        return np.stack([_one(job, r) for r in reps])


def replicate(job: _Job, reps: int, workers: int = 1) -> np.ndarray:
    """Run ``reps`` replications in index order; the result does not depend on ``workers``."""
    idx = list(range(reps))
    if workers <= 1 or reps < 2:
        return _chunk(job, idx)
    size = max(1, math.ceil(reps / (4 * workers)))
    chunks = [idx[i:i + size] for i in range(0, reps, size)]
    ctx = mp.get_context("spawn")
    with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        parts = list(pool.map(_chunk, [job] * len(chunks), chunks))
    return np.concatenate(parts, axis=0)


# --- cell setup ---------------------------------------------------------------------

@dataclass
class Cell:
    p: int
    n: int
    y: float
    key: int
    spec: PopulationSpec
    R0: np.ndarray
    G0: np.ndarray
    structure: object


def setup_cell(config: ExperimentConfig, p: int, y: float, n: int, theta: Optional[float] = None) -> Cell:
    """Population under the configured theta and its null counterpart from the same draw."""
    theta = config.theta if theta is None else theta
    key = cell_key(config.model, p, n, theta)
    # the population draw is keyed without theta so that H0 and H1 share U, D and A
    pkey = cell_key(config.model, p, n)
    kw = dict(structure=config.structure, radius_law=config.radius_law,
              entry_law=config.entry_law, R=config.R, tau=config.tau, beta_x=config.beta_x)
    spec = build_scenario(config.model, p, theta, population_rng(config.seed, pkey), **kw)
    null_spec = build_scenario(config.model, p, 0.0, population_rng(config.seed, pkey), **kw)
    R0, G0 = population_correlation(null_spec)
    return Cell(p=p, n=n, y=y, key=key, spec=spec, R0=R0, G0=G0, structure=structure_of(spec))


def _label(config: ExperimentConfig) -> str:
    law = config.radius_law if config.structure == "elliptical" else config.entry_law
    return f"{config.model}/{config.structure}/{law}"


def _stats_job(config: ExperimentConfig, cell: Cell) -> _Job:
    return _Job(spec=cell.spec, n=cell.n, seed=config.seed, key=cell.key, kind="stats",
                R0=cell.R0, R0_isqrt=_sym_sqrt(cell.R0, -0.5))


def _cell_params(config: ExperimentConfig, cell: Cell, need_t2: bool):
    G = cell.G0 if isinstance(cell.structure, Linear) else None
    return null_params(cell.p, cell.n, cell.R0, cell.structure, alpha=config.alpha, G=G,
                       variant=config.variant, num_nodes=config.num_nodes, need_t2=need_t2)


def _z_scores(T: np.ndarray, params) -> tuple[np.ndarray, np.ndarray]:
    z1 = (T[:, 0] - params.mu1) / params.sd1
    z2 = (T[:, 1] - params.mu2) / params.sd2 if params.var2 == params.var2 else np.full(len(T), np.nan)
    return z1, z2


def standardized_statistics(config: ExperimentConfig, p: int, y: float, n: int, need_t2: bool = True):
    """Replicated (z1, z2) for one cell together with its null parameters and cell."""
    cell = setup_cell(config, p, y, n)
    params = _cell_params(config, cell, need_t2=need_t2)
    T = replicate(_stats_job(config, cell), config.replications, config.workers)
    z1, z2 = _z_scores(T, params)
    return z1, z2, params, cell


def _failed_rates(table: ResultTable, cell: tuple, label: str, names, reps: int, exc: Exception):
    p, y, n = cell
    for s in names:
        table.add(p=p, n=n, y=y, population=label, statistic=s, replications=reps, rejections=None,
                  percent=None, se=None, status=f"{type(exc).__name__}: {exc}")


def _add_rate(table: ResultTable, cell: Cell, label: str, stat: str, rejections: int, reps: int):
    q = rejections / reps
    table.add(p=cell.p, n=cell.n, y=cell.y, population=label, statistic=stat, replications=reps,
              rejections=int(rejections), percent=100.0 * rejections / reps, se=mc_se(q, reps), status="ok")


# --- experiments ------------------------------------------------------------------------

def run_size_experiment(config: ExperimentConfig) -> ResultTable:
    """Rejection rate of the marginal T1 test under H0 for every (p, y) cell."""
    if config.model.startswith("Scenario") and config.theta != 0:
        raise ConfigurationError("size experiments need theta = 0")
    table = ResultTable(RATE_COLUMNS, metadata=_metadata(config))
    label = _label(config)
    q = stats.norm.ppf(1 - config.alpha / 2)
    for p, y, n in config.cells():
        try:
            z1, _, params, cell = standardized_statistics(config, p, y, n, need_t2=False)
            _add_rate(table, cell, label, "T1", int(np.sum(np.abs(z1) > q)), config.replications)
        except CorrspecError as exc:
            _failed_rates(table, (p, y, n), label, ["T1"], config.replications, exc)
    return table


def run_power_experiment(config: ExperimentConfig) -> ResultTable:
    """Rejection rates of T1, T2 and the combined test under a scenario alternative.

    Null parameters come from the theta = 0 population of the same draw.
    """
    table = ResultTable(RATE_COLUMNS, metadata=_metadata(config))
    label = _label(config)
    q = stats.norm.ppf(1 - config.alpha / 2)
    for p, y, n in config.cells():
        try:
            z1, z2, params, cell = standardized_statistics(config, p, y, n)
            tm = np.maximum(np.abs(z1), np.abs(z2))
            _add_rate(table, cell, label, "T1", int(np.sum(np.abs(z1) > q)), config.replications)
            _add_rate(table, cell, label, "T2", int(np.sum(np.abs(z2) > q)), config.replications)
            _add_rate(table, cell, label, "Tm", int(np.sum(tm > params.t_alpha)), config.replications)
        except CorrspecError as exc:
            _failed_rates(table, (p, y, n), label, ["T1", "T2", "Tm"], config.replications, exc)
    return table


def power_curves(table: ResultTable) -> ResultTable:
    """Wide (p, y, power_T1, power_T2, power_Tm) rows for plotting."""
    out = ResultTable(["p", "n", "y", "power_T1", "power_T2", "power_Tm"], metadata=dict(table.metadata))
    seen = []
    for r in table.rows:
        if (r["p"], r["y"]) not in seen:
            seen.append((r["p"], r["y"]))
    for p, y in seen:
        rows = {r["statistic"]: r for r in table.where(p=p, y=y)}
        n = next(iter(rows.values()))["n"]
        out.add(p=p, n=n, y=y, **{f"power_{s}": rows[s]["percent"] if s in rows else None
                                  for s in ("T1", "T2", "Tm")})
    return out


@dataclass
class QQResult:
    table: ResultTable
    samples: list        # per cell: (p, n, sorted z, normal quantiles)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "n", "sample", "theoretical"])
        for p, n, z, t in self.samples:
            for a, b in zip(z, t):
                w.writerow([p, n, repr(float(a)), repr(float(b))])
        return buf.getvalue()


def normal_scores(k: int) -> np.ndarray:
    return stats.norm.ppf((np.arange(1, k + 1) - 0.5) / k)


def qq_data(config: ExperimentConfig) -> QQResult:
    """Standardized T1 under H0, sorted, with normal quantiles and a KS summary."""
    cols = ["p", "n", "y", "population", "replications", "mean", "sd", "ks_stat", "ks_pvalue", "status"]
    table = ResultTable(cols, metadata=_metadata(config))
    label = _label(config)
    samples = []
    for p, y, n in config.cells():
        try:
            z1, _, params, cell = standardized_statistics(config, p, y, n, need_t2=False)
            ks = stats.kstest(z1, "norm")
            z = np.sort(z1)
            samples.append((p, n, z, normal_scores(z.size)))
            table.add(p=p, n=n, y=y, population=label, replications=config.replications,
                      mean=float(np.mean(z1)), sd=float(np.std(z1, ddof=1)),
                      ks_stat=float(ks.statistic), ks_pvalue=float(ks.pvalue), status="ok")
        except CorrspecError as exc:
            table.add(p=p, n=n, y=y, population=label, replications=config.replications, mean=None,
                      sd=None, ks_stat=None, ks_pvalue=None, status=f"{type(exc).__name__}: {exc}")
    return QQResult(table, samples)


def _rescaling(config: ExperimentConfig, R: np.ndarray) -> Optional[RescaledSpec]:
    return None if config.rescale == "identity" else RescaledSpec.inverse_of(R)


@dataclass
class LsdResult:
    table: ResultTable
    density: ResultTable


def esd_ks_distance(ev: np.ndarray, H, support=None) -> float:
    """Kolmogorov distance between the ESD of ``ev`` and the CDF of F^{y,H}."""
    ev = np.sort(np.maximum(np.asarray(ev, dtype=float), 0.0))
    F = lsd_cdf(ev, H, support)
    k = ev.size
    upper = np.arange(1, k + 1) / k
    lower = np.arange(0, k) / k
    return float(max(np.max(np.abs(upper - F)), np.max(np.abs(F - lower))))


def run_lsd_experiment(config: ExperimentConfig, grid_points: int = 400) -> LsdResult:
    """One sample per cell: KS distance of its rescaled spectrum to the limit, plus density points."""
    table = ResultTable(["p", "n", "y", "population", "support_a", "support_b", "atom", "ks", "status"],
                        metadata=_metadata(config))
    dens = ResultTable(["p", "n", "x", "density", "cdf"], metadata=dict(table.metadata))
    label = _label(config)
    for p, y, n in config.cells():
        try:
            cell = setup_cell(config, p, y, n)
            R = population_correlation(cell.spec)[0]
            M = _rescaling(config, R)
            job = _Job(spec=cell.spec, n=n, seed=config.seed, key=cell.key, kind="lss",
                       M_sqrt=None if M is None else M.sqrt)
            with threadpool_limits(limits=1):
                Rhat = sample_correlation_of(generate_batch(cell.spec, n, rng=replication_rng(
                    job.seed, job.key, 0)))
                A = Rhat if M is None else M.sqrt @ Rhat @ M.sqrt
                ev = np.linalg.eigvalsh(0.5 * (A + A.T))
            H = esd_measure(R, M, p / (n - 1))
            sup = support_interval(H)
            ks = esd_ks_distance(ev, H, sup)
            table.add(p=p, n=n, y=y, population=label, support_a=sup.a, support_b=sup.b,
                      atom=sup.atom_at_zero, ks=ks, status="ok")
            x = np.linspace(sup.a, sup.b, grid_points)
            f = lsd_density(x, H, sup)
            F = lsd_cdf(x, H, sup)
            for xi, fi, Fi in zip(x, f, F):
                dens.add(p=p, n=n, x=float(xi), density=float(fi), cdf=float(Fi))
        except CorrspecError as exc:
            table.add(p=p, n=n, y=y, population=label, support_a=None, support_b=None, atom=None,
                      ks=None, status=f"{type(exc).__name__}: {exc}")
    return LsdResult(table, dens)


@dataclass
class CltResult:
    table: ResultTable
    moments: list        # per cell: CltMoments


def run_clt_experiment(config: ExperimentConfig) -> CltResult:
    """Limit means and variances of centered LSS against Monte Carlo.

    The statistic is sum g(eigenvalues of Rhat M) - p int g dF^{y_{n-1}, H_p},
    over the full spectrum (zero eigenvalues included).
    """
    cols = ["p", "n", "y", "population", "g", "theory_mean", "theory_var", "replications",
            "mc_mean", "mc_mean_se", "mean_z", "mc_var", "var_ratio", "status"]
    table = ResultTable(cols, metadata=_metadata(config))
    label = _label(config)
    out = []
    for p, y, n in config.cells():
        try:
            if "log" in config.g and p / (n - 1) >= 1:
                raise ConfigurationError("g = log needs p < n - 1")
            cell = setup_cell(config, p, y, n)
            R, G = population_correlation(cell.spec)
            M = _rescaling(config, R)
            ctx = CltContext(R, M=M, G=G if isinstance(cell.structure, Linear) else None,
                             n=n - 1, structure=cell.structure, variant=config.variant)
            mom = clt_moments([(g, ctx) for g in config.g], num_nodes=config.num_nodes)
            out.append(mom)
            reps = config.replications
            if reps:
                H = esd_measure(R, M, p / (n - 1))
                centers = np.array([centering_integral(resolve_test_function(g), p, n, H) for g in config.g])
                job = _Job(spec=cell.spec, n=n, seed=config.seed, key=cell.key, kind="lss",
                           M_sqrt=None if M is None else M.sqrt, g=tuple(config.g))
                W = replicate(job, reps, config.workers) - centers
            for j, g in enumerate(config.g):
                row = dict(p=p, n=n, y=y, population=label, g=g, theory_mean=mom.means[j],
                           theory_var=mom.cov[j, j], replications=reps, status="ok")
                if reps:
                    w = W[:, j]
                    m, v = float(np.mean(w)), float(np.var(w, ddof=1))
                    se = math.sqrt(v / reps)
                    row.update(mc_mean=m, mc_mean_se=se, mean_z=(m - mom.means[j]) / se if se > 1e-8 else None,
                               mc_var=v, var_ratio=v / mom.cov[j, j] if mom.cov[j, j] > 0 else None)
                else:
                    row.update(mc_mean=None, mc_mean_se=None, mean_z=None, mc_var=None, var_ratio=None)
                table.add(**row)
        except CorrspecError as exc:
            for g in config.g:
                table.add(p=p, n=n, y=y, population=label, g=g, theory_mean=None, theory_var=None,
                          replications=config.replications, mc_mean=None, mc_mean_se=None, mean_z=None,
                          mc_var=None, var_ratio=None, status=f"{type(exc).__name__}: {exc}")
    return CltResult(table, out)


def _error_names(base) -> set:
    out, todo = set(), [base]
    while todo:
        c = todo.pop()
        out.add(c.__name__)
        todo.extend(c.__subclasses__())
    return out


def failure_kind(table: ResultTable) -> Optional[str]:
    """'numerical' if some cell stopped on a numerical error, else 'configuration' or None."""
    names = [r["status"].split(":")[0] for r in table.rows if r["status"] != "ok"]
    if not names:
        return None
    if set(names) & _error_names(NumericalError):
        return "numerical"
    return "configuration"
