"""Population laws and sample generation.

Two data structures are supported:

* elliptical:  y = rho * Gamma @ x + mu, with x uniform on the unit sphere and
  an independent radius rho normalised so that E rho^2 = p;
* linear independent components: y = Gamma @ x + mu with i.i.d. standardised
  entries in x.

The second-order radius parameter tau (E rho^4 = p^2 + tau p + o(p)) and the
entry cumulant beta_x = E x^4 - 3 are stored with the law rather than
estimated.  The proof-side moment condition on (rho^2 - p)/sqrt(p) has no
runtime role and is not checked.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, InvalidDimensionError, SingularMatrixError

RandomLike = Union[None, int, np.random.Generator]


class Kind(str, enum.Enum):
    ELLIPTICAL = "Elliptical"
    LINEAR = "LinearIC"


class RadiusLaw(str, enum.Enum):
    CHISQ = "ChiSq"
    GAMMA = "GammaNormalized"
    CONSTANT = "Constant"


class EntryLaw(str, enum.Enum):
    GAUSSIAN = "Gaussian"
    LAPLACE = "DoubleExponential"


RADIUS_TAU = {RadiusLaw.CHISQ: 2.0, RadiusLaw.GAMMA: 4.0, RadiusLaw.CONSTANT: 0.0}
ENTRY_BETA = {EntryLaw.GAUSSIAN: 0.0, EntryLaw.LAPLACE: 3.0}


def _rng(rng: RandomLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    """Full description of a data-generating law.

    ``tau`` and ``beta_x`` default to the value implied by the chosen law.
    """

    kind: Kind
    gamma: np.ndarray
    mu: Optional[np.ndarray] = None
    radius_law: Optional[RadiusLaw] = None
    entry_law: Optional[EntryLaw] = None
    tau: Optional[float] = None
    beta_x: Optional[float] = None

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        gamma = np.array(self.gamma, dtype=float)
        if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1] or gamma.shape[0] < 1:
            raise InvalidDimensionError(f"gamma must be a non-empty square matrix, got shape {gamma.shape}")
        sv = np.linalg.svd(gamma, compute_uv=False)
        if not np.all(np.isfinite(sv)) or sv[-1] <= 1e-10 * sv[0]:
            raise SingularMatrixError("gamma must have full rank")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        p = gamma.shape[0]
        mu = np.zeros(p) if self.mu is None else np.array(self.mu, dtype=float).reshape(-1)
        if mu.shape != (p,):
            raise ConfigurationError(f"mu has length {mu.size}, expected {p}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if kind is Kind.ELLIPTICAL:
            law = RadiusLaw(self.radius_law or RadiusLaw.CHISQ)
            object.__setattr__(self, "radius_law", law)
            object.__setattr__(self, "entry_law", None)
            if self.tau is None:
                object.__setattr__(self, "tau", RADIUS_TAU[law])
            object.__setattr__(self, "beta_x", None)
        else:
            law = EntryLaw(self.entry_law or EntryLaw.GAUSSIAN)
            object.__setattr__(self, "entry_law", law)
            object.__setattr__(self, "radius_law", None)
            if self.beta_x is None:
                object.__setattr__(self, "beta_x", ENTRY_BETA[law])
            object.__setattr__(self, "tau", None)

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    # JSON -----------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "p": self.p,
            "gamma": self.gamma.tolist(),
            "mu": self.mu.tolist(),
            "radius_law": None if self.radius_law is None else self.radius_law.value,
            "tau": self.tau,
            "entry_law": None if self.entry_law is None else self.entry_law.value,
            "beta_x": self.beta_x,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        try:
            spec = cls(
                kind=d["kind"],
                gamma=np.asarray(d["gamma"], dtype=float),
                mu=d.get("mu"),
                radius_law=d.get("radius_law"),
                entry_law=d.get("entry_law"),
                tau=d.get("tau"),
                beta_x=d.get("beta_x"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"invalid population document: {exc}") from exc
        if "p" in d and int(d["p"]) != spec.p:
            raise ConfigurationError(f"declared p={d['p']} does not match gamma ({spec.p})")
        return spec

    @classmethod
    def from_json(cls, text: str) -> "PopulationSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Columns are observations: ``data`` has shape (p, n)."""

    data: np.ndarray
    spec_ref: Optional[PopulationSpec] = None
    seed: Optional[int] = None
    n: int = field(init=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise InvalidDimensionError("batch data must be a p x n matrix")
        if data.shape[1] < 2:
            raise InsufficientDataError(f"need at least 2 observations, got {data.shape[1]}")
        if self.spec_ref is not None and data.shape[0] != self.spec_ref.p:
            raise ConfigurationError(f"batch has {data.shape[0]} rows, spec has p={self.spec_ref.p}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "n", data.shape[1])

    @property
    def p(self) -> int:
        return self.data.shape[0]


def sample_unit_sphere(p: int, rng: RandomLike = None, size: Optional[int] = None) -> np.ndarray:
    """Uniform draw(s) from the unit sphere in R^p (normalised Gaussian).

    With ``size`` given, returns a (p, size) matrix of independent columns.
    """
    if int(p) < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {p}")
    gen = _rng(rng)
    shape = (p,) if size is None else (p, size)
    x = gen.standard_normal(shape)
    norm = np.linalg.norm(x, axis=0)
    # a zero Gaussian vector has probability zero; redraw defensively
    while np.any(norm == 0):
        bad = norm == 0
        if size is None:
            x = gen.standard_normal(shape)
        else:
            x[:, bad] = gen.standard_normal((p, int(bad.sum())))
        norm = np.linalg.norm(x, axis=0)
    return x / norm


def gamma_scale(p: int) -> float:
    """Deterministic factor c with E (c X)^2 = p for X ~ Gamma(p, 1)."""
    return float(np.sqrt(p / (p + p * p)))


def sample_radius(law: RadiusLaw, p: int, rng: RandomLike = None, size: Optional[int] = None):
    """Radius draws with E rho^2 = p."""
    if int(p) < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {p}")
    law = RadiusLaw(law)
    gen = _rng(rng)
    if law is RadiusLaw.CHISQ:
        out = np.sqrt(gen.chisquare(p, size=size))
    elif law is RadiusLaw.GAMMA:
        out = gamma_scale(p) * gen.gamma(p, 1.0, size=size)
    else:
        out = np.sqrt(float(p)) if size is None else np.full(size, np.sqrt(float(p)))
    return out


def standardized_entries(law: EntryLaw, shape, rng: RandomLike = None) -> np.ndarray:
    law = EntryLaw(law)
    gen = _rng(rng)
    if law is EntryLaw.GAUSSIAN:
        return gen.standard_normal(shape)
    # Laplace(0, b) has variance 2 b^2
    return gen.laplace(0.0, 1.0 / np.sqrt(2.0), size=shape)


def generate_batch(spec: PopulationSpec, n: int, rng: RandomLike = None, seed: Optional[int] = None) -> SampleBatch:
    """Draw n independent observations from ``spec``."""
    if int(n) < 2:
        raise InsufficientDataError(f"need n >= 2, got {n}")
    gen = _rng(rng if rng is not None else seed)
    p = spec.p
    if spec.kind is Kind.ELLIPTICAL:
        x = sample_unit_sphere(p, gen, size=n)
        rho = sample_radius(spec.radius_law, p, gen, size=n)
        z = x * rho
    else:
        z = standardized_entries(spec.entry_law, (p, n), gen)
    data = spec.gamma @ z + spec.mu[:, None]
    return SampleBatch(data=data, spec_ref=spec, seed=seed)


def population_correlation(spec_or_gamma) -> tuple[np.ndarray, np.ndarray]:
    """Return (R, G) with Sigma = Gamma Gamma^T, G = diag(Sigma)^{-1/2} Gamma, R = G G^T."""
    gamma = spec_or_gamma.gamma if isinstance(spec_or_gamma, PopulationSpec) else np.asarray(spec_or_gamma, float)
    sigma = gamma @ gamma.T
    d = np.diag(sigma).copy()
    if np.any(d <= 0):
        k = int(np.argmin(d))
        raise SingularMatrixError(f"Sigma has non-positive diagonal entry at index {k}")
    scale = 1.0 / np.sqrt(d)
    G = gamma * scale[:, None]
    R = sigma * np.outer(scale, scale)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R, G
