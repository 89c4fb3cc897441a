"""Source laws and the noiseless square mixing model ``y = H s``."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .seeding import MIXING_STREAM, SOURCE_STREAM, derive_rng, random_orthonormal

KINDS = ("gauss_mixture", "uniform", "laplace")
MAX_MOMENT_ORDER = 8


class DegenerateDistributionError(ValueError):
    """Raised when a law has zero variance and cannot be standardized."""


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@dataclass(frozen=True)
class SourceDistribution:
    """A scalar source law.

    ``params`` depends on ``kind``:

    * ``gauss_mixture``: ``weights``, ``means``, ``stddevs`` (tuples)
    * ``uniform``: ``half_width`` (support ``[-a, a]``)
    * ``laplace``: ``scale`` (location 0)

    ``shift`` and ``scale_factor`` record the affine map ``z = (x - shift) / scale_factor``
    applied by :func:`standardize`; they are ``0`` and ``1`` for a raw law.
    """

    kind: str
    params: dict = field(hash=False)
    shift: float = 0.0
    scale_factor: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}; expected one of {KINDS}")
        p = self.params
        if self.kind == "gauss_mixture":
            w = np.asarray(p["weights"], dtype=float)
            mu = np.asarray(p["means"], dtype=float)
            sd = np.asarray(p["stddevs"], dtype=float)
            if not (w.ndim == 1 and w.shape == mu.shape == sd.shape and w.size >= 1):
                raise ValueError("gauss_mixture weights, means and stddevs must be equal-length lists")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("gauss_mixture weights must be positive and sum to 1")
            if np.any(sd < 0):
                raise ValueError("gauss_mixture stddevs must be non-negative")
        elif self.kind == "uniform":
            if not p["half_width"] > 0:
                raise ValueError("uniform half_width must be positive")
        elif self.kind == "laplace":
            if not p["scale"] > 0:
                raise ValueError("laplace scale must be positive")

    # -- constructors -------------------------------------------------------

    @classmethod
    def gauss_mixture(cls, weights: Sequence[float], means: Sequence[float],
                      stddevs: Sequence[float]) -> SourceDistribution:
        return cls("gauss_mixture", {"weights": tuple(map(float, weights)),
                                     "means": tuple(map(float, means)),
                                     "stddevs": tuple(map(float, stddevs))})

    @classmethod
    def uniform(cls, half_width: float) -> SourceDistribution:
        return cls("uniform", {"half_width": float(half_width)})

    @classmethod
    def laplace(cls, scale: float) -> SourceDistribution:
        return cls("laplace", {"scale": float(scale)})

    @classmethod
    def from_dict(cls, spec: dict) -> SourceDistribution:
        """Build from the config-file form, e.g. ``{"kind": "uniform", "half_width": 1}``.

        The result is standardized unless ``"standardize": false`` is given.
        """
        spec = dict(spec)
        kind = spec.pop("kind", None)
        do_std = spec.pop("standardize", True)
        affine = {k: float(spec.pop(k)) for k in ("shift", "scale_factor") if k in spec}
        if kind == "gauss_mixture":
            dist = cls.gauss_mixture(spec.pop("weights"), spec.pop("means"), spec.pop("stddevs"))
        elif kind == "uniform":
            dist = cls.uniform(spec.pop("half_width", 1.0))
        elif kind == "laplace":
            dist = cls.laplace(spec.pop("scale", 1.0))
        else:
            raise ValueError(f"unknown distribution kind {kind!r}; expected one of {KINDS}")
        if spec:
            raise ValueError(f"unexpected keys for {kind}: {sorted(spec)}")
        if do_std:
            return standardize(dist)
        return replace(dist, **affine) if affine else dist

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        out.update({k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()})
        out["standardize"] = False
        out["shift"] = self.shift
        out["scale_factor"] = self.scale_factor
        return out

    # -- moments -----------------------------------------------------------

    @property
    def mean(self) -> float:
        return raw_moment(self, 1)

    @property
    def variance(self) -> float:
        return raw_moment(self, 2) - raw_moment(self, 1) ** 2

    @property
    def is_symmetric(self) -> bool:
        """True when the law is symmetric about zero."""
        if self.kind != "gauss_mixture":
            return True
        w, mu, sd = (np.asarray(self.params[k]) for k in ("weights", "means", "stddevs"))
        fwd = sorted(zip(mu.round(14), sd.round(14), w.round(14)))
        rev = sorted(zip((-mu).round(14) + 0.0, sd.round(14), w.round(14)))
        return fwd == rev

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample(self, n, rng)


def raw_moment(dist: SourceDistribution, k: int) -> float:
    """Exact ``E[z**k]`` for ``0 <= k <= 8``."""
    if not 0 <= k <= MAX_MOMENT_ORDER:
        raise ValueError(f"moment order k={k} outside supported range 0..{MAX_MOMENT_ORDER}")
    p = dist.params
    if dist.kind == "uniform":
        return 0.0 if k % 2 else p["half_width"] ** k / (k + 1)
    if dist.kind == "laplace":
        return 0.0 if k % 2 else math.factorial(k) * p["scale"] ** k
    total = 0.0
    for w, mu, sd in zip(p["weights"], p["means"], p["stddevs"]):
        # E[(mu + sd Z)^k] by binomial expansion; odd Gaussian moments vanish
        total += w * sum(math.comb(k, m) * mu ** (k - m) * sd ** m * _double_factorial(m - 1)
                         for m in range(0, k + 1, 2))
    return total


def standardize(dist: SourceDistribution) -> SourceDistribution:
    """Affinely rescale ``dist`` to zero mean and unit variance."""
    mean = raw_moment(dist, 1)
    var = raw_moment(dist, 2) - mean ** 2
    if not var > 1e-300:
        raise DegenerateDistributionError(f"{dist.kind} law has zero variance")
    sd = math.sqrt(var)
    shift = dist.shift + dist.scale_factor * mean
    scale = dist.scale_factor * sd
    p = dist.params
    if dist.kind == "uniform":
        new = {"half_width": p["half_width"] / sd}
    elif dist.kind == "laplace":
        new = {"scale": p["scale"] / sd}
    else:
        new = {"weights": p["weights"],
               "means": tuple((m - mean) / sd for m in p["means"]),
               "stddevs": tuple(s / sd for s in p["stddevs"])}
    return SourceDistribution(dist.kind, new, shift=shift, scale_factor=scale)


def sample(dist: SourceDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    p = dist.params
    if dist.kind == "uniform":
        a = p["half_width"]
        return rng.uniform(-a, a, size=n)
    if dist.kind == "laplace":
        return rng.laplace(0.0, p["scale"], size=n)
    w = np.asarray(p["weights"])
    comp = rng.choice(w.size, size=n, p=w)
    return np.asarray(p["means"])[comp] + np.asarray(p["stddevs"])[comp] * rng.standard_normal(n)


def default_bimodal() -> SourceDistribution:
    """Asymmetric two-component Gaussian mixture used by the reference experiments."""
    return standardize(SourceDistribution.gauss_mixture((0.7, 0.3), (-1.0, 7.0 / 3.0), (1.0, 1.0)))


def random_mixing(d: int, seed: int) -> np.ndarray:
    """Well-conditioned random mixing matrix ``Q diag(s)`` with ``s`` in [0.5, 2]."""
    rng = derive_rng(seed, MIXING_STREAM)
    q = random_orthonormal(d, rng)
    return q * rng.uniform(0.5, 2.0, size=d)


@dataclass(frozen=True)
class MixingModel:
    H: np.ndarray
    sources: tuple[SourceDistribution, ...]

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "sources", tuple(self.sources))
        d = len(self.sources)
        if H.shape != (d, d):
            raise ValueError(f"H has shape {H.shape}, expected ({d}, {d}) for {d} sources")
        if d < 2:
            raise ValueError("the mixing model needs at least two sources")
        if not np.all(np.isfinite(H)) or np.linalg.matrix_rank(H) < d:
            raise ValueError("mixing matrix H is singular")

    @property
    def d(self) -> int:
        return len(self.sources)

    @property
    def source_means(self) -> np.ndarray:
        return np.array([s.mean for s in self.sources])

    @property
    def mean(self) -> np.ndarray:
        """``E[y]``."""
        return self.H @ self.source_means

    @property
    def cov(self) -> np.ndarray:
        """``Cov(y) = H diag(var) H^T``; equals ``H H^T`` for standardized sources."""
        var = np.array([s.variance for s in self.sources])
        return (self.H * var) @ self.H.T

    @property
    def B(self) -> np.ndarray:
        """Demixing target ``(H^-1)^T``; its columns are the vectors the estimators aim at."""
        return np.linalg.inv(self.H).T


def generate_sources(model: MixingModel, n: int, seed: int, stream: Sequence[int] = ()) -> np.ndarray:
    """Draw the ``d x n`` source matrix; source ``i`` uses stream ``(*stream, SOURCE_STREAM, i)``."""
    return np.vstack([
        src.sample(n, derive_rng(seed, *stream, SOURCE_STREAM, i))
        for i, src in enumerate(model.sources)
    ])


def generate_observations(model: MixingModel, n: int, seed: int, stream: Sequence[int] = ()) -> np.ndarray:
    """Observed ``d x n`` matrix whose column ``t`` is ``H s(t)``."""
    if n <= model.d:
        raise ValueError(f"need N > d, got N={n}, d={model.d}")
    return model.H @ generate_sources(model, n, seed, stream)


def write_observations_csv(path, y: np.ndarray) -> None:
    """One column per channel with header ``y1..yd``, 17 significant digits."""
    y = np.asarray(y)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"y{i + 1}" for i in range(y.shape[0])])
        for col in y.T:
            wr.writerow([f"{v:.17g}" for v in col])


def read_observations_csv(path) -> np.ndarray:
    """Inverse of :func:`write_observations_csv`; returns a ``d x N`` array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: every row must have {len(header)} columns")
    return data.T
