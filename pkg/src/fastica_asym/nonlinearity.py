"""Contrast nonlinearities and the per-source moment sets that drive the asymptotics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .sources import SourceDistribution, raw_moment

ALPHA_TOL = 1e-8
QUAD_NODES = 96


class NonSeparableError(ValueError):
    """A source has ``alpha ~ 0`` for the chosen nonlinearity."""


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray]
    primitive: Callable[[np.ndarray], np.ndarray]

    def __call__(self, u):
        return self.g(u)


def _tanh_prime(u):
    t = np.tanh(u)
    return 1.0 - t * t


def _logcosh(u):
    # overflow-safe log(cosh(u))
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def _gauss(u):
    return u * np.exp(-0.5 * u * u)


def _gauss_prime(u):
    u2 = u * u
    return (1.0 - u2) * np.exp(-0.5 * u2)


BUILTINS = {
    "pow3": Nonlinearity("pow3", lambda u: u ** 3, lambda u: 3.0 * u ** 2, lambda u: u ** 4 / 4.0),
    "tanh": Nonlinearity("tanh", np.tanh, _tanh_prime, _logcosh),
    "gauss": Nonlinearity("gauss", _gauss, _gauss_prime, lambda u: -np.exp(-0.5 * u * u)),
}


def builtin(name: str) -> Nonlinearity:
    try:
        return BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}; expected one of {sorted(BUILTINS)}") from None


@dataclass(frozen=True)
class MomentSet:
    """Expectations of one (source, nonlinearity) pair.

    alpha = E[g'(z) - g(z) z], beta = E[g(z)^2], gamma = E[g(z) z], eta = E[g(z)],
    tau = (E[z^4] - 1) / 4 and skew = E[z^3].
    """

    alpha: float
    beta: float
    gamma: float
    eta: float
    tau: float
    skew: float
    alpha_tol: float = ALPHA_TOL

    @property
    def separable(self) -> bool:
        return abs(self.alpha) >= self.alpha_tol

    def require_separable(self, label: str = "source") -> None:
        if not self.separable:
            raise NonSeparableError(
                f"{label}: non-separable source for this nonlinearity (|alpha|={abs(self.alpha):.3g} "
                f"< {self.alpha_tol:g})")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("alpha_tol")
        d["separable"] = self.separable
        return d


def quadrature_rule(dist: SourceDistribution, n_nodes: int = QUAD_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with ``sum(w * f(x)) ~ E[f(z)]`` for ``z ~ dist``.

    Gauss-Hermite per mixture component, Gauss-Legendre for the uniform law and
    Gauss-Laguerre on each half-line for the Laplace law.
    """
    p = dist.params
    if dist.kind == "gauss_mixture":
        x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
        w = w / w.sum()
        nodes = [m + s * x for m, s in zip(p["means"], p["stddevs"])]
        weights = [c * w for c in p["weights"]]
        return np.concatenate(nodes), np.concatenate(weights)
    if dist.kind == "uniform":
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        return p["half_width"] * x, w / 2.0
    x, w = np.polynomial.laguerre.laggauss(n_nodes)
    b = p["scale"]
    return np.concatenate([b * x, -b * x]), np.concatenate([w, w]) / 2.0


def expectation(dist: SourceDistribution, f: Callable[[np.ndarray], np.ndarray],
                n_nodes: int = QUAD_NODES) -> float:
    x, w = quadrature_rule(dist, n_nodes)
    return float(np.dot(w, f(x)))


def compute_moments(dist: SourceDistribution, nl: Nonlinearity, *, method: str = "auto",
                    alpha_tol: float = ALPHA_TOL, n_nodes: int = QUAD_NODES) -> MomentSet:
    """Moment set of a standardized law under ``nl``.

    ``method="auto"`` uses the closed form for pow3 and quadrature otherwise.
    Non-separable pairs are returned with ``separable == False``; callers that
    need the asymptotic formulas should call :meth:`MomentSet.require_separable`.
    """
    m = [raw_moment(dist, k) for k in range(7)]
    tau = (m[4] - 1.0) / 4.0
    skew = m[3] - 3 * m[1] * m[2] + 2 * m[1] ** 3
    if method == "auto":
        method = "closed_form" if nl.name == "pow3" else "quadrature"
    if method == "closed_form":
        if nl.name != "pow3":
            raise ValueError(f"closed-form moments are only available for pow3, not {nl.name!r}")
        # alpha = 3 E[z^2] - E[z^4]
        return MomentSet(alpha=3.0 * m[2] - m[4], beta=m[6], gamma=m[4], eta=m[3],
                         tau=tau, skew=skew, alpha_tol=alpha_tol)
    if method != "quadrature":
        raise ValueError(f"unknown moment method {method!r}")
    x, w = quadrature_rule(dist, n_nodes)
    gx, gpx = nl.g(x), nl.g_prime(x)
    return MomentSet(alpha=float(np.dot(w, gpx - gx * x)), beta=float(np.dot(w, gx * gx)),
                     gamma=float(np.dot(w, gx * x)), eta=float(np.dot(w, gx)),
                     tau=tau, skew=skew, alpha_tol=alpha_tol)


def monte_carlo_moments(dist: SourceDistribution, nl: Nonlinearity, n: int,
                        rng: np.random.Generator) -> dict[str, tuple[float, float]]:
    """Sample estimates and standard errors of every moment, as an independent check."""
    z = dist.sample(n, rng)
    g, gp = nl.g(z), nl.g_prime(z)
    draws = {
        "alpha": gp - g * z,
        "beta": g * g,
        "gamma": g * z,
        "eta": g,
        "tau": (z ** 4 - 1.0) / 4.0,
        "skew": z ** 3,
    }
    return {k: (float(v.mean()), float(v.std(ddof=1) / np.sqrt(n))) for k, v in draws.items()}
