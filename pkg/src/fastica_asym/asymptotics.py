"""Closed-form asymptotic covariances of FastICA estimates.

Index conventions: sources are numbered ``0..d-1``. For the deflationary
algorithm ``extraction_order[p]`` is the source found at step ``p``; "earlier"
and "later" sources below are relative to that order. ``R`` is the limiting
covariance of ``sqrt(N) (C^{-1/2} w_i - b_i)`` and ``V[i, j]`` the limiting
variance of ``sqrt(N) (G_ij - delta_ij)``, both indexed by source.

Scenario 1 deflationary coefficients come in two candidate forms: ``beta``
(``beta / alpha^2``, consistent with the centering-difference identities) and
``beta_squared`` (``beta^2 / alpha^2``). ``printed`` selects ``beta_squared``
for earlier sources and ``beta`` for later ones. See :func:`dfl_gain_variance`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nonlinearity import MomentSet, NonSeparableError
from .preprocess import Scenario

ALGORITHMS = ("dfl", "sym")
DFL1_FORMS = ("beta", "beta_squared", "printed")
COV_FORMS = ("printed", "derived")


@dataclass
class TheoryInput:
    moments: list[MomentSet]
    B: np.ndarray
    extraction_order: tuple[int, ...] | None = None

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        d = len(self.moments)
        if self.B.shape != (d, d):
            raise ValueError(f"B has shape {self.B.shape}, expected ({d}, {d})")
        if self.extraction_order is None:
            self.extraction_order = tuple(range(d))
        self.extraction_order = tuple(int(i) for i in self.extraction_order)
        if sorted(self.extraction_order) != list(range(d)):
            raise ValueError(f"extraction_order {self.extraction_order} is not a permutation of 0..{d - 1}")

    @classmethod
    def from_model(cls, model, moments, extraction_order=None) -> TheoryInput:
        return cls(moments=list(moments), B=model.B, extraction_order=extraction_order)

    @property
    def d(self) -> int:
        return len(self.moments)

    @property
    def H(self) -> np.ndarray:
        """``H = (B^T)^{-1}``; column ``j`` satisfies ``h_j^T b_k = delta_jk``."""
        return np.linalg.inv(self.B.T)

    def with_order(self, order) -> TheoryInput:
        return TheoryInput(self.moments, self.B, tuple(order))

    def position(self, i: int) -> int:
        return self.extraction_order.index(i)

    def earlier(self, i: int) -> list[int]:
        return list(self.extraction_order[: self.position(i)])

    def later(self, i: int) -> list[int]:
        return list(self.extraction_order[self.position(i) + 1:])

    def check(self, indices) -> None:
        for j in indices:
            self.moments[j].require_separable(f"source {j}")


def _outer(u, v):
    return np.outer(u, v)


def _dfl1_coef(m: MomentSet, form: str, earlier: bool) -> float:
    if form not in DFL1_FORMS:
        raise ValueError(f"unknown scenario-1 form {form!r}; expected one of {DFL1_FORMS}")
    squared = form == "beta_squared" or (form == "printed" and earlier)
    return (m.beta ** 2 if squared else m.beta) / m.alpha ** 2


def _check_form(form: str) -> None:
    if form not in COV_FORMS:
        raise ValueError(f"unknown covariance form {form!r}; expected one of {COV_FORMS}")


def dfl_cov(i: int, scenario, inp: TheoryInput, dfl1: str = "beta",
            form: str = "printed") -> np.ndarray:
    """Limiting covariance of the deflationary estimate of ``b_i``.

    ``dfl1`` only affects scenario 1; ``"beta_squared"`` reproduces the theorem's
    coefficients term for term, the default matches the gain corollary.
    """
    _check_form(form)
    k = Scenario(int(scenario))
    before, after = inp.earlier(i), inp.later(i)
    inp.check(before + [i])
    M = inp.moments
    b = inp.B.T  # b[j] is the j-th column of B
    mi = M[i]
    R = np.zeros((inp.d, inp.d))

    for j in before:
        mj = M[j]
        if k == Scenario.THEO_THEO:
            c = _dfl1_coef(mj, dfl1, earlier=True)
        elif k == Scenario.EMP_CENTER:
            c = (mj.beta - mj.eta ** 2) / mj.alpha ** 2
        elif k == Scenario.EMP_WHITEN:
            c = (mj.beta - mj.gamma ** 2 + mj.alpha ** 2) / mj.alpha ** 2
        else:
            c = (mj.beta - mj.gamma ** 2 + mj.alpha ** 2 - mj.eta ** 2) / mj.alpha ** 2
        R += c * _outer(b[j], b[j])

    if k in (Scenario.THEO_THEO, Scenario.EMP_WHITEN):
        for p in before:
            for q in before:
                if p != q:
                    R += M[p].eta * M[q].eta / (M[p].alpha * M[q].alpha) * _outer(b[p], b[q])

    if k == Scenario.THEO_THEO:
        c_after = _dfl1_coef(mi, dfl1, earlier=False)
    elif k == Scenario.EMP_CENTER:
        c_after = (mi.beta - mi.eta ** 2) / mi.alpha ** 2
    elif k == Scenario.EMP_WHITEN:
        c_after = (mi.beta - mi.gamma ** 2) / mi.alpha ** 2
    else:
        c_after = (mi.beta - mi.gamma ** 2 - mi.eta ** 2) / mi.alpha ** 2
    for j in after:
        R += c_after * _outer(b[j], b[j])

    if k in (Scenario.EMP_WHITEN, Scenario.EMP_EMP):
        R += mi.tau * _outer(b[i], b[i])
        if form == "printed":
            skew_scale = 1.0
        else:
            skew_scale = 0.5 if k == Scenario.EMP_WHITEN else 0.0
        for j in before:
            c = skew_scale * mi.skew * M[j].eta / M[j].alpha
            R -= c * (_outer(b[j], b[i]) + _outer(b[i], b[j]))
    return R


def sym_cov(i: int, scenario, inp: TheoryInput, form: str = "printed") -> np.ndarray:
    """Limiting covariance of the symmetric estimate of ``b_i``."""
    _check_form(form)
    derived = form == "derived"
    k = Scenario(int(scenario))
    inp.check(range(inp.d))
    M = inp.moments
    b = inp.B.T
    mi = M[i]
    others = [j for j in range(inp.d) if j != i]
    R = np.zeros((inp.d, inp.d))
    eta_sum = np.zeros(inp.d)

    for j in others:
        mj = M[j]
        A = abs(mi.alpha) + abs(mj.alpha)
        if k == Scenario.THEO_THEO:
            num = mi.beta + mj.beta - 2 * mi.gamma * mj.gamma - (1 if derived else 2) * mj.eta ** 2
        elif k == Scenario.EMP_CENTER:
            eta2 = mi.eta ** 2 + mj.eta ** 2 if derived else 2 * mi.eta ** 2
            num = mi.beta + mj.beta - 2 * mi.gamma * mj.gamma - eta2
        elif k == Scenario.EMP_WHITEN:
            num = mi.beta - mi.gamma ** 2 + mj.beta - mj.gamma ** 2 + mj.alpha ** 2 - mj.eta ** 2
        else:
            num = (mi.beta - mi.gamma ** 2 + mj.beta - mj.gamma ** 2 + mj.alpha ** 2
                   - mi.eta ** 2 - mj.eta ** 2)
        R += num / A ** 2 * _outer(b[j], b[j])
        sj = np.sign(mj.alpha) if derived else 1.0
        eta_sum += sj * mj.eta * b[j] / A

    if k == Scenario.THEO_THEO:
        R += (1 if derived else 2) * _outer(eta_sum, eta_sum)
    elif k == Scenario.EMP_WHITEN:
        R += _outer(eta_sum, eta_sum)
        for j in others:
            A = abs(mi.alpha) + abs(M[j].alpha)
            sj = np.sign(M[j].alpha) if derived else 1.0
            R -= sj * mi.skew * M[j].eta / (2 * A) * (_outer(b[j], b[i]) + _outer(b[i], b[j]))
    if k in (Scenario.EMP_WHITEN, Scenario.EMP_EMP):
        R += mi.tau * _outer(b[i], b[i])
    return R


def dfl_gain_variance(i: int, j: int, scenario, inp: TheoryInput, dfl1: str = "beta") -> float:
    """Limiting variance of ``sqrt(N)(G_ij - delta_ij)`` for deflationary FastICA.

    ``i`` and ``j`` are source indices; which case applies (``j`` extracted
    before, equal to, or after ``i``) follows ``inp.extraction_order``.
    """
    k = Scenario(int(scenario))
    M = inp.moments
    if i == j:
        # no alpha in the diagonal law
        return M[i].tau if k >= Scenario.EMP_WHITEN else 0.0
    if inp.position(j) < inp.position(i):
        m = M[j]
        m.require_separable(f"source {j}")
        if k == Scenario.THEO_THEO:
            return _dfl1_coef(m, dfl1, earlier=True)
        if k == Scenario.EMP_CENTER:
            return (m.beta - m.eta ** 2) / m.alpha ** 2
        if k == Scenario.EMP_WHITEN:
            return (m.beta - m.gamma ** 2 + m.alpha ** 2) / m.alpha ** 2
        return (m.beta - m.gamma ** 2 + m.alpha ** 2 - m.eta ** 2) / m.alpha ** 2
    m = M[i]
    m.require_separable(f"source {i}")
    if k == Scenario.THEO_THEO:
        return _dfl1_coef(m, dfl1, earlier=False)
    if k == Scenario.EMP_CENTER:
        return (m.beta - m.eta ** 2) / m.alpha ** 2
    if k == Scenario.EMP_WHITEN:
        return (m.beta - m.gamma ** 2) / m.alpha ** 2
    return (m.beta - m.gamma ** 2 - m.eta ** 2) / m.alpha ** 2


def sym_gain_variance(i: int, j: int, scenario, inp: TheoryInput, form: str = "printed") -> float:
    _check_form(form)
    k = Scenario(int(scenario))
    mi, mj = inp.moments[i], inp.moments[j]
    if i == j:
        return mi.tau if k >= Scenario.EMP_WHITEN else 0.0
    mi.require_separable(f"source {i}")
    mj.require_separable(f"source {j}")
    A2 = (abs(mi.alpha) + abs(mj.alpha)) ** 2
    if k == Scenario.THEO_THEO:
        return (mi.beta + mj.beta - 2 * mi.gamma * mj.gamma) / A2
    if k == Scenario.EMP_CENTER:
        eta2 = mi.eta ** 2 + mj.eta ** 2 if form == "derived" else 2 * mi.eta ** 2
        return (mi.beta + mj.beta - 2 * mi.gamma * mj.gamma - eta2) / A2
    if k == Scenario.EMP_WHITEN:
        return (mi.beta - mi.gamma ** 2 + mj.beta - mj.gamma ** 2 + mj.alpha ** 2) / A2
    return (mi.beta - mi.gamma ** 2 + mj.beta - mj.gamma ** 2 + mj.alpha ** 2
            - mi.eta ** 2 - mj.eta ** 2) / A2


def gain_variance(algorithm: str, i: int, j: int, scenario, inp: TheoryInput, **kw) -> float:
    if algorithm == "dfl":
        return dfl_gain_variance(i, j, scenario, inp, **kw)
    if algorithm == "sym":
        return sym_gain_variance(i, j, scenario, inp, **kw)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def cov_matrix(algorithm: str, i: int, scenario, inp: TheoryInput, **kw) -> np.ndarray:
    if algorithm == "dfl":
        return dfl_cov(i, scenario, inp, **kw)
    if algorithm == "sym":
        return sym_cov(i, scenario, inp, **kw)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def cov_implied_gain_variance(algorithm: str, i: int, j: int, scenario, inp: TheoryInput, **kw) -> float:
    """``h_j^T R_i h_j``: the gain-entry variance implied by the covariance theorem."""
    h = inp.H[:, j]
    return float(h @ cov_matrix(algorithm, i, scenario, inp, **kw) @ h)


def theorem_corollary_agree(algorithm: str, i: int, j: int, scenario, dfl1: str = "beta") -> bool:
    """Whether the covariance theorem and the gain corollary coincide symbolically for this entry.

    They differ only for deflationary scenario 1 off-diagonal entries whenever the
    corollary form is not ``beta_squared``.
    """
    if algorithm == "dfl" and int(scenario) == 1 and i != j:
        return dfl1 == "beta_squared"
    return True


@dataclass
class VarianceTable:
    V: np.ndarray
    scenario: int
    algorithm: str
    extraction_order: tuple[int, ...] | None = None
    theorem_V: np.ndarray | None = None
    dfl1: str | None = None

    def to_dict(self) -> dict:
        out = {"algorithm": self.algorithm, "scenario": int(self.scenario), "V": self.V.tolist()}
        if self.algorithm == "dfl":
            out["extraction_order"] = list(self.extraction_order)
            out["scenario1_form"] = self.dfl1
        if self.theorem_V is not None:
            out["theorem_V"] = self.theorem_V.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> VarianceTable:
        order = d.get("extraction_order")
        tv = d.get("theorem_V")
        return cls(V=np.asarray(d["V"], dtype=float), scenario=int(d["scenario"]),
                   algorithm=d["algorithm"], extraction_order=tuple(order) if order else None,
                   theorem_V=None if tv is None else np.asarray(tv, dtype=float),
                   dfl1=d.get("scenario1_form"))


def predict(algorithm: str, scenario, inp: TheoryInput, dfl1: str = "beta") -> VarianceTable:
    """Full ``d x d`` table of gain-entry variances plus the covariance-theorem values."""
    d = inp.d
    kw = {"dfl1": dfl1} if algorithm == "dfl" else {}
    V = np.array([[gain_variance(algorithm, i, j, scenario, inp, **kw) for j in range(d)]
                  for i in range(d)])
    theo_kw = {"dfl1": "beta_squared"} if algorithm == "dfl" else {}
    TV = np.array([[cov_implied_gain_variance(algorithm, i, j, scenario, inp, **theo_kw)
                    for j in range(d)] for i in range(d)])
    return VarianceTable(V=V, scenario=int(scenario), algorithm=algorithm,
                         extraction_order=inp.extraction_order if algorithm == "dfl" else None,
                         theorem_V=TV, dfl1=dfl1 if algorithm == "dfl" else None)


def predict_all(inp: TheoryInput, dfl1: str = "beta") -> list[VarianceTable]:
    return [predict(a, k, inp, dfl1=dfl1) for a in ALGORITHMS for k in Scenario]


@dataclass
class CenteringPenalty:
    """Theoretical-minus-empirical centering differences, by subtraction and in closed form."""

    delta12: float
    delta34: float
    delta12_closed: float
    delta34_closed: float
    tol: float = field(default=1e-12, repr=False)

    @property
    def agree(self) -> bool:
        return (abs(self.delta12 - self.delta12_closed) <= self.tol
                and abs(self.delta34 - self.delta34_closed) <= self.tol)


def centering_penalty(i: int, j: int, algorithm: str, inp: TheoryInput) -> CenteringPenalty:
    M = inp.moments
    V = [gain_variance(algorithm, i, j, k, inp) for k in Scenario]
    if algorithm == "dfl":
        if i == j:
            c12 = c34 = 0.0
        else:
            src = j if inp.position(j) < inp.position(i) else i
            c12 = c34 = M[src].eta ** 2 / M[src].alpha ** 2
    elif algorithm == "sym":
        if i == j:
            c12 = c34 = 0.0
        else:
            A2 = (abs(M[i].alpha) + abs(M[j].alpha)) ** 2
            c12 = 2 * M[i].eta ** 2 / A2
            c34 = (M[i].eta ** 2 + M[j].eta ** 2) / A2
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return CenteringPenalty(delta12=V[0] - V[1], delta34=V[2] - V[3],
                            delta12_closed=c12, delta34_closed=c34)


__all__ = [
    "COV_FORMS", "TheoryInput", "VarianceTable", "CenteringPenalty", "NonSeparableError",
    "dfl_cov", "sym_cov", "dfl_gain_variance", "sym_gain_variance", "gain_variance",
    "cov_implied_gain_variance", "theorem_corollary_agree", "centering_penalty",
    "predict", "predict_all",
]
