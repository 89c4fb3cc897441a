"""Centering and whitening under the four preprocessing scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .linalg import covariance, inv_sqrt


class Scenario(IntEnum):
    """Preprocessing scenario.

    ===  ===========  ==========================================
    id   centering    whitening
    ===  ===========  ==========================================
    1    theoretical  theoretical, ``Cov(y)``
    2    empirical    theoretical, ``Cov(y)``
    3    theoretical  empirical about the true mean (``C~``)
    4    empirical    empirical about the sample mean (``C^``)
    ===  ===========  ==========================================
    """

    THEO_THEO = 1
    EMP_CENTER = 2
    EMP_WHITEN = 3
    EMP_EMP = 4

    @property
    def centering(self) -> str:
        return "empirical" if self in (Scenario.EMP_CENTER, Scenario.EMP_EMP) else "theoretical"

    @property
    def whitening(self) -> str:
        return "empirical" if self >= Scenario.EMP_WHITEN else "theoretical"

    @property
    def needs_true_mean(self) -> bool:
        return self.centering == "theoretical"

    @property
    def needs_true_cov(self) -> bool:
        return self.whitening == "theoretical"


@dataclass(frozen=True)
class Truth:
    """Population mean and covariance of the observations."""

    mean: np.ndarray | None = None
    cov: np.ndarray | None = None


@dataclass
class StandardizedData:
    x: np.ndarray
    sphering: np.ndarray
    center_used: np.ndarray
    scenario: Scenario


def preprocess(y: np.ndarray, scenario, truth: Truth | None = None) -> StandardizedData:
    """Standardize ``y`` (``d x N``) per ``scenario``.

    Scenarios 1-3 need population quantities from ``truth``; they are never
    replaced by sample estimates.
    """
    scenario = Scenario(int(scenario))
    y = np.asarray(y, dtype=float)
    d, n = y.shape
    if n <= d:
        raise ValueError(f"need N > d, got N={n}, d={d}")
    truth = truth or Truth()

    if scenario.needs_true_mean:
        if truth.mean is None:
            raise ValueError(f"scenario {int(scenario)} requires the true mean E[y]")
        center = np.asarray(truth.mean, dtype=float)
    else:
        center = y.mean(axis=1)

    if scenario.needs_true_cov:
        if truth.cov is None:
            raise ValueError(f"scenario {int(scenario)} requires the true covariance Cov(y)")
        C = np.asarray(truth.cov, dtype=float)
    else:
        # scenario 3 scatters about E[y] (C~), scenario 4 about the sample mean (C^)
        C = covariance(y, center)

    sphering = inv_sqrt(C)
    x = sphering @ (y - center[:, None])
    return StandardizedData(x=x, sphering=sphering, center_used=center, scenario=scenario)
