"""Gain matrix and removal of the permutation / sign indeterminacy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

AMBIGUITY_TOL = 1e-6


def gain_matrix(W: np.ndarray, sphering: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``W^T C^{-1/2} H``; row ``p`` belongs to estimated component ``p``, column ``j`` to source ``j``."""
    return np.asarray(W).T @ np.asarray(sphering) @ np.asarray(H)


@dataclass
class GainSample:
    """An aligned gain matrix.

    ``row_of_source[i]`` is the row of ``G_raw`` matched to source ``i`` and
    ``signs[i]`` its sign, so ``G_aligned[i] = signs[i] * G_raw[row_of_source[i]]``.
    For deflationary output the rows of ``G_raw`` are in extraction order, so
    ``extraction_order[p]`` (= source found at step ``p``) is the inverse map.
    """

    G_raw: np.ndarray
    row_of_source: np.ndarray
    signs: np.ndarray
    G_aligned: np.ndarray
    objective: float
    runner_up: float
    errors_scaled: np.ndarray | None = None

    @property
    def extraction_order(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.argsort(self.row_of_source))

    @property
    def ambiguous(self) -> bool:
        return self.objective - self.runner_up < AMBIGUITY_TOL


def _best_assignment(score: np.ndarray) -> tuple[np.ndarray, float]:
    rows, cols = linear_sum_assignment(score, maximize=True)
    return cols, float(score[rows, cols].sum())


def align(G: np.ndarray, n_samples: int | None = None) -> GainSample:
    """Permute and sign-flip rows so the gain is closest to the identity.

    The permutation maximizes ``sum_i |G[row(i), i]|``. The runner-up objective
    is the best assignment that differs from the optimum in at least one pair,
    i.e. the maximum over optima with one optimal pair forbidden.
    """
    G = np.asarray(G, dtype=float)
    d = G.shape[0]
    score = np.abs(G)
    source_of_row, best = _best_assignment(score)

    runner_up = -np.inf
    if d > 1:
        big = score.sum() + 1.0
        for r, c in enumerate(source_of_row):
            forbidden = score.copy()
            forbidden[r, c] = -big
            _, val = _best_assignment(forbidden)
            if val > -big / 2:
                runner_up = max(runner_up, val)

    row_of_source = np.argsort(source_of_row)
    picked = G[row_of_source]
    signs = np.where(np.diag(picked) < 0, -1.0, 1.0)
    aligned = signs[:, None] * picked
    errors = None if n_samples is None else np.sqrt(n_samples) * (aligned - np.eye(d))
    return GainSample(G_raw=G, row_of_source=row_of_source, signs=signs, G_aligned=aligned,
                      objective=best, runner_up=runner_up, errors_scaled=errors)


def to_extraction_coords(M: np.ndarray, order) -> np.ndarray:
    """Reindex a source-indexed matrix so row/column ``p`` is the ``p``-th extracted source."""
    order = list(order)
    return np.asarray(M)[np.ix_(order, order)]
