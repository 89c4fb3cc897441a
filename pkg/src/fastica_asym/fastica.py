"""Deflationary and symmetric FastICA on standardized data.

Both algorithms count raw fixed-point iterations in pairs: the raw update of a
source with ``alpha < 0`` flips sign every step, so only two consecutive
iterations can be compared for convergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import sym_orth
from .nonlinearity import Nonlinearity
from .seeding import INIT_STREAM, derive_rng, random_orthonormal


@dataclass(frozen=True)
class IterationPolicy:
    tol: float = 1e-10
    max_sweeps: int = 500

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 2 or self.max_sweeps % 2:
            raise ValueError("max_sweeps must be a positive even number")


@dataclass
class UnmixResult:
    """``W`` holds the estimated unit vectors as columns, in extraction order."""

    W: np.ndarray
    sweeps_used: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def one_unit_update(w: np.ndarray, x: np.ndarray, nl: Nonlinearity) -> np.ndarray:
    """``E^[g'(w^T x)] w - E^[g(w^T x) x]``, not normalized."""
    u = w @ x
    return nl.g_prime(u).mean() * w - (x * nl.g(u)).mean(axis=1)


class _Degenerate(Exception):
    pass


def _initial_matrix(d: int, init) -> np.ndarray:
    if init is None:
        init = 0
    if isinstance(init, (int, np.integer)):
        return random_orthonormal(d, derive_rng(int(init), INIT_STREAM))
    W0 = np.asarray(init, dtype=float)
    if W0.shape != (d, d):
        raise ValueError(f"initial matrix has shape {W0.shape}, expected ({d}, {d})")
    return W0


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] <= x.shape[0]:
        raise ValueError(f"x must be d x N with N > d, got shape {x.shape}")
    if np.linalg.matrix_rank(x) < x.shape[0]:
        raise np.linalg.LinAlgError("x is not full rank")
    return x


def deflationary(x: np.ndarray, nl: Nonlinearity, policy: IterationPolicy | None = None,
                 init=None) -> UnmixResult:
    """Extract components one at a time with Gram-Schmidt deflation.

    Args:
        x: standardized data, ``d x N``.
        nl: contrast nonlinearity.
        policy: stopping rule; defaults to :class:`IterationPolicy`.
        init: orthonormal ``d x d`` matrix whose column ``p`` starts component ``p``,
            or an integer seed for a random orthonormal start.

    Returns:
        UnmixResult with per-component sweep counts and convergence flags. A component
        that hits ``max_sweeps`` keeps its most stable iterate.
    """
    policy = policy or IterationPolicy()
    x = _check_input(x)
    d = x.shape[0]
    W0 = _initial_matrix(d, init)
    W = np.zeros((d, d))
    sweeps, flags = [], []

    def deflate(w, p):
        prev = W[:, :p]
        w = w - prev @ (prev.T @ w)
        n = np.linalg.norm(w)
        if not n > 1e-300:
            raise _Degenerate
        return w / n

    for p in range(d):
        w = deflate(W0[:, p], p)
        best_w, best_change = w, np.inf
        used, ok = 0, False
        while used < policy.max_sweeps:
            w_old = w
            try:
                for _ in range(2):
                    w = deflate(one_unit_update(w, x, nl), p)
            except _Degenerate:
                # update vanished inside the deflated subspace; keep the best iterate
                w = best_w
                used += 2
                break
            used += 2
            change = 1.0 - abs(float(w @ w_old))
            if change < best_change:
                best_w, best_change = w, change
            if change < policy.tol:
                ok = True
                break
        W[:, p] = w if ok else best_w
        sweeps.append(used)
        flags.append(ok)
    return UnmixResult(W=W, sweeps_used=sweeps, converged=flags)


def symmetric_update(W: np.ndarray, x: np.ndarray, nl: Nonlinearity) -> np.ndarray:
    """Apply :func:`one_unit_update` to every column of ``W`` (before orthogonalization)."""
    U = W.T @ x
    gU = nl.g(U)
    # d x d x N product keeps a fixed pairwise reduction order
    cross = (x[:, None, :] * gU[None, :, :]).mean(axis=2)
    return W * nl.g_prime(U).mean(axis=1) - cross


def symmetric(x: np.ndarray, nl: Nonlinearity, policy: IterationPolicy | None = None,
              init=None) -> UnmixResult:
    """Update all components at once and restore orthonormality with the polar factor."""
    policy = policy or IterationPolicy()
    x = _check_input(x)
    d = x.shape[0]
    W = sym_orth(_initial_matrix(d, init))
    best_W, best_change = W, np.inf
    used, ok = 0, False
    while used < policy.max_sweeps:
        W_old = W
        try:
            for _ in range(2):
                W = sym_orth(symmetric_update(W, x, nl))
        except np.linalg.LinAlgError:
            # two columns collapsed onto each other
            used += 2
            break
        used += 2
        change = 1.0 - float(np.min(np.abs(np.sum(W * W_old, axis=0))))
        if change < best_change:
            best_W, best_change = W, change
        if change < policy.tol:
            ok = True
            break
    return UnmixResult(W=W if ok else best_W, sweeps_used=[used] * d, converged=[ok] * d)


def run(algorithm: str, x: np.ndarray, nl: Nonlinearity, policy: IterationPolicy | None = None,
        init=None) -> UnmixResult:
    if algorithm == "dfl":
        return deflationary(x, nl, policy, init)
    if algorithm == "sym":
        return symmetric(x, nl, policy, init)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected 'dfl' or 'sym'")
