"""Finite-dimensional evaluation of the excess-risk and selection-overhead bounds.

Everything here works on explicit matrices or truncated spectra.  Universal
constants that the bounds leave unspecified are exposed as parameters
defaulting to 1; only the constant-free statements are safe to test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BoundInputs",
    "SpectrumInputs",
    "SpectrumTruncationError",
    "SelectionSlack",
    "RegularityReport",
    "shift_operator",
    "shift_norm_trace",
    "candidate_bound",
    "overhead_bound",
    "trace_condition_holds",
    "effective_dim",
    "regular_spectrum_check",
    "spectral_risk_bound",
    "selection_overhead_U",
    "verify_selection_inequality",
    "bias_variance_overhead",
]


class SpectrumTruncationError(ValueError):
    """The truncated spectrum never drops below the threshold, so D(r) is unknown."""


def _sym_psd(name: str, M: ArrayLike) -> NDArray[np.float64]:
    A = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(A).min() < -1e-10 * scale:
        raise ValueError(f"{name} is not positive semi-definite")
    return A


@dataclass(frozen=True)
class BoundInputs:
    """Population quantities entering the excess-risk bounds.

    ``Sigma``/``Sigma0`` are the source/target second-moment matrices,
    ``sigma`` the noise level, ``theta_norm`` the RKHS norm of the truth,
    ``m`` the grid size.  ``M`` and ``kappa`` are optional annotations used
    only for condition checks.
    """

    Sigma: NDArray[np.float64]
    Sigma0: NDArray[np.float64]
    sigma: float
    theta_norm: float
    n: int
    n0: int
    rho: float = 0.5
    m: int = 2
    delta: float = 0.2
    M: float | None = None
    kappa: float | None = None

    def __post_init__(self) -> None:
        S = _sym_psd("Sigma", self.Sigma)
        S0 = _sym_psd("Sigma0", self.Sigma0)
        if S.shape != S0.shape:
            raise ValueError(f"Sigma {S.shape} and Sigma0 {S0.shape} differ in shape")
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "Sigma0", S0)
        if self.sigma < 0 or self.theta_norm < 0:
            raise ValueError("sigma and theta_norm must be nonnegative")
        if self.n < 1 or self.n0 < 1 or self.m < 1:
            raise ValueError("n, n0 and m must be positive")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0 < self.delta <= 0.2:
            raise ValueError(f"delta must lie in (0, 1/5], got {self.delta}")

    @property
    def log_term(self) -> float:
        return math.log(self.m / self.delta)


def shift_operator(inputs: BoundInputs, lam: float) -> NDArray[np.float64]:
    """``(Sigma + lam I)^{-1/2} Sigma0 (Sigma + lam I)^{-1/2}``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    evals, evecs = np.linalg.eigh(inputs.Sigma)
    inv_sqrt = (evecs / np.sqrt(np.maximum(evals, 0.0) + lam)) @ evecs.T
    S = inv_sqrt @ inputs.Sigma0 @ inv_sqrt
    return 0.5 * (S + S.T)


def shift_norm_trace(inputs: BoundInputs, lam: float) -> tuple[float, float]:
    """Operator norm and trace of the shift operator."""
    S = shift_operator(inputs, lam)
    norm = max(float(np.linalg.eigvalsh(S)[-1]), 0.0)
    return norm, float(np.trace(S))


def candidate_bound(inputs: BoundInputs, lam: float) -> float:
    """Excess-risk bound for the candidate trained with penalty ``lam``:
    ``lam ||S|| ||theta||^2 + sigma^2 Tr(S) log(m/delta) / ((1 - rho) n)``."""
    norm, trace = shift_norm_trace(inputs, lam)
    bias = lam * norm * inputs.theta_norm**2
    variance = inputs.sigma**2 * trace * inputs.log_term / ((1.0 - inputs.rho) * inputs.n)
    return bias + variance


def overhead_bound(inputs: BoundInputs, lambda_tilde: float) -> float:
    """Overhead of pseudo-labeling for an imputer trained with ``lambda_tilde``."""
    norm, _ = shift_norm_trace(inputs, lambda_tilde)
    scale = lambda_tilde * inputs.theta_norm**2 + inputs.sigma**2 * inputs.log_term / (inputs.rho * inputs.n)
    return scale * (norm + 1.0)


def trace_condition_holds(inputs: BoundInputs) -> bool:
    """Whether ``n0 / Tr(Sigma0) >= n / Tr(Sigma)`` (sub-Gaussian covariate case)."""
    t0 = float(np.trace(inputs.Sigma0))
    t = float(np.trace(inputs.Sigma))
    if t0 == 0:
        return True
    if t == 0:
        return False
    return inputs.n0 / t0 >= inputs.n / t


@dataclass(frozen=True)
class SpectrumInputs:
    mu: NDArray[np.float64]
    c0: float = 1.0

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        if mu.size == 0:
            raise ValueError("spectrum must not be empty")
        if not np.all(np.isfinite(mu)) or mu.min() < 0:
            raise ValueError("spectrum must be finite and nonnegative")
        if np.any(np.diff(mu) > 0):
            raise ValueError("spectrum must be sorted in nonincreasing order")
        object.__setattr__(self, "mu", mu)


def effective_dim(spec: SpectrumInputs, r: float) -> int:
    """Smallest 1-based index ``j`` with ``mu_j <= r^2``."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r!r}")
    below = np.flatnonzero(spec.mu <= r * r)
    if below.size == 0:
        raise SpectrumTruncationError(
            f"all {spec.mu.size} eigenvalues exceed r^2={r * r}; D(r) lies beyond the truncation"
        )
    return int(below[0]) + 1


@dataclass(frozen=True)
class RegularityReport:
    r: NDArray[np.float64]
    dims: NDArray[np.int64]
    tails: NDArray[np.float64]
    ratios: NDArray[np.float64]
    passed: NDArray[np.bool_]
    worst_ratio: float

    @property
    def all_passed(self) -> bool:
        return bool(self.passed.all())


def regular_spectrum_check(spec: SpectrumInputs, r_grid: Sequence[float]) -> RegularityReport:
    """Compare the tail ``sum_{j > D(r)} mu_j`` against ``c0 D(r) r^2`` for each ``r``.

    Tails of a truncated spectrum are lower bounds on the true tails.
    Ratios are ``tail / (D(r) r^2)``, so a grid point passes when its ratio
    is at most ``c0``.
    """
    r = np.asarray(r_grid, dtype=np.float64)
    # suffix[j] = sum of mu[j:]
    suffix = np.concatenate([np.cumsum(spec.mu[::-1])[::-1], [0.0]])
    dims = np.array([effective_dim(spec, float(ri)) for ri in r], dtype=np.int64)
    tails = suffix[dims]
    ratios = tails / (dims * r * r)
    passed = tails <= spec.c0 * dims * r * r
    worst = float(ratios.max()) if ratios.size else 0.0
    return RegularityReport(r, dims, tails, ratios, passed, worst)


def spectral_risk_bound(
    spec: SpectrumInputs,
    theta_norm: float,
    sigma: float,
    B: float,
    n: int,
    delta: float,
    lambda0: float,
    C0: float = 1.0,
    num_r: int = 200,
) -> tuple[float, float]:
    """Minimize ``r^2 ||theta||^2 + sigma^2 B D(r) log(log(n)/delta) / n`` over
    ``r`` in ``[sqrt(B lambda0), sqrt(n B lambda0)]`` on a log grid.

    Returns ``(bound, argmin r)``, scaled by ``C0``.
    """
    lo, hi = math.sqrt(B * lambda0), math.sqrt(n * B * lambda0)
    rs = np.geomspace(lo, hi, num_r)
    log_term = math.log(math.log(n) / delta)
    best, best_r = math.inf, lo
    for r in rs:
        value = r * r * theta_norm**2 + sigma**2 * B * effective_dim(spec, float(r)) * log_term / n
        if value < best:
            best, best_r = value, float(r)
    return C0 * best, best_r


def _stack(candidate_preds: Mapping[float, ArrayLike]) -> tuple[list[float], NDArray[np.float64]]:
    if not candidate_preds:
        raise ValueError("need at least one candidate")
    keys = sorted(candidate_preds)
    Y = np.vstack([np.asarray(candidate_preds[k], dtype=np.float64).ravel() for k in keys])
    return keys, Y


def selection_overhead_U(
    candidate_preds: Mapping[float, ArrayLike], pseudo_y: ArrayLike, true_y: ArrayLike
) -> float:
    """Largest projection of the pseudo-label error onto a normalized
    difference of two candidate prediction vectors (``0/0 = 0``)."""
    _, Y = _stack(candidate_preds)
    err = np.asarray(pseudo_y, dtype=np.float64).ravel() - np.asarray(true_y, dtype=np.float64).ravel()
    if err.shape[0] != Y.shape[1]:
        raise ValueError(f"length mismatch: predictions have {Y.shape[1]} entries, labels {err.shape[0]}")
    diffs = Y[:, None, :] - Y[None, :, :]
    norms = np.linalg.norm(diffs, axis=-1)
    proj = diffs @ err
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(norms > 0, proj / np.where(norms > 0, norms, 1.0), 0.0)
    return max(float(vals.max()), 0.0)


@dataclass(frozen=True)
class SelectionSlack:
    chosen: float
    lhs: float
    rhs: float
    U: float
    best_gamma: float
    best_lambda: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-9


DEFAULT_GAMMAS = tuple(np.geomspace(1e-3, 1e3, 61))


def verify_selection_inequality(
    candidate_preds: Mapping[float, ArrayLike],
    pseudo_y: ArrayLike,
    true_y: ArrayLike,
    gamma_grid: Sequence[float] = DEFAULT_GAMMAS,
) -> SelectionSlack:
    """Check ``||y_hat - y*||^2 <= (1 + g) ||y_l - y*||^2 + 4 (1 + 1/g) U^2``
    for the pseudo-label selection, minimized over ``g`` in ``gamma_grid`` and
    all candidates ``l``."""
    keys, Y = _stack(candidate_preds)
    ytil = np.asarray(pseudo_y, dtype=np.float64).ravel()
    ystar = np.asarray(true_y, dtype=np.float64).ravel()
    if ytil.shape != ystar.shape or ytil.shape[0] != Y.shape[1]:
        raise ValueError("prediction, pseudo-label and true-label lengths differ")
    gammas = np.asarray(gamma_grid, dtype=np.float64)
    if gammas.size == 0 or gammas.min() <= 0:
        raise ValueError("gamma grid must be nonempty and positive")

    fit = ((Y - ytil) ** 2).sum(axis=1)
    # first minimum in sorted key order = smallest lambda on ties
    chosen = int(np.argmin(fit))
    losses = ((Y - ystar) ** 2).sum(axis=1)
    U = selection_overhead_U(dict(zip(keys, Y)), ytil, ystar)
    rhs_table = (1.0 + gammas)[:, None] * losses[None, :] + (4.0 * (1.0 + 1.0 / gammas) * U * U)[:, None]
    gi, li = np.unravel_index(int(np.argmin(rhs_table)), rhs_table.shape)
    return SelectionSlack(
        chosen=keys[chosen],
        lhs=float(losses[chosen]),
        rhs=float(rhs_table[gi, li]),
        U=U,
        best_gamma=float(gammas[gi]),
        best_lambda=keys[li],
    )


def bias_variance_overhead(
    candidate_losses: Mapping[object, float] | Sequence[float],
    imputer_bias: float,
    V: float,
    m: int,
    n: int,
    delta: float,
    gamma_grid: Sequence[float] = DEFAULT_GAMMAS,
    C: float = 1.0,
) -> float:
    """``min_g (1 + g) min L + C (1 + 1/g) (bias + V^2 log(m/delta) / n)`` over the gamma grid.

    A diagnostic: ``C`` is an unspecified universal constant.
    """
    losses = np.asarray(
        list(candidate_losses.values()) if isinstance(candidate_losses, Mapping) else candidate_losses,
        dtype=np.float64,
    )
    if losses.size == 0:
        raise ValueError("need at least one candidate loss")
    if losses.min() < 0 or imputer_bias < 0 or V < 0 or C < 0:
        raise ValueError("losses, bias, V and C must be nonnegative")
    if m < 1 or n < 1 or not 0 < delta <= 1:
        raise ValueError("need m >= 1, n >= 1 and delta in (0, 1]")
    gammas = np.asarray(gamma_grid, dtype=np.float64)
    if gammas.size == 0 or gammas.min() <= 0:
        raise ValueError("gamma grid must be nonempty and positive")
    overhead = imputer_bias + V * V * math.log(m / delta) / n
    values = (1.0 + gammas) * losses.min() + C * (1.0 + 1.0 / gammas) * overhead
    return float(values.min())
