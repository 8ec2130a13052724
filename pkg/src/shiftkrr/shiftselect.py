"""Pseudo-label model selection for kernel ridge regression under covariate shift.

The procedure splits the labeled source data into ``D1`` and ``D2``, fits a
path of candidate models on ``D1`` and an imputation model on ``D2``,
imputes labels for the unlabeled target covariates, and keeps the
candidate that best fits those pseudo-labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .kernels import KernelSpec, as_covariates
from .krr import KrrModel, fit_krr, fit_krr_path, predict

__all__ = [
    "LabeledSet",
    "PipelineConfig",
    "SelectionResult",
    "split_sizes",
    "split_data",
    "default_lambda_grid",
    "theory_lambda_grid",
    "train_candidates",
    "train_imputer",
    "pseudo_labels",
    "select_model",
    "run_pipeline",
]

RESULT_SCHEMA = "shiftkrr.selection/1"


@dataclass(frozen=True)
class LabeledSet:
    x: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self) -> None:
        x = as_covariates(self.x)
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"need {x.shape[0]} labels, got shape {y.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: NDArray[np.intp]) -> LabeledSet:
        return LabeledSet(self.x[idx], self.y[idx])


def _grid_ratio(grid: Sequence[float]) -> float:
    return max(b / a for a, b in zip(grid[:-1], grid[1:]))


@dataclass(frozen=True)
class PipelineConfig:
    """Hyperparameters of the pipeline.

    ``imputer_lambda=None`` and ``lambda_grid=None`` mean "use the
    simulation recipe": ``1/(10 |D2|)`` and :func:`default_lambda_grid`
    sized for ``|D1|``.
    """

    rho: float = 0.5
    lambda_grid: tuple[float, ...] | None = None
    imputer_lambda: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho!r}")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if len(grid) < 1:
                raise ValueError("lambda grid must not be empty")
            if any(not (np.isfinite(v) and v > 0) for v in grid):
                raise ValueError("lambda grid entries must be positive and finite")
            if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
                raise ValueError("lambda grid must be strictly increasing")
            object.__setattr__(self, "lambda_grid", grid)
        if self.imputer_lambda is not None and not self.imputer_lambda > 0:
            raise ValueError(f"imputer penalty must be positive, got {self.imputer_lambda!r}")

    @property
    def grid_ratio(self) -> float | None:
        """Largest ratio between consecutive grid values (beta), if a grid is set."""
        if self.lambda_grid is None or len(self.lambda_grid) < 2:
            return None
        return _grid_ratio(self.lambda_grid)


@dataclass(frozen=True, eq=False)
class SelectionResult:
    chosen_lambda: float
    chosen_model: KrrModel
    pseudo_risk_per_lambda: dict[float, float]
    imputer: KrrModel | None = None
    split_sizes: tuple[int, int] | None = None
    candidates: dict[float, KrrModel] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        n1, n2 = self.split_sizes if self.split_sizes is not None else (None, None)
        return {
            "schema_version": RESULT_SCHEMA,
            "chosen_lambda": self.chosen_lambda,
            "n1": n1,
            "n2": n2,
            "risks": [
                {"lambda": lam, "pseudo_risk": risk}
                for lam, risk in sorted(self.pseudo_risk_per_lambda.items())
            ],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def split_sizes(n: int, rho: float) -> tuple[int, int]:
    """Sizes ``(ceil((1 - rho) n), floor(rho n))`` of ``D1`` and ``D2``."""
    n2 = math.floor(rho * n)
    return n - n2, n2


def split_data(data: LabeledSet, rho: float, rng: np.random.Generator) -> tuple[LabeledSet, LabeledSet]:
    """Uniformly random partition of ``data`` into ``(D1, D2)``."""
    n = len(data)
    if n < 2:
        raise ValueError(f"need at least 2 labeled points to split, got {n}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho!r}")
    n1, n2 = split_sizes(n, rho)
    if n2 < 1:
        raise ValueError(f"rho={rho} leaves D2 empty for n={n}")
    perm = rng.permutation(n)
    return data.subset(np.sort(perm[:n1])), data.subset(np.sort(perm[n1:]))


def _geometric_grid(start: float, top: float = 1.0) -> tuple[float, ...]:
    # smallest k with start * 2**k >= top
    kmax = max(0, math.ceil(math.log2(top / start)))
    return tuple(start * 2.0**k for k in range(kmax + 1))


def default_lambda_grid(n1: int, base_scale: float = 1.0) -> tuple[float, ...]:
    """Geometric grid ``2**k * base_scale / (10 n1)`` with ratio 2, running up to at least 1."""
    if n1 < 1:
        raise ValueError(f"n1 must be positive, got {n1}")
    if not base_scale > 0:
        raise ValueError(f"base_scale must be positive, got {base_scale}")
    start = base_scale / (10.0 * n1)
    return _geometric_grid(start, 1.0)


def theory_lambda_grid(n: int, rho: float, delta: float, bound: float, constant: float) -> tuple[float, ...]:
    """Grid whose smallest value is ``C M^2 log(n/delta) / ((1 - rho) n)``.

    ``bound`` is the almost-sure bound ``M`` on the feature norm and
    ``constant`` the user-chosen ``C``; the grid doubles up to at least 1.
    """
    if constant <= 0 or bound <= 0:
        raise ValueError("constant and bound must be positive")
    start = constant * bound**2 * math.log(n / delta) / ((1.0 - rho) * n)
    return _geometric_grid(start, max(1.0, start))


def default_imputer_lambda(n2: int) -> float:
    return 1.0 / (10.0 * n2)


def train_candidates(spec: KernelSpec, D1: LabeledSet, grid: Sequence[float]) -> dict[float, KrrModel]:
    if len(grid) == 0:
        raise ValueError("lambda grid must not be empty")
    models = fit_krr_path(spec, D1.x, D1.y, grid)
    return {float(lam): model for lam, model in zip(grid, models)}


def train_imputer(spec: KernelSpec, D2: LabeledSet, lambda_tilde: float | None = None) -> KrrModel:
    if lambda_tilde is None:
        lambda_tilde = default_imputer_lambda(len(D2))
    return fit_krr(spec, D2.x, D2.y, lambda_tilde)


def pseudo_labels(imputer: KrrModel, X0: ArrayLike) -> NDArray[np.float64]:
    return predict(imputer, X0)


def select_model(
    candidates: Mapping[float, KrrModel],
    X0: ArrayLike,
    pseudo_y: ArrayLike,
    predictions: Mapping[float, NDArray] | None = None,
) -> SelectionResult:
    """Pick the candidate with the smallest mean squared fit to ``pseudo_y`` on ``X0``.

    Ties go to the smallest penalty. ``predictions`` may carry precomputed
    candidate predictions on ``X0``.
    """
    if not candidates:
        raise ValueError("no candidate models")
    target = np.asarray(pseudo_y, dtype=np.float64)
    X0a = as_covariates(X0)
    if target.ndim != 1 or target.shape[0] != X0a.shape[0]:
        raise ValueError(f"need {X0a.shape[0]} pseudo-labels, got shape {target.shape}")
    risks: dict[float, float] = {}
    for lam in sorted(candidates):
        preds = predictions[lam] if predictions is not None else predict(candidates[lam], X0a)
        resid = preds - target
        risks[lam] = float(np.mean(resid * resid))
    best = min(risks, key=lambda lam: (risks[lam], lam))
    return SelectionResult(best, candidates[best], risks, candidates=dict(candidates))


def run_pipeline(spec: KernelSpec, data: LabeledSet, X0: ArrayLike, cfg: PipelineConfig) -> SelectionResult:
    """Split, train, impute and select; deterministic given ``cfg.seed``."""
    X0a = as_covariates(X0, spec)
    rng = np.random.default_rng(cfg.seed)
    D1, D2 = split_data(data, cfg.rho, rng)
    grid = cfg.lambda_grid if cfg.lambda_grid is not None else default_lambda_grid(len(D1))
    candidates = train_candidates(spec, D1, grid)
    imputer = train_imputer(spec, D2, cfg.imputer_lambda)
    result = select_model(candidates, X0a, pseudo_labels(imputer, X0a))
    return SelectionResult(
        result.chosen_lambda,
        result.chosen_model,
        result.pseudo_risk_per_lambda,
        imputer=imputer,
        split_sizes=(len(D1), len(D2)),
        candidates=result.candidates,
    )
