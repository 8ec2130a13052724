"""Kernel ridge regression through the dual system ``(K + n lam I) alpha = y``.

The training objective is the mean squared loss plus ``lam * ||f||^2``, so
the diagonal shift is ``n * lam`` rather than ``lam``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .kernels import KernelSpec, as_covariates, cross_gram, gram_matrix

__all__ = [
    "KrrModel",
    "KrrSolveError",
    "fit_krr",
    "fit_krr_path",
    "predict",
    "rkhs_norm_sq",
    "empirical_mse",
]

MODEL_SCHEMA = "shiftkrr.krr-model/1"


class KrrSolveError(RuntimeError):
    """Cholesky factorization of ``K + n lam I`` failed."""


@dataclass(frozen=True, eq=False)
class KrrModel:
    """Fitted model ``f(x) = sum_i alpha_i K(x_i, x)``."""

    kernel: KernelSpec
    train_x: NDArray[np.float64]
    alpha: NDArray[np.float64]
    lam: float
    # training Gram matrix; kept so rkhs_norm_sq does not rebuild it
    _gram: NDArray[np.float64] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError(f"penalty must be positive, got {self.lam!r}")
        if self.alpha.shape != (self.train_x.shape[0],):
            raise ValueError("alpha length must equal the number of training points")
        self.train_x.setflags(write=False)
        self.alpha.setflags(write=False)

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    def __call__(self, X_new: ArrayLike) -> NDArray[np.float64]:
        return predict(self, X_new)

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "kernel": self.kernel.to_string(),
            "lambda": self.lam,
            "train_x": self.train_x.tolist(),
            "alpha": self.alpha.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, record: dict) -> KrrModel:
        if record.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unsupported model schema {record.get('schema')!r}")
        kernel = KernelSpec.parse(record["kernel"])
        return cls(
            kernel=kernel,
            train_x=as_covariates(record["train_x"], kernel).copy(),
            alpha=np.asarray(record["alpha"], dtype=np.float64),
            lam=float(record["lambda"]),
        )

    @classmethod
    def from_json(cls, text: str) -> KrrModel:
        return cls.from_dict(json.loads(text))


def _check_labels(X: NDArray, y: ArrayLike) -> NDArray[np.float64]:
    yy = np.asarray(y, dtype=np.float64)
    if yy.ndim != 1 or yy.shape[0] != X.shape[0]:
        raise ValueError(f"need {X.shape[0]} labels, got shape {yy.shape}")
    if not np.all(np.isfinite(yy)):
        raise ValueError("labels contain non-finite entries")
    return yy


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"penalty must be a positive finite real, got {lam!r}")
    return lam


def _solve(K: NDArray, y: NDArray, lam: float) -> NDArray:
    n = K.shape[0]
    A = K.copy()
    A.flat[:: n + 1] += n * lam
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, overwrite_a=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise KrrSolveError(f"K + n*lambda*I is not numerically positive definite (lambda={lam})") from exc
    return scipy.linalg.cho_solve(factor, y, check_finite=False)


def fit_krr(spec: KernelSpec, X: ArrayLike, y: ArrayLike, lam: float) -> KrrModel:
    """Fit kernel ridge regression with penalty ``lam``.

    Minimizes ``(1/n) sum (f(x_i) - y_i)^2 + lam * ||f||^2`` over the RKHS of
    ``spec``. The returned coefficients are ``(K + n lam I)^{-1} y``.
    """
    (model,) = fit_krr_path(spec, X, y, [lam])
    return model


def fit_krr_path(spec: KernelSpec, X: ArrayLike, y: ArrayLike, lambdas: Iterable[float]) -> list[KrrModel]:
    """Fit one model per penalty, sharing a single Gram matrix."""
    Xa = as_covariates(X, spec).copy()
    ya = _check_labels(Xa, y)
    lams = [_check_lambda(lam) for lam in lambdas]
    K = gram_matrix(spec, Xa)
    K.setflags(write=False)
    return [KrrModel(spec, Xa, _solve(K, ya, lam), lam, _gram=K) for lam in lams]


def predict(model: KrrModel, X_new: ArrayLike) -> NDArray[np.float64]:
    return cross_gram(model.kernel, model.train_x, X_new) @ model.alpha


def rkhs_norm_sq(model: KrrModel) -> float:
    """Squared RKHS norm ``alpha^T K alpha``, clamped at zero for round-off."""
    K = model._gram if model._gram is not None else gram_matrix(model.kernel, model.train_x)
    value = float(model.alpha @ (K @ model.alpha))
    scale = max(1.0, float(np.abs(model.alpha).sum()) ** 2 * float(np.abs(K).max()))
    if value < 0:
        if value < -1e-10 * scale:
            raise ArithmeticError(f"alpha^T K alpha = {value} is negative beyond round-off")
        return 0.0
    return value


def empirical_mse(model: KrrModel, X: ArrayLike, y: ArrayLike) -> float:
    Xa = as_covariates(X, model.kernel)
    ya = _check_labels(Xa, y)
    resid = predict(model, Xa) - ya
    return float(np.mean(resid * resid))
