"""Reproducing kernels and Gram matrix construction.

Supported kernels: linear, affine, polynomial (homogeneous or not),
Gaussian, Laplace and the first-order Sobolev kernel ``min(z, w)`` on
``[0, 1]``.

Entries are computed coordinate by coordinate with a fixed summation
order, so ``K(z, w)`` and ``K(w, z)`` are bit-identical.  Gram matrices are
filled from the lower triangle and mirrored.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "KernelKind",
    "KernelSpec",
    "as_covariates",
    "eval_kernel",
    "gram_matrix",
    "cross_gram",
]

MAX_GRAM_SIZE = 10_000


class KernelKind(str, Enum):
    LINEAR = "linear"
    AFFINE = "affine"
    POLYNOMIAL = "poly"
    GAUSSIAN = "gauss"
    LAPLACE = "laplace"
    SOBOLEV = "sobolev"


@dataclass(frozen=True)
class KernelSpec:
    """Tagged description of a reproducing kernel.

    ``degree`` and ``homogeneous`` only apply to polynomial kernels,
    ``alpha`` (bandwidth) only to Gaussian and Laplace kernels.
    """

    kind: KernelKind
    degree: int | None = None
    homogeneous: bool = False
    alpha: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.POLYNOMIAL:
            if self.degree is None or int(self.degree) != self.degree or self.degree < 2:
                raise ValueError(f"polynomial degree must be an integer >= 2, got {self.degree!r}")
            object.__setattr__(self, "degree", int(self.degree))
        elif self.degree is not None:
            raise ValueError(f"degree is only valid for polynomial kernels, not {self.kind.value}")
        if self.kind in (KernelKind.GAUSSIAN, KernelKind.LAPLACE):
            if self.alpha is None or not np.isfinite(self.alpha) or self.alpha <= 0:
                raise ValueError(f"bandwidth alpha must be a positive finite real, got {self.alpha!r}")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ValueError(f"alpha is only valid for gauss/laplace kernels, not {self.kind.value}")

    # constructors -------------------------------------------------------

    @classmethod
    def linear(cls) -> KernelSpec:
        return cls(KernelKind.LINEAR)

    @classmethod
    def affine(cls) -> KernelSpec:
        return cls(KernelKind.AFFINE)

    @classmethod
    def polynomial(cls, degree: int, homogeneous: bool = False) -> KernelSpec:
        return cls(KernelKind.POLYNOMIAL, degree=degree, homogeneous=homogeneous)

    @classmethod
    def gaussian(cls, alpha: float) -> KernelSpec:
        return cls(KernelKind.GAUSSIAN, alpha=alpha)

    @classmethod
    def laplace(cls, alpha: float) -> KernelSpec:
        return cls(KernelKind.LAPLACE, alpha=alpha)

    @classmethod
    def sobolev(cls) -> KernelSpec:
        return cls(KernelKind.SOBOLEV)

    # config strings -----------------------------------------------------

    def to_string(self) -> str:
        if self.kind is KernelKind.POLYNOMIAL:
            return f"poly:m={self.degree}:hom={'true' if self.homogeneous else 'false'}"
        if self.kind in (KernelKind.GAUSSIAN, KernelKind.LAPLACE):
            return f"{self.kind.value}:alpha={self.alpha!r}"
        return self.kind.value

    def __str__(self) -> str:
        return self.to_string()

    @classmethod
    def parse(cls, text: str) -> KernelSpec:
        """Parse a config string such as ``gauss:alpha=2.0`` or ``poly:m=3:hom=false``."""
        head, *fields = text.strip().split(":")
        try:
            kind = KernelKind(head.strip().lower())
        except ValueError:
            raise ValueError(f"unknown kernel {head!r}") from None
        params: dict[str, str] = {}
        for field in fields:
            key, sep, value = field.partition("=")
            if not sep:
                raise ValueError(f"malformed kernel parameter {field!r} in {text!r}")
            params[key.strip().lower()] = value.strip()

        def take(key: str) -> str:
            try:
                return params.pop(key)
            except KeyError:
                raise ValueError(f"kernel {kind.value} requires parameter {key!r}") from None

        if kind is KernelKind.POLYNOMIAL:
            degree = int(take("m"))
            hom_text = params.pop("hom", "false").lower()
            if hom_text not in ("true", "false"):
                raise ValueError(f"hom must be true or false, got {hom_text!r}")
            spec = cls.polynomial(degree, homogeneous=hom_text == "true")
        elif kind in (KernelKind.GAUSSIAN, KernelKind.LAPLACE):
            spec = cls(kind, alpha=float(take("alpha")))
        else:
            spec = cls(kind)
        if params:
            raise ValueError(f"unexpected parameters {sorted(params)} for kernel {kind.value}")
        return spec


def as_covariates(X: ArrayLike, spec: KernelSpec | None = None) -> NDArray[np.float64]:
    """Return ``X`` as an ``(n, d)`` float array after validation.

    A 1-D input is read as ``n`` scalar points.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise ValueError(f"covariates must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("need at least one covariate row")
    if not np.all(np.isfinite(arr)):
        raise ValueError("covariates contain non-finite entries")
    if spec is not None and spec.kind is KernelKind.SOBOLEV:
        if arr.shape[1] != 1:
            raise ValueError(f"Sobolev kernel takes scalar inputs, got dimension {arr.shape[1]}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("Sobolev kernel inputs must lie in [0, 1]")
    return arr


def _inner(A: NDArray, B: NDArray) -> NDArray:
    # coordinate loop keeps the summation order fixed, so the result is
    # exactly symmetric under swapping A and B
    out = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        out += np.multiply.outer(A[:, k], B[:, k])
    return out


def _sqdist(A: NDArray, B: NDArray) -> NDArray:
    out = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = np.subtract.outer(A[:, k], B[:, k])
        out += diff * diff
    return out


def _kernel_block(spec: KernelSpec, A: NDArray, B: NDArray) -> NDArray:
    kind = spec.kind
    if kind is KernelKind.SOBOLEV:
        return np.minimum.outer(A[:, 0], B[:, 0])
    if kind is KernelKind.LINEAR:
        return _inner(A, B)
    if kind is KernelKind.AFFINE:
        return 1.0 + _inner(A, B)
    if kind is KernelKind.POLYNOMIAL:
        base = _inner(A, B)
        if not spec.homogeneous:
            base += 1.0
        return base**spec.degree
    if kind is KernelKind.GAUSSIAN:
        return np.exp(-spec.alpha * _sqdist(A, B))
    if kind is KernelKind.LAPLACE:
        return np.exp(-spec.alpha * np.sqrt(_sqdist(A, B)))
    raise AssertionError(kind)


def _check_pair(spec: KernelSpec, A: NDArray, B: NDArray) -> None:
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")


def eval_kernel(spec: KernelSpec, z: ArrayLike, w: ArrayLike) -> float:
    """Evaluate ``K(z, w)`` for two single points."""
    zz = np.atleast_1d(np.asarray(z, dtype=np.float64))
    ww = np.atleast_1d(np.asarray(w, dtype=np.float64))
    if zz.ndim != 1 or ww.ndim != 1:
        raise ValueError("eval_kernel takes single points")
    A = as_covariates(zz[None, :], spec)
    B = as_covariates(ww[None, :], spec)
    _check_pair(spec, A, B)
    return float(_kernel_block(spec, A, B)[0, 0])


def cross_gram(spec: KernelSpec, X_train: ArrayLike, X_test: ArrayLike) -> NDArray[np.float64]:
    """Matrix with entry ``[t, i] = K(x_test[t], x_train[i])``."""
    A = as_covariates(X_train, spec)
    B = as_covariates(X_test, spec)
    _check_pair(spec, A, B)
    return _kernel_block(spec, B, A)


def gram_matrix(spec: KernelSpec, X: ArrayLike, max_size: int = MAX_GRAM_SIZE) -> NDArray[np.float64]:
    """Symmetric ``n x n`` Gram matrix ``[K(x_i, x_j)]``."""
    A = as_covariates(X, spec)
    n = A.shape[0]
    if n > max_size:
        raise ValueError(f"Gram matrix of size {n} exceeds the configured cap {max_size}")
    lower = np.tril(_kernel_block(spec, A, A))
    lower += np.tril(lower, -1).T
    return lower
