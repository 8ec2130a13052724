"""Kernel ridge regression under covariate shift with pseudo-label model selection."""

from .kernels import KernelKind, KernelSpec, cross_gram, eval_kernel, gram_matrix
from .krr import KrrModel, KrrSolveError, empirical_mse, fit_krr, fit_krr_path, predict, rkhs_norm_sq

__version__ = "0.1.0"
