"""Monte Carlo study of pseudo-label selection on the Sobolev RKHS.

The truth is ``sin(2 pi x)`` on ``[0, 1]``.  Source covariates put mass
``B/(B+1)`` on ``[0, 1/2]``, target covariates put the same mass on
``[1/2, 1]``, with ``B = n**(1/3)``.  Each run fits one candidate path on
``D1`` and compares three ways of choosing among it:

* ``pseudo_label``: fit to imputed labels on the target covariates,
* ``oracle``: fit to the noiseless truth on the target covariates,
* ``naive``: hold-out error on ``D2`` with the observed labels.

All three methods of a run see the same data, split, candidates and
evaluation points.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .kernels import KernelSpec, cross_gram
from .krr import KrrModel, predict
from .shiftselect import (
    LabeledSet,
    default_lambda_grid,
    select_model,
    split_data,
    train_candidates,
    train_imputer,
)

__all__ = [
    "Method",
    "Side",
    "SimConfig",
    "TrialRecord",
    "SlopeFit",
    "BootstrapResult",
    "true_function",
    "sample_mixture",
    "shift_strength",
    "trial_seed",
    "generate_trial_data",
    "estimate_excess_risk",
    "run_trial",
    "run_cluster",
    "run_simulation",
    "per_n_means",
    "fit_loglog_slope",
    "cluster_bootstrap",
    "write_trials_csv",
    "read_trials_csv",
    "curve_rows",
]

TRIALS_SCHEMA = "shiftkrr.trials/1"
TRIALS_HEADER = ("n", "run", "method", "seed", "excess_risk", "chosen_lambda")


class Method(str, Enum):
    PSEUDO_LABEL = "pseudo_label"
    ORACLE = "oracle"
    NAIVE = "naive"


METHODS = (Method.PSEUDO_LABEL, Method.ORACLE, Method.NAIVE)


class Side(str, Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class SimConfig:
    n_grid: tuple[int, ...] = (500, 1000, 2000, 4000, 8000)
    runs_per_n: int = 20
    b_exponent: float = 1.0 / 3.0
    noise_sd: float = 1.0
    eval_points: int = 1000
    bootstrap_reps: int = 2000
    master_seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        grid = tuple(int(n) for n in self.n_grid)
        if not grid:
            raise ValueError("n_grid must not be empty")
        for n in grid:
            if n < 2 or n % 2:
                raise ValueError(f"sample sizes must be even and >= 2, got {n}")
        object.__setattr__(self, "n_grid", grid)
        if self.runs_per_n < 1 or self.eval_points < 1 or self.bootstrap_reps < 1:
            raise ValueError("runs_per_n, eval_points and bootstrap_reps must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.threads < 0:
            raise ValueError("threads must be >= 0 (0 = auto)")


@dataclass(frozen=True)
class TrialRecord:
    n: int
    run: int
    method: Method
    seed: int
    excess_risk: float
    chosen_lambda: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if not (math.isfinite(self.excess_risk) and self.excess_risk >= 0):
            raise ValueError(f"excess risk must be finite and nonnegative, got {self.excess_risk}")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.n, self.run, METHODS.index(self.method))


def true_function(x: ArrayLike) -> NDArray[np.float64] | float:
    xa = np.asarray(x, dtype=np.float64)
    if np.any((xa < 0) | (xa > 1)):
        raise ValueError("true_function is defined on [0, 1]")
    out = np.sin(2.0 * np.pi * xa)
    return float(out) if out.ndim == 0 else out


def shift_strength(n: int, exponent: float = 1.0 / 3.0) -> float:
    return float(n) ** exponent


def sample_mixture(B: float, side: Side | str, rng: np.random.Generator, size: int | None = None):
    """Draw from ``w U[0, 1/2] + (1 - w) U[1/2, 1]``.

    ``w = B/(B+1)`` on the source side and ``1/(B+1)`` on the target side.
    """
    if not B >= 1:
        raise ValueError(f"B must be >= 1, got {B!r}")
    side = Side(side)
    w_left = B / (B + 1.0) if side is Side.SOURCE else 1.0 / (B + 1.0)
    left = rng.random(size) < w_left
    u = 0.5 * rng.random(size)
    x = np.where(left, u, 0.5 + u)
    return float(x) if size is None else x


def trial_seed(master_seed: int, n: int, run: int) -> int:
    """64-bit seed of run ``run`` at size ``n``; shared by every method of that run."""
    ss = np.random.SeedSequence([master_seed & (2**64 - 1), n, run])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_trial_data(n: int, cfg: SimConfig, rng: np.random.Generator) -> tuple[LabeledSet, NDArray[np.float64]]:
    """``n`` labeled source pairs and ``n/2`` unlabeled target covariates."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be even and >= 2, got {n}")
    B = shift_strength(n, cfg.b_exponent)
    x = sample_mixture(B, Side.SOURCE, rng, size=n)
    y = np.sin(2.0 * np.pi * x) + cfg.noise_sd * rng.standard_normal(n)
    x0 = sample_mixture(B, Side.TARGET, rng, size=n // 2)
    return LabeledSet(x, y), x0


def _sq_dev(values: NDArray, z: NDArray) -> NDArray:
    d = values - np.sin(2.0 * np.pi * z)
    return d * d


def estimate_excess_risk(
    model: KrrModel | Callable[[NDArray], NDArray],
    B: float,
    n_eval: int,
    rng: np.random.Generator,
    return_se: bool = False,
):
    """Mean squared deviation from the truth over ``n_eval`` fresh target draws."""
    z = sample_mixture(B, Side.TARGET, rng, size=n_eval)
    values = predict(model, z) if isinstance(model, KrrModel) else np.asarray(model(z), dtype=np.float64)
    sq = _sq_dev(values, z)
    est = float(sq.mean())
    if return_se:
        se = float(sq.std(ddof=1) / math.sqrt(n_eval)) if n_eval > 1 else math.inf
        return est, se
    return est


def run_cluster(n: int, run: int, cfg: SimConfig) -> list[TrialRecord]:
    """One simulation run at size ``n``; returns one record per method."""
    seed = trial_seed(cfg.master_seed, n, run)
    data_ss, split_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    spec = KernelSpec.sobolev()
    B = shift_strength(n, cfg.b_exponent)

    source, x0 = generate_trial_data(n, cfg, np.random.default_rng(data_ss))
    D1, D2 = split_data(source, 0.5, np.random.default_rng(split_ss))
    if len(D2) != len(x0):
        raise AssertionError("target and hold-out sets must have equal size")
    candidates = train_candidates(spec, D1, default_lambda_grid(len(D1)))
    imputer = train_imputer(spec, D2)

    lams = sorted(candidates)
    alphas = np.column_stack([candidates[lam].alpha for lam in lams])
    on_target = cross_gram(spec, D1.x, x0) @ alphas
    on_holdout = cross_gram(spec, D1.x, D2.x) @ alphas
    target_preds = {lam: on_target[:, j] for j, lam in enumerate(lams)}
    holdout_preds = {lam: on_holdout[:, j] for j, lam in enumerate(lams)}

    chosen = {
        Method.PSEUDO_LABEL: select_model(candidates, x0, predict(imputer, x0), target_preds).chosen_lambda,
        Method.ORACLE: select_model(candidates, x0, np.sin(2.0 * np.pi * x0), target_preds).chosen_lambda,
        Method.NAIVE: select_model(candidates, D2.x, D2.y, holdout_preds).chosen_lambda,
    }

    z = sample_mixture(B, Side.TARGET, np.random.default_rng(eval_ss), size=cfg.eval_points)
    Kz = cross_gram(spec, D1.x, z)
    records = []
    for method in METHODS:
        lam = chosen[method]
        risk = float(_sq_dev(Kz @ candidates[lam].alpha, z).mean())
        records.append(TrialRecord(n, run, method, seed, risk, lam))
    return records


def run_trial(n: int, method: Method | str, cfg: SimConfig, run: int) -> TrialRecord:
    method = Method(method)
    for record in run_cluster(n, run, cfg):
        if record.method is method:
            return record
    raise AssertionError(method)


def _workers(threads: int) -> int:
    if threads == 0:
        import os

        return os.cpu_count() or 1
    return threads


def run_simulation(
    cfg: SimConfig, progress: Callable[[int, int], None] | None = None
) -> list[TrialRecord]:
    """All runs of the study, sorted by ``(n, run, method)``.

    Runs are independent jobs; the output does not depend on the thread count
    or completion order.
    """
    jobs = [(n, run) for n in cfg.n_grid for run in range(cfg.runs_per_n)]
    # largest problems first keeps the pool busy
    jobs.sort(key=lambda job: -job[0])
    records: list[TrialRecord] = []
    workers = _workers(cfg.threads)
    if workers == 1:
        results = (run_cluster(n, run, cfg) for n, run in jobs)
        for done, recs in enumerate(results, 1):
            records.extend(recs)
            if progress:
                progress(done, len(jobs))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cluster, n, run, cfg) for n, run in jobs]
            for done, fut in enumerate(futures, 1):
                records.extend(fut.result())
                if progress:
                    progress(done, len(jobs))
    records.sort(key=lambda r: r.key)
    return records


def per_n_means(records: Iterable[TrialRecord], method: Method | str) -> dict[int, float]:
    method = Method(method)
    groups: dict[int, list[float]] = {}
    for rec in records:
        if rec.method is method:
            groups.setdefault(rec.n, []).append(rec.excess_risk)
    return {n: float(np.mean(v)) for n, v in sorted(groups.items())}


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares line ``log(mean) = intercept - alpha_hat * log(n)``."""

    alpha_hat: float
    intercept: float
    ns: tuple[int, ...]
    means: tuple[float, ...]
    residuals: tuple[float, ...]


def _ols_slopes(log_n: NDArray, log_y: NDArray) -> tuple[NDArray, NDArray]:
    # log_y: (..., k); slopes/intercepts over the last axis
    xc = log_n - log_n.mean()
    y_mean = log_y.mean(axis=-1)
    slope = ((log_y - y_mean[..., None]) * xc).sum(axis=-1) / (xc * xc).sum()
    intercept = y_mean - slope * log_n.mean()
    return slope, intercept


def fit_loglog_slope(per_n: Mapping[int, float]) -> SlopeFit:
    ns = sorted(per_n)
    if len(ns) < 2:
        raise ValueError("need at least two sample sizes to fit a slope")
    means = np.array([per_n[n] for n in ns], dtype=np.float64)
    if np.any(means <= 0) or not np.all(np.isfinite(means)):
        raise ValueError("mean risks must be positive and finite to take logs")
    log_n = np.log(np.array(ns, dtype=np.float64))
    log_y = np.log(means)
    slope, intercept = _ols_slopes(log_n, log_y)
    resid = log_y - (intercept + slope * log_n)
    return SlopeFit(float(-slope), float(intercept), tuple(ns), tuple(means.tolist()), tuple(resid.tolist()))


@dataclass(frozen=True)
class BootstrapResult:
    point: dict[Method, SlopeFit]
    replicate_alpha: dict[Method, NDArray[np.float64]]
    replicate_intercept: dict[Method, NDArray[np.float64]]
    intervals: dict[str, tuple[float, float]]
    level: float = 0.95
    diffs: dict[str, float] = field(default_factory=dict)


def _risk_table(records: Sequence[TrialRecord]) -> tuple[list[int], dict[int, NDArray]]:
    """Per ``n``, an array of shape ``(3, runs)`` with rows in METHODS order."""
    cells: dict[int, dict[int, dict[Method, float]]] = {}
    for rec in records:
        cells.setdefault(rec.n, {}).setdefault(rec.run, {})[rec.method] = rec.excess_risk
    tables = {}
    for n, runs in sorted(cells.items()):
        for run, by_method in runs.items():
            missing = [m.value for m in METHODS if m not in by_method]
            if missing:
                raise ValueError(f"run {run} at n={n} lacks methods {missing}")
        order = sorted(runs)
        tables[n] = np.array([[runs[r][m] for r in order] for m in METHODS], dtype=np.float64)
    return sorted(tables), tables


def cluster_bootstrap(
    records: Sequence[TrialRecord], reps: int, rng: np.random.Generator, level: float = 0.95
) -> BootstrapResult:
    """Resample runs with replacement, independently per ``n`` and jointly across methods.

    Each replicate refits the three log-log slopes; percentile intervals are
    reported for the pseudo-label minus oracle and pseudo-label minus naive
    exponents, and for each exponent on its own.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    ns, tables = _risk_table(records)
    if len(ns) < 2:
        raise ValueError("need at least two sample sizes")
    log_n = np.log(np.array(ns, dtype=np.float64))

    # boot_means[m, rep, k]
    boot_means = np.empty((len(METHODS), reps, len(ns)))
    for k, n in enumerate(ns):
        table = tables[n]
        idx = rng.integers(0, table.shape[1], size=(reps, table.shape[1]))
        boot_means[:, :, k] = table[:, idx].mean(axis=-1)
    if np.any(boot_means <= 0):
        raise ValueError("bootstrap means must be positive")
    slopes, intercepts = _ols_slopes(log_n, np.log(boot_means))
    alphas = -slopes

    point = {m: fit_loglog_slope({n: float(tables[n][i].mean()) for n in ns}) for i, m in enumerate(METHODS)}
    tail = 100.0 * (1.0 - level) / 2.0
    pl, orc, nv = (METHODS.index(m) for m in (Method.PSEUDO_LABEL, Method.ORACLE, Method.NAIVE))

    def interval(values: NDArray) -> tuple[float, float]:
        lo, hi = np.percentile(values, [tail, 100.0 - tail])
        return float(lo), float(hi)

    intervals = {
        "pl_minus_oracle": interval(alphas[pl] - alphas[orc]),
        "pl_minus_naive": interval(alphas[pl] - alphas[nv]),
    }
    for i, m in enumerate(METHODS):
        intervals[m.value] = interval(alphas[i])
    diffs = {
        "pl_minus_oracle": point[Method.PSEUDO_LABEL].alpha_hat - point[Method.ORACLE].alpha_hat,
        "pl_minus_naive": point[Method.PSEUDO_LABEL].alpha_hat - point[Method.NAIVE].alpha_hat,
    }
    return BootstrapResult(
        point=point,
        replicate_alpha={m: alphas[i] for i, m in enumerate(METHODS)},
        replicate_intercept={m: intercepts[i] for i, m in enumerate(METHODS)},
        intervals=intervals,
        level=level,
        diffs=diffs,
    )


def curve_rows(records: Sequence[TrialRecord]) -> list[tuple[int, str, float, float]]:
    """``(n, method, mean, stderr)`` per size and method."""
    ns, tables = _risk_table(records)
    rows = []
    for n in ns:
        for i, m in enumerate(METHODS):
            vals = tables[n][i]
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
            rows.append((n, m.value, float(vals.mean()), se))
    return rows


def write_trials_csv(records: Iterable[TrialRecord], path: str | Path) -> None:
    buf = io.StringIO()
    buf.write(f"# schema_version={TRIALS_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIALS_HEADER)
    for r in records:
        writer.writerow([r.n, r.run, r.method.value, r.seed, repr(r.excess_risk), repr(r.chosen_lambda)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_trials_csv(path: str | Path) -> list[TrialRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# schema_version="):
        raise ValueError(f"{path}: missing schema_version line")
    schema = lines[0].split("=", 1)[1]
    if schema != TRIALS_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {schema!r}")
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != TRIALS_HEADER:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    return [
        TrialRecord(
            int(row["n"]),
            int(row["run"]),
            Method(row["method"]),
            int(row["seed"]),
            float(row["excess_risk"]),
            float(row["chosen_lambda"]),
        )
        for row in reader
    ]
