"""Command-line front end.

Subcommands::

    shiftkrr run-sim       Monte Carlo study -> trials.csv, slopes.json, curve.csv
    shiftkrr bounds        evaluate the excess-risk and overhead bounds
    shiftkrr check-oracle  randomized check of the deterministic selection inequality
    shiftkrr fit           one pipeline run on CSV data

Settings can also come from ``--config FILE``: one ``key = value`` per line,
``#`` starts a comment, keys are the long flag names without dashes (dashes
or underscores).  Flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import simlab, theory
from .kernels import KernelSpec
from .shiftselect import LabeledSet, PipelineConfig, run_pipeline

log = logging.getLogger("shiftkrr")

SUBCOMMANDS = ("run-sim", "bounds", "check-oracle", "fit")
REPORT_SCHEMA = "shiftkrr.report/1"


class CliError(Exception):
    pass


@dataclass
class CliConfig:
    subcommand: str
    options: dict[str, Any]
    out_dir: Path | None = None
    seed: int = 0
    config_path: Path | None = None
    overrides: dict[str, Any] = field(default_factory=dict)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def _add_common(p: argparse.ArgumentParser, out_default: str | None) -> None:
    p.add_argument("--config", type=Path, help="key=value settings file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None if out_default is None else Path(out_default))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftkrr",
        description="Kernel ridge regression under covariate shift with pseudo-label model selection.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("run-sim", help="run the covariate-shift simulation study")
    _add_common(p, "sim_out")
    p.add_argument("--n-grid", type=_int_list, default=None, help="comma-separated even sample sizes")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--eval-points", type=int, default=None)
    p.add_argument("--bootstrap-reps", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = one per CPU")

    p = sub.add_parser("bounds", help="evaluate the bounds on explicit second-moment matrices")
    _add_common(p, None)
    p.add_argument("--sigma", type=Path, default=None, help="CSV file with the source second-moment matrix")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sigma0", type=Path, default=None, help="CSV file with the target second-moment matrix")
    group.add_argument("--spectrum", type=Path, default=None, help="target eigenvalues, one per line")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-tilde", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--noise-sd", type=float, default=None, help="noise level sigma")
    p.add_argument("--theta-norm", type=float, default=None)
    p.add_argument("--c0", type=float, default=None, help="regular-spectrum constant")

    p = sub.add_parser("check-oracle", help="randomized check of the selection oracle inequality")
    _add_common(p, None)
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--max-m", type=int, default=None)
    p.add_argument("--max-n", type=int, default=None)

    p = sub.add_parser("fit", help="run the pipeline on CSV data")
    _add_common(p, None)
    p.add_argument("--train", type=Path, default=None, help="CSV: covariate columns then the label")
    p.add_argument("--target", type=Path, default=None, help="CSV: covariate columns")
    p.add_argument("--kernel", default=None, help="e.g. sobolev, gauss:alpha=2.0, poly:m=3:hom=false")
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--lambda-tilde", type=float, default=None)
    p.add_argument("--lambda-grid", default=None, help="comma-separated penalties (default: doubling grid)")
    return parser


DEFAULTS: dict[str, dict[str, Any]] = {
    "run-sim": {
        "n_grid": [500, 1000, 2000, 4000, 8000],
        "runs": 20,
        "noise_sd": 1.0,
        "eval_points": 1000,
        "bootstrap_reps": 2000,
        "threads": 1,
    },
    "bounds": {
        "sigma": None,
        "sigma0": None,
        "spectrum": None,
        "lam": None,
        "lambda_tilde": None,
        "delta": 0.2,
        "n": None,
        "n0": None,
        "rho": 0.5,
        "m": 2,
        "noise_sd": 1.0,
        "theta_norm": 1.0,
        "c0": 1.0,
    },
    "check-oracle": {"instances": 1000, "max_m": 8, "max_n": 50},
    "fit": {
        "train": None,
        "target": None,
        "kernel": "sobolev",
        "rho": 0.5,
        "lambda_tilde": None,
        "lambda_grid": None,
    },
}

_CONVERTERS: dict[str, Any] = {
    "n_grid": _int_list,
    "runs": int,
    "noise_sd": float,
    "eval_points": int,
    "bootstrap_reps": int,
    "threads": int,
    "sigma": Path,
    "sigma0": Path,
    "spectrum": Path,
    "lam": float,
    "lambda_tilde": float,
    "delta": float,
    "n": int,
    "n0": int,
    "rho": float,
    "m": int,
    "theta_norm": float,
    "c0": float,
    "instances": int,
    "max_m": int,
    "max_n": int,
    "train": Path,
    "target": Path,
    "kernel": str,
    "lambda_grid": str,
    "seed": int,
    "out": Path,
}


def read_config_file(path: Path, subcommand: str) -> dict[str, Any]:
    """Parse a flat ``key = value`` file; unknown keys are an error."""
    allowed = set(DEFAULTS[subcommand]) | {"seed", "out"}
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in allowed:
            raise CliError(f"{path}:{lineno}: unknown key {key!r} for {subcommand}")
        try:
            values[key] = _CONVERTERS[key](value.strip())
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def parse_args(argv: Sequence[str] | None = None) -> CliConfig:
    """Parse ``argv`` into a :class:`CliConfig`; argparse exits on usage errors."""
    ns = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config", "verbose") and v is not None}
    file_values = read_config_file(ns.config, ns.subcommand) if ns.config else {}
    merged = dict(DEFAULTS[ns.subcommand])
    merged.update(file_values)
    merged.update(flags)
    seed = int(merged.pop("seed", 0))
    out = merged.pop("out", None)
    if ns.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    return CliConfig(
        subcommand=ns.subcommand,
        options=merged,
        out_dir=Path(out) if out is not None else None,
        seed=seed,
        config_path=ns.config,
        overrides=flags,
    )


# output helpers ---------------------------------------------------------


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class _Outputs:
    """Write files as ``<name>.partial`` and rename them only when every job succeeded."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.pending: list[tuple[Path, Path]] = []

    def path(self, name: str) -> Path:
        final = self.out_dir / name
        partial = final.with_name(final.name + ".partial")
        self.pending.append((partial, final))
        return partial

    def commit(self) -> None:
        for partial, final in self.pending:
            partial.replace(final)

    def discard(self) -> None:
        for partial, _ in self.pending:
            partial.unlink(missing_ok=True)


def _emit_json(cfg: CliConfig, name: str, report: dict) -> None:
    text = _dump_json(report)
    if cfg.out_dir is None:
        sys.stdout.write(text)
        return
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    outputs = _Outputs(cfg.out_dir)
    try:
        outputs.path(name).write_text(text, encoding="utf-8")
        outputs.commit()
    except BaseException:
        outputs.discard()
        raise


# subcommands ------------------------------------------------------------


def _slopes_report(boot: simlab.BootstrapResult, reps: int, n_lines: int = 100) -> dict:
    methods = {}
    for m in simlab.METHODS:
        fit = boot.point[m]
        methods[m.value] = {
            "alpha_hat": fit.alpha_hat,
            "intercept": fit.intercept,
            "ci": list(boot.intervals[m.value]),
            # a handful of replicate lines for shaded-band plots
            "replicate_lines": [
                [float(a), float(b)]
                for a, b in zip(boot.replicate_alpha[m][:n_lines], boot.replicate_intercept[m][:n_lines])
            ],
        }
    return {
        "schema_version": REPORT_SCHEMA,
        "bootstrap_reps": reps,
        "level": boot.level,
        "methods": methods,
        "differences": {
            key: {"estimate": boot.diffs[key], "ci": list(boot.intervals[key])}
            for key in ("pl_minus_oracle", "pl_minus_naive")
        },
    }


def cmd_run_sim(cfg: CliConfig) -> int:
    o = cfg.options
    sim = simlab.SimConfig(
        n_grid=tuple(o["n_grid"]),
        runs_per_n=o["runs"],
        noise_sd=o["noise_sd"],
        eval_points=o["eval_points"],
        bootstrap_reps=o["bootstrap_reps"],
        master_seed=cfg.seed,
        threads=o["threads"],
    )
    out_dir = cfg.out_dir or Path("sim_out")
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(done: int, total: int) -> None:
        log.info("run %d/%d", done, total)

    records = simlab.run_simulation(sim, progress)
    outputs = _Outputs(out_dir)
    try:
        simlab.write_trials_csv(records, outputs.path("trials.csv"))
        lines = [f"# schema_version={simlab.TRIALS_SCHEMA.replace('trials', 'curve')}", "n,method,mean,stderr"]
        lines += [f"{n},{m},{mean!r},{se!r}" for n, m, mean, se in simlab.curve_rows(records)]
        outputs.path("curve.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        summary = "trials written"
        if len(sim.n_grid) >= 2:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB007]))
            boot = simlab.cluster_bootstrap(records, sim.bootstrap_reps, rng)
            outputs.path("slopes.json").write_text(_dump_json(_slopes_report(boot, sim.bootstrap_reps)), encoding="utf-8")
            pt = boot.point
            summary = (
                f"alpha_pl={pt[simlab.Method.PSEUDO_LABEL].alpha_hat:.3f} "
                f"alpha_oracle={pt[simlab.Method.ORACLE].alpha_hat:.3f} "
                f"alpha_naive={pt[simlab.Method.NAIVE].alpha_hat:.3f}"
            )
        outputs.commit()
    except BaseException:
        outputs.discard()
        raise
    print(f"run-sim: {len(records)} trials -> {out_dir}; {summary}")
    return 0


def _read_matrix(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2))


def cmd_bounds(cfg: CliConfig) -> int:
    o = cfg.options
    for key in ("sigma", "lam", "n"):
        if o[key] is None:
            raise CliError(f"bounds needs --{key.replace('lam', 'lambda')}")
    if o["sigma0"] is None and o["spectrum"] is None:
        raise CliError("bounds needs --sigma0 or --spectrum")
    Sigma = _read_matrix(o["sigma"])
    spectrum = None
    if o["spectrum"] is not None:
        mu = np.loadtxt(o["spectrum"], dtype=np.float64, ndmin=1)
        spectrum = theory.SpectrumInputs(np.sort(mu)[::-1], c0=o["c0"])
        # eigenvalues are taken in the eigenbasis that Sigma is expressed in
        Sigma0 = np.diag(spectrum.mu)
    else:
        Sigma0 = _read_matrix(o["sigma0"])
    inputs = theory.BoundInputs(
        Sigma=Sigma,
        Sigma0=Sigma0,
        sigma=o["noise_sd"],
        theta_norm=o["theta_norm"],
        n=o["n"],
        n0=o["n0"] if o["n0"] is not None else max(1, o["n"] // 2),
        rho=o["rho"],
        m=o["m"],
        delta=o["delta"],
    )
    lam = o["lam"]
    lam_tilde = o["lambda_tilde"] if o["lambda_tilde"] is not None else lam
    s_norm, s_trace = theory.shift_norm_trace(inputs, lam)
    report: dict[str, Any] = {
        "schema_version": REPORT_SCHEMA,
        "lambda": lam,
        "lambda_tilde": lam_tilde,
        "S_norm": s_norm,
        "S_trace": s_trace,
        "E": theory.candidate_bound(inputs, lam),
        "xi": theory.overhead_bound(inputs, lam_tilde),
        "trace_condition": theory.trace_condition_holds(inputs),
    }
    if spectrum is not None:
        r = float(np.sqrt(lam))
        try:
            report["effective_dim"] = theory.effective_dim(spectrum, r)
        except theory.SpectrumTruncationError:
            report["effective_dim"] = None
        positive = spectrum.mu[spectrum.mu > 0]
        if positive.size:
            r_grid = np.sqrt(np.geomspace(positive[-1], positive[0], 10))
            check = theory.regular_spectrum_check(spectrum, r_grid)
            report["regular_spectrum"] = {"c0": spectrum.c0, "worst_ratio": check.worst_ratio, "passed": check.all_passed}
    _emit_json(cfg, "bounds.json", report)
    print(f"bounds: E={report['E']:.6g} xi={report['xi']:.6g}", file=sys.stderr if cfg.out_dir is None else sys.stdout)
    return 0


def random_selection_instance(rng: np.random.Generator, max_m: int, max_n: int):
    """Random candidates, truth and pseudo-labels for the selection inequality."""
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(1, max_n + 1))
    y_star = rng.standard_normal(n)
    preds = {float(j + 1): y_star + rng.uniform(0.05, 2.0) * rng.standard_normal(n) for j in range(m)}
    if m >= 2 and rng.random() < 0.1:
        # duplicated candidate exercises the 0/0 convention
        preds[float(m)] = preds[1.0].copy()
    pseudo = y_star + rng.uniform(0.0, 2.0) * rng.standard_normal(n)
    return preds, pseudo, y_star


def check_oracle(instances: int, max_m: int, max_n: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    violations = 0
    min_slack = float("inf")
    for _ in range(instances):
        preds, pseudo, y_star = random_selection_instance(rng, max_m, max_n)
        res = theory.verify_selection_inequality(preds, pseudo, y_star)
        violations += not res.holds
        min_slack = min(min_slack, res.slack)
    return {
        "schema_version": REPORT_SCHEMA,
        "instances": instances,
        "violations": violations,
        "min_slack": min_slack,
        "seed": seed,
    }


def cmd_check_oracle(cfg: CliConfig) -> int:
    o = cfg.options
    if o["instances"] < 1 or o["max_m"] < 1 or o["max_n"] < 1:
        raise CliError("instances, max-m and max-n must be positive")
    report = check_oracle(o["instances"], o["max_m"], o["max_n"], cfg.seed)
    _emit_json(cfg, "check_oracle.json", report)
    print(
        f"check-oracle: {report['violations']} violations in {report['instances']} instances",
        file=sys.stderr if cfg.out_dir is None else sys.stdout,
    )
    return 0 if report["violations"] == 0 else 1


def cmd_fit(cfg: CliConfig) -> int:
    o = cfg.options
    if o["train"] is None or o["target"] is None:
        raise CliError("fit needs --train and --target")
    spec = KernelSpec.parse(o["kernel"])
    train = _read_matrix(o["train"])
    if train.shape[1] < 2:
        raise CliError("training CSV needs covariate columns and a label column")
    X0 = _read_matrix(o["target"])
    grid = tuple(float(v) for v in o["lambda_grid"].split(",")) if o["lambda_grid"] else None
    pcfg = PipelineConfig(rho=o["rho"], lambda_grid=grid, imputer_lambda=o["lambda_tilde"], seed=cfg.seed)
    result = run_pipeline(spec, LabeledSet(train[:, :-1], train[:, -1]), X0, pcfg)
    report = result.to_dict()
    report["kernel"] = spec.to_string()
    _emit_json(cfg, "selection.json", report)
    print(f"fit: chosen lambda={result.chosen_lambda:.6g}", file=sys.stderr if cfg.out_dir is None else sys.stdout)
    return 0


COMMANDS = {
    "run-sim": cmd_run_sim,
    "bounds": cmd_bounds,
    "check-oracle": cmd_check_oracle,
    "fit": cmd_fit,
}


def run(cfg: CliConfig) -> int:
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except (CliError, ValueError, OSError) as exc:
        print(f"shiftkrr {cfg.subcommand}: error: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_args(argv)
    except CliError as exc:
        print(f"shiftkrr: error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
