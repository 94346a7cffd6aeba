"""Command-line entry point: ``stosign run|bounds|privacy``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import analysis
from .config import ConfigError, ExperimentConfig, format_validation_errors, parse_config
from .learning.simulation import ExperimentResult, run_experiment
from .privacy import compose_gdp, mu_to_eps
from .vectors import Purpose, derive_stream

log = logging.getLogger("stosign")

OUTPUT_ENV = "STOSIGN_OUTPUT_DIR"
METRIC_COLUMNS = ("round", "train_loss", "test_loss", "train_acc", "test_acc",
                  "wrong_agg_frac", "uplink_bits", "downlink_bits", "lr")
BOUNDS_COLUMNS = ("M", "b", "sum_u", "exact", "mc_estimate", "mc_se",
                  "thm1", "cor1", "thm3_expansion", "delta_M")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def output_dir(config: ExperimentConfig, override: Optional[str] = None) -> Path:
    return Path(override or config.output.dir or os.environ.get(OUTPUT_ENV) or "out")


def write_metrics_csv(path: Path, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for m in result.metrics:
            writer.writerow([_fmt(getattr(m, col)) for col in METRIC_COLUMNS])


def cmd_run(config: ExperimentConfig, out: Optional[str] = None) -> tuple[Path, Path]:
    result = run_experiment(config)
    directory = output_dir(config, out)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / config.output.csv
    summary_path = directory / config.output.summary
    write_metrics_csv(csv_path, result)
    summary_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return csv_path, summary_path


class SweepSpec(BaseModel):
    """Bounds sweep: random ensembles per (M, b), or fixed ``u`` vectors swept over ``b``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, ge=0)
    M: list[int] = []
    b: list[float]
    ensembles: int = Field(1, ge=1)
    u_low: float = -1.0
    u_high: float = 1.0
    fixed_u: list[list[float]] = []
    trials: int = Field(100_000, ge=1)
    c: float = Field(0.01, gt=0, lt=1)
    output: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.M and not self.fixed_u:
            raise ValueError("M: give M values for random ensembles or fixed_u vectors")
        if any(m < 1 for m in self.M):
            raise ValueError("M: every M must be ≥ 1")
        if any(v <= 0 for v in self.b):
            raise ValueError("b: every b must be positive")
        if self.u_low > self.u_high:
            raise ValueError("u_low: must not exceed u_high")
        umax = max([abs(self.u_low), abs(self.u_high)] if self.M else [0.0])
        umax = max([umax] + [max(abs(x) for x in u) for u in self.fixed_u if u])
        if any(v < umax for v in self.b):
            raise ValueError(f"b: every b must be ≥ max|u| = {umax}")
        if any(not u for u in self.fixed_u):
            raise ValueError("fixed_u: vectors must be non-empty")
        return self


def bounds_rows(spec: SweepSpec):
    """Yield one dict per (ensemble, b) with the exact, MC and bound columns."""
    ensembles = [np.asarray(u, dtype=np.float64) for u in spec.fixed_u]
    for i, M in enumerate(spec.M):
        gen = derive_stream(spec.seed, i, 0, Purpose.ENSEMBLE)
        ensembles += [gen.uniform(spec.u_low, spec.u_high, M) for _ in range(spec.ensembles)]
    for j, u in enumerate(ensembles):
        for k, b in enumerate(spec.b):
            e = analysis.ScalarEnsemble(u, b)
            rep = analysis.bound_report(e, spec.c, spec.trials, derive_stream(spec.seed, j, k, Purpose.MONTE_CARLO))
            yield {
                "M": e.M, "b": b, "sum_u": e.total, "exact": rep.exact,
                "mc_estimate": rep.mc_estimate, "mc_se": rep.mc_std_error,
                "thm1": rep.thm1_bound, "cor1": rep.cor1_bound,
                "thm3_expansion": rep.thm3_expansion, "delta_M": rep.delta_M,
            }


def cmd_bounds(spec: SweepSpec, out: Optional[str] = None) -> Path:
    path = Path(out or spec.output or Path(os.environ.get(OUTPUT_ENV) or "out") / "bounds.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BOUNDS_COLUMNS)
        for row in bounds_rows(spec):
            writer.writerow([_fmt(row[c]) for c in BOUNDS_COLUMNS])
    return path


def privacy_report(sigma: float, clip: float, rounds: int, delta: float = 1e-5) -> dict:
    mu = compose_gdp(sigma, clip, rounds)
    return {"sigma": sigma, "clip": clip, "rounds": rounds, "mu": mu,
            "delta": delta, "epsilon": mu_to_eps(mu, delta)}


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read sweep spec ({exc.strerror})"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    try:
        return SweepSpec.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_errors(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stosign",
        description="Sign-compressed federated SGD experiments, error-probability tables and privacy accounting.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default: config, then ${OUTPUT_ENV}, then ./out)")

    bounds = sub.add_parser("bounds", help="tabulate wrong-aggregation bounds from a JSON sweep spec")
    bounds.add_argument("sweep")
    bounds.add_argument("--out", help="CSV path")

    priv = sub.add_parser("privacy", help="Gaussian-DP composition for dp-sign")
    priv.add_argument("--sigma", type=float, required=True)
    priv.add_argument("--clip", type=float, required=True, help="clip threshold, used as L2 sensitivity")
    priv.add_argument("--rounds", type=int, required=True)
    priv.add_argument("--delta", type=float, default=1e-5)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            csv_path, summary_path = cmd_run(parse_config(args.config), args.out)
            print(f"wrote {csv_path} and {summary_path}")
        elif args.command == "bounds":
            print(f"wrote {cmd_bounds(load_sweep(args.sweep), args.out)}")
        else:
            if args.sigma <= 0 or args.clip <= 0 or args.rounds < 1 or not 0 < args.delta < 1:
                raise ConfigError(["privacy: need sigma > 0, clip > 0, rounds ≥ 1, 0 < delta < 1"])
            rep = privacy_report(args.sigma, args.clip, args.rounds, args.delta)
            print(f"mu = {rep['mu']:.6g}")
            print(f"epsilon = {rep['epsilon']:.6g} at delta = {rep['delta']:g}")
    except ConfigError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
