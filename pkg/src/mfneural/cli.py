"""Command-line entry point.

    mfneural run --config exp.json [--threads N] [--seed S] [--out DIR]
    mfneural oracle K1
    mfneural gradcheck

``run`` writes grid.csv, trials.csv, best_fit.csv and manifest.json into the
output directory: ``--out``, else the config's ``output_dir``, else
``$MFNEURAL_OUTPUT_DIR``, else ``./mfneural-out``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import PROBLEM_NAMES, BenchmarkProblem, RDTableError, make_problem
from .checks import gradcheck_report, oracle_report
from .mfmodel import TIERS, MultiFidelityModel
from .training import (
    ARCHITECTURES,
    ENCODINGS,
    AggregateRow,
    GridOutcome,
    GridSpec,
    HyperParams,
    Schedule,
    TrialConfig,
    grid_configs,
    restore_model,
    run_grid,
    trial_seeds,
)

OUTPUT_ENV = "MFNEURAL_OUTPUT_DIR"
DEFAULT_OUTPUT = "mfneural-out"

log = logging.getLogger("mfneural")


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    problem: str
    architectures: list[str] = dataclasses.field(default_factory=lambda: ["mlp"])
    tiers: list[int] = dataclasses.field(default_factory=lambda: [1, 2, 3])
    sizes: list[int] | None = None
    encodings: list[str] = dataclasses.field(default_factory=lambda: list(ENCODINGS))
    repetitions: int = 4
    master_seed: int = 0
    epochs: int = 20_000
    search_budget: int = 30
    include_sf: bool = True
    lr: float = 1e-3  # used only when search_budget == 0
    lf_pretrain_epochs: int = 0
    output_dir: str | None = None
    rd_table: str | None = None

    def validate(self) -> None:
        for name in ("architectures", "tiers", "encodings"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be a nonempty list")
        if self.sizes is not None and (not self.sizes or any(int(n) < 1 for n in self.sizes)):
            raise ConfigError("sizes must be a nonempty list of positive integers")
        if bad := [a for a in self.architectures if a not in ARCHITECTURES]:
            raise ConfigError(f"unknown architectures {bad}; choose from {list(ARCHITECTURES)}")
        if bad := [t for t in self.tiers if t not in TIERS]:
            raise ConfigError(f"unknown tiers {bad}; choose from {sorted(TIERS)}")
        if bad := [e for e in self.encodings if e not in ENCODINGS]:
            raise ConfigError(f"unknown encodings {bad}; choose from {list(ENCODINGS)}")
        if self.repetitions < 1 or self.epochs < 1 or self.search_budget < 0:
            raise ConfigError("repetitions and epochs must be >= 1, search_budget >= 0")
        if self.problem.upper() == "RD" and not self.rd_table:
            raise ConfigError("problem RD needs a quantity-of-interest table: set \"rd_table\" in the config "
                              "or pass --rd-table")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        if unknown := sorted(set(d) - known):
            raise ConfigError(f"unknown config fields: {unknown}")
        if "problem" not in d:
            raise ConfigError("config needs a \"problem\" field")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            architectures=tuple(self.architectures),
            tiers=tuple(self.tiers),
            sizes=tuple(self.sizes) if self.sizes else None,
            encodings=tuple(self.encodings),
            repetitions=self.repetitions,
            include_sf=self.include_sf,
            master_seed=self.master_seed,
            schedule=Schedule(epochs=self.epochs, lf_pretrain_epochs=self.lf_pretrain_epochs),
            search_budget=self.search_budget,
            default_hp=HyperParams(self.lr),
        )


# ------------------------------------------------------------------ output

TRIAL_FIELDS = ("config_id", "problem", "architecture", "tier", "encoding", "n_hf", "repetition", "status",
                "mse", "normalized_mse", "normalized", "lr", "lam_lf", "lam_nl", "lam_lin", "lam_domain", "message")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_grid_csv(path: Path, rows: list[AggregateRow]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AggregateRow.CSV_FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in AggregateRow.CSV_FIELDS])


def write_trials_csv(path: Path, outcome: GridOutcome) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_FIELDS)
        for cfg, results in outcome.trials.items():
            for r in results:
                hp = r.hyperparams
                w.writerow([_fmt(v) for v in (
                    r.config_id, cfg.problem, cfg.architecture, cfg.tier, cfg.encoding, cfg.n_hf, r.repetition,
                    r.status, r.mse, r.normalized_mse, r.normalized, hp["lr"], hp["lam_lf"], hp["lam_nl"],
                    hp["lam_lin"], hp["lam_domain"], r.message,
                )])


def dense_grid(problem: BenchmarkProblem) -> np.ndarray | None:
    """512 points in 1-D, 64x64 in 2-D; None in higher dimensions."""
    box = problem.hf.domain
    if box.dim == 1:
        return box.from_unit(np.linspace(0, 1, 512)[:, None])
    if box.dim == 2:
        g = np.linspace(0, 1, 64)
        u = np.array([(a, b) for a in g for b in g])
        return box.from_unit(u)
    return None


def write_best_fit_csv(path: Path, problem: BenchmarkProblem, outcome: GridOutcome, master_seed: int) -> list[dict]:
    """Dense evaluation of the best trial per (encoding, size). Returns a summary for the manifest."""
    x = dense_grid(problem)
    best: dict[tuple[str, int], tuple[TrialConfig, object]] = {}
    for cfg, results in outcome.trials.items():
        for r in results:
            if r.failed or r.params is None:
                continue
            key = (cfg.encoding, cfg.n_hf)
            if key not in best or r.normalized_mse < best[key][1].normalized_mse:
                best[key] = (cfg, r)
    lf_cols = [f"lf{i}_encoded" for i in range(problem.n_lf)]
    xcols = [f"x{j + 1}" for j in range(problem.hf_dim)]
    header = ["encoding", "n_hf", "config_id", "repetition", *xcols, "y_hat", "y_lin", "y_nl", "y_hf", *lf_cols]
    summary = []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for (enc, n), (cfg, r) in sorted(best.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            summary.append({"encoding": enc, "n_hf": n, "config_id": cfg.config_id, "repetition": r.repetition,
                            "normalized_mse": r.normalized_mse})
            if x is None:
                continue
            model, _ = restore_model(problem, cfg, r.repetition, r.params, master_seed)
            y_true = problem.hf.f(x)
            if isinstance(model, MultiFidelityModel):
                comp = model.components(x)
                cols = [comp["y_hat"], comp["y_lin"], comp["y_nl"], y_true, *[comp[c] for c in lf_cols]]
            else:
                blank = np.full(len(x), np.nan)
                cols = [model.predict(x), blank, blank, y_true, *[blank] * problem.n_lf]
            for k in range(len(x)):
                w.writerow([enc, n, cfg.config_id, r.repetition, *map(_fmt, x[k].tolist()),
                            *[_fmt(float(c[k])) for c in cols]])
    return summary


def _versions() -> dict:
    import scipy

    return {"mfneural": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(path: Path, cfg: ExperimentConfig, problem: BenchmarkProblem, outcome: GridOutcome,
                   best: list[dict]) -> None:
    configs = []
    for tc in outcome.trials:
        hp = outcome.hyperparams[tc]
        configs.append({
            "config_id": tc.config_id,
            "hyperparams": hp.to_dict(),
            "seeds": [dict(zip(("data", "model"), trial_seeds(cfg.master_seed, tc, rep)))
                      for rep in range(cfg.repetitions)],
        })
    manifest = {
        "config": cfg.to_dict(),
        "problem": {"name": problem.name, "hf_dim": problem.hf_dim, "n_lf": problem.n_lf,
                    "relation": problem.relation_note, "meta": problem.meta},
        "versions": _versions(),
        "configurations": configs,
        "best_fit": best,
        "csv_columns": {"grid.csv": list(AggregateRow.CSV_FIELDS), "trials.csv": list(TRIAL_FIELDS)},
    }
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")


# ---------------------------------------------------------------- commands

def resolve_output(cli_out: str | None, cfg: ExperimentConfig) -> Path:
    return Path(cli_out or cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.rd_table:
            cfg.rd_table = args.rd_table
        cfg.validate()
        problem = make_problem(cfg.problem, rd_table=cfg.rd_table)
    except (ConfigError, KeyError, RDTableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = resolve_output(args.out, cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2
    grid = cfg.grid_spec()
    n_cfg = len(grid_configs(problem, grid))
    log.info("%s: %d configurations x %d repetitions -> %s", problem.name, n_cfg, cfg.repetitions, out)
    outcome = run_grid(problem, grid, threads=args.threads, rd_table=cfg.rd_table, progress=log.info)
    try:
        write_grid_csv(out / "grid.csv", outcome.rows)
        write_trials_csv(out / "trials.csv", outcome)
        best = write_best_fit_csv(out / "best_fit.csv", problem, outcome, cfg.master_seed)
        write_manifest(out / "manifest.json", cfg, problem, outcome, best)
    except OSError as exc:
        print(f"error: writing results to {out} failed: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(outcome.rows)} aggregate rows to {out / 'grid.csv'}")
    return 0


def cmd_oracle(args) -> int:
    try:
        problem = make_problem(args.problem, rd_table=args.rd_table)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    checks = oracle_report(problem, n=args.points)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{problem.name}: {len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    checks = gradcheck_report(seeds=args.seeds)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"gradcheck: {len(checks) - failed}/{len(checks)} passed (max relative error over {args.seeds} seed(s))")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfneural", description="Multi-fidelity neural emulator experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-trial progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from a JSON config")
    run.add_argument("--config", required=True, help="path to the experiment config (JSON)")
    run.add_argument("--threads", type=int, default=1, help="max parallel trial workers (default 1)")
    run.add_argument("--seed", type=int, default=None, help="override the config's master_seed")
    run.add_argument("--out", default=None, help=f"output directory (default: config, ${OUTPUT_ENV}, ./{DEFAULT_OUTPUT})")
    run.add_argument("--rd-table", default=None, help="CSV table for problem RD")
    run.set_defaults(func=cmd_run)

    orc = sub.add_parser("oracle", help="check a benchmark's closed-form relations")
    orc.add_argument("problem", help=f"one of {', '.join(PROBLEM_NAMES)}")
    orc.add_argument("--points", type=int, default=1000)
    orc.add_argument("--rd-table", default=None)
    orc.set_defaults(func=cmd_oracle)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every autodiff primitive and network")
    gc.add_argument("--seeds", type=int, default=1)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
