"""Command-line experiment driver.

Examples
--------
Run one configuration in both modes::

    python -m lrmg run --cov exp --sigma 0.01 --b 4 --level 5 --p 3 --mode both --out results/

Run the desk-scale rows of a table preset::

    python -m lrmg run --table 1 --desk --out results/

Dump singular values of the solution or of the untruncated corrections::

    python -m lrmg spectrum --cov exp --sigma 0.01 --b 5 --level 6 --m 8 --out results/
    python -m lrmg corrections --cov exp --sigma 0.01 --b 5 --level 6 --m 8 --out results/
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import lowrank as lr
from .fem import write_triplets
from .kl import CovarianceModel
from .problem import build_problem
from .solver import (
    DivergenceError,
    MGConfig,
    MultigridHierarchy,
    SmootherConfig,
    solve_full,
    solve_lowrank,
)

log = logging.getLogger("lrmg")

RESULT_COLUMNS = [
    "config_hash", "mode", "cov", "sigma", "b", "level", "p", "m", "eps_abs", "eps_rel",
    "N_x", "N_xi", "rank", "iterations", "elapsed", "rel_residual", "converged", "stop_reason",
]


@dataclass(frozen=True)
class ExperimentConfig:
    cov: str = "exp"
    sigma: float = 0.01
    b: float = 4.0
    level: int = 5
    p: int = 3
    m: Optional[int] = None
    eps_abs: float = 1e-6
    eps_rel: float = 1e-2
    tol: float = 1e-6
    maxit: int = 30
    mode: str = "both"
    omega: float = 2.0 / 3.0
    nu: int = 3
    coarsest_level: int = 2
    outer_truncation: str = "absolute"

    def __post_init__(self):
        if self.mode not in ("lowrank", "full", "both"):
            raise ValueError(f"mode must be lowrank, full or both, got {self.mode!r}")
        if self.cov not in ("exp", "sqexp"):
            raise ValueError(f"cov must be exp or sqexp, got {self.cov!r}")

    def config_hash(self) -> str:
        """Hash of the numerical setup; ``mode`` is excluded so paired rows share it."""
        d = dataclasses.asdict(self)
        d.pop("mode")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def mg_config(self) -> MGConfig:
        return MGConfig(
            tol=self.tol, maxit=self.maxit, eps_rel=self.eps_rel, eps_abs=self.eps_abs,
            outer_truncation=self.outer_truncation,
            smoother=SmootherConfig(self.omega, self.nu, self.nu),
        )

    def covariance(self) -> CovarianceModel:
        return CovarianceModel(self.cov, self.sigma, self.b)


_FIELD_TYPES = {"cov": str, "sigma": float, "b": float, "level": int, "p": int, "m": int,
                "eps_abs": float, "eps_rel": float, "tol": float, "maxit": int, "mode": str,
                "omega": float, "nu": int, "coarsest_level": int, "outer_truncation": str}


def parse_config_file(path) -> dict:
    """Read flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = None if value.lower() in ("", "none") else _FIELD_TYPES[key](value)
    return out


# ---------------------------------------------------------------------------
# presets

def table_preset(table: int, desk: bool = False) -> list[ExperimentConfig]:
    """Parameter grids of the benchmark tables; ``desk`` keeps rows feasible on a laptop."""
    rows = []
    if table == 1:
        levels = [5, 6] if desk else [5, 6, 7, 8]
        for lvl in levels:
            for eps in (1e-6, 1e-4):
                rows.append(ExperimentConfig("exp", 0.01, 4.0, lvl, 3, 11, eps))
    elif table == 2:
        bm = [(5.0, 8), (4.0, 11)] if desk else [(5.0, 8), (4.0, 11), (3.0, 16), (2.5, 22)]
        for b, m in bm:
            for eps in (1e-6, 1e-4):
                rows.append(ExperimentConfig("exp", 0.01, b, 6, 3, m, eps))
    elif table == 3:
        sigmas = [0.001, 0.01, 0.1] if desk else [0.001, 0.01, 0.1, 0.3]
        for s in sigmas:
            for eps in (1e-6, 1e-4):
                rows.append(ExperimentConfig("exp", s, 4.0, 6, 3, 11, eps))
    elif table == 4:
        levels = [6, 7] if desk else [6, 7, 8, 9]
        for lvl in levels:
            for eps in (1e-6, 1e-4):
                rows.append(ExperimentConfig("sqexp", 0.01, 2.0, lvl, 3, 3, eps))
    else:
        raise ValueError(f"no preset for table {table}")
    return rows


# ---------------------------------------------------------------------------
# outputs

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def _append_rows(path: Path, rows: list[dict]) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def _write_history(path: Path, chash: str, report) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        w = csv.writer(fh)
        w.writerow(["iter", "rel_residual", "rank"])
        ranks = report.rank_history or [""] * len(report.residual_history)
        for i, r in enumerate(report.residual_history):
            w.writerow([i, _fmt(r), ranks[i] if i < len(ranks) else ""])


class TruncationLog:
    """Spectrum sink writing one CSV line per truncation event."""

    def __init__(self, path: Path, chash: str):
        self.fh = open(path, "w", newline="")
        self.fh.write(f"# config_hash={chash}\n")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(["event", "tag", "kept_rank", "singular_values"])
        self.count = 0

    def __call__(self, tag, s, k):
        self.writer.writerow([self.count, tag, k, " ".join(_fmt(x) for x in s)])
        self.count += 1

    def close(self):
        self.fh.close()


def export_matrices(problem, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for l, K in enumerate(problem.grids.K[-1]):
        write_triplets(directory / f"K{l}.txt", K)
    for l, G in enumerate(problem.stoch.all):
        write_triplets(directory / f"G{l}.txt", G)
    np.savetxt(directory / "f0.txt", problem.f0, fmt="%.17g")


# ---------------------------------------------------------------------------
# operations

def _setup(cfg: ExperimentConfig):
    problem = build_problem(cfg.covariance(), cfg.level, cfg.p, cfg.m, cfg.coarsest_level)
    return problem, MultigridHierarchy.from_problem(problem)


def run_experiment(cfg: ExperimentConfig, out_dir=None, truncation_log: bool = False,
                   matrices: bool = False, setup=None) -> list[dict]:
    """Solve one configuration and return one table row per mode.

    With ``out_dir`` set, rows are appended to ``results.csv`` and a JSON
    report and residual-history CSV are written per mode, even on failure.
    """
    problem, mg = setup if setup is not None else _setup(cfg)
    chash = cfg.config_hash()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if matrices:
            export_matrices(problem, out / f"matrices_{chash}")
    modes = ["lowrank", "full"] if cfg.mode == "both" else [cfg.mode]
    rows = []
    for mode in modes:
        tlog = None
        if out is not None and truncation_log and mode == "lowrank":
            tlog = TruncationLog(out / f"truncations_{chash}.csv", chash)
            lr.set_spectrum_sink(tlog)
        try:
            if mode == "lowrank":
                X, report = solve_lowrank(mg, problem.rhs_factored(), cfg.mg_config())
                rank = report.final_rank
            else:
                U, report = solve_full(mg, problem.rhs_dense(), cfg.mg_config())
                rank = None
        except DivergenceError as exc:
            report = exc.report
            rank = None
        finally:
            if tlog is not None:
                lr.set_spectrum_sink(None)
                tlog.close()
        row = {
            "config_hash": chash, "mode": mode, "cov": cfg.cov, "sigma": cfg.sigma, "b": cfg.b,
            "level": cfg.level, "p": cfg.p, "m": problem.m, "eps_abs": cfg.eps_abs,
            "eps_rel": cfg.eps_rel, "N_x": problem.n_x, "N_xi": problem.n_xi, "rank": rank,
            "iterations": report.iterations, "elapsed": report.wall_time,
            "rel_residual": report.residual_history[-1], "converged": report.converged,
            "stop_reason": report.stop_reason,
        }
        rows.append(row)
        log.info("%s %s: N_x=%d N_xi=%d rank=%s its=%d res=%.3e (%.1fs)", chash, mode,
                 problem.n_x, problem.n_xi, rank, report.iterations,
                 report.residual_history[-1], report.wall_time)
        if out is not None:
            doc = {"config_hash": chash, "config": dataclasses.asdict(cfg), "N_x": problem.n_x,
                   "N_xi": problem.n_xi, "m": problem.m, "report": dataclasses.asdict(report)}
            (out / f"report_{chash}_{mode}.json").write_text(json.dumps(doc, indent=2))
            _write_history(out / f"history_{chash}_{mode}.csv", chash, report)
            _append_rows(out / "results.csv", [row])
    return rows


def solution_spectrum(cfg: ExperimentConfig, tol: float = 1e-10, setup=None) -> np.ndarray:
    """Singular values of the full-multigrid solution matrix, descending."""
    problem, mg = setup if setup is not None else _setup(cfg)
    full_cfg = dataclasses.replace(cfg.mg_config(), tol=tol, maxit=max(cfg.maxit, 50))
    U, report = solve_full(mg, problem.rhs_dense(), full_cfg)
    return np.linalg.svd(U, compute_uv=False)


def dump_solution_spectrum(cfg: ExperimentConfig, path, setup=None) -> np.ndarray:
    s = solution_spectrum(cfg, setup=setup)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        w = csv.writer(fh)
        w.writerow(["index", "singular_value"])
        for i, v in enumerate(s, 1):
            w.writerow([i, _fmt(v)])
    return s


def correction_spectra(cfg: ExperimentConfig, iterations: int = 6, setup=None) -> list[np.ndarray]:
    """Singular values of each untruncated multigrid correction C^(i), i = 0, 1, ..."""
    problem, mg = setup if setup is not None else _setup(cfg)
    spectra = []

    def grab(i, C):
        spectra.append(np.linalg.svd(C, compute_uv=False))

    full_cfg = dataclasses.replace(cfg.mg_config(), tol=0.0, maxit=iterations)
    solve_full(mg, problem.rhs_dense(), full_cfg, callback=grab)
    return spectra


def dump_correction_spectra(cfg: ExperimentConfig, path, iterations: int = 6, setup=None):
    spectra = correction_spectra(cfg, iterations, setup)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "index", "singular_value"])
        for it, s in enumerate(spectra):
            for i, v in enumerate(s, 1):
                w.writerow([it, i, _fmt(v)])
    return spectra


# ---------------------------------------------------------------------------
# argument parsing

def _add_problem_args(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", help="flat key=value file; flags override it")
    ap.add_argument("--cov", choices=["exp", "sqexp"])
    ap.add_argument("--sigma", type=float)
    ap.add_argument("--b", type=float)
    ap.add_argument("--level", type=int, help="finest mesh size h = 2^-level")
    ap.add_argument("--p", type=int)
    ap.add_argument("--m", type=int, help="KL terms (default: 95%% eigenvalue mass)")
    ap.add_argument("--eps-abs", type=float)
    ap.add_argument("--eps-rel", type=float)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--maxit", type=int)
    ap.add_argument("--omega", type=float)
    ap.add_argument("--nu", type=int)
    ap.add_argument("--coarsest-level", type=int)
    ap.add_argument("--outer-truncation", choices=["absolute", "relative"])
    ap.add_argument("--out", default=".", help="output directory")


def _config_from_args(args, **extra) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values.update({k: v for k, v in extra.items() if v is not None})
    return ExperimentConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrmg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve and append table rows")
    _add_problem_args(run)
    run.add_argument("--mode", choices=["lowrank", "full", "both"])
    run.add_argument("--table", type=int, choices=[1, 2, 3, 4], help="run a table preset")
    run.add_argument("--desk", action="store_true", help="restrict presets to desk-scale rows")
    run.add_argument("--export-matrices", action="store_true",
                     help="write finest-level K_l, G_l as row/col/value triplets")
    run.add_argument("--truncation-log", action="store_true",
                     help="write singular values of every truncation event")

    spectrum = sub.add_parser("spectrum", help="singular values of the solution matrix")
    _add_problem_args(spectrum)

    corr = sub.add_parser("corrections", help="singular values of untruncated corrections")
    _add_problem_args(corr)
    corr.add_argument("--iterations", type=int, default=6)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "run":
        if args.table is not None:
            configs = table_preset(args.table, args.desk)
            if args.mode:
                configs = [dataclasses.replace(c, mode=args.mode) for c in configs]
        else:
            configs = [_config_from_args(args)]
        ok = True
        for cfg in configs:
            rows = run_experiment(cfg, out, args.truncation_log, args.export_matrices)
            ok &= all(r["converged"] for r in rows)
        return 0 if ok else 1

    cfg = _config_from_args(args, mode="full")
    if args.command == "spectrum":
        path = out / f"solution_spectrum_{cfg.config_hash()}.csv"
        dump_solution_spectrum(cfg, path)
    else:
        path = out / f"correction_spectra_{cfg.config_hash()}.csv"
        dump_correction_spectra(cfg, path, args.iterations)
    log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
