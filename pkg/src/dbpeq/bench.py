"""Monte-Carlo harness.

Sweeps an SNR grid, runs every requested algorithm on shared channel
realizations and symbol blocks, and reports SER, empirical MSE, and the
exact per-symbol bandwidth of each algorithm. Trials parallelize over a
process pool with per-trial RNG substreams; aggregation order is fixed,
so the CSV is byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import dbpnet, equalizers as eq
from .numerics import NumericsError
from .scenario import (
    SystemConfig,
    gen_realization,
    gen_symbol_block,
    sample_covariance,
    slice_symbols,
)

ALGORITHMS = ("zf", "lmmse", "bdac", "sdr", "cdr", "bcd", "bcd-lrd")

CSV_FIELDS = ("algorithm", "snr_db", "iot_db", "M", "C", "K", "N", "T", "r",
              "ser", "mse", "avg_entries_per_symbol", "wallclock_s")


class InsufficientErrors(ValueError):
    """Too few observed symbol errors for a meaningful SER comparison."""


@dataclass(frozen=True)
class AlgoSpec:
    """One algorithm to benchmark, with its iteration/rank parameters."""

    name: str
    T: Optional[int] = None       # BCD sweep count (None = converge to tol)
    r: Optional[int] = None       # LRD rank
    tol: Optional[float] = None   # BCD convergence tolerance
    label: str = ""

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.name!r}")
        if not self.label:
            object.__setattr__(self, "label", self.name)


@dataclass(frozen=True)
class RunSpec:
    cfg: SystemConfig
    algorithms: tuple[AlgoSpec, ...]
    snr_grid: tuple[float, ...]
    trials: int = 50
    out_path: Optional[str] = None
    timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid:
            raise ValueError("snr grid must be non-empty")
        if not self.algorithms:
            raise ValueError("algorithm list must be non-empty")


def default_algo(name: str, cfg: SystemConfig, T: int = 4, r: Optional[int] = None) -> AlgoSpec:
    if name == "bcd-lrd":
        return AlgoSpec(name, T=T, r=r if r is not None else cfg.n_interf)
    if name == "bcd":
        return AlgoSpec(name, T=T)
    return AlgoSpec(name)


def _run_algorithm(algo: AlgoSpec, cfg: SystemConfig, realization, block):
    """One algorithm on one realization; returns (shat, per-symbol bandwidth)."""
    es = cfg.Es
    if algo.name == "lmmse":
        rhat = sample_covariance(realization.noise)
        res = eq.lmmse_centralized(realization.H, rhat, es)
        return res.W @ block.Y, dbpnet.formula_centralized(cfg.M, cfg.K, cfg.N, cfg.n_coh)
    if algo.name == "zf":
        res = eq.zf_centralized(realization.H)
        return res.W @ block.Y, dbpnet.formula_centralized(cfg.M, cfg.K, cfg.N, cfg.n_coh)

    kind = "daisy" if algo.name in ("bcd", "bcd-lrd") else "star"
    fabric = dbpnet.make_fabric(realization, block.Y, kind, n_coh=cfg.n_coh)
    if algo.name == "bdac":
        dbpnet.run_bdac(fabric, es)
        shat = dbpnet.accumulate_symbols(fabric)
    elif algo.name == "sdr":
        _, shat = dbpnet.run_sdr_star(fabric, es)
    elif algo.name == "cdr":
        _, shat = dbpnet.run_cdr_star(fabric, es)
    else:
        use_lrd = algo.name == "bcd-lrd"
        sweeps = algo.T if algo.T is not None else 4
        _, shat = dbpnet.run_bcd_daisy(
            fabric, es, sweeps=sweeps, use_lrd=use_lrd,
            r=algo.r, tol=algo.tol,
            max_sweeps=200 if algo.tol is None else 10000)
    return shat, fabric.ledger.per_symbol_average()


def _run_trial(spec: RunSpec, trial: int) -> dict:
    """All (snr, algorithm) cells for one trial. Pure in (spec, trial)."""
    out = {}
    for snr in spec.snr_grid:
        cfg = spec.cfg.with_updates(snr_db=snr)
        realization = gen_realization(cfg, trial)
        block = gen_symbol_block(cfg, realization, trial)
        for algo in spec.algorithms:
            t0 = time.perf_counter() if spec.timing else 0.0
            try:
                shat, bw = _run_algorithm(algo, cfg, realization, block)
            except NumericsError:
                out[(algo.label, snr)] = {"fail": True}
                continue
            elapsed = time.perf_counter() - t0 if spec.timing else 0.0
            detected = slice_symbols(shat, cfg.modulation, cfg.Es)
            errors = int(np.sum(detected != block.S))
            out[(algo.label, snr)] = {
                "fail": False,
                "errors": errors,
                "symbols": block.S.size,
                "se_sum": float(np.sum(np.abs(shat - block.S) ** 2)),
                "bandwidth": bw,
                "wallclock": elapsed,
            }
    return out


def _worker(args):
    spec, trial = args
    return trial, _run_trial(spec, trial)


def _worker_count(spec: RunSpec) -> int:
    n = spec.workers
    cap = os.environ.get("DBP_EQ_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, spec.trials))


@dataclass
class SerReport:
    """Aggregated sweep results, one row per (algorithm, snr)."""

    rows: list[dict] = field(default_factory=list)

    def row(self, label: str, snr: float) -> dict:
        for r in self.rows:
            if r["algorithm"] == label and r["snr_db"] == snr:
                return r
        raise KeyError((label, snr))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.rows:
            writer.writerow([_fmt(r[k]) for k in CSV_FIELDS])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Fraction):
        return repr(float(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_sweep(spec: RunSpec) -> SerReport:
    """Execute the Monte-Carlo sweep; deterministic for a fixed cfg.seed."""
    workers = _worker_count(spec)
    trials = list(range(spec.trials))
    if workers <= 1:
        per_trial = [(t, _run_trial(spec, t)) for t in trials]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_worker, [(spec, t) for t in trials]))
    per_trial.sort(key=lambda x: x[0])

    report = SerReport()
    cfg = spec.cfg
    for algo in spec.algorithms:
        for snr in spec.snr_grid:
            cells = [res[(algo.label, snr)] for _, res in per_trial]
            base = {
                "algorithm": algo.label, "snr_db": snr, "iot_db": cfg.iot_db,
                "M": cfg.M, "C": cfg.C, "K": cfg.K, "N": cfg.N,
                "T": algo.T, "r": algo.r,
            }
            if any(c["fail"] for c in cells):
                base.update(ser="FAIL", mse="FAIL",
                            avg_entries_per_symbol=None, wallclock_s=0.0,
                            errors=None, symbols=None)
            else:
                errors = sum(c["errors"] for c in cells)
                symbols = sum(c["symbols"] for c in cells)
                se_sum = sum(c["se_sum"] for c in cells)
                base.update(
                    ser=errors / symbols,
                    mse=se_sum / symbols,
                    avg_entries_per_symbol=cells[0]["bandwidth"],
                    wallclock_s=sum(c["wallclock"] for c in cells),
                    errors=errors,
                    symbols=symbols,
                )
            report.rows.append(base)
    report.rows.sort(key=lambda r: (r["algorithm"], r["snr_db"]))
    if spec.out_path:
        with open(spec.out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv())
    return report


@dataclass(frozen=True)
class OrderingVerdict:
    alg_a: str
    alg_b: str
    points: tuple[dict, ...]       # per-SNR comparison records
    qualified: int                 # points with enough observed errors
    a_not_worse: int               # qualified points where ser(A) <= ser(B)
    verdict: str                   # "better_or_equal" | "worse" | "equal"

    @property
    def fraction(self) -> float:
        return self.a_not_worse / self.qualified if self.qualified else 1.0


def paired_ordering_test(report: SerReport, alg_a: str, alg_b: str,
                         min_errors: int = 100, threshold: float = 0.8
                         ) -> OrderingVerdict:
    """Compare ser(A) against ser(B) across the shared SNR grid.

    A point qualifies when at least ``min_errors`` symbol errors were
    observed in the worse of the two algorithms; the aggregate verdict is
    "better_or_equal" when A <= B at >= ``threshold`` of qualified points.
    """
    snrs = sorted({r["snr_db"] for r in report.rows if r["algorithm"] == alg_a})
    if not snrs:
        raise KeyError(f"algorithm {alg_a!r} not present")
    points = []
    qualified = 0
    a_not_worse = 0
    for snr in snrs:
        ra = report.row(alg_a, snr)
        rb = report.row(alg_b, snr)
        if ra["ser"] == "FAIL" or rb["ser"] == "FAIL":
            points.append({"snr_db": snr, "qualified": False, "fail": True})
            continue
        ok = max(ra["errors"], rb["errors"]) >= min_errors
        rec = {"snr_db": snr, "ser_a": ra["ser"], "ser_b": rb["ser"],
               "errors_a": ra["errors"], "errors_b": rb["errors"],
               "qualified": ok, "fail": False}
        points.append(rec)
        if ok:
            qualified += 1
            if ra["ser"] <= rb["ser"]:
                a_not_worse += 1
    if alg_a == alg_b:
        verdict = "equal"
    elif qualified == 0:
        raise InsufficientErrors(
            f"no grid point has >= {min_errors} errors for {alg_a} vs {alg_b}")
    elif a_not_worse >= threshold * qualified:
        verdict = "better_or_equal"
    else:
        verdict = "worse"
    return OrderingVerdict(alg_a=alg_a, alg_b=alg_b, points=tuple(points),
                           qualified=qualified, a_not_worse=a_not_worse,
                           verdict=verdict)
