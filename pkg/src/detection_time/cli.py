"""Command-line front end.

    detection-time simulate CONFIG
    detection-time sweep-dt CONFIG --dt 0.1,0.05,0.025
    detection-time check CONFIG --checks zeno,povm,residual,cross_engine

Exit codes: 0 success, 2 config error, 3 check failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .chain import ChainResult, run_chain, zeno_sweep
from .conditional import ConditionalEvolution, hazard_series
from .config import ConfigError, RunConfig, load_config
from .distribution import (
    DetectionDistribution,
    build_distribution,
    integral_equation_residual,
    mean_detection_time,
    povm_set,
    total_probability,
)
from .scenarios import EDGE_WEIGHT_LIMIT, Setup, edge_mask

log = logging.getLogger("detection_time")

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_IO = 0, 2, 3, 4

ZENO_DTS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
ZENO_SLOPE_RANGE = (1.98, 2.02)
ZENO_COEFF_RTOL = 0.01
POVM_RESOLUTION_TOL = 1e-6
POVM_MIN_EIG = -1e-10
RESIDUAL_TOL = 1e-3
RESIDUAL_EXCLUDE = 0.01
CROSS_ENGINE_TOL = 0.02
CROSS_ENGINE_SURVIVAL = 1e-3

CSV_COLUMNS = ("t", "w", "u", "density_approx", "survival_approx", "p_exact_per_dt", "survival_exact")


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    value: float | None
    tolerance: str
    detail: str = ""


@dataclass
class RunReport:
    scenario: str
    units: str
    dt: float
    t_max: float
    dimension: int
    engines: dict[str, dict[str, Any]] = field(default_factory=dict)
    validity_epsilon: float | None = None
    max_cross_engine_deviation: float | None = None
    boundary_edge_weight: float | None = None
    boundary_contaminated: bool = False
    stage1: dict[str, Any] | None = None
    checks: list[CheckOutcome] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        failed = any(not c.passed for c in self.checks)
        return EXIT_CHECK if failed or self.boundary_contaminated else EXIT_OK

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class Artifacts:
    """Everything a run computed, kept for checks and output writing."""

    setup: Setup
    ce: ConditionalEvolution | None = None
    dist: DetectionDistribution | None = None
    chain: ChainResult | None = None


def cross_engine_deviation(dd: DetectionDistribution, chain: ChainResult, survival_min: float = CROSS_ENGINE_SURVIVAL) -> float:
    """sup |density - P_exact/dt| / sup |P_exact/dt| over ticks with exact survival > survival_min."""
    n = chain.times.size
    approx = dd.density[dd.at_ticks(chain.times)]
    exact = chain.density
    # survival before the tick, so the tick where survival first drops is still compared
    before = np.concatenate(([1.0], chain.survival[:-1]))
    keep = before > survival_min
    if not keep.any():
        return 0.0
    scale = np.max(np.abs(exact[keep]))
    diff = np.max(np.abs(approx[:n][keep] - exact[keep]))
    return float(diff / scale) if scale > 0 else float(diff)


def _engine_summary_approx(dd: DetectionDistribution) -> dict[str, Any]:
    mt = mean_detection_time(dd)
    tp = total_probability(dd)
    return {
        "total": tp.value,
        "total_quadrature": dd.total,
        "tail": dd.tail,
        "certain_detection": tp.certain,
        "mean": mt.mean,
        "conditional_mean": mt.conditional_mean,
        "singular_points": int(dd.singular.sum()),
    }


def _engine_summary_exact(ch: ChainResult) -> dict[str, Any]:
    return {
        "total": ch.total,
        "tail": ch.tail,
        "mean": ch.mean,
        "conditional_mean": ch.conditional_mean,
        "terminated_early": ch.terminated_early,
    }


def _setup_for(cfg: RunConfig, report: RunReport) -> Setup:
    spec = cfg.scenario
    if spec.kind != "tunneling_1d":
        return spec.build()
    plan = spec.tunneling_plan()
    stage1 = run_chain(*plan.stage1(), spec.dt, spec.n_steps, cfg.model.survival_floor)
    p = spec.parameters
    init = p.get("stage2_init", "median")
    t0 = plan.stage2_time(stage1, init, p.get("stage2_time"))
    report.stage1 = {
        "total": stage1.total,
        "tail": stage1.tail,
        "conditional_mean": stage1.conditional_mean,
        "stage2_init": init,
        "t0": t0,
    }
    return plan.stage2(stage1, init, p.get("stage2_time"))


def compute(cfg: RunConfig) -> tuple[RunReport, Artifacts]:
    spec = cfg.scenario
    report = RunReport(spec.kind, cfg.units, spec.dt, spec.t_max, 0)
    setup = _setup_for(cfg, report)
    report.dimension = setup.h.dim
    art = Artifacts(setup)
    n_steps = spec.n_steps
    edges = edge_mask(setup.h.dim) if spec.is_lattice else None

    ce = ConditionalEvolution(*setup, spec.dt)
    art.ce = ce
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report.validity_epsilon = ce.check_validity(cfg.model.epsilon_warn)
    for w in caught:
        log.warning("%s", w.message)

    if "approx" in cfg.engines:
        art.dist = build_distribution(hazard_series(ce, n_steps), spec.t_max)
        report.engines["approx"] = _engine_summary_approx(art.dist)
    if "exact" in cfg.engines:
        art.chain = run_chain(*setup, spec.dt, n_steps, cfg.model.survival_floor, edge_mask=edges)
        report.engines["exact"] = _engine_summary_exact(art.chain)
    if art.dist is not None and art.chain is not None:
        report.max_cross_engine_deviation = cross_engine_deviation(art.dist, art.chain)

    if edges is not None:
        report.boundary_edge_weight = _edge_weight(art, edges, n_steps)
        if report.boundary_edge_weight > EDGE_WEIGHT_LIMIT:
            report.boundary_contaminated = True
            log.warning(
                "%.2f%% of the conditional probability reaches the outer lattice edge; "
                "hard-wall reflections contaminate the result",
                100 * report.boundary_edge_weight,
            )

    for name in cfg.checks:
        report.checks.append(CHECKS[name](art, spec))
    return report, art


def _edge_weight(art: Artifacts, edges: np.ndarray, n_steps: int) -> float:
    if art.chain is not None:
        return art.chain.max_edge_weight
    stride = max(1, n_steps // 200)
    ks = np.arange(1, n_steps + 1, stride)
    states = art.ce.undetected_states(ks)
    return float(np.max(np.sum(np.abs(states[edges]) ** 2, axis=0)))


def _check_zeno(art: Artifacts, spec) -> CheckOutcome:
    z = zeno_sweep(*art.setup, ZENO_DTS)
    tol = f"slope in [{ZENO_SLOPE_RANGE[0]}, {ZENO_SLOPE_RANGE[1]}], coefficient within {ZENO_COEFF_RTOL:.0%}"
    if z.degenerate:
        return CheckOutcome("zeno", True, None, tol, "degenerate: first-tick probability vanishes")
    rel = abs(z.extrapolated - z.coefficient) / z.coefficient
    ok = ZENO_SLOPE_RANGE[0] <= z.slope <= ZENO_SLOPE_RANGE[1] and rel <= ZENO_COEFF_RTOL
    return CheckOutcome("zeno", ok, z.slope, tol, f"coefficient {z.coefficient:.6g}, extrapolated {z.extrapolated:.6g}")


def _need_dist(art: Artifacts, spec) -> DetectionDistribution:
    if art.dist is None:
        art.dist = build_distribution(hazard_series(art.ce, spec.n_steps), spec.t_max)
    return art.dist


def _check_povm(art: Artifacts, spec) -> CheckOutcome:
    pv = povm_set(art.ce, _need_dist(art, spec))
    defect = pv.resolution_defect()
    min_eig = float(np.min(pv.min_eigenvalues()))
    ok = defect < POVM_RESOLUTION_TOL and min_eig >= POVM_MIN_EIG
    return CheckOutcome(
        "povm", ok, defect, f"resolution < {POVM_RESOLUTION_TOL:g}, min eigenvalue >= {POVM_MIN_EIG:g}",
        f"min eigenvalue {min_eig:.3e}; E_bar min eigenvalue {pv.E_bar_min_eigenvalue:.3e}",
    )


def _check_residual(art: Artifacts, spec) -> CheckOutcome:
    r = integral_equation_residual(_need_dist(art, spec), exclude_end=RESIDUAL_EXCLUDE)
    return CheckOutcome("residual", r <= RESIDUAL_TOL, r, f"<= {RESIDUAL_TOL:g}")


def _check_cross_engine(art: Artifacts, spec) -> CheckOutcome:
    dd = _need_dist(art, spec)
    if art.chain is None:
        art.chain = run_chain(*art.setup, spec.dt, spec.n_steps)
    dev = cross_engine_deviation(dd, art.chain)
    return CheckOutcome("cross_engine", dev <= CROSS_ENGINE_TOL, dev, f"<= {CROSS_ENGINE_TOL:g}")


CHECKS = {
    "zeno": _check_zeno,
    "povm": _check_povm,
    "residual": _check_residual,
    "cross_engine": _check_cross_engine,
}


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def csv_text(art: Artifacts, n_steps: int, dt: float) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    dd, ch = art.dist, art.chain
    for k in range(1, n_steps + 1):
        row: list[Any] = [k * dt]
        if dd is not None:
            i = k if dd.times[0] == 0.0 else k - 1
            row += [dd.w[i], dd.u[i], dd.density[i], dd.survival[i]]
        else:
            row += [None] * 4
        if ch is not None and k <= ch.times.size:
            row += [ch.density[k - 1], ch.survival[k - 1]]
        else:
            row += [None, None]
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run(cfg: RunConfig) -> RunReport:
    """Compute, run requested checks, and write the configured output files."""
    report, art = compute(cfg)
    out = cfg.outputs
    if out.csv_path:
        _write(out.csv_path, csv_text(art, cfg.scenario.n_steps, cfg.scenario.dt))
    if out.json_path:
        _write(out.json_path, report.to_json())
    return report


@dataclass
class SweepRow:
    dt: float
    p_first: float
    total_exact: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    slope: float | None
    coefficient: float
    extrapolated: float | None

    @property
    def zeno_monotone(self) -> bool:
        """Total detection probability shrinks as dt shrinks."""
        by_dt = sorted(self.rows, key=lambda r: r.dt)
        return all(a.total_exact <= b.total_exact for a, b in zip(by_dt, by_dt[1:]))

    def csv(self) -> str:
        lines = ["dt,p_first,total_exact"]
        lines += [f"{_fmt(r.dt)},{_fmt(r.p_first)},{_fmt(r.total_exact)}" for r in self.rows]
        return "\n".join(lines) + "\n"


def sweep_dt(cfg: RunConfig, dt_list) -> SweepResult:
    dts = sorted((float(d) for d in dt_list), reverse=True)
    if len(dts) < 3:
        raise ConfigError("--dt: sweep needs at least three dt values")
    if any(d <= 0 for d in dts):
        raise ConfigError("--dt: dt values must be positive")
    spec = cfg.scenario
    setup = _setup_for(cfg, RunReport(spec.kind, cfg.units, spec.dt, spec.t_max, 0))
    z = zeno_sweep(*setup, dts)
    rows = []
    for d, p in zip(dts, z.p_first):
        n = int(math.floor(spec.t_max / d + 1e-9))
        ch = run_chain(*setup, d, n, cfg.model.survival_floor)
        rows.append(SweepRow(d, float(p), ch.total))
    return SweepResult(rows, z.slope, z.coefficient, z.extrapolated)


def _summary_line(c: CheckOutcome) -> str:
    value = "n/a" if c.value is None else f"{c.value:.6g}"
    return f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {value} ({c.tolerance}) {c.detail}".rstrip()


def _parse_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="detection-time", description="Detection-time distributions of quantum events")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the configured engines and write outputs")
    p_sim.add_argument("config")

    p_sweep = sub.add_parser("sweep-dt", help="first-tick probability and total detection versus dt")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--dt", required=True, help="comma-separated dt values (at least three)")
    p_sweep.add_argument("--out", help="write the table here instead of stdout")

    p_check = sub.add_parser("check", help="run consistency checks")
    p_check.add_argument("config")
    p_check.add_argument("--checks", default="zeno,povm,residual,cross_engine")

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            report = run(cfg)
            if not cfg.outputs.json_path:
                sys.stdout.write(report.to_json())
            for c in report.checks:
                print(_summary_line(c), file=sys.stderr)
            return report.exit_code
        if args.command == "sweep-dt":
            try:
                dts = [float(x) for x in _parse_list(args.dt)]
            except ValueError as exc:
                raise ConfigError(f"--dt: {exc}") from exc
            res = sweep_dt(cfg, dts)
            if args.out:
                _write(args.out, res.csv())
            else:
                sys.stdout.write(res.csv())
            slope = "degenerate" if res.slope is None else f"{res.slope:.4f}"
            print(f"zeno slope {slope}; coefficient {res.coefficient:.6g}; "
                  f"total decreases as dt -> 0: {res.zeno_monotone}", file=sys.stderr)
            return EXIT_OK
        checks = _parse_list(args.checks)
        unknown = [c for c in checks if c not in CHECKS]
        if unknown or not checks:
            raise ConfigError(f"--checks: unknown or empty check list {unknown or checks}")
        report, _ = compute(cfg.with_checks(checks))
        for c in report.checks:
            print(_summary_line(c))
        return report.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
