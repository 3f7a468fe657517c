"""Error decomposition, convergence sweeps, slope fits, self-diffusion."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .assembly import GalerkinSystem
from .model import CoefficientVector, ModelParams
from .solver import SolveResult, embed, reference_solution, solve_poisson, truncate

log = logging.getLogger(__name__)

CSV_COLUMNS = ("axis", "value", "approx_err", "consist_err", "total_err",
               "gap", "diffusion", "residual", "alpha")
SCHEMA_VERSION = 1
FLOOR_FACTOR = 100.0


@dataclass
class ErrorRecord:
    K: int
    L: int
    gamma: float
    beta: float
    approx_err: float
    consist_err: float
    total_err: float
    observable: str = ""
    projector: str = "KL"


def _dropped_norm(Phi: CoefficientVector, K: int, L: int) -> float:
    """||(1 - Pi_KL) Phi||, summed over the dropped coefficients themselves."""
    M = Phi.as_matrix().copy()
    M[:L, : 2 * K - 1] = 0.0
    return float(np.linalg.norm(M))


def error_record(ref: CoefficientVector | SolveResult, result: SolveResult,
                 params: ModelParams | None = None, observable: str = "",
                 projector: str = "KL", U: np.ndarray | None = None) -> ErrorRecord:
    """Approximation, consistency and total error of ``result`` against ``ref``.

    ``projector="KL0"`` uses Pi_{KL,0} (additionally removing the u_K
    component, ``U`` being the constraint vector of the coarse system)
    instead of the plain truncation Pi_KL.
    """
    Phi = ref.X if isinstance(ref, SolveResult) else ref
    X = result.X
    K, L = X.shape
    if K > Phi.K or L > Phi.L:
        raise ValueError(f"result {X.shape} exceeds reference {Phi.shape}")
    T = truncate(Phi, K, L)
    if projector == "KL":
        approx = _dropped_norm(Phi, K, L)
    elif projector == "KL0":
        if U is None:
            raise ValueError("projector KL0 needs the constraint vector U")
        T = CoefficientVector(K, L, T.coeffs - (U @ T.coeffs) * U)
        approx = float(np.linalg.norm(Phi.coeffs - embed(T, Phi.K, Phi.L).coeffs))
    else:
        raise ValueError(f"unknown projector {projector!r}")
    consist = float(np.linalg.norm(X.coeffs - T.coeffs))
    total = float(np.linalg.norm(embed(X, Phi.K, Phi.L).coeffs - Phi.coeffs))
    gamma = params.gamma if params is not None else float("nan")
    beta = params.beta if params is not None else float("nan")
    return ErrorRecord(K, L, gamma, beta, approx, consist, total, observable, projector)


def self_diffusion(system: GalerkinSystem, result: SolveResult,
                   Y: CoefficientVector | None = None) -> float:
    """D = <-L^{-1} p, p> = X . Y for the velocity observable."""
    Y = system.observable("velocity") if Y is None else Y
    return float(result.X.coeffs @ Y.coeffs)


# --- sweeps --------------------------------------------------------------------

@dataclass
class SweepRow:
    axis: str
    value: float
    K: int
    L: int
    gamma: float
    beta: float
    approx_err: float | None = None
    consist_err: float | None = None
    total_err: float | None = None
    gap: float | None = None
    diffusion: float | None = None
    residual: float | None = None
    alpha: float | None = None
    extra: dict = field(default_factory=dict)
    error: str | None = None

    def csv_row(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            if v is None or (isinstance(v, float) and math.isnan(v)):
                out.append("")
            elif col == "axis":
                out.append(v)
            elif col == "value" and float(v).is_integer() and self.axis in ("K", "L"):
                out.append(str(int(v)))
            else:
                out.append(repr(float(v)))
        return out


def _point_params(fixed: ModelParams, axis: str, value) -> ModelParams:
    if axis == "K":
        return fixed.with_sizes(K=int(value))
    if axis == "L":
        return fixed.with_sizes(L=int(value))
    if axis == "gamma":
        return replace(fixed, gamma=float(value))
    raise ValueError(f"axis must be K, L or gamma, got {axis!r}")


def _run_point(axis, value, fixed, observable, ref, compute_gap, projector):
    row = SweepRow(axis=axis, value=float(value), K=fixed.K, L=fixed.L,
                   gamma=fixed.gamma, beta=fixed.beta)
    try:
        p = _point_params(fixed, axis, value)
        row.K, row.L, row.gamma = p.K, p.L, p.gamma
        system = GalerkinSystem.build(p)
        Y = system.observable(observable)
        res = solve_poisson(system, Y)
        row.residual, row.alpha = res.residual, res.alpha
        row.extra["constraint"] = res.constraint
        if observable == "velocity":
            row.diffusion = self_diffusion(system, res, Y)
        if ref is not None:
            rec = error_record(ref, res, p, observable, projector, system.U)
            row.approx_err, row.consist_err, row.total_err = rec.approx_err, rec.consist_err, rec.total_err
            if row.diffusion is not None and "diffusion" in ref.factor_stats:
                d_ref = ref.factor_stats["diffusion"]
                row.extra["mobility_err"] = abs(row.diffusion - d_ref)
        if compute_gap:
            from .diagnostics import spectral_gap

            row.gap = spectral_gap(p).gap
    except Exception as exc:  # recorded per point, the sweep goes on
        log.warning("sweep point %s=%s failed: %s", axis, value, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def sweep(axis: str, grid: Sequence, fixed: ModelParams, observable: str = "sobolev",
          reference: SolveResult | None = None, K_ref: int | None = None,
          L_ref: int | None = None, cache_dir=None, compute_gap: bool = False,
          projector: str = "KL", workers: int = 1) -> list[SweepRow]:
    """One row per grid point, in grid order.

    Along K or L the errors are measured against one reference solution
    (passed in, or solved once at (K_ref, L_ref)).  Along gamma there is no
    reference unless one is given; rows carry diffusion and, on request, the
    spectral gap.
    """
    grid = list(grid)
    if axis not in ("K", "L", "gamma"):
        raise ValueError(f"axis must be K, L or gamma, got {axis!r}")
    if not grid:
        raise ValueError("empty grid")
    if sorted(grid) != grid:
        raise ValueError("grid must be sorted")
    if reference is None and axis in ("K", "L") and K_ref is not None:
        reference = reference_solution(fixed, K_ref, L_ref, observable, cache_dir)
    if reference is not None and observable == "velocity" and "diffusion" not in reference.factor_stats:
        ref_sys_params = fixed.with_sizes(*reference.X.shape)
        Y = GalerkinSystem.build(ref_sys_params).observable("velocity")
        reference.factor_stats["diffusion"] = float(reference.X.coeffs @ Y.coeffs)

    args = [(axis, v, fixed, observable, reference, compute_gap, projector) for v in grid]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda a: _run_point(*a), args))
    return [_run_point(*a) for a in args]


# --- slope fits ------------------------------------------------------------------

@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n_used: int
    excluded: list = field(default_factory=list)


def _fit(x, y) -> tuple[float, float, float]:
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _filter(points, floor: float):
    used, excluded = [], []
    for x, e in points:
        if e is None or not np.isfinite(e) or e <= 0 or e <= floor:
            excluded.append((x, e))
        else:
            used.append((x, e))
    if excluded:
        log.info("slope fit: excluded %d point(s) at or below floor %.3g: %s",
                 len(excluded), floor, excluded)
    if len(used) < 3:
        raise ValueError(f"need >= 3 usable points, have {len(used)}")
    x, e = np.array(used, dtype=float).T
    return x, e, excluded


def fit_loglog_slope(points, floor: float = 0.0) -> SlopeFit:
    """Least squares of log(err) against log(x)."""
    x, e, excl = _filter(points, floor)
    s, c, r2 = _fit(np.log(x), np.log(e))
    return SlopeFit(s, c, r2, len(x), excl)


def fit_semilog_slope(points, floor: float = 0.0) -> SlopeFit:
    """Least squares of log10(err) against x."""
    x, e, excl = _filter(points, floor)
    s, c, r2 = _fit(x, np.log10(e))
    return SlopeFit(s, c, r2, len(x), excl)


def residual_floor(reference: SolveResult) -> float:
    """Errors below this are contaminated by the reference solve itself."""
    return FLOOR_FACTOR * reference.residual * reference.X.norm()


# --- output ------------------------------------------------------------------------

def write_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def rows_to_json(rows: Sequence[SweepRow]) -> dict:
    return {"schema_version": SCHEMA_VERSION, "columns": list(CSV_COLUMNS),
            "rows": [asdict(r) for r in rows]}


def write_json(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w") as fh:
        json.dump(rows_to_json(rows), fh, indent=2, sort_keys=True)
        fh.write("\n")
