"""Saddle-point Poisson solves and cached high-resolution references."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .assembly import GalerkinSystem
from .model import CoefficientVector, ModelParams
from .sparse import SingularFactorError, lu_solve

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
CONSTRAINT_TOL = 1e-10
DEFAULT_REFERENCE = (100, 1000)


class SolveError(RuntimeError):
    pass


@dataclass
class SolveResult:
    X: CoefficientVector
    alpha: float
    residual: float
    factor_stats: dict = field(default_factory=dict)

    @property
    def constraint(self) -> float:
        """<X, U>, stored at solve time."""
        return self.factor_stats.get("constraint", float("nan"))


def solve_poisson(system: GalerkinSystem, Y: CoefficientVector,
                  tol: float = RESIDUAL_TOL) -> SolveResult:
    """Solve [[Lmat, U], [U^T, 0]] (X, alpha) = (Y, 0)."""
    p = system.params
    if Y.shape != (p.K, p.L):
        raise ValueError(f"observable has shape {Y.shape}, system is {(p.K, p.L)}")
    try:
        F = system.factorization()
    except SingularFactorError as exc:
        raise SolveError(
            f"singular augmented matrix at K={p.K}, L={p.L}, gamma={p.gamma}: {exc}"
        ) from exc
    rhs = np.append(Y.coeffs, 0.0)
    sol, residual = lu_solve(F, rhs)
    X = CoefficientVector(p.K, p.L, sol[:-1])
    constraint = float(X.coeffs @ system.U)
    stats = dict(F.stats(), constraint=constraint)
    if residual > tol:
        raise SolveError(f"residual {residual:.3e} exceeds {tol:g} at K={p.K}, L={p.L}")
    if abs(constraint) > CONSTRAINT_TOL:
        raise SolveError(f"mean constraint <X,U> = {constraint:.3e} violated")
    return SolveResult(X=X, alpha=float(sol[-1]), residual=residual, factor_stats=stats)


def truncate(X: CoefficientVector, K: int, L: int) -> CoefficientVector:
    """L^2(mu) projection onto the first 2K-1 position and L momentum modes."""
    if K > X.K or L > X.L or K < 1 or L < 1:
        raise ValueError(f"cannot truncate {X.shape} to {(K, L)}")
    M = X.as_matrix()[:L, : 2 * K - 1]
    return CoefficientVector(K, L, M.ravel().copy())


def embed(X: CoefficientVector, K: int, L: int) -> CoefficientVector:
    """Zero-pad into a larger basis (inverse of truncate on its range)."""
    if K < X.K or L < X.L:
        raise ValueError(f"cannot embed {X.shape} into {(K, L)}")
    out = CoefficientVector.zeros(K, L)
    out.as_matrix()[: X.L, : 2 * X.K - 1] = X.as_matrix()
    return out


def export_coefficients_csv(X: CoefficientVector, path) -> None:
    """One row per coefficient: k, l, value."""
    M = X.as_matrix()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "l", "value"])
        for l in range(X.L):
            for k in range(2 * X.K - 1):
                w.writerow([k, l, repr(float(M[l, k]))])


# --- reference cache -----------------------------------------------------------
#
# File layout (one file per key, name = sha256 of the canonical key):
#   8 bytes   magic b"LSPCACHE"
#   8 bytes   header length h, little-endian uint64
#   h bytes   UTF-8 JSON header: key, shape [K, L], n, alpha, residual,
#             factor_stats, sha256 of the payload
#   8n bytes  coefficients, little-endian float64

MAGIC = b"LSPCACHE"


def cache_key(params: ModelParams, observable: str, K_ref: int, L_ref: int) -> dict:
    return {
        "potential": params.potential_key(),
        "beta": params.beta,
        "gamma": params.gamma,
        "observable": observable,
        "K_ref": K_ref,
        "L_ref": L_ref,
    }


def _key_digest(key: dict) -> str:
    blob = json.dumps(key, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_cache(path: Path, key: dict, result: SolveResult) -> None:
    payload = np.ascontiguousarray(result.X.coeffs, dtype="<f8").tobytes()
    header = {
        "key": key,
        "shape": [result.X.K, result.X.L],
        "n": int(result.X.coeffs.size),
        "alpha": result.alpha,
        "residual": result.residual,
        "factor_stats": result.factor_stats,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".bin")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(hb).to_bytes(8, "little"))
            fh.write(hb)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cache(path: Path, key: dict) -> SolveResult | None:
    """Load a cached result; None when missing, corrupt or keyed differently."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return None
    try:
        if data[:8] != MAGIC:
            raise ValueError("bad magic")
        hlen = int.from_bytes(data[8:16], "little")
        header = json.loads(data[16 : 16 + hlen].decode())
        payload = data[16 + hlen :]
        if header["key"] != json.loads(json.dumps(key)):
            return None
        if hashlib.sha256(payload).hexdigest() != header["sha256"]:
            raise ValueError("checksum mismatch")
        K, L = header["shape"]
        coeffs = np.frombuffer(payload, dtype="<f8").astype(float)
        X = CoefficientVector(K, L, coeffs)
    except (ValueError, KeyError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        log.warning("discarding corrupt cache file %s (%s)", path, exc)
        return None
    return SolveResult(X=X, alpha=header["alpha"], residual=header["residual"],
                       factor_stats=header.get("factor_stats", {}))


def estimate_factor_bytes(K: int, L: int) -> int:
    """Rough LU memory need, calibrated on COLAMD fill at (100, 1000)."""
    n = (2 * K - 1) * L
    return int(n * (2 * K + 2) * 0.65 * 12)


def reference_solution(
    params: ModelParams,
    K_ref: int = DEFAULT_REFERENCE[0],
    L_ref: int = DEFAULT_REFERENCE[1],
    observable: str | Callable[[ModelParams], CoefficientVector] = "velocity",
    cache_dir=None,
    observable_name: str | None = None,
) -> SolveResult:
    """Solve once at (K_ref, L_ref), reusing a cached copy when the key matches.

    ``observable`` is a registered name or a builder ``params -> Y``; custom
    builders need ``observable_name`` to be cached.
    """
    ref_params = params.with_sizes(K_ref, L_ref)
    name = observable if isinstance(observable, str) else observable_name
    key = path = None
    if cache_dir is not None and name is not None:
        key = cache_key(params, name, K_ref, L_ref)
        path = Path(cache_dir) / f"{_key_digest(key)}.bin"
        hit = read_cache(path, key)
        if hit is not None and hit.X.shape == (K_ref, L_ref):
            log.info("reference cache hit %s", path)
            hit.factor_stats = dict(hit.factor_stats, cache_hit=True)
            return hit

    try:
        system = GalerkinSystem.build(ref_params)
        Y = system.observable(observable) if isinstance(observable, str) else observable(ref_params)
        result = solve_poisson(system, Y)
    except MemoryError as exc:
        need = estimate_factor_bytes(K_ref, L_ref)
        raise MemoryError(
            f"reference solve at (K, L)=({K_ref}, {L_ref}) needs about "
            f"{need / 2**30:.1f} GiB for the factors"
        ) from exc
    result.factor_stats["cond1"] = system.factorization().cond1()
    result.factor_stats["cache_hit"] = False
    if path is not None:
        write_cache(path, key, result)
    return result
