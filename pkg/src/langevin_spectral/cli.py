"""Command-line interface to the spectral Galerkin solver.

    langevin-spectral solve --observable velocity --K 10 --L 40 --gamma 1
    langevin-spectral sweep --axis K --grid 5,10,20,40 --L 500 --observable sobolev

Options may also come from a ``key=value`` file (``--config``); flags win.
Each run writes its outputs plus ``manifest.json`` into ``--out``.
Exit status: 0 success, 1 computation error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

COMMANDS = ("solve", "sweep", "gap", "diffusion", "diagnose", "mc-validate", "export-matrix")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    beta: float = 1.0
    gamma: float = 1.0
    potential: str = "default"
    K: int = 10
    L: int = 40
    observable: str = "velocity"
    out: str = "."
    cache_dir: str | None = None
    threads: int = 1
    seed: int = 0
    axis: str | None = None
    grid: tuple = ()
    K_ref: int = 100
    L_ref: int = 1000
    gap: bool = False
    dt: float = 1e-2
    t_max: float = 1e4
    t_corr: float | None = None
    n_traj: int = 64
    which: str = "augmented"
    eps_bar: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "grid" in d:
            d["grid"] = tuple(d["grid"])
        return cls(**d)


# --- parsing --------------------------------------------------------------------

def parse_potential(spec: str) -> dict:
    """'default', 'flat', or 'v0;a1,a2,..;b1,b2,..' (cos then sin coefficients)."""
    if spec == "default":
        return {"v0": 1.0, "v_cos": (-1.0,), "v_sin": ()}
    if spec == "flat":
        return {"v0": 0.0, "v_cos": (), "v_sin": ()}
    parts = spec.split(";")
    if len(parts) > 3:
        raise ConfigError(f"bad potential {spec!r}")
    parts += [""] * (3 - len(parts))
    try:
        v0 = float(parts[0]) if parts[0].strip() else 0.0
        a = tuple(float(x) for x in parts[1].split(",") if x.strip())
        b = tuple(float(x) for x in parts[2].split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad potential {spec!r}: {exc}") from None
    return {"v0": v0, "v_cos": a, "v_sin": b}


def model_params(cfg: RunConfig):
    from .model import ModelParams

    try:
        return ModelParams(beta=cfg.beta, gamma=cfg.gamma, K=cfg.K, L=cfg.L,
                           **parse_potential(cfg.potential))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_grid(text: str, axis: str | None) -> tuple:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None
    if axis in ("K", "L"):
        if any(not v.is_integer() for v in vals):
            raise ConfigError(f"grid for axis {axis} must be integers")
        return tuple(int(v) for v in vals)
    return tuple(vals)


def read_config_file(path: str) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    t = _TYPES.get(key)
    if t is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if t == "int":
            return int(value)
        if t == "float":
            return float(value)
        if t == "float | None":
            return None if value.lower() in ("", "none") else float(value)
        if t == "bool":
            if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("1", "true", "yes")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="key=value file; flags override it")
    a("--beta", type=float)
    a("--gamma", type=float)
    a("--potential", help="default | flat | 'v0;a1,a2;b1,b2'")
    a("--K", type=int, help="half number of Fourier modes (2K-1 modes)")
    a("--L", type=int, help="number of Hermite modes")
    a("--observable", help="velocity | sobolev | file:PATH (CSV k,l,value)")
    a("--out", help="output directory (default .)")
    a("--cache-dir", dest="cache_dir")
    a("--threads", type=int, help="work pool size (default: available cores)")
    a("--seed", type=int)
    a("--K-ref", dest="K_ref", type=int)
    a("--L-ref", dest="L_ref", type=int)

    parser = argparse.ArgumentParser(prog="langevin-spectral", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the Poisson problem")
    sw = sub.add_parser("sweep", parents=[common], help="convergence sweep along K, L or gamma")
    sw.add_argument("--axis", choices=("K", "L", "gamma"))
    sw.add_argument("--grid")
    sw.add_argument("--gap", action="store_const", const="true")
    sub.add_parser("gap", parents=[common], help="spectral gap of the rigidity matrix")
    df = sub.add_parser("diffusion", parents=[common], help="self-diffusion, optionally over a gamma grid")
    df.add_argument("--grid")
    dg = sub.add_parser("diagnose", parents=[common], help="certificate inequalities")
    dg.add_argument("--eps-bar", dest="eps_bar", type=float)
    mc = sub.add_parser("mc-validate", parents=[common], help="Monte Carlo cross-check of D")
    mc.add_argument("--dt", type=float)
    mc.add_argument("--t-max", dest="t_max", type=float)
    mc.add_argument("--t-corr", dest="t_corr", type=float)
    mc.add_argument("--n-traj", dest="n_traj", type=int)
    ex = sub.add_parser("export-matrix", parents=[common], help="write a MatrixMarket file")
    ex.add_argument("--which", choices=("rigidity", "augmented", "Q", "P"))
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = {}
    if ns.config:
        values.update(read_config_file(ns.config))
    for k, v in vars(ns).items():
        if k in ("config", "command") or v is None:
            continue
        values[k] = v
    values.pop("command", None)
    axis = values.get("axis")
    if ns.command == "diffusion" and "grid" in values:
        axis = "gamma"
        values["axis"] = "gamma"
    grid = values.pop("grid", None)
    cfg_kw = {k: _coerce(k, v) for k, v in values.items()}
    if grid is not None:
        cfg_kw["grid"] = _parse_grid(grid, axis) if isinstance(grid, str) else tuple(grid)
    if "threads" not in cfg_kw:
        cfg_kw["threads"] = os.cpu_count() or 1
    try:
        cfg = RunConfig(command=ns.command, **cfg_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    model_params(cfg)
    if cfg.threads < 1:
        raise ConfigError("--threads must be >= 1")
    obs = cfg.observable
    if obs not in ("velocity", "sobolev") and not obs.startswith("file:"):
        raise ConfigError(f"unknown observable {obs!r}")
    if obs.startswith("file:") and not Path(obs[5:]).is_file():
        raise ConfigError(f"observable file {obs[5:]} not found")
    if cfg.command == "sweep":
        if cfg.axis is None:
            raise ConfigError("sweep needs --axis")
        if not cfg.grid:
            raise ConfigError("sweep needs a nonempty --grid")
        if list(cfg.grid) != sorted(cfg.grid):
            raise ConfigError("grid must be sorted")
        if cfg.axis == "K" and max(cfg.grid) > cfg.K_ref:
            raise ConfigError("grid exceeds K_ref")
        if cfg.axis == "L" and max(cfg.grid) > cfg.L_ref:
            raise ConfigError("grid exceeds L_ref")
        if (cfg.axis == "L" and cfg.K > cfg.K_ref) or (cfg.axis == "K" and cfg.L > cfg.L_ref):
            raise ConfigError("fixed (K, L) exceeds the reference sizes")
    if cfg.command == "diffusion" and cfg.grid and any(g <= 0 for g in cfg.grid):
        raise ConfigError("gamma grid must be positive")
    if cfg.command in ("diffusion", "mc-validate") and obs != "velocity":
        raise ConfigError(f"{cfg.command} requires the velocity observable")
    if cfg.command == "mc-validate" and (cfg.dt <= 0 or cfg.t_max <= 0 or cfg.n_traj < 2):
        raise ConfigError("mc-validate needs dt > 0, t_max > 0 and n_traj >= 2")
    if not 0 < cfg.eps_bar < 1:
        raise ConfigError("eps_bar must lie in (0, 1)")
    out = Path(cfg.out)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {out} is not a directory")


# --- observables from files ------------------------------------------------------

def load_observable_file(path: str, K: int, L: int):
    from .model import CoefficientVector

    Y = CoefficientVector.zeros(K, L)
    M = Y.as_matrix()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            k, l, v = int(row["k"]), int(row["l"]), float(row["value"])
            if not (0 <= k < 2 * K - 1 and 0 <= l < L):
                raise ConfigError(f"coefficient ({k}, {l}) outside the ({K}, {L}) basis")
            M[l, k] += v
    return Y


def _observable_builder(cfg: RunConfig):
    if cfg.observable.startswith("file:"):
        path = cfg.observable[5:]
        return lambda p: load_observable_file(path, p.K, p.L)
    return cfg.observable


# --- commands -----------------------------------------------------------------------

def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex | np.complexfloating):
        return [float(o.real), float(o.imag)]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def cmd_solve(cfg: RunConfig, out: Path) -> str:
    from .analysis import self_diffusion
    from .assembly import GalerkinSystem
    from .solver import export_coefficients_csv, solve_poisson

    p = model_params(cfg)
    system = GalerkinSystem.build(p)
    obs = _observable_builder(cfg)
    Y = system.observable(obs) if isinstance(obs, str) else obs(p)
    res = solve_poisson(system, Y)
    export_coefficients_csv(res.X, out / "coefficients.csv")
    summary = {"K": p.K, "L": p.L, "gamma": p.gamma, "beta": p.beta,
               "observable": cfg.observable, "residual": res.residual,
               "alpha": res.alpha, "constraint": res.constraint}
    if cfg.observable == "velocity":
        summary["diffusion"] = self_diffusion(system, res, Y)
    _dump_json(summary, out / "summary.json")
    line = f"solve K={p.K} L={p.L} residual={res.residual:.2e} alpha={res.alpha:.6g}"
    if "diffusion" in summary:
        line += f" D={summary['diffusion']:.10g}"
    return line


def cmd_sweep(cfg: RunConfig, out: Path) -> str:
    from .analysis import sweep, write_csv, write_json

    p = model_params(cfg)
    obs = cfg.observable
    if obs.startswith("file:"):
        raise ConfigError("sweep supports the velocity and sobolev observables")
    kw = {}
    if cfg.axis in ("K", "L"):
        kw = {"K_ref": cfg.K_ref, "L_ref": cfg.L_ref, "cache_dir": cfg.cache_dir}
    rows = sweep(cfg.axis, list(cfg.grid), p, obs, compute_gap=cfg.gap,
                 workers=cfg.threads, **kw)
    write_csv(rows, out / "sweep.csv")
    write_json(rows, out / "sweep.json")
    failed = sum(r.error is not None for r in rows)
    if failed == len(rows):
        raise RuntimeError("every sweep point failed")
    return f"sweep axis={cfg.axis} points={len(rows)} failed={failed}"


def cmd_gap(cfg: RunConfig, out: Path) -> str:
    from .diagnostics import spectral_gap

    rep = spectral_gap(model_params(cfg))
    _dump_json(rep.to_json(), out / "gap.json")
    return f"gap K={rep.K} L={rep.L} gamma={rep.gamma:g} gap={rep.gap:.12g} method={rep.method}"


def cmd_diffusion(cfg: RunConfig, out: Path) -> str:
    from .analysis import sweep, write_csv, write_json

    p = model_params(cfg)
    grid = list(cfg.grid) if cfg.grid else [cfg.gamma]
    rows = sweep("gamma", grid, p, "velocity", workers=cfg.threads)
    write_csv(rows, out / "diffusion.csv")
    write_json(rows, out / "diffusion.json")
    bad = [r for r in rows if r.error]
    if len(bad) == len(rows):
        raise RuntimeError(bad[0].error)
    if len(rows) == 1:
        return f"diffusion gamma={rows[0].gamma:g} D={rows[0].diffusion:.10g}"
    return f"diffusion points={len(rows)} failed={len(bad)}"


def cmd_diagnose(cfg: RunConfig, out: Path) -> str:
    from .diagnostics import certificate_report, gap_correction_term

    p = model_params(cfg)
    rep = certificate_report(p, seed=cfg.seed)
    rep["gap_correction"] = gap_correction_term(p, eps_bar=cfg.eps_bar)
    _dump_json(rep, out / "diagnose.json")
    return f"diagnose K={p.K} L={p.L} certificates={'ok' if rep['ok'] else 'FAILED'}"


def cmd_mc_validate(cfg: RunConfig, out: Path) -> str:
    from .analysis import self_diffusion
    from .assembly import GalerkinSystem
    from .mc import estimate_diffusion
    from .solver import solve_poisson

    p = model_params(cfg)
    system = GalerkinSystem.build(p)
    Y = system.observable("velocity")
    d_spec = self_diffusion(system, solve_poisson(system, Y), Y)
    est = estimate_diffusion(p, dt=cfg.dt, t_max=cfg.t_max, t_corr=cfg.t_corr,
                             n_traj=cfg.n_traj, seed=cfg.seed)
    diff = abs(d_spec - est.value)
    agree = diff <= 3.0 * est.stderr
    _dump_json({"spectral_D": d_spec, "mc": est.to_json(), "abs_diff": diff,
                "n_stderr": diff / est.stderr, "agree": bool(agree)}, out / "mc_validate.json")
    return (f"mc-validate D_spectral={d_spec:.6g} D_mc={est.value:.6g} "
            f"stderr={est.stderr:.2g} {'agree' if agree else 'DISAGREE'}")


def cmd_export_matrix(cfg: RunConfig, out: Path) -> str:
    from .assembly import GalerkinSystem
    from .sparse import write_matrix_market

    s = GalerkinSystem.build(model_params(cfg))
    M = {"rigidity": s.Lmat, "augmented": s.augmented(), "Q": s.Q, "P": s.P}[cfg.which]
    path = out / f"{cfg.which}_K{cfg.K}_L{cfg.L}.mtx"
    write_matrix_market(path, M, comment=f"{cfg.which} K={cfg.K} L={cfg.L} gamma={cfg.gamma}")
    return f"export-matrix {cfg.which} shape={M.shape} nnz={M.nnz} -> {path}"


HANDLERS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "gap": cmd_gap,
    "diffusion": cmd_diffusion,
    "diagnose": cmd_diagnose,
    "mc-validate": cmd_mc_validate,
    "export-matrix": cmd_export_matrix,
}


def write_manifest(cfg: RunConfig, out: Path, timings: dict, status: str) -> None:
    import scipy

    from . import __version__

    manifest = {
        "config": cfg.to_dict(),
        "versions": {"langevin_spectral": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "timings": timings,
        "status": status,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    _dump_json(manifest, out / "manifest.json")


def load_manifest(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text())["config"])


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = resolve_config(ns)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    t0 = time.perf_counter()
    try:
        line = HANDLERS[cfg.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, MemoryError, np.linalg.LinAlgError, ValueError) as exc:
        write_manifest(cfg, out, {"total_s": time.perf_counter() - t0}, f"error: {exc}")
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1
    write_manifest(cfg, out, {"total_s": time.perf_counter() - t0}, "ok")
    print(line)
    return 0


def main() -> None:
    sys.exit(run())
