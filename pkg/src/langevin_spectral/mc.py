"""Monte Carlo Green-Kubo estimate of the self-diffusion coefficient.

Trajectories of the Langevin SDE are integrated with BAOAB splitting; the
momentum autocorrelation, averaged over time origins, is integrated up to
``t_corr``.  Each trajectory gets its own PCG64 stream spawned from the
user seed, so runs are reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np
import scipy.fft

from .model import ModelParams, eval_potential, torus_nodes

RNG_NAME = "numpy.random.PCG64 via SeedSequence(seed).spawn(n_traj)"
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    n_traj: int
    dt: float
    t_max: float
    t_corr: float
    burn_in: float
    rng_seed: int
    rng: str = RNG_NAME
    t_corr_warning: bool = False
    var_p: float = float("nan")
    var_p_stderr: float = float("nan")

    def to_json(self) -> dict:
        return asdict(self)


def _coefficient_arrays(params: ModelParams):
    d = params.degree
    a = np.array([params.v_cos[n] if n < len(params.v_cos) else 0.0 for n in range(d)])
    b = np.array([params.v_sin[n] if n < len(params.v_sin) else 0.0 for n in range(d)])
    return a, b


@numba.njit(cache=True)
def _force(q, a, b):
    # -V'(q)
    f = 0.0
    for n in range(a.shape[0]):
        k = n + 1
        f += k * a[n] * math.sin(k * q) - k * b[n] * math.cos(k * q)
    return f


@numba.njit(cache=True)
def _baoab_path(q, p, dt, gamma, beta, a, b, noise, out_p):
    """Advance len(noise) steps; records p after each step in out_p (if sized)."""
    c1 = math.exp(-gamma * dt)
    c2 = math.sqrt((1.0 - c1 * c1) / beta)
    h = 0.5 * dt
    record = out_p.shape[0] == noise.shape[0]
    f = _force(q, a, b)
    for i in range(noise.shape[0]):
        p += h * f
        q += h * p
        p = c1 * p + c2 * noise[i]
        q += h * p
        q = q % (2.0 * math.pi)
        f = _force(q, a, b)
        p += h * f
        if record:
            out_p[i] = p
    return q, p


def baoab_step(state, dt: float, params: ModelParams, rng: np.random.Generator | None = None,
               noise: float | None = None):
    """One BAOAB step from (q, p); the O-part uses one standard normal draw."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, p = state
    if noise is None:
        noise = 0.0 if rng is None else rng.standard_normal()
    a, b = _coefficient_arrays(params)
    return _baoab_path(float(q), float(p), dt, params.gamma, params.beta, a, b,
                       np.array([noise], dtype=float), np.empty(0))


def sample_nu(params: ModelParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from nu ~ exp(-beta V) by rejection from the uniform law."""
    q, _ = torus_nodes(4096)
    vmin = eval_potential(params, q).min() - 1e-3
    out = np.empty(0)
    while out.size < size:
        x = rng.uniform(0.0, TWO_PI, 2 * size + 16)
        acc = rng.uniform(size=x.size) < np.exp(-params.beta * (eval_potential(params, x) - vmin))
        out = np.concatenate([out, x[acc]])
    return out[:size]


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """C(l) = mean_t x(t) x(t+l) for l <= max_lag, unbiased over origins."""
    n = x.size
    nfft = scipy.fft.next_fast_len(2 * n)
    fx = scipy.fft.rfft(x, nfft)
    acf = scipy.fft.irfft(fx * np.conj(fx), nfft)[: max_lag + 1]
    return acf / (n - np.arange(max_lag + 1))


def default_t_corr(gamma: float) -> float:
    return 50.0 / min(gamma, 1.0 / gamma)


def estimate_diffusion(params: ModelParams, dt: float = 1e-2, t_max: float = 1e4,
                       t_corr: float | None = None, n_traj: int = 64, seed: int = 0,
                       burn_in: float | None = None) -> McEstimate:
    """Green-Kubo D = int_0^t_corr E[p_t p_0] dt with batch-means error bars."""
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    if n_traj < 2:
        raise ValueError("need at least 2 trajectories for an error bar")
    slow = min(params.gamma, 1.0 / params.gamma)
    t_corr = default_t_corr(params.gamma) if t_corr is None else t_corr
    burn_in = 10.0 / slow if burn_in is None else burn_in
    if t_corr >= t_max:
        raise ValueError(f"t_corr={t_corr} must be much smaller than t_max={t_max}")
    n_steps = int(round(t_max / dt))
    n_burn = int(math.ceil(burn_in / dt))
    n_lag = int(round(t_corr / dt))
    a, b = _coefficient_arrays(params)

    streams = np.random.SeedSequence(seed).spawn(n_traj)
    D = np.empty(n_traj)
    var_p = np.empty(n_traj)
    tails = np.empty(n_traj)
    tail_len = max(1, n_lag // 10)
    p_path = np.empty(n_steps)
    for i, ss in enumerate(streams):
        rng = np.random.Generator(np.random.PCG64(ss))
        q0 = sample_nu(params, 1, rng)[0]
        p0 = rng.standard_normal() / math.sqrt(params.beta)
        q, p = _baoab_path(q0, p0, dt, params.gamma, params.beta, a, b,
                           rng.standard_normal(n_burn), np.empty(0))
        _baoab_path(q, p, dt, params.gamma, params.beta, a, b,
                    rng.standard_normal(n_steps), p_path)
        c = autocorrelation(p_path, n_lag)
        D[i] = dt * (c.sum() - 0.5 * (c[0] + c[-1]))
        var_p[i] = float(np.mean(p_path**2))
        tails[i] = c[-tail_len:].mean()

    value = float(D.mean())
    stderr = float(D.std(ddof=1) / math.sqrt(n_traj))
    tail_se = tails.std(ddof=1) / math.sqrt(n_traj)
    warn = bool(abs(tails.mean()) > 3.0 * tail_se) if tail_se > 0 else False
    return McEstimate(
        value=value,
        stderr=stderr,
        n_traj=n_traj,
        dt=dt,
        t_max=t_max,
        t_corr=t_corr,
        burn_in=burn_in,
        rng_seed=seed,
        t_corr_warning=warn,
        var_p=float(var_p.mean()),
        var_p_stderr=float(var_p.std(ddof=1) / math.sqrt(n_traj)),
    )
