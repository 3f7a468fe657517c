import math

import numpy as np
import pytest

from langevin_spectral.mc import (
    autocorrelation,
    baoab_step,
    default_t_corr,
    estimate_diffusion,
    sample_nu,
)
from langevin_spectral.model import ModelParams

# E_nu[cos q] for V = 1 - cos q, beta = 1: I_1(1) / I_0(1)
MEAN_COS_BETA1 = 0.44638657358557503


def test_O_step_forgets_momentum_at_large_friction():
    p = ModelParams.flat(gamma=1e8, beta=2.0)
    q, pn = baoab_step((1.0, 5.0), 0.1, p, noise=0.7)
    assert pn == pytest.approx(0.7 / math.sqrt(2.0), rel=1e-12)


def test_free_flight_without_friction_or_noise():
    p = ModelParams.flat(gamma=1e-300)
    q, pn = baoab_step((1.0, 0.5), 0.01, p, noise=0.0)
    assert (q, pn) == (pytest.approx(1.005, abs=1e-15), 0.5)


def test_position_wrapped():
    p = ModelParams.flat(gamma=1e-300)
    q, _ = baoab_step((6.2, 10.0), 0.1, p, noise=0.0)
    assert 0.0 <= q < 2 * math.pi
    assert q == pytest.approx(6.2 + 1.0 - 2 * math.pi)


def test_baoab_rejects_bad_dt():
    with pytest.raises(ValueError):
        baoab_step((0.0, 0.0), 0.0, ModelParams())


def test_baoab_step_uses_rng():
    a = baoab_step((0.3, 0.1), 0.01, ModelParams(), rng=np.random.default_rng(1))
    b = baoab_step((0.3, 0.1), 0.01, ModelParams(), rng=np.random.default_rng(1))
    assert a == b


def test_sample_nu_moment():
    x = sample_nu(ModelParams(), 200_000, np.random.default_rng(3))
    c = np.cos(x)
    assert abs(c.mean() - MEAN_COS_BETA1) < 4 * c.std() / math.sqrt(x.size)
    assert np.all((x >= 0) & (x < 2 * math.pi))


def test_autocorrelation_matches_direct():
    x = np.random.default_rng(0).standard_normal(500)
    c = autocorrelation(x, 10)
    direct = [np.mean(x[: x.size - l] * x[l:]) for l in range(11)]
    np.testing.assert_allclose(c, direct, rtol=1e-10, atol=1e-12)


def test_flat_diffusion_and_momentum_variance():
    est = estimate_diffusion(ModelParams.flat(), t_max=2e3, n_traj=16, seed=11)
    assert abs(est.value - 1.0) <= 3 * est.stderr
    assert abs(est.var_p - 1.0) <= 4 * est.var_p_stderr
    assert est.stderr > 0 and math.isfinite(est.value)


def test_equilibrium_variance_default_potential():
    est = estimate_diffusion(ModelParams(beta=2.0), t_max=1e3, n_traj=16, seed=5)
    assert abs(est.var_p - 0.5) <= 4 * est.var_p_stderr


def test_seeded_determinism():
    kw = dict(t_max=200.0, n_traj=4, t_corr=10.0)
    a = estimate_diffusion(ModelParams(), seed=42, **kw)
    b = estimate_diffusion(ModelParams(), seed=42, **kw)
    c = estimate_diffusion(ModelParams(), seed=43, **kw)
    assert a == b
    assert a.value != c.value


def test_stderr_scales_with_trajectories():
    kw = dict(t_max=500.0, t_corr=20.0, seed=2)
    a = estimate_diffusion(ModelParams(), n_traj=32, **kw)
    b = estimate_diffusion(ModelParams(), n_traj=128, **kw)
    # four times the trajectories: stderr about halves
    assert 1.4 < a.stderr / b.stderr < 2.9


def test_timestep_halving_within_noise():
    kw = dict(t_max=1e3, n_traj=16, seed=9)
    a = estimate_diffusion(ModelParams(), dt=1e-2, **kw)
    b = estimate_diffusion(ModelParams(), dt=5e-3, **kw)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_metadata_and_defaults():
    est = estimate_diffusion(ModelParams(gamma=4.0), t_max=300.0, n_traj=2)
    assert est.t_corr == default_t_corr(4.0) == 200.0
    assert est.burn_in == pytest.approx(40.0)
    assert est.to_json()["rng"].startswith("numpy.random.PCG64")
    with pytest.raises(ValueError):
        estimate_diffusion(ModelParams(), t_max=10.0, t_corr=20.0)
    with pytest.raises(ValueError):
        estimate_diffusion(ModelParams(), n_traj=1)


def test_t_corr_warning_on_short_window():
    # cut the integral while the correlation is still large
    est = estimate_diffusion(ModelParams(gamma=0.1), t_max=300.0, t_corr=1.0, n_traj=8, seed=1)
    assert est.t_corr_warning
