import math

import numpy as np
import pytest
from scipy.special import beta

from patlab.asymptotics import (classify_sign_regime, g_general, h_function, h_from_u4, kmm_value,
                                potential_moments, power_potential, u1_potential, u2_constant,
                                u4_boundary)
from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium
from patlab.moments import time_moments, trace_moments
from patlab.wave import InitialState, RadialWaveConfig, simulate_radial

from conftest import poly_bump

P = 8


def _radial_moment(R, j, p=P):
    """``int |y|^j (1 - |y|^2/R^2)^p dy`` over R^3."""
    return 2 * np.pi * R ** (3 + j) * beta((3 + j) / 2, p + 1)


@pytest.fixture(scope="module")
def rg():
    return GridSpec.radial(3000)


def _zero_mean(m):
    g = m.grid
    a, b = poly_bump(g, 0.5), poly_bump(g, 0.9)
    w = m.weight * g.volumes
    return a - np.sum(a * w) / np.sum(b * w) * b


def test_power_potential_radial_closed_form(rg):
    m = build_medium(MediumRecipe(), rg)
    rho = poly_bump(rg, 0.9)
    F0, F2, F4 = (_radial_moment(0.9, j) for j in (0, 2, 4))
    x = 1.0
    got1, got2 = (power_potential(rho, m, [[x]], k)[0] for k in (1, 2))
    assert abs(got1 - (x * x * F0 + F2)) < 1e-5 * got1
    ref2 = x**4 * F0 + 10 / 3 * x * x * F2 + F4
    assert abs(got2 - ref2) < 1e-5 * ref2


def test_power_potential_cube_matches_moment_expansion(g24):
    m = build_medium(MediumRecipe(), g24)
    rng = np.random.default_rng(5)
    rho = rng.standard_normal(g24.shape) * g24.omega
    tgt = g24.omega_faces.points[:20]
    vol = g24.volumes
    ys = np.stack([c for c in g24.coords], axis=-1)
    M0 = np.sum(rho * vol)
    M1 = ys.reshape(-1, 3).T @ (rho * vol).ravel()
    M2 = np.sum(np.sum(ys**2, axis=-1) * rho * vol)
    ref = np.sum(tgt**2, axis=1) * M0 - 2 * tgt @ M1 + M2
    got = power_potential(rho, m, tgt, 1)
    assert np.allclose(got, ref, rtol=0, atol=1e-10 * np.abs(ref).max())


def test_u2_value_and_sign(rg):
    m = build_medium(MediumRecipe(), rg)
    f = poly_bump(rg, 0.9)
    assert u2_constant(m, f) == pytest.approx(-_radial_moment(0.9, 0) / (4 * np.pi), rel=1e-5)
    assert abs(u2_constant(m, _zero_mean(m))) < 1e-12


@pytest.fixture(scope="module")
def layered(rg):
    return build_medium(MediumRecipe("radial-layers", {"layers": [(0.5, 1.3)]}), rg)


def test_low_moments_match_simulation(layered):
    m = layered
    g = m.grid
    f = poly_bump(g, 0.9)
    rec = simulate_radial(RadialWaveConfig(m, InitialState(f), T=12.0, moment_K=4, energy_tail=1e-14))
    tab = time_moments(rec, 4, need_tail=False)
    obs = g.observation
    u1 = u1_potential(m, f)
    assert np.linalg.norm((tab.moments[1] - u1)[obs]) < 1e-3 * np.linalg.norm(u1[obs])
    u2 = u2_constant(m, f)
    assert np.max(np.abs(tab.moments[2][obs] - u2)) < 1e-3 * abs(u2)


def test_u4_matches_simulated_boundary_moment(layered):
    m = layered
    f = _zero_mean(m)
    assert abs(kmm_value(m, f)) < 1e-12
    rec = simulate_radial(RadialWaveConfig(m, InitialState(f), T=12.0, energy_tail=1e-14))
    sim = trace_moments(rec, 2)[4][0] / math.factorial(4)
    formula = u4_boundary(m, f)[0]
    assert abs(formula - sim) < 1e-4 * abs(sim)
    # g for k0 = 2 is 4! u^(4) when the second moment vanishes
    u1 = u1_potential(m, f)
    g2 = g_general(m, f, 2, {1: u1})[0]
    assert g2 == pytest.approx(24 * formula, rel=1e-6)


def test_u4_constant_medium_closed_form(rg):
    m = build_medium(MediumRecipe(), rg)
    f = _zero_mean(m)
    a = _radial_moment(0.5, 0) / _radial_moment(0.9, 0)
    F2 = _radial_moment(0.5, 2) - a * _radial_moment(0.9, 2)
    assert u4_boundary(m, f)[0] == pytest.approx(-F2 / (24 * np.pi), rel=1e-4)
    assert h_function(m, f)[0] == pytest.approx(F2, rel=1e-4)


def test_g_general_k0_one_is_twice_u2(rg):
    m = build_medium(MediumRecipe(), rg)
    f = poly_bump(rg, 0.9)
    assert g_general(m, f, 1, {})[0] == pytest.approx(2 * u2_constant(m, f), rel=1e-12)
    with pytest.raises(ValueError):
        g_general(m, f, 3, {1: f})


def test_regimes(rg, layered, g24):
    m = build_medium(MediumRecipe(), rg)
    assert classify_sign_regime(m, poly_bump(rg, 0.9)).regime == "i"
    rep = classify_sign_regime(layered, _zero_mean(layered))
    assert rep.regime == "ii" and rep.k0_predicted == 2
    # the outer lobe is negative, so the second moment and h are negative
    assert rep.u4_sign == "positive" and rep.h_sign == "negative"
    assert np.all(h_from_u4(layered, rep.u4_values) < 0)
    assert classify_sign_regime(m, 0 * rg.r).regime == "degenerate"
    # an odd dipole has zero mean and a sign-changing boundary function
    m3 = build_medium(MediumRecipe(), g24)
    dip = poly_bump(g24, 0.5, center=(0.3, 0, 0)) - poly_bump(g24, 0.5, center=(-0.3, 0, 0))
    rep3 = classify_sign_regime(m3, dip)
    assert rep3.regime == "iii" and rep3.u4_sign == "mixed"


def test_potential_moments_prediction(rg, layered):
    m = build_medium(MediumRecipe(), rg)
    assert potential_moments(m, poly_bump(rg, 0.9)).k0_predicted == 1
    assert potential_moments(layered, _zero_mean(layered)).k0_predicted == 2
    assert potential_moments(m, 0 * rg.r).k0_predicted == "unknown"


def test_requires_laplacian(g16):
    m = build_medium(MediumRecipe("uniform", {"tensor": {}, "R1": 0.9}), g16)
    with pytest.raises(ValueError, match="Laplace"):
        u1_potential(m, poly_bump(g16, 0.9))
