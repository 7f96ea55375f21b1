import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, spsolve

from patlab.elliptic import (ConvergenceError, EllipticProblem, harmonic_basis, harmonic_residual,
                             newtonian_potential, operator, pcg, self_cell_constant, solve_dirichlet,
                             spectral_bound)
from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium


def test_operator_symmetric_and_positive(g16):
    m = build_medium(MediumRecipe("uniform", {"tensor": {}, "R1": 0.9}), g16)
    A = operator(m)
    W = sp.diags(g16.volumes.ravel())
    S = (W @ A).tocsr()
    assert abs(S - S.T).max() < 1e-12 * abs(S).max()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(g16.size)
    assert x @ (S @ x) > 0


def test_spectral_bound_covers_largest_eigenvalue(g16):
    m = build_medium(MediumRecipe(), g16)
    C = sp.diags(m.c.ravel())
    lam_max = eigsh((C @ operator(m) @ C).tocsr(), k=1, which="LA", return_eigenvectors=False)[0]
    assert spectral_bound(m) >= lam_max * (1 - 1e-12)


def test_pcg_matches_direct_solve(g16):
    m = build_medium(MediumRecipe(), g16)
    inner = np.flatnonzero(g16.interior(g16.observation))
    A = operator(m)[inner][:, inner].tocsr()
    b = np.random.default_rng(2).standard_normal(len(inner))
    x, it, res = pcg(A, b, tol=1e-12)
    assert res <= 1e-12 and it > 0
    ref = spsolve(A.tocsc(), b)
    assert np.linalg.norm(x - ref) <= 1e-9 * np.linalg.norm(ref)


def test_pcg_reports_nonconvergence(g16):
    m = build_medium(MediumRecipe(), g16)
    inner = np.flatnonzero(g16.interior(g16.observation))
    A = operator(m)[inner][:, inner].tocsr()
    with pytest.raises(ConvergenceError) as e:
        pcg(A, np.ones(len(inner)), tol=1e-14, maxiter=3)
    assert e.value.iterations == 3


def test_dirichlet_reproduces_harmonic_polynomial(g16):
    m = build_medium(MediumRecipe(), g16)
    x, y, z = g16.coords
    exact = x * y - 0.5 * z + 1.0
    u = solve_dirichlet(EllipticProblem(m, g16.observation, np.zeros(g16.shape), exact), tol=1e-12)
    sel = g16.observation
    assert np.max(np.abs(u[sel] - exact[sel])) < 1e-9


def test_harmonic_basis_tensor_medium(g16):
    m = build_medium(MediumRecipe("uniform", {"tensor": {}, "R1": 0.9}), g16)
    hb = harmonic_basis(m, 10)
    assert len(hb.functions) == 10 and max(hb.residuals) <= 1e-8
    assert harmonic_residual(hb.functions[4], m) == hb.residuals[4]


def test_harmonic_basis_limits(g16):
    m = build_medium(MediumRecipe(), g16)
    with pytest.raises(ValueError):
        harmonic_basis(m, 0)
    with pytest.raises(ValueError):
        harmonic_basis(m, 99)


def test_self_cell_constant_closed_form():
    # int over [0,1]^3 of 1/|r| = 3 ln((1+sqrt3)/sqrt2) - pi/4; a centred unit
    # cube is eight corner cubes of side 1/2, each contributing a quarter of that
    corner = 3 * np.log((1 + np.sqrt(3)) / np.sqrt(2)) - np.pi / 4
    assert abs(self_cell_constant() - 2 * corner / (4 * np.pi)) < 1e-12


def _ball_potential(r, a):
    return np.where(r < a, (3 * a * a - r * r) / 6, a**3 / (3 * np.maximum(r, 1e-300)))


@pytest.mark.parametrize("n", [24, 48])
def test_newtonian_potential_uniform_ball(n):
    g = GridSpec.cube(n)
    a = 0.8
    rho = (g.r < a).astype(float)
    # scale density so the staircase ball carries the exact mass
    rho *= (4 / 3 * np.pi * a**3) / np.sum(rho * g.volumes)
    pot = newtonian_potential(rho, g.observation, g)
    exact = _ball_potential(g.r, a)[g.observation]
    err = np.max(np.abs(pot[g.observation] - exact)) / np.max(exact)
    assert err < (3e-2 if n == 24 else 1.5e-2)


def test_newtonian_potential_radial_matches_closed_form():
    g = GridSpec.radial(3000)
    a = 0.8
    rho = (g.r <= a).astype(float)
    pot = newtonian_potential(rho, np.ones(g.shape, bool), g)
    exact = _ball_potential(g.r, a)
    assert np.max(np.abs(pot - exact)) < 2e-3
