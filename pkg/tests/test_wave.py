import numpy as np
import pytest

from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium
from patlab.wave import (CFLError, InitialState, RadialWaveConfig, WaveConfig, cfl_limit, energy_form,
                         fit_decay, simulate, simulate_radial)

from conftest import poly_bump


def _radial(n=600, c_core=None):
    g = GridSpec.radial(n)
    params = {} if c_core is None else {"balls": [((0.0, 0.0, 0.0), 0.5, c_core)]}
    m = build_medium(MediumRecipe("piecewise" if params else "uniform", params), g)
    return m, poly_bump(g, 0.9)


def test_cfl_violation_rejected(uniform32):
    f = poly_bump(uniform32.grid, 0.9)
    with pytest.raises(CFLError):
        simulate(WaveConfig(uniform32, InitialState(f), T=0.5, dt=2 * cfl_limit(uniform32)))
    m, f1 = _radial()
    with pytest.raises(CFLError):
        simulate_radial(RadialWaveConfig(m, InitialState(f1), T=0.5, dt=1.5 * m.grid.h))


def test_initial_data_must_be_supported_in_omega(uniform32):
    g = uniform32.grid
    with pytest.raises(ValueError, match="admissible"):
        simulate(WaveConfig(uniform32, InitialState(poly_bump(g, 1.3)), T=0.1))


def test_radial_huygens_exact_at_unit_courant():
    # with dt = h the radial leapfrog is the exact d'Alembert update for r u
    m, f = _radial()
    rec = simulate_radial(RadialWaveConfig(m, InitialState(f), T=3.0, dt=m.grid.h, adaptive=False))
    tr = rec.boundary_trace[:, 0]
    late = rec.times > 1.9 + 2 * m.grid.h
    assert np.max(np.abs(tr[late])) <= 1e-12 * np.max(np.abs(tr))
    assert rec.decay.flag == "finite extinction"


def _late_trace_ratio(n):
    g = GridSpec.cube(n)
    m = build_medium(MediumRecipe(), g)
    rec = simulate(WaveConfig(m, InitialState(poly_bump(g, 0.5)), T=2.8, sponge_width=0.5,
                              record_interior=False, adaptive=False))
    tr = np.abs(rec.boundary_trace)
    return np.max(tr[rec.times > 2.2]) / np.max(tr)


def test_3d_post_horizon_residue_shrinks_with_refinement():
    coarse, fine = _late_trace_ratio(24), _late_trace_ratio(48)
    assert fine < coarse / 2


def test_leapfrog_energy_conserved_with_wall(g24):
    m = build_medium(MediumRecipe(), g24)
    rec = simulate(WaveConfig(m, InitialState(poly_bump(g24, 0.8)), T=4.0, wall=m.grid.R0,
                              adaptive=False))
    Q = energy_form(m, rec.wall)
    wc = (m.weight * g24.volumes).ravel()
    u = np.array([rec.embed(fr).ravel() for fr in rec.frames])
    # staggered invariant of the leapfrog scheme
    du = (u[1:] - u[:-1]) / rec.dt
    E = np.sum(wc * du**2, axis=1) + np.einsum("ij,ij->i", u[1:], (Q @ u[:-1].T).T)
    assert np.max(np.abs(E - E[0])) <= 1e-10 * E[0]
    assert fit_decay(rec).flag == "possibly trapping"


def test_energy_form_symmetric(g16):
    B = energy_form(build_medium(MediumRecipe(), g16)).tocsr()
    assert abs(B - B.T).max() == 0


def test_accumulator_matches_frame_trapezoid(g16):
    m = build_medium(MediumRecipe(), g16)
    rec = simulate(WaveConfig(m, InitialState(poly_bump(g16, 0.9)), T=2.0, moment_K=4,
                              laplace_p=(0.5,), adaptive=False))
    t = rec.times
    for k in (0, 2, 4):
        ref = np.trapezoid(t[:, None, None, None] ** k * rec.frames, t, axis=0)
        assert np.max(np.abs(rec.moment_sums[k] - ref)) <= 1e-12 * np.max(np.abs(ref))
    ref = np.trapezoid(np.exp(-0.5 * t)[:, None, None, None] * rec.frames, t, axis=0)
    assert np.max(np.abs(rec.laplace[0.5] - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_linearity(g16):
    m = build_medium(MediumRecipe(), g16)
    f = poly_bump(g16, 0.9)
    a = simulate(WaveConfig(m, InitialState(f), T=1.0, record_interior=False, adaptive=False))
    b = simulate(WaveConfig(m, InitialState(2 * f), T=1.0, record_interior=False, adaptive=False))
    assert np.allclose(b.boundary_trace, 2 * a.boundary_trace, rtol=0, atol=1e-14)
    s = a.scaled(2.0)
    assert np.allclose(s.energy_history, b.energy_history, rtol=1e-12)


def test_adaptive_stop_and_decay_fit():
    m, f = _radial(c_core=0.8)
    rec = simulate_radial(RadialWaveConfig(m, InitialState(f), T=60.0))
    fit = rec.decay
    assert rec.stop_reason in ("energy-tail", "horizon")
    assert fit.delta_hat > 0
    # envelope covers the window samples
    t0, t1 = fit.fit_window
    sel = (rec.times >= t0) & (rec.times <= t1)
    env = fit.C_hat * np.exp(-fit.delta_hat * rec.times[sel])
    assert np.all(np.sqrt(rec.energy_history[sel]) <= env * (1 + 1e-9))


def test_trivial_history_rejected():
    m, f = _radial()
    rec = simulate_radial(RadialWaveConfig(m, InitialState(0 * f), T=0.5))
    with pytest.raises(ValueError):
        fit_decay(rec)
