import numpy as np
import pytest

from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium
from patlab.moments import PreconditionError
from patlab.transmission import (TransmissionPair, helmholtz_residual, pair_from_data, radial_te_oracle,
                                 strip_scan, te_determinant, verify_pair)
from patlab.wave import InitialState, WaveConfig, simulate

from conftest import poly_bump

PI = np.pi


@pytest.fixture(scope="module")
def rg():
    return GridSpec.radial(3000)


def _layered(g, c):
    return build_medium(MediumRecipe("radial-layers", {"layers": [(1.0, c)]}), g)


def test_oracle_half_speed_roots():
    res = radial_te_oracle(1.0, 0.5, (2.0, 10.0))
    assert not res.degenerate
    assert np.allclose(res.roots, [PI, 2 * PI, 3 * PI], atol=1e-7)


def test_oracle_closed_form_determinant():
    for t in (0.7, 2.0, 5.5):
        assert te_determinant(1.0, 0.5, t) == pytest.approx(-2 * t * np.sin(t) ** 3, rel=1e-10)


def test_oracle_speed_scaling():
    # scaling both speeds by 2 scales every root by 2
    res = radial_te_oracle(2.0, 1.0, (4.0, 20.0))
    assert np.allclose(res.roots, [2 * PI, 4 * PI, 6 * PI], atol=1e-7)


def test_oracle_other_contrasts():
    assert np.allclose(radial_te_oracle(1.0, 0.4, (1.0, 7.0)).roots, [1.94778, 4.33540, 6.28319], atol=1e-5)
    assert np.allclose(radial_te_oracle(1.0, 0.7, (7.0, 8.0)).roots, [7.5409], atol=1e-4)
    assert radial_te_oracle(1.0, 1.0, (1.0, 5.0)).degenerate


def test_oracle_layer_profile_must_reach_boundary():
    with pytest.raises(ValueError):
        radial_te_oracle([(0.5, 0.8)], 1.0, (1.0, 2.0))


@pytest.fixture(scope="module")
def half_scan(rg):
    return strip_scan(build_medium(MediumRecipe(), rg), _layered(rg, 0.5), np.linspace(2.0, 10.0, 200))


def test_radial_scan_matches_oracle(half_scan):
    s = half_scan
    assert len(s.refined) == 3
    assert np.max(np.abs(s.refined.real - [PI, 2 * PI, 3 * PI])) < 1e-2
    assert s.longest_flagged_run() <= 3 and not s.degenerate


def test_indicator_is_tau_tan_tau(half_scan):
    # for these two media the order-0 DtN gap is tau tan(tau)
    s = half_scan
    t = s.tau_samples.real
    ref = np.abs(t * np.tan(t))
    away = (np.abs(np.cos(t)) > 0.2) & (np.abs(np.sin(t)) > 0.2)
    assert np.max(np.abs(s.indicator[away] - ref[away]) / ref[away]) < 1e-2


def test_indicator_bounded_away_from_roots(half_scan):
    s = half_scan
    t = s.tau_samples.real
    far = np.min(np.abs(t[:, None] - np.array([PI, 2 * PI, 3 * PI])[None]), axis=1) > 0.1
    assert np.all(s.indicator[far] > s.eps_scan)


def test_identical_media_scan_degenerate(rg):
    m = build_medium(MediumRecipe(), rg)
    s = strip_scan(m, m, np.linspace(1.0, 5.0, 20))
    assert s.degenerate and s.flagged_eigen.size == 0


def test_scan_mirror_symmetry_and_strip(rg):
    m1, m2 = build_medium(MediumRecipe(), rg), _layered(rg, 0.5)
    taus = np.linspace(2.0, 4.0, 9) + 0.1j
    s = strip_scan(m1, m2, taus, strip=0.5)
    assert s.mirror_defect < 1e-8
    with pytest.raises(ValueError, match="strip"):
        strip_scan(m1, m2, taus + 0.5j, strip=0.5)


def test_scan_csv(half_scan, tmp_path):
    half_scan.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "re_tau,im_tau,indicator,flag" and len(lines) == 201
    assert sum(int(l.rsplit(",", 1)[1]) for l in lines[1:]) == 3


def test_ball_scan_first_root():
    # cut-cell 3-D path: first-order in h, 0.016 off at this resolution
    g = GridSpec.cube(24, R_sim=1.2, R0=1.1)
    m1 = build_medium(MediumRecipe(), g)
    m2 = m1.with_speed(np.where(g.omega, 0.4, 1.0))
    s = strip_scan(m1, m2, np.linspace(1.4, 2.6, 25), eps_scan=1.0)
    assert len(s.refined) >= 1
    best = s.refined[np.argmin(np.abs(s.refined - 1.94778))]
    assert abs(best.real - 1.94778) < 3e-2


# pairs from forward data --------------------------------------------------

def _slow_core_run(n):
    g = GridSpec.cube(n)
    m = build_medium(MediumRecipe("piecewise", {"balls": [((0.0, 0.0, 0.0), 0.5, 0.8)]}), g)
    return simulate(WaveConfig(m, InitialState(poly_bump(g)), T=40.0, record_interior=False,
                               adaptive=False, laplace_p=(1j, -1j, 0.0)))


@pytest.fixture(scope="module")
def core_run():
    return _slow_core_run(32)


def test_self_pair_solves_helmholtz(core_run):
    p = pair_from_data(core_run, core_run, 1.0)
    assert not p.degenerate
    assert max(p.residuals) < 2e-3
    assert p.cauchy_mismatch == (0.0, 0.0)
    cert = verify_pair(p, core_run.medium, core_run.medium)
    assert cert.certified and cert.residuals == p.residuals
    assert "status = eigenpair candidate" in cert.to_text()


def test_zero_frequency_pair_is_degenerate(core_run):
    assert pair_from_data(core_run, core_run, 0.0).degenerate


def test_trivial_and_random_pairs(core_run):
    m = core_run.medium
    z = np.zeros(m.grid.shape)
    trivial = TransmissionPair(1.0, z, z, (0.0, 0.0), (0.0, 0.0), 1.0, True)
    assert verify_pair(trivial, m, m).status == "not an eigenpair (trivial)"
    rng = np.random.default_rng(4)
    w1, w2 = (rng.standard_normal(m.grid.shape) * m.grid.omega for _ in range(2))
    bad = TransmissionPair(1.0, w1, w2, (0.0, 0.0), (0.0, 0.0), 1.0, False)
    cert = verify_pair(bad, m, m)
    assert cert.status == "rejected" and min(cert.residuals) > 1.0


def test_pair_preconditions(core_run):
    with pytest.raises(PreconditionError, match="traces"):
        pair_from_data(core_run, core_run.scaled(2.0), 1.0)
    with pytest.raises(PreconditionError, match="strip"):
        pair_from_data(core_run, core_run, 1.0 + 50j)


def test_helmholtz_residual_of_plane_wave(g32):
    m = build_medium(MediumRecipe(), g32)
    x = g32.coords[0]
    tau = 2.0
    th = 2 * np.arcsin(tau * g32.h / 2) / g32.h  # discrete dispersion
    assert helmholtz_residual(np.cos(th * x), m, tau) < 1e-10
    assert helmholtz_residual(np.cos(tau * x), m, tau) > 1e-4
