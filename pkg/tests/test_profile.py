import numpy as np
import pytest
from scipy.integrate import quad

from acglue import profile1d
from acglue.errors import InvalidSpec, QuadratureUnderflow
from acglue.fits import fit_exp_decay
from acglue.quadrature import trapz


def test_cubic_midpoint_and_slope(cubic_profile):
    p = cubic_profile
    i0 = p.n // 2
    assert abs(p.w[i0]) < 1e-10
    assert abs(p.w_prime[i0] - 1.0 / np.sqrt(2.0)) < 1e-8


def test_cubic_matches_analytic(cubic_profile):
    p = cubic_profile
    assert np.abs(p.w - np.tanh(p.t / np.sqrt(2.0))).max() <= 1e-8


def test_centering_moment(cubic_profile):
    assert abs(profile1d.centering_defect(cubic_profile)) <= 1e-8


def test_monotone(cubic_profile):
    assert np.all(cubic_profile.w_prime > 0)


def test_boundary_decay(cubic_profile):
    p = cubic_profile
    # rounding slack: the tail gap itself sits at ~5e-13
    assert abs(p.w[-1] - 1.0) <= 2.0 * np.exp(-p.sigma_plus * p.T) + 1e-15
    assert abs(p.w[0] + 1.0) <= 2.0 * np.exp(-p.sigma_minus * p.T) + 1e-15


def test_sigma_values(cubic_profile):
    c = profile1d.profile_constants(cubic_profile)
    assert abs(c["sigma_plus"] - np.sqrt(2.0)) < 1e-9
    assert abs(c["sigma_minus"] - np.sqrt(2.0)) < 1e-9


def test_c_star_against_quadrature_oracle(cubic_profile):
    # independent oracle: adaptive quadrature of the closed-form w'^2
    oracle, _ = quad(lambda t: 0.5 / np.cosh(t / np.sqrt(2.0)) ** 4, -30, 30)
    assert abs(cubic_profile.c_star - oracle) < 1e-6
    assert abs(oracle - 2.0 * np.sqrt(2.0) / 3.0) < 1e-12


def test_spectral_gap_positive_and_grid_stable(cubic_profile):
    g1 = profile1d.spectral_gap(cubic_profile, refine=4)
    g2 = profile1d.spectral_gap(cubic_profile, refine=8)
    assert g1 > 0
    assert abs(g1 - g2) < 1e-4


def test_ode_residuals(cubic_profile):
    res = profile1d.ode_residuals(cubic_profile)
    assert res["w"] <= 1e-8
    assert res["psi0"] <= 1e-8
    assert res["psi1"] <= 1e-8


def test_psi0_value_at_origin(cubic_profile):
    p = cubic_profile
    assert abs(p.psi0[p.n // 2]) < 1e-12


def test_psi0_moment_identity(cubic_profile):
    m = profile1d.moment_identities(cubic_profile)
    assert abs(m["psi0_moment"] - m["psi0_expected"]) < 1e-6


def test_psi1_moment_identity(cubic_profile):
    m = profile1d.moment_identities(cubic_profile)
    assert abs(m["psi1_moment"] - m["psi1_expected"]) < 1e-6


def test_psi1_odd_for_cubic(cubic_profile):
    p = cubic_profile
    assert np.abs(p.psi1 + p.psi1[::-1]).max() < 1e-10
    assert abs(p.psi1[p.n // 2]) == 0.0


def test_psi0_tail_decay_rate(cubic_profile):
    p = cubic_profile
    window = (p.t > p.T - 6) & (p.t < p.T - 2.5)
    _, rate = fit_exp_decay(p.t[window], p.psi0[window])
    assert rate >= 0.9 * p.sigma_plus


def test_moment_identities_generic_spec(skew_profile):
    m = profile1d.moment_identities(skew_profile)
    assert abs(m["psi0_moment"] - m["psi0_expected"]) < 1e-6
    assert abs(m["psi1_moment"] - m["psi1_expected"]) < 1e-6


def test_skew_profile_invariants(skew_profile):
    p = skew_profile
    assert np.all(p.w_prime > 0)
    assert abs(profile1d.centering_defect(p)) <= 1e-8
    assert abs(p.sigma_plus - np.sqrt(2.6)) < 1e-9
    assert abs(p.sigma_minus - np.sqrt(1.4)) < 1e-9


def test_residual_refinement_second_order(cubic_profile):
    # the plain 3-point residual is truncation-dominated: ratio ~ 4 on halving
    p = cubic_profile

    def fd2_resid(n):
        t = np.linspace(-p.T, p.T, n)
        h = t[1] - t[0]
        w = p.w_at(t)
        r = (w[2:] - 2 * w[1:-1] + w[:-2]) / h**2 + p.spec.f(w[1:-1])
        return np.abs(r).max()

    r1, r2 = fd2_resid(501), fd2_resid(1001)
    assert 4.0 * 0.7 <= r1 / r2 <= 4.0 * 1.3


def test_invalid_spec_rejected():
    bad = profile1d.NonlinearitySpec(
        f=lambda u: (1 - u**2) * u + 0.1,
        f_prime=lambda u: 1 - 3 * u**2,
        f_double_prime=lambda u: -6 * u,
        W=lambda u: 0.25 * (1 - u**2) ** 2 + 0.1 * (1 - u),
        name="unbalanced",
    )
    with pytest.raises(InvalidSpec):
        profile1d.solve_heteroclinic(bad)


def test_domain_too_small_rejected():
    with pytest.raises(InvalidSpec):
        profile1d.solve_heteroclinic(profile1d.cubic(), T=3.0, n=401)


def test_psi0_overflow_guard(cubic_profile):
    import dataclasses

    p = cubic_profile
    wide = dataclasses.replace(
        p, T=300.0, t=np.linspace(-300, 300, 2001),
        w=np.tanh(np.linspace(-300, 300, 2001) / np.sqrt(2)),
        _splines={},
    )
    with pytest.raises(QuadratureUnderflow):
        profile1d.corrector_psi0(wide)


def test_csv_roundtrip(tmp_path, cubic_profile):
    csv = tmp_path / "profile.csv"
    hdr = tmp_path / "profile.json"
    cubic_profile.save(csv, hdr)
    data = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert data.shape == (cubic_profile.n, 6)
    assert np.allclose(data[:, 1], cubic_profile.w)


def test_evaluators_extend_by_tails(cubic_profile):
    p = cubic_profile
    t = np.array([p.T + 1.0, -(p.T + 1.0)])
    w = p.w_at(t)
    assert abs(w[0] - np.tanh(t[0] / np.sqrt(2))) < 1e-10
    assert abs(w[1] - np.tanh(t[1] / np.sqrt(2))) < 1e-10
    assert p.w_prime_at(np.array([p.T + 2.0]))[0] > 0
