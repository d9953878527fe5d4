import numpy as np
import pytest

from blowup_lab.profile import (ProfileBuilder, assemble_P, assemble_theta, build_expansion,
                                energy_expansion_defect, load_expansion, profile_mass_energy,
                                residual_Psi, series_indices)
from blowup_lab.radial import RadialFunction, norm


def test_series_indices():
    assert series_indices(1) == [(0, 0), (1, 0), (0, 1)]
    assert len(series_indices(3)) == 10


def test_beta00_formula(expansion2):
    b0 = float(expansion2.beta[0, 0])
    assert b0 > 0
    assert b0 == pytest.approx(expansion2.beta00_formula(), rel=1e-6)


def test_cplus_vanish_below_K(expansion2):
    for (j, k) in expansion2.indices:
        if j + k <= expansion2.K:
            assert expansion2.cplus[j, k] == 0


def test_relative_residuals_and_defect(expansion2):
    assert expansion2.max_residual(relative=True) < 1e-7
    assert expansion2.in_range_defect() < 1e-6


def test_profile_real_at_zero_b(expansion2):
    P = assemble_P(expansion2, 0.01, 0.0)
    assert np.all(P.values.imag == 0)
    Q = expansion2.bundle.Q
    assert float(norm(P - Q)) < 1e-2 * float(norm(Q))


def test_theta_leading_term(expansion2):
    lam = 1e-3
    th = assemble_theta(expansion2, lam, 0.0)
    lead = float(expansion2.beta[0, 0]) * lam ** expansion2.alpha
    assert th == pytest.approx(lead, rel=1e-2)


def test_mass_energy_phase_invariant(expansion2):
    m0, e0 = profile_mass_energy(expansion2, 0.05, 0.1, 0.0)
    m1, e1 = profile_mass_energy(expansion2, 0.05, 0.1, 1.3)
    assert m1 == pytest.approx(m0, rel=1e-13)
    assert e1 == pytest.approx(e0, rel=1e-10)


def test_residual_smaller_than_parameters(expansion2):
    a = expansion2.alpha
    b0 = float(expansion2.beta[0, 0])
    vals = []
    for s in (8.0, 12.0):
        b = 2 / (a * s)
        lam = (b * b * (2 - a) / (2 * b0)) ** (1 / a)
        _, v = residual_Psi(expansion2, lam, b)
        vals.append((b * b + lam ** a, v))
    (x0, y0), (x1, y1) = vals
    assert y1 < y0
    # above the float64 floor the decay order is at least K + 2
    assert np.log(y0 / y1) / np.log(x0 / x1) > 3.7


def test_energy_expansion_defect_small(expansion2):
    lam = 0.01
    b = 0.05
    d = energy_expansion_defect(expansion2, lam, b, renormalize=True)
    scale = float(expansion2.bundle.virial2) * b * b / lam ** 2
    assert abs(d) < 0.05 * scale


def test_save_load_round_trip(expansion2, tmp_path):
    expansion2.save(tmp_path / "prof")
    back = load_expansion(tmp_path / "prof")
    assert back.indices == expansion2.indices
    for ix in expansion2.indices:
        assert back.beta[ix] == float(expansion2.beta[ix])
        assert np.array_equal(back.Pjk_plus[ix].values, expansion2.Pjk_plus[ix].values)
        assert np.array_equal(back.Pjk_minus[ix].values, expansion2.Pjk_minus[ix].values)


def test_validation(bundle2):
    with pytest.raises(ValueError):
        build_expansion(bundle2, 1.2)
    with pytest.raises(ValueError):
        build_expansion(bundle2, 0.3, K=-1)
    with pytest.raises(ValueError):
        assemble_P(build_expansion(bundle2, 0.3, K=0, Kprime=0), -0.1, 0.0)


def test_builder_estimator(bundle2):
    est = ProfileBuilder(sigma=0.3, K=1, Kprime=0).fit(bundle=bundle2)
    assert est.get_params()["K"] == 1
    out = est.transform([[0.01, 0.0], [0.02, 0.1]])
    assert out.shape == (2, bundle2.grid.M)
    assert est.beta_ == pytest.approx(est.expansion_.beta00_formula(), rel=1e-6)
