import math

import numpy as np
import pytest

from blowup_lab.law import LawConstants, b_app, lambda_app, t_of_s
from blowup_lab.modulation import (DecompositionError, ModulationDecomposer, ModulationState,
                                   ProfileInterpolant, decompose, energy_H, initial_guess,
                                   mod_vector, rescaled_times)
from blowup_lab.profile import assemble_theta
from blowup_lab.radial import RadialFunction, RadialGrid

GX = RadialGrid(2, 5e-4, 1.5)
LAM, B, GAMMA = 0.05, 0.08, 0.7


@pytest.fixture(scope="module")
def interp(expansion2):
    return ProfileInterpolant(expansion2)


def profile_state(interp, lam=LAM, b=B, gamma=GAMMA, eps=None):
    y = GX.nodes / lam
    P = interp.evaluate(y, lam, b)[0]
    if eps is not None:
        P = P + eps(y)
    return RadialFunction(GX, P / lam * np.exp(-1j * b * y * y / 4 + 1j * gamma))


def test_interpolant_matches_grid_values(expansion2, interp):
    r = expansion2.grid.nodes
    P, LP, rho = interp.evaluate(r, 0.0, 0.0)
    assert np.max(np.abs(P.real - expansion2.bundle.Q.values)) < 1e-14
    assert np.allclose(rho, expansion2.pair.rho.values, atol=1e-14)
    assert np.all(interp.evaluate(np.array([30.0]), 0.01, 0.0)[0] == 0)


def test_exact_profile_recovered(interp):
    u = profile_state(interp)
    st = decompose(u, (1.1 * LAM, 0.9 * B, GAMMA - 0.2), interp)
    assert st.lam == pytest.approx(LAM, rel=1e-9)
    assert st.b == pytest.approx(B, abs=1e-9)
    assert st.gamma == pytest.approx(GAMMA, abs=1e-9)
    assert st.eps_norms()["H1"] < 1e-7
    assert st.reconstruction_error < 1e-12
    assert max(abs(x) for x in st.ortho_residuals) < 1e-10


def test_two_guesses_agree_with_perturbation(interp):
    bump = lambda y: 1e-3 * np.exp(-(y - 1.0) ** 2) * (1 + 0.5j)  # noqa: E731
    u = profile_state(interp, eps=bump)
    a = decompose(u, (1.08 * LAM, 1.1 * B, GAMMA + 0.1), interp)
    c = decompose(u, (0.93 * LAM, 0.85 * B, GAMMA - 0.15), interp)
    assert abs(a.lam - c.lam) < 1e-8 * LAM
    assert abs(a.b - c.b) < 1e-8 and abs(a.gamma - c.gamma) < 1e-8
    assert a.valid


def test_phase_equivariance(interp):
    u = profile_state(interp)
    st = decompose(u, (LAM, B, GAMMA), interp)
    rot = decompose(RadialFunction(GX, u.values * np.exp(0.4j)), (LAM, B, GAMMA + 0.4), interp)
    assert rot.gamma == pytest.approx(st.gamma + 0.4, abs=1e-10)
    assert rot.lam == pytest.approx(st.lam, rel=1e-10)


def test_initial_guess_close(expansion2, interp):
    lam, b, gamma = initial_guess(profile_state(interp), float(expansion2.bundle.grad2))
    assert lam == pytest.approx(LAM, rel=0.05)
    assert b == pytest.approx(B, rel=0.1)
    assert gamma == pytest.approx(GAMMA, abs=0.05)


def test_bad_guess_rejected(interp):
    with pytest.raises(DecompositionError):
        decompose(profile_state(interp), (-1.0, 0.0, 0.0), interp)


def test_energy_H_vanishes_at_profile(expansion2, interp):
    st = decompose(profile_state(interp), (LAM, B, GAMMA), interp)
    assert abs(energy_H(st, expansion2)) < 1e-12


def test_rescaled_time_of_constant_scale():
    t = np.linspace(0, 1, 11)
    s = rescaled_times(t, np.full(11, 0.5), 2.0)
    assert np.allclose(s, 2.0 + 4 * t)


def test_mod_vanishes_on_exact_law(expansion2):
    lc = LawConstants.from_expansion(expansion2)
    s1 = 200.0
    ss = np.linspace(s1, 2 * s1, 200)
    states = []
    for s in ss:
        st = ModulationState(float(lambda_app(s, lc)), float(b_app(s, lc)), s - s1,
                             RadialFunction(GX, np.zeros(GX.M, complex)), (0, 0, 0), 0.0)
        st.t = t_of_s(s, s1, -0.05, lc)
        states.append(st)
    mods = mod_vector(states, expansion2, s1)
    assert mods[-1].s == pytest.approx(2 * s1, rel=1e-6)
    inner_ = mods[5:-5]
    assert max(abs(m.m1) for m in inner_) < 1e-8
    assert max(abs(m.m3) for m in inner_) < 1e-8
    # on the law b_s + b^2 = beta lambda^alpha, so m2 is minus the higher-order part of theta
    st = states[100]
    expect = float(expansion2.beta[0, 0]) * st.lam ** lc.alpha - assemble_theta(expansion2, st.lam, st.b)
    assert mods[100].m2 == pytest.approx(expect, rel=1e-3)


def test_decomposer_estimator(expansion2, interp):
    samples = [(0.0, profile_state(interp)), (1e-4, profile_state(interp, lam=0.049))]
    est = ModulationDecomposer(expansion2).fit(samples)
    out = est.transform()
    assert out.shape == (2, 3)
    assert out[1, 0] == pytest.approx(0.049, rel=1e-8)
    with pytest.raises(ValueError):
        ModulationDecomposer().fit(samples)
