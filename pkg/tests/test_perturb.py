import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdmc import fdm as F, perturb as P
from rdmc.errors import (
    ConvergenceRadiusExceeded, MissingPriorOrder, NegativeConcentration, OrderUnavailable, SubintervalTooCoarse,
)
from rdmc.fields import Field, Scenario, SpeciesSystem, Waveform, discretize_waveform, make_grid

from conftest import gaussian_bump

# exact rational recursion, evaluated once with fractions
ALPHAS = [Fraction(1), Fraction(1, 3), Fraction(2, 15), Fraction(17, 315), Fraction(62, 2835),
          Fraction(1382, 155925), Fraction(21844, 6081075)]


def test_alpha_recursion_values():
    a = P.example1_alphas(6)
    assert a == pytest.approx([float(x) for x in ALPHAS], rel=1e-14)


def test_alpha_bounds_to_twenty():
    a = P.example1_alphas(20)
    i = np.arange(21)
    assert np.all(a >= (1 / 3) ** i * (1 - 1e-14))
    assert np.all(a <= (1 / 2) ** i * (1 + 1e-14))


def test_oracle_trivial_cases():
    t = np.linspace(0, 2, 9)
    np.testing.assert_array_equal(P.example1_oracle(0.0, t, 4), t)
    assert P.example1_exact(0.0, 1.5) == 1.5
    # partial sums of tanh converge to it inside the radius
    assert P.example1_oracle(0.1, 1.0, 20) == pytest.approx(P.example1_exact(0.1, 1.0), rel=1e-14)


def test_order_fields_match_example1(uniform_unit):
    sys_, g, src = uniform_unit
    g = make_grid(1, 1.0, 32, 1.0, 1000)
    ser = P.solve_series(sys_, g, src, 3)
    t = g.times()
    for i in range(4):
        want = (-1) ** i * float(ALPHAS[i]) * t ** (2 * i + 1)
        got = ser.orders["A"][i][:, g.center]
        # linear-in-time source quadrature: relative error ~ dt^2 / t^2, so start at t = 0.1
        np.testing.assert_allclose(got[100:], want[100:], rtol=1e-2)
    np.testing.assert_array_equal(ser.orders["A"][2], ser.orders["B"][2])


def test_assemble_matches_oracle(uniform_unit):
    sys_, g, src = uniform_unit
    sys_ = sys_.with_(lam=0.05)
    ser = P.solve_series(sys_, g, src, 5)
    got = P.assemble(ser, n=5)["A"].values[1:, 3]
    want = P.example1_oracle(0.05, g.times()[1:], 5)
    np.testing.assert_allclose(got, want, rtol=1e-6)


def test_assemble_trivial_cases(uniform_unit):
    sys_, g, src = uniform_unit
    ser = P.solve_series(sys_, g, src, 3)
    zero = ser.orders["A"][0]
    np.testing.assert_array_equal(P.assemble(ser, n=0)["A"].values, zero)
    np.testing.assert_array_equal(P.assemble(ser, lam=0.0, n=3)["A"].values, zero)
    with pytest.raises(OrderUnavailable):
        P.assemble(ser, n=4)


def test_example1_symmetry(uniform_unit):
    sys_, g, src = uniform_unit
    ser = P.solve_series(sys_, g, src, 5)
    for i in range(6):
        np.testing.assert_allclose(ser.orders["A"][i], ser.orders["B"][i], rtol=1e-12, atol=0)


def test_point_source_zero_order_is_kernel():
    g = make_grid(1, 6e-4, 600, 2.0, 20)
    sys_ = SpeciesSystem(1, 1e-9, 1e-9, 1e-9, 1e-20)
    q = 3e5
    out = P.solve_order0(sys_, Waveform.impulses([(0.0, q)], (0.0,)), None, grid=g)
    want = q * P.K.lattice_kernel(g, 1e-9, 2.0)
    np.testing.assert_allclose(out["A"].values[-1], want, rtol=1e-10, atol=1e-10 * want.max())
    assert not np.any(out["B"].values) and not np.any(out["C"].values)


def test_order_by_order_matches_march():
    g = make_grid(1, 2.0, 32, 1.0, 20)
    sys_ = SpeciesSystem(1, 0.05, 0.03, 0.02, 0.4, gamma=0.3)
    fa, fb = gaussian_bump(g, 0.2, 0.5), gaussian_bump(g, -0.3, 0.4, 2.0)
    fa = np.broadcast_to(fa, g.shape)
    fb = np.broadcast_to(fb, g.shape)
    ser = P.solve_series(sys_, g, {"A": fa, "B": fb}, 2)
    o0 = P.solve_order0(sys_, fa, fb, grid=g)
    assert not np.any(o0["C"].values)
    o1 = P.solve_order_i(sys_, {s: [o0[s]] for s in "ABC"}, 1)
    o2 = P.solve_order_i(sys_, {s: [o0[s], o1[s]] for s in "ABC"}, 2)
    for s in "ABC":
        np.testing.assert_allclose(o1[s].values, ser.orders[s][1], rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(o2[s].values, ser.orders[s][2], rtol=1e-10, atol=1e-14)
    # first-order C is the kernel applied to A0 B0 (C0 is zero)
    c1 = P.K.duhamel(g, sys_.d_c, o0["A"].values * o0["B"].values)
    np.testing.assert_allclose(o1["C"].values, c1, rtol=1e-12)
    with pytest.raises(MissingPriorOrder):
        P.solve_order_i(sys_, {s: [o0[s]] for s in "ABC"}, 2)


def test_alternating_signs_mac():
    g = make_grid(2, 1.0, 16, 1.0, 10)
    sys_ = SpeciesSystem(2, 0.02, 0.03, 0.01, 1.0)
    fa = np.broadcast_to(gaussian_bump(g, 0.1, 0.3), g.shape)
    fb = np.broadcast_to(gaussian_bump(g, -0.1, 0.3), g.shape)
    ser = P.solve_series(sys_, g, {"A": fa, "B": fb}, 4)
    for i in range(5):
        peak = np.max(np.abs(ser.orders["A"][i]))
        assert np.all((-1) ** i * ser.orders["A"][i] >= -1e-12 * peak)


# --- radius ---------------------------------------------------------------------------------

def test_bounds_unit_sources():
    b = P.convergence_bounds(SpeciesSystem(1, 1, 1, 1, 0.1), 1.0, 1.0, T=1.0)
    assert b.m0 == 1.0
    assert b.lambda_max == pytest.approx(1 / 12)


def test_bounds_zero_and_doubling():
    sys_ = SpeciesSystem(1, 1, 1, 1, 0.1, gamma=0.5)
    assert P.convergence_bounds(sys_.with_(gamma=0.0), 0.0, 0.0, T=1.0).lambda_max == math.inf
    assert P.convergence_bounds(sys_, 0.0, 0.0, T=1.0).lambda_max == pytest.approx(1 / (10 * 0.5))
    one = P.convergence_bounds(sys_, 2.0, 1.0, T=1.0).lambda_max
    two = P.convergence_bounds(sys_, 2.0, 1.0, T=2.0).lambda_max
    assert two <= one / 2


def test_bounds_vacuous_for_impulses():
    g = make_grid(1, 1.0, 8, 1.0, 4)
    b = P.convergence_bounds(SpeciesSystem(1, 1, 1, 1, 0.1), Waveform.impulses([(0, 1.0)], (0.0,)), 0.0, grid=g)
    assert b.lambda_max == 0.0 and math.isinf(b.m0)


def test_solve_refuses_outside_radius(uniform_unit):
    sys_, g, src = uniform_unit
    with pytest.raises(ConvergenceRadiusExceeded):
        P.solve(sys_, g, src, 2)
    rep = P.solve(sys_, g, src, 2, auto_split=True)
    assert rep.k == math.ceil(0.5 * 12) + 1
    assert rep.metadata()["lambda_max"] == pytest.approx(1 / 12)
    rep = P.solve(sys_, g, src, 2, override=True)
    assert rep.k == 1 and rep.remainder["A"] > 0


def test_remainder_estimate_scales(uniform_unit):
    sys_, g, src = uniform_unit
    ser = P.solve_series(sys_.with_(lam=0.01), g, src, 3)
    r1 = P.remainder_estimate(ser, 0.01, 2)["A"]
    r2 = P.remainder_estimate(ser, 0.005, 2)["A"]
    assert r1 / r2 == pytest.approx(8.0, rel=0.05)


# --- splitting ------------------------------------------------------------------------------

def test_split_once_is_plain_solve(uniform_unit):
    sys_, g, src = uniform_unit
    sys_ = sys_.with_(lam=0.05)
    one = P.solve_split(sys_, g, src, 1, 2)
    plain = P.assemble(P.solve_series(sys_, g, src, 2), n=2)
    for s in "ABC":
        np.testing.assert_array_equal(one[s].values, plain[s].values)


@pytest.mark.parametrize("k", [2, 5])
def test_split_exact_without_reaction(k):
    g = make_grid(1, 1e-3, 200, 4.0, 40)
    sys_ = SpeciesSystem(1, 1e-9, 5e-10, 2e-10, 0.0)
    src = {"A": Waveform.impulses([(0.0, 1e6), (1.5, 2e6)], (0.0,)), "B": Waveform.pulse(3e5, 0.5, 3.0, (1e-4,))}
    split = P.solve_split(sys_, g, src, k, 1)
    plain = P.assemble(P.solve_series(sys_, g, src, 0), n=0)
    for s in "AB":
        ref = plain[s].values
        np.testing.assert_allclose(split[s].values, ref, rtol=1e-8, atol=1e-8 * ref.max())


def test_split_too_fine():
    with pytest.raises(SubintervalTooCoarse):
        P.split_points(4, 5)


def test_split_recovers_tanh(uniform_unit):
    sys_, g, src = uniform_unit
    sys_ = sys_.with_(lam=3.0)
    sp = P.solve_split(sys_, g, src, 8, 2)
    exact = P.example1_exact(3.0, g.times())
    np.testing.assert_allclose(sp["A"].values[:, 5], exact, rtol=0.02)


# --- Picard ----------------------------------------------------------------------------------

def test_picard_first_steps(uniform_unit):
    sys_, g, src = uniform_unit
    sys_ = sys_.with_(lam=0.05)
    ser = P.solve_series(sys_, g, src, 1)
    one = P.picard_iterate(sys_, g, src, 1)
    np.testing.assert_array_equal(one["A"].values, ser.orders["A"][0])
    assert not np.any(one["C"].values)
    two = P.picard_iterate(sys_, g, src, 2)
    asm = P.assemble(ser, n=1)
    for s in "ABC":
        np.testing.assert_allclose(two[s].values, asm[s].values, rtol=1e-13, atol=1e-15)


def test_picard_idempotent_without_reaction():
    g = make_grid(1, 1.0, 16, 1.0, 10)
    sys_ = SpeciesSystem(1, 0.01, 0.02, 0.03, 0.0)
    src = {"A": np.broadcast_to(gaussian_bump(g, 0.0, 0.3), g.shape), "B": 0.5}
    one = P.picard_iterate(sys_, g, src, 1)
    two = P.picard_step(sys_, one, src)
    for s in "ABC":
        np.testing.assert_array_equal(one[s].values, two[s].values)


@pytest.mark.parametrize("n", [2, 3])
def test_picard_prefix_order(uniform_unit, n):
    sys_, g, src = uniform_unit
    gaps = []
    for lam in (0.02, 0.01):
        s = sys_.with_(lam=lam)
        pic = P.picard_iterate(s, g, src, n + 1)["A"].values
        asm = P.assemble(P.solve_series(s, g, src, n), n=n)["A"].values
        gaps.append(np.max(np.abs(pic - asm)))
    assert gaps[0] / gaps[1] >= 0.8 * 2 ** (n + 1)


# --- other scenarios against the finite-difference oracle ---------------------------------------

def _smooth_sources(g):
    fa = np.broadcast_to(gaussian_bump(g, 0.1, 0.3, 2.0), g.shape)
    fb = np.broadcast_to(gaussian_bump(g, -0.2, 0.3, 1.5), g.shape)
    return fa, fb


@pytest.mark.parametrize("scenario,gamma,beta", [
    (Scenario.MAC_ABC, 0.5, 1), (Scenario.AMPLIFY_ABC, 1.0, 2), (Scenario.TWO_WAY_AB, 0.0, 1),
])
def test_series_tracks_fdm(scenario, gamma, beta):
    g = make_grid(1, 2.0, 40, 1.0, 400)
    sys_ = SpeciesSystem(1, 0.02, 0.015, 0.01, 0.05, gamma=gamma, beta=beta, scenario=scenario)
    fa, fb = _smooth_sources(g)
    src = {"A": fa, "B": fb}
    init = None
    if scenario is Scenario.AMPLIFY_ABC:
        src["C"] = np.broadcast_to(gaussian_bump(g, 0.0, 0.4, 0.5), g.shape)
    ser = P.solve_series(sys_, g, src, 3)
    fd = F.fdm_solve(sys_, src, F.FdmConfig(g, 0.2), initial=init)
    for s in sys_.species:
        ex = fd[s].values
        err = [np.max(np.abs(P.assemble(ser, n=n, check="ignore")[s].values - ex)) / np.max(np.abs(ex))
               for n in (0, 1, 2)]
        assert err[2] < 2e-3
        assert err[2] < err[0]


def test_amplify_initial_state_carried():
    g = make_grid(1, 2.0, 40, 0.5, 100)
    sys_ = SpeciesSystem(1, 0.02, 0.015, 0.01, 0.05, gamma=1.0, beta=2, scenario=Scenario.AMPLIFY_ABC)
    fa, fb = _smooth_sources(g)
    c0 = gaussian_bump(g, 0.0, 0.3, 1.0)
    ser = P.solve_series(sys_, g, {"A": fa, "B": fb}, 3, initial={"C": c0})
    fd = F.fdm_solve(sys_, {"A": fa, "B": fb}, F.FdmConfig(g, 0.2), initial={"C": c0})
    got = P.assemble(ser, n=3, check="ignore")["C"].values
    assert np.max(np.abs(got - fd["C"].values)) / np.max(fd["C"].values) < 2e-3


def test_negative_check_modes():
    g = make_grid(1, 1.0, 8, 1.0, 4)
    sys_ = SpeciesSystem(1, 1, 1, 1, 100.0)
    ser = P.solve_series(sys_, g, {"A": 1.0, "B": 1.0}, 1)
    with pytest.raises(NegativeConcentration):
        P.assemble(ser, check="raise")
    with pytest.warns(P.TruncationWarning):
        P.assemble(ser, check="warn")
    P.assemble(ser, check="ignore")


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_first_order_bilinear_in_amounts(qa, qb, lam):
    g = make_grid(1, 1.0, 16, 0.5, 10)
    sys_ = SpeciesSystem(1, 0.05, 0.05, 0.05, lam)
    base = {"A": np.broadcast_to(gaussian_bump(g, 0.1, 0.3), g.shape),
            "B": np.broadcast_to(gaussian_bump(g, -0.1, 0.3), g.shape)}
    ref = P.solve_series(sys_, g, base, 1).orders["C"][1]
    scaled = P.solve_series(sys_, g, {"A": qa * base["A"], "B": qb * base["B"]}, 1).orders["C"][1]
    np.testing.assert_allclose(scaled, qa * qb * ref, rtol=1e-9, atol=1e-12 * max(np.max(np.abs(ref)), 1e-300))


def test_discretized_field_source_equivalent():
    g = make_grid(1, 1.0, 16, 1.0, 10)
    sys_ = SpeciesSystem(1, 0.05, 0.05, 0.05, 0.0)
    w = Waveform.pulse(2.0, 0.0, 1.0, (0.125,))
    a = P.solve_series(sys_, g, {"A": w}, 0).orders["A"][0]
    dens = discretize_waveform(w, g).values.copy()
    dens[0] *= 2
    dens[-1] *= 2  # undo the trapezoid end weights: the solver samples the rate
    b = P.solve_series(sys_, g, {"A": Field(g, "A", dens)}, 0).orders["A"][0]
    np.testing.assert_allclose(a, b, rtol=1e-12)
