import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from rdmc import detect, modulate as M, perturb as P
from rdmc.errors import TimeOutsideSlot, ValidationError
from rdmc.fields import Scenario, SpeciesSystem, Waveform, make_grid

MAC_3D = SpeciesSystem(3, 1e-9, 1e-9, 1e-9, 1e-23)
MAC_GEO = M.Geometry(d_b=(1e-4, 0, 0), d_r=(5e-5, 0, 0))


def _brute_triple_1d(d_out, d1, d2, x1, x2, xo, t1, t2, T):
    """Plain double quadrature over (space, time) of the product of three kernels."""
    phi = lambda D, x, t: math.exp(-x * x / (4 * D * t)) / math.sqrt(4 * math.pi * D * t) if t > 0 else 0.0
    f = lambda x, s: phi(d_out, xo - x, T - s) * phi(d1, x - x1, s - t1) * phi(d2, x - x2, s - t2)
    half = 30 * math.sqrt(max(d1, d2, d_out) * T)
    val, _ = integrate.dblquad(f, max(t1, t2), T, x1 - half, x1 + half, epsabs=0, epsrel=1e-9)
    return val


@pytest.mark.parametrize("args", [
    (0.3, 1.0, 0.5, 0.0, 0.4, 0.1, 0.1, 0.3, 1.0),
    (1.0, 0.2, 0.7, -0.2, 0.3, 0.5, 0.0, 0.0, 2.0),
])
def test_triple_response_against_quadrature(args):
    d_out, d1, d2, x1, x2, xo, t1, t2, T = args
    got = M.triple_response(1, d_out, d1, d2, [x1], [x2], [xo], t1, t2, T)
    assert got == pytest.approx(_brute_triple_1d(*args), rel=1e-7)


def test_response_causality_and_slot():
    assert M.response_g(MAC_3D, MAC_GEO, 3.0, 3.0, 3.0) == 0.0
    assert M.response_g(MAC_3D, MAC_GEO, 1.0, 3.0, 3.0) == 0.0
    with pytest.raises(TimeOutsideSlot):
        M.response_g(MAC_3D, MAC_GEO, -0.1, 1.0, 3.0)
    with pytest.raises(TimeOutsideSlot):
        M.response_g(MAC_3D, MAC_GEO, 0.0, 3.5, 3.0)


def test_response_swap_symmetry():
    geo = M.Geometry(d_b=(1e-4, 0, 0), d_r=(5e-5, 0, 0))
    swapped = M.Geometry(d_a=(1e-4, 0, 0), d_b=(0, 0, 0), d_r=(5e-5, 0, 0))
    for ti, tj in ((0.0, 1.0), (0.4, 0.2), (1.5, 0.0)):
        a = M.response_g(MAC_3D, geo, ti, tj, 3.0)
        b = M.response_g(MAC_3D, swapped, tj, ti, 3.0)
        assert a == pytest.approx(b, rel=1e-9)


def test_response_matches_series_1d():
    sys_ = SpeciesSystem(1, 1e-9, 1e-9, 1e-9, 1e-23)
    g = make_grid(1, 6.4e-4, 512, 3.0, 300)
    src = {"A": Waveform.impulses([(0.0, 1.0)], (0.0,)), "B": Waveform.impulses([(1.0, 1.0)], (1e-4,))}
    ser = P.solve_series(sys_, g, src, 1, probes=[(5e-5,)])
    c = sys_.lam * ser.orders["C"][1][-1, 0]
    assert c == pytest.approx(M.response_g(sys_, MAC_GEO, 0.0, 1.0, 3.0), rel=0.01)


@pytest.mark.slow
def test_response_matches_series_3d():
    g = make_grid(3, 2e-4, 80, 3.0, 150)  # dx = 5 um
    src = {"A": Waveform.impulses([(0.0, 1.0)], (0, 0, 0)), "B": Waveform.impulses([(1.0, 1.0)], (1e-4, 0, 0))}
    ser = P.solve_series(MAC_3D, g, src, 1, probes=[(5e-5, 0, 0)])
    c = MAC_3D.lam * ser.orders["C"][1][-1, 0]
    assert c == pytest.approx(M.response_g(MAC_3D, MAC_GEO, 0.0, 1.0, 3.0), rel=0.01)


# --- tables and designs -------------------------------------------------------------

def _table(n=7, T=3.0):
    ts = np.linspace(0, T, n)
    vals = np.add.outer(ts, 2 * ts) + 1.0
    return M.ResponseTable(ts, vals)


def test_table_interpolation():
    tab = _table()
    assert tab(0.5, 1.0) == pytest.approx(1 + 0.5 + 2.0)  # bilinear data is reproduced exactly
    assert tab(3.0, 3.0) == pytest.approx(10.0)
    const = M.ResponseTable(np.linspace(0, 2, 5), np.full((5, 5), 3.0))
    assert const.double_integral() == pytest.approx(12.0)


def _design(scale_a=1.0, scale_b=1.0, s=10.0):
    return M.MacDesign(
        [[0.0, 1.0], [0.5, 2.0]], np.array([[1.0, 2.0], [3.0, 0.5]]) * scale_a,
        [[1.5, 0.2], [2.5, 0.0]], np.array([[0.5, 1.0], [2.0, 2.0]]) * scale_b,
        s, s, volume=1.0, T=3.0,
    )


def test_rhos_zero_and_doubling():
    tab = _table()
    zero = M.MacDesign(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), 1, 1, T=3.0)
    assert not np.any(M.mac_rhos(zero, tab))
    base = _design()
    d = base.a_amps.copy()
    d[0] *= 2
    doubled = M.MacDesign(base.a_times, d, base.b_times, base.b_amps, 10, 10, T=3.0)
    r0, r1 = M.mac_rhos(base, tab), M.mac_rhos(doubled, tab)
    assert r1[:2] == pytest.approx(2 * r0[:2])
    assert r1[2:] == pytest.approx(r0[2:])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_rhos_bilinear(ca, cb):
    tab = _table()
    base = M.mac_rhos(_design(), tab)
    got = M.mac_rhos(_design(ca, cb, s=100.0), tab)
    np.testing.assert_allclose(got, ca * cb * base, rtol=1e-12, atol=1e-300)


def test_sufficient_statistic():
    tab = _table()
    a = _design(2.0, 0.5)
    b = _design(1.0, 1.0)
    np.testing.assert_array_equal(M.mac_rhos(a, tab), M.mac_rhos(b, tab))
    assert M.mac_error(a, tab) == M.mac_error(b, tab)


def test_design_validation():
    z = np.zeros((2, 2))
    with pytest.raises(ValidationError):
        M.MacDesign(z, [[3, 3], [0, 0]], z, z, 5, 5, T=1.0)
    with pytest.raises(ValidationError):
        M.MacDesign(z, [[-1, 0], [0, 0]], z, z, 5, 5, T=1.0)
    with pytest.raises(TimeOutsideSlot):
        M.MacDesign([[0, 2], [0, 0]], z, z, z, 5, 5, T=1.0)
    d = _design()
    assert len(d.waveforms(MAC_GEO, 3)) == 4
    assert d.record()["a1_amp1"] == 3.0


# --- optimizers ---------------------------------------------------------------------------

SMALL = M.MacSearch(n_coarse=6, n_table=13, amp_levels=5, tol=1e-4, max_sweeps=6)


def test_mac_without_reaction_is_blind():
    sys_ = MAC_3D.with_(lam=0.0)
    res = M.optimize_mac(sys_, (1e7, 1e7), MAC_GEO, 3.0, 1e-11, SMALL)
    assert res.pe == pytest.approx(0.75)
    pulse = M.pulse_baseline(sys_, (1e7, 1e7), MAC_GEO, 3.0, 1e-11, levels=8, table=res.table)
    assert pulse.pe == pytest.approx(0.75)


@pytest.fixture(scope="module")
def mac_small():
    table = M.ResponseTable.build(MAC_3D, MAC_GEO, 3.0, SMALL.n_table)
    return table


@pytest.mark.parametrize("s", [3e6, 1e7])
def test_mac_beats_pulse_and_fits_budget(mac_small, s):
    res = M.optimize_mac(MAC_3D, (s, s), MAC_GEO, 3.0, 1e-11, SMALL, table=mac_small)
    pulse = M.pulse_baseline(MAC_3D, (s, s), MAC_GEO, 3.0, 1e-11, levels=16, table=mac_small)
    assert res.pe <= pulse.pe + 1e-12
    d = res.design
    assert np.all(d.a_amps.sum(1) <= s * (1 + 1e-9)) and np.all(d.b_amps.sum(1) <= s * (1 + 1e-9))
    assert max(pulse.amplitudes[:2]) <= s / 3.0 * (1 + 1e-12)
    # reported error is exact for the returned design
    assert res.pe == pytest.approx(M.mac_error(d, mac_small), rel=1e-12)
    assert res.history[-1][1] == pytest.approx(res.pe, rel=1e-6)


def test_pulse_equal_levels_are_blind(mac_small):
    kint = mac_small.double_integral()
    rho = 1e-11 * kint * 1e6 * 1e6
    assert detect.mary_error_prob(detect.HypothesisSet((rho,) * 4)) == pytest.approx(0.75)


def test_warm_start_keeps_quality(mac_small):
    first = M.optimize_mac(MAC_3D, (3e6, 3e6), MAC_GEO, 3.0, 1e-11, SMALL, table=mac_small)
    d = first.design
    warm = M.MacDesign(d.a_times, d.a_amps, d.b_times, d.b_amps, 6e6, 6e6, 1e-11, 3.0)
    res = M.optimize_mac(MAC_3D, (6e6, 6e6), MAC_GEO, 3.0, 1e-11, SMALL, table=mac_small, start=warm)
    assert res.pe <= M.mac_error(warm, mac_small) + 1e-15


# --- amplification ------------------------------------------------------------------------

def _amp_setup(lam=0.0, gamma=1.0):
    sys_ = SpeciesSystem(1, 1e-9, 1e-10, 2e-10, lam, gamma=gamma, beta=2, scenario=Scenario.AMPLIFY_ABC)
    g = make_grid(1, 1e-3, 200, 10.0, 100)
    geo = M.Geometry(d_b=(0.0,), d_r=(1.5e-4,))
    return sys_, g, geo


def test_amplify_linear_case_peaks_at_kernel_max():
    sys_, g, geo = _amp_setup()
    res = M.optimize_amplify(sys_, (1e6, 0.0), geo, g, 1e-3)
    t = g.times()
    resp = [P.K.eval_kernel(P.K.HeatKernel(1, sys_.d_a), 1.5e-4, g.t_end - s) for s in t]
    assert abs(res.t_a - t[int(np.argmax(resp))]) <= g.dt + 1e-12
    assert res.pe == pytest.approx(0.5 * math.exp(-1e-3 * res.rho1), rel=1e-9)


def test_amplify_model_against_series():
    sys_, g, geo = _amp_setup(lam=2e-16)
    noise = Waveform.impulses([(0.0, 5e5)], (5e-5,))
    model = M.AmplifyModel(sys_, g, geo, noise)
    n_a, n_b, s_a, s_b = 20, 0, 2e5, 4e5
    src = {
        "A": Waveform.impulses([(n_a * g.dt, s_a)], (0.0,)),
        "B": Waveform.impulses([(n_b * g.dt, s_b)], (0.0,)),
        "C": noise,
    }
    ser = P.solve_series(sys_, g, src, 2, probes=[(1.5e-4,)])
    a = P.assemble(ser, n=2, check="ignore")["A"][-1, 0]  # the receiver senses A
    assert model.rho1(n_a, n_b, s_a, s_b) == pytest.approx(a, rel=1e-9)


def test_amplify_needs_its_scenario():
    with pytest.raises(ValidationError):
        M.AmplifyModel(SpeciesSystem(1, 1, 1, 1, 0.0), make_grid(1, 1.0, 8, 1.0, 4), M.Geometry((0.0,)))


# --- two-way ----------------------------------------------------------------------------------

def _twoway(lam):
    return SpeciesSystem(3, 1e-9, 1.1e-10, 1e-10, lam, scenario=Scenario.TWO_WAY_AB)


def test_twoway_linear_case():
    d_b = (1e-4, 1e-4, 1e-4)
    T = 10.0
    res = M.optimize_twoway(_twoway(0.0), (5e8, 2.4e9), d_b, T, 2.5e-14)
    m = M.TwoWayModel(_twoway(0.0), d_b, T, 2.5e-14)
    _, lost_a, _, lost_b = m.partial_means(5e8, 2.4e9, 0.0, 0.0)
    assert lost_a == 0.0 and lost_b == 0.0
    r2 = 3e-8
    # the 3D kernel at distance r peaks at elapsed time r^2 / (6 D)
    for t, D in ((res.design.t_a, 1e-9), (res.design.t_b, 1.1e-10)):
        assert t == pytest.approx(max(0.0, T - r2 / (6 * D)), abs=1e-3)
    assert res.design.a1 == pytest.approx(5e8) and res.design.b1 == pytest.approx(2.4e9)


def test_twoway_reaction_hurts_cross_terms():
    d_b = (1e-4, 1e-4, 1e-4)
    design = M.TwoWayDesign(5e8, 2.4e9, 0.0, 0.0, 5e8, 2.4e9)
    lo = M.TwoWayModel(_twoway(1e-30), d_b, 10.0, 2.5e-14)
    hi = M.TwoWayModel(_twoway(1e-29), d_b, 10.0, 2.5e-14)
    z_lo, z_hi = lo.partial_means(5e8, 2.4e9, 0.0, 0.0), hi.partial_means(5e8, 2.4e9, 0.0, 0.0)
    assert z_hi[1] == pytest.approx(10 * z_lo[1]) and z_hi[3] == pytest.approx(10 * z_lo[3])
    j_lo, j_hi = lo.log_js(design), hi.log_js(design)
    assert j_hi[1] > j_lo[1] and j_hi[3] > j_lo[3]
    # the direct channels do not see the reaction at first order
    assert j_hi[0] == j_lo[0] and j_hi[2] == j_lo[2]


def test_twoway_argument_checks():
    with pytest.raises(ValidationError):
        M.TwoWayDesign(6e8, 1.0, 0.0, 0.0, 5e8, 2.4e9)
    with pytest.raises(ValidationError):
        M.optimize_twoway(_twoway(0.0), (1.0, 1.0), (1e-4, 0, 0), 1.0, 1.0, weights=(1, -1, 1, 1))
    with pytest.raises(ValidationError):
        M.TwoWayModel(MAC_3D, (1e-4, 0, 0), 1.0, 1.0)
