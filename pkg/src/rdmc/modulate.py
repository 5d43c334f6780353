"""Release-waveform design for the three channel types.

MAC: two transmitters (A at ``d_a``, B at ``d_b``) and a receiver counting C
at ``d_r``. At first order the receiver mean is bilinear in the two release
waveforms through the response ``G(t_i, t_j)``, so the search only needs a
table of G. Amplification (A + C, B + beta C) and two-way (A + B) channels
reduce to searches over release times, and amplitudes for the two-way case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from . import detect
from . import kernels as K
from ._accel import USE_NUMBA, jit
from .errors import TimeOutsideSlot, ValidationError
from .fields import Scenario, SpaceTimeGrid, SpeciesSystem, Waveform, as_point


@dataclass(frozen=True)
class Geometry:
    d_b: tuple
    d_r: tuple = (0.0,)
    d_a: tuple = (0.0,)

    def points(self, dim: int):
        """Positions as ``dim``-vectors; short tuples are zero padded."""
        pad = lambda p: as_point(tuple(p) + (0.0,) * max(0, dim - len(p)), dim)
        return pad(self.d_a), pad(self.d_b), pad(self.d_r)


# --- Gaussian product response ---------------------------------------------------

def _gauss(r2: float, var: float, dim: int) -> float:
    if var <= 0.0:
        return 0.0
    return (2.0 * math.pi * var) ** (-dim / 2.0) * math.exp(-r2 / (2.0 * var))


def triple_response(dim, d_out, d_1, d_2, x1, x2, x_out, t1, t2, T, lam=1.0, epsrel=1e-10) -> float:
    """lam * int phi_out(x_out - x, T - s) phi_1(x - x1, s - t1) phi_2(x - x2, s - t2) dx ds.

    The space integral of three Gaussians is closed form; the remaining time
    integral over s in (max(t1, t2), T) is done by adaptive quadrature.
    """
    x1, x2, xo = (np.asarray(v, float) for v in (x1, x2, x_out))
    sep2 = float(np.sum((x1 - x2) ** 2))
    s0 = max(t1, t2)
    if s0 >= T:
        return 0.0

    def integrand(s):
        va = 2.0 * d_1 * (s - t1)
        vb = 2.0 * d_2 * (s - t2)
        v = va + vb
        if v <= 0.0:
            return 0.0
        mu = (x1 * vb + x2 * va) / v
        prod_var = va * vb / v
        vc = 2.0 * d_out * (T - s)
        return _gauss(sep2, v, dim) * _gauss(float(np.sum((xo - mu) ** 2)), vc + prod_var, dim)

    val, _ = quad(integrand, s0, T, epsabs=0.0, epsrel=epsrel, limit=400)
    return lam * val


def response_g(sys: SpeciesSystem, geometry: Geometry, t_i: float, t_j: float, T: float) -> float:
    """First-order C at ``d_r`` and time T per unit A at ``d_a`` (t_i) and unit B at ``d_b`` (t_j)."""
    if not (0 <= t_i <= T and 0 <= t_j <= T):
        raise TimeOutsideSlot(f"release times ({t_i}, {t_j}) outside [0, {T}]")
    xa, xb, xr = geometry.points(sys.dim)
    return triple_response(sys.dim, sys.d_c, sys.d_a, sys.d_b, xa, xb, xr, t_i, t_j, T, sys.lam)


@jit
def _bilinear(table, step, ti, tj):
    n = table.shape[0]
    u = ti / step
    v = tj / step
    i = min(max(int(math.floor(u)), 0), n - 2)
    j = min(max(int(math.floor(v)), 0), n - 2)
    fu = min(max(u - i, 0.0), 1.0)
    fv = min(max(v - j, 0.0), 1.0)
    return ((1 - fu) * (1 - fv) * table[i, j] + fu * (1 - fv) * table[i + 1, j]
            + (1 - fu) * fv * table[i, j + 1] + fu * fv * table[i + 1, j + 1])


@dataclass(frozen=True)
class ResponseTable:
    """G on a uniform (t_i, t_j) grid over [0, T]."""

    times: np.ndarray
    values: np.ndarray

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @classmethod
    def build(cls, sys: SpeciesSystem, geometry: Geometry, T: float, n: int = 61) -> "ResponseTable":
        ts = np.linspace(0.0, T, n)
        vals = np.array([[response_g(sys, geometry, a, b, T) for b in ts] for a in ts])
        return cls(ts, vals)

    def __call__(self, ti: float, tj: float) -> float:
        return float(_bilinear(self.values, self.step, float(ti), float(tj)))

    def double_integral(self) -> float:
        """int_0^T int_0^T G by the trapezoid rule on the table."""
        return float(np.trapezoid(np.trapezoid(self.values, self.times, axis=1), self.times))


# --- MAC designs ---------------------------------------------------------------------

@dataclass(frozen=True)
class MacDesign:
    """Two deltas per waveform: ``a_times[i, j]`` and ``a_amps[i, j]`` for bit i, delta j."""

    a_times: np.ndarray
    a_amps: np.ndarray
    b_times: np.ndarray
    b_amps: np.ndarray
    s_a: float
    s_b: float
    volume: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("a_times", "a_amps", "b_times", "b_amps"):
            arr = np.array(getattr(self, name), dtype=float).reshape(2, 2)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.a_amps < 0) or np.any(self.b_amps < 0):
            raise ValidationError("amplitudes must be nonnegative")
        if np.any(self.a_amps.sum(1) > self.s_a * (1 + 1e-9)) or np.any(self.b_amps.sum(1) > self.s_b * (1 + 1e-9)):
            raise ValidationError("design exceeds its mass budget")
        if np.any((self.a_times < 0) | (self.a_times > self.T)) or np.any((self.b_times < 0) | (self.b_times > self.T)):
            raise TimeOutsideSlot("release time outside [0, T]")

    def waveforms(self, geometry: Geometry, dim: int):
        """(a0, a1, b0, b1) as Waveform objects."""
        xa, xb, _ = geometry.points(dim)
        wa = [Waveform.impulses(list(zip(self.a_times[i], self.a_amps[i])), xa, self.s_a) for i in range(2)]
        wb = [Waveform.impulses(list(zip(self.b_times[i], self.b_amps[i])), xb, self.s_b) for i in range(2)]
        return wa + wb

    def record(self) -> dict:
        out = {}
        for side, t, a in (("a", self.a_times, self.a_amps), ("b", self.b_times, self.b_amps)):
            for i in range(2):
                for j in range(2):
                    out[f"{side}{i}_t{j + 1}_s"] = float(t[i, j])
                    out[f"{side}{i}_amp{j + 1}"] = float(a[i, j])
        out.update(s_a=self.s_a, s_b=self.s_b, volume_m3=self.volume, T_s=self.T)
        return out


def mac_rhos(design: MacDesign, g) -> np.ndarray:
    """(rho00, rho01, rho10, rho11) with rho_ij = sum a_i b_j G(t_a, t_b).

    ``g`` is a ResponseTable or any callable G(t_i, t_j).
    """
    out = np.zeros(4)
    for i in range(2):
        for j in range(2):
            acc = 0.0
            for p in range(2):
                for q in range(2):
                    w = design.a_amps[i, p] * design.b_amps[j, q]
                    if w:
                        acc += w * g(design.a_times[i, p], design.b_times[j, q])
            out[2 * i + j] = acc
    return out


def mac_error(design: MacDesign, g) -> float:
    return detect.mary_error_prob(detect.HypothesisSet(tuple(design.volume * mac_rhos(design, g))))


@dataclass(frozen=True)
class MacSearch:
    n_coarse: int = 16
    n_table: int = 61
    amp_levels: int = 9
    tol: float = 1e-4
    max_sweeps: int = 40


@dataclass
class MacResult:
    design: MacDesign
    pe: float
    rhos: np.ndarray
    table: ResponseTable
    history: list = field(default_factory=list)

    def record(self) -> dict:
        rec = self.design.record()
        rec.update(pe=self.pe, **{f"rho{k}": float(v) for k, v in zip(("00", "01", "10", "11"), self.rhos)})
        return rec


@jit
def _mac_log_pe(params, table, step, s_a, s_b, volume, log_priors):
    # params rows: a0, a1, b0, b1; columns t1, t2, f1, f2 (fractions of budget)
    means = np.zeros(4)
    for i in range(2):
        for j in range(2):
            acc = 0.0
            for p in range(2):
                for q in range(2):
                    w = params[i, 2 + p] * s_a * params[2 + j, 2 + q] * s_b
                    if w > 0.0:
                        acc += w * _bilinear(table, step, params[i, p], params[2 + j, q])
            means[2 * i + j] = volume * acc
    return detect._log_error_numba(means, log_priors)


def _objective(params, table: ResponseTable, s_a, s_b, volume) -> float:
    lp = np.full(4, -math.log(4.0))
    if USE_NUMBA:
        return float(_mac_log_pe(params, table.values, table.step, s_a, s_b, volume, lp))
    means = np.zeros(4)
    for i in range(2):
        for j in range(2):
            acc = 0.0
            for p in range(2):
                for q in range(2):
                    w = params[i, 2 + p] * s_a * params[2 + j, 2 + q] * s_b
                    if w > 0:
                        acc += w * table(params[i, p], params[2 + j, q])
            means[2 * i + j] = volume * acc
    return detect.fast_log_error(means)


def _to_design(params, s_a, s_b, volume, T) -> MacDesign:
    p = np.array(params, dtype=float)
    # squeeze rounding so the budget check holds exactly
    for r in range(4):
        tot = p[r, 2] + p[r, 3]
        if tot > 1.0:
            p[r, 2:] /= tot
    return MacDesign(p[:2, :2], p[:2, 2:] * s_a, p[2:, :2], p[2:, 2:] * s_b, s_a, s_b, volume, T)


def _from_design(d: MacDesign) -> np.ndarray:
    p = np.zeros((4, 4))
    p[:2, :2] = d.a_times
    p[2:, :2] = d.b_times
    p[:2, 2:] = d.a_amps / d.s_a
    p[2:, 2:] = d.b_amps / d.s_b
    return p


def optimize_mac(
    sys: SpeciesSystem,
    budgets: tuple,
    geometry: Geometry,
    T: float,
    volume: float,
    search: MacSearch = MacSearch(),
    table: Optional[ResponseTable] = None,
    start: Optional[MacDesign] = None,
) -> MacResult:
    """Best-found two-delta design by coarse grid search and coordinate descent.

    Stage 1 picks single-delta designs on the coarse time grid with amplitude
    fractions on ``amp_levels`` levels. Stage 2 cycles through the four
    waveforms, trying every pair of coarse times and amplitude split. Stage 3
    refines each scalar continuously (bounded Brent) on the interpolated G
    table until the relative gain in P_e drops below ``tol``. The returned
    P_e is recomputed exactly from the design.
    """
    s_a, s_b = budgets
    if s_a <= 0 or s_b <= 0:
        raise ValidationError("budgets must be positive")
    table = table or ResponseTable.build(sys, geometry, T, search.n_table)
    obj = lambda p: _objective(p, table, s_a, s_b, volume)
    coarse = np.linspace(0.0, T, search.n_coarse)
    levels = np.linspace(0.0, 1.0, search.amp_levels)
    history = []

    if start is not None:
        best = _from_design(start)
        best_val = obj(best)
    else:
        # stage 1: one time for everything, amplitude fractions on the level grid
        best, best_val = None, math.inf
        gmax = np.unravel_index(np.argmax([[table(a, b) for b in coarse] for a in coarse]), (coarse.size,) * 2)
        ta, tb = coarse[gmax[0]], coarse[gmax[1]]
        for i0, f_a0 in enumerate(levels):
            for f_a1 in levels[i0:]:
                for j0, f_b0 in enumerate(levels):
                    for f_b1 in levels[j0:]:
                        p = np.array([[ta, ta, f_a0, 0], [ta, ta, f_a1, 0], [tb, tb, f_b0, 0], [tb, tb, f_b1, 0]])
                        v = obj(p)
                        if v < best_val:
                            best, best_val = p, v
    history.append(("start", math.exp(best_val)))

    # stage 2: per-waveform exhaustive move on the coarse grid
    splits = [(f1, f2) for f1 in levels for f2 in levels if f1 + f2 <= 1.0 + 1e-12]
    pairs = [(t1, t2) for k, t1 in enumerate(coarse) for t2 in coarse[k:]]
    for _ in range(search.max_sweeps):
        before = best_val
        for r in range(4):
            trial = best.copy()
            for t1, t2 in pairs:
                trial[r, 0], trial[r, 1] = t1, t2
                for f1, f2 in splits:
                    trial[r, 2], trial[r, 3] = f1, f2
                    v = obj(trial)
                    if v < best_val:
                        best_val, best = v, trial.copy()
        history.append(("grid", math.exp(best_val)))
        if math.exp(before) - math.exp(best_val) <= search.tol * math.exp(before):
            break

    # stage 3: continuous coordinate descent
    for _ in range(search.max_sweeps):
        before = best_val
        for r in range(4):
            for c in range(4):
                if c < 2:
                    lo, hi = 0.0, T
                else:
                    lo, hi = 0.0, max(0.0, 1.0 - best[r, 5 - c])
                if hi <= lo:
                    continue

                def f(x, r=r, c=c):
                    p = best.copy()
                    p[r, c] = x
                    return obj(p)

                res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6 * max(hi, 1e-12)})
                for x, v in ((res.x, res.fun), (lo, f(lo)), (hi, f(hi))):
                    if v < best_val:
                        best_val = v
                        best = best.copy()
                        best[r, c] = x
        history.append(("refine", math.exp(best_val)))
        if math.exp(before) - math.exp(best_val) <= search.tol * math.exp(before):
            break

    design = _to_design(best, s_a, s_b, volume, T)
    rhos = mac_rhos(design, table)
    pe = detect.mary_error_prob(detect.HypothesisSet(tuple(volume * rhos)))
    return MacResult(design, pe, rhos, table, history)


@dataclass
class PulseResult:
    amplitudes: tuple  # (a0, a1, b0, b1) release rates
    pe: float
    rhos: np.ndarray
    kernel_integral: float

    def record(self) -> dict:
        a0, a1, b0, b1 = self.amplitudes
        rec = dict(a0_rate=a0, a1_rate=a1, b0_rate=b0, b1_rate=b1, pe=self.pe, G_integral=self.kernel_integral)
        rec.update({f"rho{k}": float(v) for k, v in zip(("00", "01", "10", "11"), self.rhos)})
        return rec


@jit
def _pulse_scan(la, lb, scale, log_priors):
    best = np.inf
    arg = np.zeros(4, dtype=np.int64)
    means = np.zeros(4)
    n_a = la.shape[0]
    n_b = lb.shape[0]
    for i0 in range(n_a):
        for i1 in range(i0, n_a):
            for j0 in range(n_b):
                for j1 in range(j0, n_b):
                    means[0] = scale * la[i0] * lb[j0]
                    means[1] = scale * la[i0] * lb[j1]
                    means[2] = scale * la[i1] * lb[j0]
                    means[3] = scale * la[i1] * lb[j1]
                    v = detect._log_error_numba(means, log_priors)
                    if v < best:
                        best = v
                        arg[0], arg[1], arg[2], arg[3] = i0, i1, j0, j1
    return best, arg


def pulse_baseline(
    sys: SpeciesSystem,
    budgets: tuple,
    geometry: Geometry,
    T: float,
    volume: float,
    levels: int = 32,
    table: Optional[ResponseTable] = None,
    n_table: int = 61,
) -> PulseResult:
    """Best constant-rate quadruple on ``levels`` amplitude levels each.

    A pulse of rate a on [0, T] against one of rate b gives rho = a b K with
    K the double integral of G, so only K is needed. Relabelling bits leaves
    P_e unchanged, so a0 <= a1 and b0 <= b1 are enforced.
    """
    s_a, s_b = budgets
    table = table or ResponseTable.build(sys, geometry, T, n_table)
    kint = table.double_integral()
    la = np.linspace(0.0, s_a / T, levels)
    lb = np.linspace(0.0, s_b / T, levels)
    lp = np.full(4, -math.log(4.0))
    if USE_NUMBA:
        _, arg = _pulse_scan(la, lb, volume * kint, lp)
        arg = [int(x) for x in arg]
    else:
        best, arg = math.inf, None
        for i0 in range(levels):
            for i1 in range(i0, levels):
                for j0 in range(levels):
                    for j1 in range(j0, levels):
                        m = volume * kint * np.array([la[i0] * lb[j0], la[i0] * lb[j1], la[i1] * lb[j0], la[i1] * lb[j1]])
                        v = detect.fast_log_error(m)
                        if v < best:
                            best, arg = v, [i0, i1, j0, j1]
    a0, a1, b0, b1 = la[arg[0]], la[arg[1]], lb[arg[2]], lb[arg[3]]
    rhos = kint * np.array([a0 * b0, a0 * b1, a1 * b0, a1 * b1])
    pe = detect.mary_error_prob(detect.HypothesisSet(tuple(volume * rhos)))
    return PulseResult((a0, a1, b0, b1), pe, rhos, kint)


def sweep_mac(sys, geometry, T, volume, budgets_list, search=MacSearch(), pulse_levels=32, n_table=61):
    """Optimal two-delta and pulse P_e along a list of budgets.

    Each point warm-starts from the previous optimum (still feasible because
    budgets only grow along a sorted sweep) besides its own cold search.
    """
    table = ResponseTable.build(sys, geometry, T, n_table)
    out = []
    prev = None
    for s_a, s_b in budgets_list:
        res = optimize_mac(sys, (s_a, s_b), geometry, T, volume, search, table)
        if prev is not None and prev.design.s_a <= s_a and prev.design.s_b <= s_b:
            d = prev.design
            warm = MacDesign(d.a_times, d.a_amps, d.b_times, d.b_amps, s_a, s_b, volume, T)
            alt = optimize_mac(sys, (s_a, s_b), geometry, T, volume, search, table, start=warm)
            if alt.pe < res.pe:
                res = alt
        pulse = pulse_baseline(sys, (s_a, s_b), geometry, T, volume, pulse_levels, table)
        out.append((s_a, s_b, res, pulse))
        prev = res
    return out


# --- amplification channel ---------------------------------------------------------------------

@dataclass
class AmplifyResult:
    t_a: float
    t_b: float
    s_a: float
    s_b: float
    rho1: float
    pe: float
    b_gain: float  # the lam^2 term carried by B, per unit s_a s_b
    times: np.ndarray = field(repr=False, default=None)

    def record(self) -> dict:
        return dict(t_a1_s=self.t_a, t_b1_s=self.t_b, a1_amp=self.s_a, b1_amp=self.s_b,
                    rho0=0.0, rho1=self.rho1, pe=self.pe, b_term_per_unit=self.b_gain)


class AmplifyModel:
    """Receiver mean for single-delta A and B releases, up to second order.

    With unit releases ``a`` (at t_a) and ``b`` (at t_b) and ``C0`` the
    design-free zero-order C field,

        rho1 = s_a T1(t_a) + s_a^2 T2(t_a) + s_a s_b T3(t_a, t_b),

    where T3 = gamma lam^2 phi_A ** (a0 phi_C ** (b0 C0^beta)) holds the only
    dependence on B. T3 is kept separate because it sits far below the
    resolution of rho1 in double precision.

    A unit release at sample n is the release at sample 0 shifted by n, so
    every term linear in the A release is a time correlation against one
    stored field and comes out for all release times at once.
    """

    def __init__(self, sys: SpeciesSystem, grid: SpaceTimeGrid, geometry: Geometry, noise=None, init_c=None):
        if sys.scenario is not Scenario.AMPLIFY_ABC:
            raise ValidationError("amplification model needs the AMPLIFY_ABC scenario")
        from .perturb import to_forcing

        self.sys, self.grid, self.geometry = sys, grid, geometry
        xa, _, xr = geometry.points(grid.dim)
        self.src_idx = grid.cell_index(xa)
        self.rx_idx = grid.cell_index(xr)
        fc = to_forcing(noise, grid)
        self.c0 = K.duhamel(grid, sys.d_c, fc.density, fc.impulses, init_c)
        self.w_a = K.point_weights(grid, sys.d_a, xr)
        self.a_unit = self._unit(sys.d_a)
        self.b_unit = self._unit(sys.d_b)
        lin = self._correlate(self.w_a * self.c0)
        self.t1_lin = self.a_unit[(slice(None, None, -1),) + self.rx_idx] - sys.lam * lin
        self._quad = {}
        self._t3 = {}

    def _unit(self, d):
        return K.duhamel(self.grid, d, impulses=[K.Impulse(0, self.src_idx, 1.0)])

    def _shift(self, a, n):
        out = np.zeros_like(a)
        out[n:] = a[: a.shape[0] - n]
        return out

    def _correlate(self, r):
        """out[n] = sum_t sum_x r[t, x] a_unit[t - n, x] for every release sample n."""
        m = r.reshape(r.shape[0], -1) @ self.a_unit.reshape(r.shape[0], -1).T
        return np.array([np.trace(m, offset=-n) for n in range(r.shape[0])])

    def quad_terms(self, n_a: int):
        """(lam^2 part of T1, T2) for an A release at sample n_a."""
        if n_a not in self._quad:
            lam, sys = self.sys.lam, self.sys
            a0 = self._shift(self.a_unit, n_a)
            ac = a0 * self.c0
            a1 = -K.duhamel(self.grid, sys.d_a, ac)
            q1 = -lam ** 2 * float(np.sum(self.w_a * a1 * self.c0))
            t2 = lam ** 2 * float(np.sum(self.w_a * a0 * K.duhamel(self.grid, sys.d_c, ac)))
            self._quad[n_a] = (q1, t2)
        return self._quad[n_a]

    def b_terms(self, n_b: int) -> np.ndarray:
        """T3 against every A release sample for a B release at sample n_b."""
        if n_b not in self._t3:
            sys = self.sys
            b0 = self._shift(self.b_unit, n_b)
            u = K.duhamel(self.grid, sys.d_c, b0 * self.c0 ** sys.beta)
            self._t3[n_b] = sys.gamma * sys.lam ** 2 * self._correlate(self.w_a * u)
        return self._t3[n_b]

    def a_part(self, n_a: int, s_a: float) -> float:
        q1, t2 = self.quad_terms(n_a)
        return s_a * (self.t1_lin[n_a] + q1) + s_a ** 2 * t2

    def rho1(self, n_a, n_b, s_a, s_b) -> float:
        return self.a_part(n_a, s_a) + s_a * s_b * float(self.b_terms(n_b)[n_a])


def optimize_amplify(
    sys: SpeciesSystem,
    budgets: tuple,
    geometry: Geometry,
    grid: SpaceTimeGrid,
    volume: float,
    noise=None,
    init_c=None,
    coarse_every: int = 5,
    model: Optional[AmplifyModel] = None,
) -> AmplifyResult:
    """Release times for a1 = s_a delta(t - t_a), b1 = s_b delta(t - t_b); a0 = b0 = 0.

    With rho0 = 0 the error 1/2 exp(-V rho1) falls as rho1 grows, so the
    search maximizes rho1 over pairs of grid samples. Every
    ``coarse_every``-th sample is tried first, then the neighbourhood of the
    winner is scanned sample by sample until it stops moving. Ties go to the
    earliest release.
    """
    s_a, s_b = budgets
    model = model or AmplifyModel(sys, grid, geometry, noise, init_c)
    nt = grid.nt
    use_b = s_b > 0 and sys.gamma > 0 and sys.lam > 0

    def best_pair(cand_a, cand_b):
        # t_b only enters through the B term, so pick it from that term alone
        # (it can sit below the rounding of the full mean)
        if use_b:
            table = np.array([model.b_terms(nb)[cand_a] for nb in cand_b])
            pick = np.argmax(table, axis=0)
        best, arg = -math.inf, None
        for k, na in enumerate(cand_a):
            nb = cand_b[pick[k]] if use_b else 0
            v = model.a_part(na, s_a) + (s_a * s_b * table[pick[k], k] if use_b else 0.0)
            if v > best:
                best, arg = v, (na, nb)
        return arg

    coarse = sorted(set(range(0, nt + 1, coarse_every)) | {nt})
    n_a, n_b = best_pair(coarse, coarse)
    for _ in range(20):
        near = lambda n: sorted(set(coarse) | set(range(max(0, n - coarse_every), min(nt, n + coarse_every) + 1)))
        new = best_pair(near(n_a), near(n_b))
        if new == (n_a, n_b):
            break
        n_a, n_b = new
    rho1 = model.rho1(n_a, n_b, s_a, s_b)
    pe = detect.binary_error_prob(0.0, volume * rho1)
    bt = float(model.b_terms(n_b)[n_a]) if use_b else 0.0
    return AmplifyResult(n_a * grid.dt, n_b * grid.dt, s_a, s_b, rho1, pe, bt, grid.times())


# --- two-way channel ------------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoWayDesign:
    a1: float
    b1: float
    t_a: float
    t_b: float
    s_a: float
    s_b: float

    def __post_init__(self):
        if not (0 <= self.a1 <= self.s_a * (1 + 1e-9) and 0 <= self.b1 <= self.s_b * (1 + 1e-9)):
            raise ValidationError("two-way amplitudes must lie within their budgets")

    def record(self) -> dict:
        return dict(a0_amp=0.0, b0_amp=0.0, a1_amp=float(self.a1), b1_amp=float(self.b1),
                    t_a1_s=float(self.t_a), t_b1_s=float(self.t_b),
                    s_a=self.s_a, s_b=self.s_b)


class TwoWayModel:
    """Closed-form first-order means for the two-way link (A at origin, B at d_b)."""

    def __init__(self, sys: SpeciesSystem, d_b, T: float, volume: float):
        if sys.scenario is not Scenario.TWO_WAY_AB:
            raise ValidationError("two-way model needs the TWO_WAY_AB scenario")
        self.sys, self.T, self.volume = sys, T, volume
        self.xa = np.zeros(sys.dim)
        self.xb = as_point(d_b, sys.dim)
        self.ka = K.HeatKernel(sys.dim, sys.d_a)
        self.kb = K.HeatKernel(sys.dim, sys.d_b)

    def partial_means(self, a, b, t_a, t_b):
        """(direct A, A lost to B, direct B, B lost to A): A at d_b is the first minus the second."""
        s, T = self.sys, self.T
        a_direct = a * K.eval_kernel(self.ka, self.xb, T - t_a)
        b_direct = b * K.eval_kernel(self.kb, self.xb, T - t_b)
        if a == 0 or b == 0 or s.lam == 0:
            return a_direct, 0.0, b_direct, 0.0
        a_lost = a * b * triple_response(s.dim, s.d_a, s.d_a, s.d_b, self.xa, self.xb, self.xb, t_a, t_b, T, s.lam)
        b_lost = a * b * triple_response(s.dim, s.d_b, s.d_a, s.d_b, self.xa, self.xb, self.xa, t_a, t_b, T, s.lam)
        return a_direct, a_lost, b_direct, b_lost

    def log_js(self, d: TwoWayDesign) -> np.ndarray:
        a_direct, a_lost, b_direct, b_lost = self.partial_means(d.a1, d.b1, d.t_a, d.t_b)
        V = self.volume
        means = (V * a_direct, V * max(a_direct - a_lost, 0.0), V * b_direct, V * max(b_direct - b_lost, 0.0))
        return np.array([detect.log_binary_error_prob(0.0, m) for m in means])


@dataclass
class TwoWayResult:
    design: TwoWayDesign
    log_j: np.ndarray
    cost: float

    @property
    def j(self) -> np.ndarray:
        return np.exp(self.log_j)

    def record(self) -> dict:
        rec = self.design.record()
        rec.update({f"log_J{i + 1}": float(v) for i, v in enumerate(self.log_j)})
        rec["H"] = self.cost
        return rec


def optimize_twoway(
    sys: SpeciesSystem,
    budgets: tuple,
    d_b,
    T: float,
    volume: float,
    weights=(1.0, 1.0, 1.0, 1.0),
    n_coarse: int = 16,
    tol: float = 1e-10,
    max_sweeps: int = 30,
) -> TwoWayResult:
    """Minimize H = sum w_i log J_i over (a1, b1, t_a, t_b); a0 = b0 = 0.

    Times start on a coarse grid with full-budget amplitudes, then all four
    coordinates are refined by bounded Brent steps in turn.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    s_a, s_b = budgets
    model = TwoWayModel(sys, d_b, T, volume)

    def cost(x):
        d = TwoWayDesign(min(max(x[0], 0.0), s_a), min(max(x[1], 0.0), s_b), x[2], x[3], s_a, s_b)
        return float(np.dot(w, model.log_js(d)))

    grid = np.linspace(0.0, T, n_coarse)
    best, best_val = None, math.inf
    for ta in grid:
        for tb in grid:
            x = np.array([s_a, s_b, ta, tb])
            v = cost(x)
            if v < best_val:
                best, best_val = x, v
    bounds = [(0.0, s_a), (0.0, s_b), (0.0, T), (0.0, T)]
    for _ in range(max_sweeps):
        before = best_val
        for c in range(4):
            lo, hi = bounds[c]

            def f(v, c=c):
                x = best.copy()
                x[c] = v
                return cost(x)

            res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9 * hi})
            for v, fv in ((res.x, res.fun), (lo, f(lo)), (hi, f(hi))):
                if fv < best_val:
                    best_val = fv
                    best = best.copy()
                    best[c] = v
        if before - best_val <= tol * abs(before):
            break
    d = TwoWayDesign(best[0], best[1], best[2], best[3], s_a, s_b)
    lj = model.log_js(d)
    return TwoWayResult(d, lj, float(np.dot(w, lj)))
