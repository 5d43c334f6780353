"""Explicit finite-difference oracle and the error sweeps built on it.

Forward Euler in time, central differences in space with zero ghost cells
outside the box. The solver takes as many internal substeps per output
sample as the diffusion stability limit requires and reports the CFL number
it used.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from . import perturb as P
from ._accel import USE_NUMBA, jit
from .errors import NegativeBlowup, UnstableConfiguration, ValidationError
from .fields import Field, Scenario, SpaceTimeGrid, SpeciesSystem
from .kernels import central_laplacian

_SCEN = {Scenario.MAC_ABC: 0, Scenario.AMPLIFY_ABC: 1, Scenario.TWO_WAY_AB: 2}


@dataclass(frozen=True)
class FdmConfig:
    grid: SpaceTimeGrid
    stability_safety: float = 0.5
    substeps: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.stability_safety <= 1:
            raise ValidationError("stability_safety must lie in (0, 1]")

    def cfl_limit(self, sys: SpeciesSystem) -> float:
        g = self.grid
        return g.dx ** 2 / (2 * g.dim * sys.d_max)

    def step_count(self, sys: SpeciesSystem) -> int:
        limit = self.stability_safety * self.cfl_limit(sys)
        if self.substeps is None:
            return max(1, math.ceil(self.grid.dt / limit * (1 - 1e-12)))
        if self.grid.dt / self.substeps > limit * (1 + 1e-12):
            raise UnstableConfiguration(
                f"internal step {self.grid.dt / self.substeps:.3g} s exceeds "
                f"{self.stability_safety} x CFL limit {self.cfl_limit(sys):.3g} s"
            )
        return int(self.substeps)


@dataclass
class FdmResult:
    concentrations: Dict[str, object]
    substeps: int
    h: float
    cfl: float

    def __getitem__(self, s):
        return self.concentrations[s]

    def report(self) -> dict:
        return {"substeps": self.substeps, "internal_dt": self.h, "cfl_number": self.cfl}


# --- compiled kernel ------------------------------------------------------------
# Arrays are (nx, ny, nz) with unused axes of length 1; ``dim`` says which
# axes carry a Laplacian.

@jit
def _advance_numba(a, b, c, fa0, fa1, fb0, fb1, fc0, fc1, n_sub, h, inv_dx2,
                   da, db, dc, lam, gam, beta, scen, dim):
    nx, ny, nz = a.shape
    a2 = np.empty_like(a)
    b2 = np.empty_like(b)
    c2 = np.empty_like(c)
    for s in range(n_sub):
        th = s / n_sub
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    av = a[i, j, k]
                    bv = b[i, j, k]
                    cv = c[i, j, k]
                    la = -2.0 * dim * av
                    lb = -2.0 * dim * bv
                    lc = -2.0 * dim * cv
                    if i > 0:
                        la += a[i - 1, j, k]
                        lb += b[i - 1, j, k]
                        lc += c[i - 1, j, k]
                    if i < nx - 1:
                        la += a[i + 1, j, k]
                        lb += b[i + 1, j, k]
                        lc += c[i + 1, j, k]
                    if dim > 1:
                        if j > 0:
                            la += a[i, j - 1, k]
                            lb += b[i, j - 1, k]
                            lc += c[i, j - 1, k]
                        if j < ny - 1:
                            la += a[i, j + 1, k]
                            lb += b[i, j + 1, k]
                            lc += c[i, j + 1, k]
                    if dim > 2:
                        if k > 0:
                            la += a[i, j, k - 1]
                            lb += b[i, j, k - 1]
                            lc += c[i, j, k - 1]
                        if k < nz - 1:
                            la += a[i, j, k + 1]
                            lb += b[i, j, k + 1]
                            lc += c[i, j, k + 1]
                    if scen == 0:
                        r = lam * av * bv - gam * lam * cv
                        ra = -r
                        rb = -r
                        rc = r
                    elif scen == 1:
                        ac = lam * av * cv
                        bc = gam * lam * bv * cv ** beta
                        ra = -ac
                        rb = -bc
                        rc = -(ac + bc)
                    else:
                        r = lam * av * bv
                        ra = -r
                        rb = -r
                        rc = 0.0
                    sa = (1.0 - th) * fa0[i, j, k] + th * fa1[i, j, k]
                    sb = (1.0 - th) * fb0[i, j, k] + th * fb1[i, j, k]
                    sc = (1.0 - th) * fc0[i, j, k] + th * fc1[i, j, k]
                    a2[i, j, k] = av + h * (da * inv_dx2 * la + ra + sa)
                    b2[i, j, k] = bv + h * (db * inv_dx2 * lb + rb + sb)
                    c2[i, j, k] = cv + h * (dc * inv_dx2 * lc + rc + sc)
        a, a2 = a2, a
        b, b2 = b2, b
        c, c2 = c2, c
    return a, b, c


def _advance_numpy(a, b, c, fa0, fa1, fb0, fb1, fc0, fc1, n_sub, h, inv_dx2,
                   da, db, dc, lam, gam, beta, scen, dim):
    dx = inv_dx2 ** -0.5
    sq = tuple(range(dim, 3))
    a, b, c = (np.squeeze(v, axis=sq) for v in (a, b, c))
    fa0, fa1, fb0, fb1, fc0, fc1 = (np.squeeze(v, axis=sq) for v in (fa0, fa1, fb0, fb1, fc0, fc1))
    for s in range(n_sub):
        th = s / n_sub
        if scen == 0:
            r = lam * a * b - gam * lam * c
            ra, rb, rc = -r, -r, r
        elif scen == 1:
            ac = lam * a * c
            bc = gam * lam * b * c ** beta
            ra, rb, rc = -ac, -bc, -(ac + bc)
        else:
            r = lam * a * b
            ra, rb, rc = -r, -r, 0.0
        a_new = a + h * (da * central_laplacian(a, dx, periodic=False) + ra + (1 - th) * fa0 + th * fa1)
        b_new = b + h * (db * central_laplacian(b, dx, periodic=False) + rb + (1 - th) * fb0 + th * fb1)
        c = c + h * (dc * central_laplacian(c, dx, periodic=False) + rc + (1 - th) * fc0 + th * fc1)
        a, b = a_new, b_new
    shape = a.shape + (1,) * (3 - dim)
    return a.reshape(shape), b.reshape(shape), c.reshape(shape)


advance = _advance_numba if USE_NUMBA else _advance_numpy


def _as3(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr.reshape(arr.shape + (1,) * (3 - arr.ndim)), dtype=np.float64)


def fdm_solve(
    sys: SpeciesSystem,
    sources: Mapping,
    cfg: FdmConfig,
    *,
    probes: Optional[Sequence] = None,
    initial: Optional[Mapping[str, np.ndarray]] = None,
    kernel=None,
) -> FdmResult:
    """March the full nonlinear system on ``cfg.grid``.

    Sources follow the same conventions as the series solver: densities are
    interpolated linearly between output samples, impulses are added at
    their sample. Output is sampled at the grid times.
    """
    g = cfg.grid
    if sys.dim != g.dim:
        raise ValidationError(f"system dim {sys.dim} != grid dim {g.dim}")
    n_sub = cfg.step_count(sys)
    h = g.dt / n_sub
    forcing = P._forcings(sys, g, sources)
    names = ("A", "B", "C")
    zero = np.zeros(g.spatial_shape)

    def dens(s, n):
        f = forcing[s].density if s in forcing else None
        return _as3(zero if f is None else np.asarray(f[n]))

    imps = {s: {} for s in names}
    for s in forcing:
        for imp in forcing[s].impulses:
            imps[s].setdefault(imp.step, []).append(imp)

    state = {}
    for s in names:
        u = np.zeros(g.spatial_shape)
        if initial is not None and initial.get(s) is not None:
            u = u + np.asarray(initial[s], dtype=float)
        for imp in imps[s].get(0, ()):
            u[imp.index] += imp.mass / g.cell_volume
        state[s] = _as3(u)

    if probes is not None:
        sel = [g.cell_index(p) for p in probes]
        sel = tuple(np.array(ix) for ix in zip(*sel))
        rec = {s: np.zeros((g.nt + 1, len(probes))) for s in sys.species}
    else:
        rec = {s: np.zeros(g.shape) for s in sys.species}

    def record(n):
        for s in sys.species:
            u = state[s].reshape(g.spatial_shape)
            rec[s][n] = u[sel] if probes is not None else u

    run = kernel or advance
    peak = {s: 0.0 for s in names}
    record(0)
    scen = _SCEN[sys.scenario]
    for n in range(g.nt):
        a, b, c = run(
            state["A"], state["B"], state["C"],
            dens("A", n), dens("A", n + 1), dens("B", n), dens("B", n + 1), dens("C", n), dens("C", n + 1),
            n_sub, h, 1.0 / g.dx ** 2, sys.d_a, sys.d_b, sys.d_c, sys.lam, sys.gamma,
            float(sys.beta), scen, g.dim,
        )
        state = {"A": np.ascontiguousarray(a), "B": np.ascontiguousarray(b), "C": np.ascontiguousarray(c)}
        for s in names:
            for imp in imps[s].get(n + 1, ()):
                state[s].reshape(g.spatial_shape)[imp.index] += imp.mass / g.cell_volume
        for s in sys.species:
            u = state[s]
            peak[s] = max(peak[s], float(np.max(np.abs(u))))
            lo = float(u.min())
            if not np.isfinite(lo) or lo < -0.01 * peak[s]:
                raise NegativeBlowup(f"{s} reached {lo:.3g} at t={(n + 1) * g.dt:.4g} s (peak {peak[s]:.3g})")
        record(n + 1)

    conc = rec if probes is not None else {s: Field(g, s, rec[s]) for s in sys.species}
    return FdmResult(conc, n_sub, h, h * 2 * g.dim * sys.d_max / g.dx ** 2)


def fdm_one_step(sys: SpeciesSystem, initial_state: Mapping, sources: Mapping, dt: float, dx: float) -> Dict[str, np.ndarray]:
    """``g + dt (D lap g + reaction(g) + f(., 0))`` per species (zero ghost cells)."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    state = {s: np.asarray(initial_state.get(s, 0.0), dtype=float) for s in sys.species}
    shape = np.broadcast_shapes(*[v.shape for v in state.values()])
    state = {s: np.broadcast_to(v, shape).astype(float) for s, v in state.items()}
    react = P.reaction_rates(sys, state)
    out = {}
    for s in sys.species:
        f0 = np.asarray((sources or {}).get(s, 0.0), dtype=float)
        lap = central_laplacian(state[s], dx, periodic=False) if state[s].ndim else 0.0
        out[s] = state[s] + dt * (sys.diffusion(s) * lap + react[s] + f0)
    return out


# --- error curves and horizons ---------------------------------------------------------------

def _rel_errors(exact: np.ndarray, approx: np.ndarray, times: np.ndarray, t_window=None) -> np.ndarray:
    """Pointwise relative error with tiny or out-of-window samples set to NaN."""
    peak = float(np.max(np.abs(exact))) if exact.size else 0.0
    keep = np.abs(exact) >= 1e-12 * peak if peak > 0 else np.zeros(exact.shape, bool)
    if t_window is not None:
        keep &= (times >= t_window[0]) & (times <= t_window[1])
    err = np.full(exact.shape, np.nan)
    err[keep] = np.abs(exact[keep] - approx[keep]) / np.abs(exact[keep])
    return err


@dataclass(frozen=True)
class CurvePoint:
    param: float
    max_rel_error: float
    t_max: float
    times: np.ndarray
    exact: np.ndarray
    approx: np.ndarray


def _compare_one(sys, sources, probe, order_n, grid, fdm_cfg, species, series=None, t_window=None, threshold=0.05, k=None):
    if series is None and k is None:
        series = P.solve_series(sys, grid, sources, order_n, probes=[probe])
    if k is None:
        approx = P.assemble(series, sys.lam, order_n, check="ignore")[species][:, 0]
    else:
        approx = P.solve_split(sys, grid, sources, k, order_n, probes=[probe], check="ignore")[species][:, 0]
    cfg = fdm_cfg or FdmConfig(grid)
    exact = fdm_solve(sys, sources, cfg, probes=[probe])[species][:, 0]
    times = grid.times()
    err = _rel_errors(exact, approx, times, t_window)
    finite = err[np.isfinite(err)]
    worst = float(finite.max()) if finite.size else 0.0
    bad = np.nonzero(np.isfinite(err) & (err > threshold))[0]
    t_max = grid.t_end if bad.size == 0 else float(times[max(bad[0] - 1, 0)])
    return CurvePoint(sys.lam, worst, t_max, times, exact, approx)


def _pool_map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def relative_error_curve(
    sys: SpeciesSystem,
    sources: Mapping,
    probe,
    order_n: int,
    lambda_list: Sequence[float],
    grid: SpaceTimeGrid,
    fdm_cfg: Optional[FdmConfig] = None,
    *,
    species: str = "C",
    t_window=None,
    workers: int = 1,
    detail: bool = False,
):
    """``[(lam, max_t |C_fdm - C_series| / |C_fdm|), ...]``.

    Samples where the FDM value is below 1e-12 of its peak are left out. The
    series coefficients do not depend on lambda, so they are computed once.
    """
    series = P.solve_series(sys, grid, sources, order_n, probes=[probe])

    def one(lam):
        return _compare_one(sys.with_(lam=lam), sources, probe, order_n, grid, fdm_cfg, species, series, t_window)

    pts = _pool_map(one, list(lambda_list), workers)
    if detail:
        return pts
    return [(p.param, p.max_rel_error) for p in pts]


def t_max_sweep(
    sys: SpeciesSystem,
    sources: Mapping,
    probe,
    grid: SpaceTimeGrid,
    *,
    threshold: float = 0.05,
    lambda_list: Optional[Sequence[float]] = None,
    d_c_list: Optional[Sequence[float]] = None,
    order_n: int = 1,
    fdm_cfg: Optional[FdmConfig] = None,
    species: str = "C",
    workers: int = 1,
    t_window=None,
):
    """``[(param, T_max), ...]`` over lambda or D_C.

    T_max is the last grid time before the relative error first exceeds
    ``threshold`` (0 if it is exceeded at the first resolved sample).
    Samples outside ``t_window`` are not scored.
    """
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    if (lambda_list is None) == (d_c_list is None):
        raise ValidationError("give exactly one of lambda_list or d_c_list")
    if lambda_list is not None:
        series = P.solve_series(sys, grid, sources, order_n, probes=[probe])
        fn = lambda lam: _compare_one(sys.with_(lam=lam), sources, probe, order_n, grid, fdm_cfg, species, series, t_window, threshold)
        params = list(lambda_list)
    else:
        fn = lambda dc: _compare_one(sys.with_(d_c=dc), sources, probe, order_n, grid, fdm_cfg, species, None, t_window, threshold)
        params = list(d_c_list)
    pts = _pool_map(fn, params, workers)
    return [(p, pt.t_max) for p, pt in zip(params, pts)]


def refinement_check(sys: SpeciesSystem, sources: Mapping, probe, cfg: FdmConfig, species: str = "C", tol: float = 0.01):
    """Relative change of the probe curve when dx is halved (dt follows dx^2).

    Returns (change, under_resolved).
    """
    g = cfg.grid
    fine = replace(g, nx=2 * g.nx)
    coarse = fdm_solve(sys, sources, cfg, probes=[probe])[species][:, 0]
    refined = fdm_solve(sys, sources, replace(cfg, grid=fine, substeps=None), probes=[probe])[species][:, 0]
    peak = float(np.max(np.abs(refined)))
    change = float(np.max(np.abs(refined - coarse))) / peak if peak else 0.0
    return change, change > tol
