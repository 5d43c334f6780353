"""Power-series solver in the forward rate lambda.

Each species is written as ``X = sum_i lam**i X_i``. Every coefficient solves
a linear diffusion equation whose source is built from lower orders, so all
orders can be marched through time together: the order-i source at step n
only needs orders below i at the same step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import kernels as K
from .errors import (
    ConvergenceRadiusExceeded,
    GridMismatch,
    MissingPriorOrder,
    NegativeConcentration,
    OrderUnavailable,
    SubintervalTooCoarse,
    ValidationError,
)
from .fields import Field, Scenario, SpaceTimeGrid, SpeciesSystem, Waveform, as_point, same_grid


class TruncationWarning(UserWarning):
    """Assembled series dipped slightly below zero."""


# --- sources ----------------------------------------------------------------

@dataclass
class Forcing:
    """Point-sampled density plus exact impulses for one species."""

    density: Optional[np.ndarray] = None
    impulses: List[K.Impulse] = field(default_factory=list)

    def sliced(self, n0: int, n1: int, first: bool) -> "Forcing":
        dens = None if self.density is None else self.density[n0 : n1 + 1]
        lo = n0 if first else n0 + 1
        imps = [K.Impulse(i.step - n0, i.index, i.mass) for i in self.impulses if lo <= i.step <= n1]
        return Forcing(dens, imps)

    def dense(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Density with impulses smeared over one time cell (for reporting only)."""
        out = np.zeros(grid.shape) if self.density is None else np.array(self.density, dtype=float)
        for i in self.impulses:
            out[(i.step,) + i.index] += i.mass / (grid.cell_volume * grid.dt)
        return out


def to_forcing(src, grid: SpaceTimeGrid) -> Forcing:
    """Accepts None, a Waveform, a Field, a density array, a scalar or a list of those."""
    if src is None:
        return Forcing()
    if isinstance(src, Forcing):
        return src
    if isinstance(src, (list, tuple)):
        parts = [to_forcing(s, grid) for s in src]
        dens = [p.density for p in parts if p.density is not None]
        return Forcing(sum(dens) if dens else None, [i for p in parts for i in p.impulses])
    if isinstance(src, Waveform):
        imps = [K.Impulse(grid.time_index(d.time), grid.cell_index(d.location), d.weight) for d in src.deltas]
        dens = None
        if src.envelope is not None:
            dens = np.zeros(grid.shape)
            idx = grid.cell_index(src.envelope.location)
            dens[(slice(None),) + idx] = src.envelope(grid.times()) / grid.cell_volume
        return Forcing(dens, imps)
    if isinstance(src, Field):
        if src.grid != grid:
            raise GridMismatch("source field lives on a different grid")
        return Forcing(np.asarray(src.values), [])
    arr = np.asarray(src, dtype=float)
    return Forcing(np.broadcast_to(arr, grid.shape).copy(), [])


def _forcings(sys: SpeciesSystem, grid: SpaceTimeGrid, sources: Mapping) -> Dict[str, Forcing]:
    extra = set(sources or {}) - set(sys.species)
    if extra:
        raise ValidationError(f"sources given for unknown species {sorted(extra)}")
    return {s: to_forcing((sources or {}).get(s), grid) for s in sys.species}


# --- reaction bookkeeping -----------------------------------------------------

def order_sources(sys: SpeciesSystem, orders: Mapping[str, Sequence], i: int) -> Dict[str, np.ndarray]:
    """Sources ``g`` with ``X_i = phi_X ** g`` for order ``i >= 1``."""
    if i < 1:
        raise ValidationError("order sources are defined for i >= 1")
    for s in sys.species:
        if len(orders[s]) < i:
            raise MissingPriorOrder(f"{s} needs orders 0..{i - 1}, got {len(orders[s])}")
    a, b = orders["A"], orders["B"]
    if sys.scenario is Scenario.MAC_ABC:
        r = K.index_conv(a, b, i) - sys.gamma * np.asarray(orders["C"][i - 1])
        return {"A": -r, "B": -r, "C": r}
    if sys.scenario is Scenario.TWO_WAY_AB:
        s = K.index_conv(a, b, i)
        return {"A": -s, "B": -s}
    c = orders["C"]
    ac = K.index_conv(a, c, i)
    cb = K.cauchy_power(c, sys.beta, i - 1)
    bcb = K.index_conv(b, cb, i)
    return {"A": -ac, "B": -sys.gamma * bcb, "C": -(ac + sys.gamma * bcb)}


def reaction_rates(sys: SpeciesSystem, state: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Pointwise reaction terms of the full nonlinear system."""
    lam, gam = sys.lam, sys.gamma
    a, b = np.asarray(state["A"]), np.asarray(state["B"])
    if sys.scenario is Scenario.MAC_ABC:
        r = lam * a * b - gam * lam * np.asarray(state["C"])
        return {"A": -r, "B": -r, "C": r}
    if sys.scenario is Scenario.TWO_WAY_AB:
        r = lam * a * b
        return {"A": -r, "B": -r}
    c = np.asarray(state["C"])
    ac = lam * a * c
    bc = gam * lam * b * c ** sys.beta
    return {"A": -ac, "B": -bc, "C": -(ac + bc)}


# --- series container -----------------------------------------------------------

@dataclass
class SeriesSolution:
    """Coefficients ``orders[species][i]`` on ``grid``.

    In probe mode each coefficient is an array (time, probe) instead of a
    full field.
    """

    system: SpeciesSystem
    grid: SpaceTimeGrid
    orders: Dict[str, List[np.ndarray]]
    lam: float
    n_max: int
    interval: tuple
    probes: Optional[tuple] = None
    final: Optional[Dict[str, List[np.ndarray]]] = None

    def field(self, species: str, i: int) -> Field:
        if self.probes is not None:
            raise ValidationError("probe-mode series has no full fields")
        if i > self.n_max:
            raise OrderUnavailable(f"order {i} > n_max={self.n_max}")
        return Field(self.grid, f"{species}{i}", self.orders[species][i])

    def fields(self) -> Dict[str, List[Field]]:
        return {s: [self.field(s, i) for i in range(self.n_max + 1)] for s in self.orders}


def _check_negative(name: str, values: np.ndarray, check: str) -> None:
    if check == "ignore":
        return
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    lo = float(values.min()) if values.size else 0.0
    if lo >= 0 or peak == 0:
        return
    if lo < -1e-6 * peak:
        msg = f"assembled {name} reaches {lo:.3g} (peak {peak:.3g})"
        if check == "raise":
            raise NegativeConcentration(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=3)
    elif check == "warn":
        warnings.warn(f"assembled {name} has round-off negatives down to {lo:.3g}", TruncationWarning, stacklevel=3)


def assemble(series: SeriesSolution, lam: Optional[float] = None, n: Optional[int] = None, check: str = "raise"):
    """Truncated sum ``sum_{i<=n} lam**i X_i`` per species.

    Returns Fields for full series and arrays (time, probe) in probe mode.
    ``check`` is "raise", "warn" or "ignore" for negative excursions larger
    than 1e-6 of the peak.
    """
    lam = series.lam if lam is None else lam
    n = series.n_max if n is None else n
    if n > series.n_max or n < 0:
        raise OrderUnavailable(f"order {n} requested, {series.n_max} available")
    out = {}
    for s, terms in series.orders.items():
        acc = np.array(terms[0], dtype=float)
        for i in range(1, n + 1):
            if lam != 0.0:
                acc = acc + lam ** i * terms[i]
        _check_negative(s, acc, check)
        out[s] = acc if series.probes is not None else Field(series.grid, s, acc)
    return out


# --- the marching solver -----------------------------------------------------------

def _march(
    sys: SpeciesSystem,
    grid: SpaceTimeGrid,
    forcing: Mapping[str, Forcing],
    n: int,
    initial: Optional[Mapping[str, np.ndarray]] = None,
    probes: Optional[Sequence] = None,
    t0: float = 0.0,
) -> SeriesSolution:
    species = sys.species
    st = {s: K.HeatStepper(grid, sys.diffusion(s)) for s in species}
    probe_idx = None
    if probes is not None:
        probe_idx = [grid.cell_index(p) for p in probes]
        probe_sel = tuple(np.array(ix) for ix in zip(*probe_idx))
        rec = {s: [np.zeros((grid.nt + 1, len(probe_idx))) for _ in range(n + 1)] for s in species}
    else:
        rec = {s: [np.zeros(grid.shape) for _ in range(n + 1)] for s in species}

    carry = {}
    carry_hat = {}
    for s, val in (initial or {}).items():
        if val is None:
            continue
        arr = np.asarray(val, dtype=float)
        if not np.any(arr):
            continue
        carry[s] = arr
        carry_hat[s] = st[s].fft(sys.diffusion(s) * K.central_laplacian(arr, grid.dx))

    imp_by_step = {s: {} for s in species}
    for s in species:
        for imp in forcing[s].impulses:
            imp_by_step[s].setdefault(imp.step, []).append(imp)

    def order0_src(s, step):
        f = forcing[s].density
        g = None if f is None else st[s].fft(f[step])
        if s in carry_hat:
            g = carry_hat[s] if g is None else g + carry_hat[s]
        return g

    zero_hat = {s: np.zeros(st[s].lam.shape, dtype=complex) for s in species}
    u_hat = {s: [zero_hat[s].copy() for _ in range(n + 1)] for s in species}
    g_prev = {s: [None] * (n + 1) for s in species}
    now = {s: [None] * (n + 1) for s in species}

    for step in range(grid.nt + 1):
        for i in range(n + 1):
            if i == 0:
                g_next = {s: order0_src(s, step) for s in species}
            else:
                raw = order_sources(sys, {s: now[s][:i] for s in species}, i)
                g_next = {s: (st[s].fft(raw[s]) if np.any(raw[s]) else None) for s in species}
            for s in species:
                if step > 0:
                    u_hat[s][i] = st[s].advance(u_hat[s][i], g_prev[s][i], g_next[s])
                if i == 0:
                    for imp in imp_by_step[s].get(step, ()):
                        u_hat[s][0] = u_hat[s][0] + st[s].impulse_hat(imp.index, imp.mass)
                g_prev[s][i] = g_next[s]
                val = st[s].ifft(u_hat[s][i])
                if i == 0 and s in carry:
                    val = val + carry[s]
                now[s][i] = val
                if probe_idx is None:
                    rec[s][i][step] = val
                else:
                    rec[s][i][step] = val[probe_sel]

    final = {s: [now[s][i] for i in range(n + 1)] for s in species}
    return SeriesSolution(
        sys, grid, rec, sys.lam, n, (t0, t0 + grid.t_end),
        None if probes is None else tuple(tuple(as_point(p, grid.dim)) for p in probes), final,
    )


def solve_series(
    sys: SpeciesSystem,
    grid: SpaceTimeGrid,
    sources: Mapping,
    n: int = 2,
    *,
    initial: Optional[Mapping[str, np.ndarray]] = None,
    probes: Optional[Sequence] = None,
) -> SeriesSolution:
    """Coefficients of orders 0..n for all species on ``grid``.

    ``sources`` maps species labels to a Waveform, Field, density array or
    scalar. With ``probes`` only the time traces at those points are kept.
    """
    if sys.dim != grid.dim:
        raise GridMismatch(f"system dim {sys.dim} != grid dim {grid.dim}")
    if n < 0:
        raise ValidationError("order must be nonnegative")
    return _march(sys, grid, _forcings(sys, grid, sources), n, initial, probes)


def _grid_of(*items) -> SpaceTimeGrid:
    fs = [f for f in items if isinstance(f, Field)]
    if not fs:
        raise ValidationError("a grid is required when no Field is given")
    return same_grid(*fs)


def solve_order0(sys: SpeciesSystem, f_a, f_b, f_c=None, init_c=None, grid: Optional[SpaceTimeGrid] = None) -> Dict[str, Field]:
    """Zero-order fields ``phi_X ** f_X`` (plus the carried C state if given)."""
    grid = grid or _grid_of(f_a, f_b, f_c)
    srcs = {"A": f_a, "B": f_b}
    if "C" in sys.species:
        srcs["C"] = f_c
    fc = _forcings(sys, grid, srcs)
    out = {}
    for s in sys.species:
        init = init_c if (s == "C" and init_c is not None) else None
        vals = K.duhamel(grid, sys.diffusion(s), fc[s].density, fc[s].impulses, init)
        out[s] = Field(grid, f"{s}0", vals)
    return out


def solve_order_i(sys: SpeciesSystem, prior_orders: Mapping[str, Sequence[Field]], i: int) -> Dict[str, Field]:
    """Order-i coefficients from full fields of orders 0..i-1."""
    if i < 1:
        raise ValidationError("use solve_order0 for i = 0")
    for s in sys.species:
        if s not in prior_orders or len(prior_orders[s]) < i:
            raise MissingPriorOrder(f"{s} needs orders 0..{i - 1}")
    grid = same_grid(*[f for s in sys.species for f in prior_orders[s][:i]])
    vals = {s: [f.values for f in prior_orders[s][:i]] for s in sys.species}
    src = order_sources(sys, vals, i)
    return {s: Field(grid, f"{s}{i}", K.duhamel(grid, sys.diffusion(s), src[s])) for s in sys.species}


# --- convergence radius ------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceBounds:
    m0: float
    n0: float
    g0: float
    h0: float
    sigma: float
    lambda_max: float


def _norms(src, grid: Optional[SpaceTimeGrid]):
    """(sup f, sup df/dt, sup f(.,0), sup grad f) for one source."""
    if src is None:
        return 0.0, 0.0, 0.0, 0.0
    if isinstance(src, Waveform):
        if src.deltas and any(d.weight > 0 for d in src.deltas):
            return math.inf, math.inf, math.inf, math.inf
        if grid is None:
            raise ValidationError("a grid is needed to bound an envelope source")
        src = to_forcing(src, grid).density
    if isinstance(src, Field):
        grid, src = src.grid, src.values
    arr = np.asarray(src, dtype=float)
    if arr.ndim == 0:
        v = abs(float(arr))
        return v, 0.0, v, 0.0
    if grid is None:
        raise ValidationError("a grid is needed for array sources")
    arr = np.broadcast_to(arr, grid.shape)
    sup = float(np.max(np.abs(arr)))
    dt_ = float(np.max(np.abs(np.gradient(arr, grid.dt, axis=0))))
    f0 = float(np.max(np.abs(arr[0])))
    dx_ = max(float(np.max(np.abs(np.gradient(arr, grid.dx, axis=a)))) for a in range(1, grid.dim + 1))
    return sup, dt_, f0, dx_


def convergence_bounds(sys: SpeciesSystem, f_a, f_b, T: Optional[float] = None, grid: Optional[SpaceTimeGrid] = None) -> ConvergenceBounds:
    """Constants of the uniform-convergence bound and the radius ``lambda_max``.

    Sources containing delta releases are unbounded, so every constant is
    infinite and ``lambda_max`` is 0 (the bound is vacuous for them).
    """
    if grid is None:
        for f in (f_a, f_b):
            if isinstance(f, Field):
                grid = f.grid
    if T is None:
        if grid is None:
            raise ValidationError("horizon T is required")
        T = grid.t_end
    na = _norms(f_a, grid)
    nb = _norms(f_b, grid)
    ka = math.sqrt(4 * T / (math.pi * sys.d_a))
    kb = math.sqrt(4 * T / (math.pi * sys.d_b))
    m0 = max(T * na[0], T * nb[0])
    n0 = max(T * na[1] + na[2], T * nb[1] + nb[2])
    g0 = max(ka * na[0], kb * nb[0])
    h0 = max(ka * na[3] if na[3] else 0.0, kb * nb[3] if nb[3] else 0.0)
    sigma = math.sqrt(4 * T / (math.pi * min(sys.d_a, sys.d_b, sys.d_c)))
    denom = T * (12 * m0 + 10 * sys.gamma)
    lam_max = math.inf if denom == 0 else 1.0 / denom
    return ConvergenceBounds(m0, n0, g0, h0, sigma, lam_max)


# --- splitting, top-level solve, Picard -------------------------------------------------

def split_points(nt: int, k: int) -> List[int]:
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > nt:
        raise SubintervalTooCoarse(f"{k} subintervals need at least {k + 1} time samples, grid has {nt + 1}")
    return [int(round(j * nt / k)) for j in range(k + 1)]


def solve_split(
    sys: SpeciesSystem,
    grid: SpaceTimeGrid,
    sources: Mapping,
    k: int,
    n: int = 2,
    *,
    probes: Optional[Sequence] = None,
    check: str = "raise",
):
    """Solve on k consecutive subintervals, carrying the assembled end state.

    The carried state ``I`` enters the next subinterval as
    ``I + phi ** (D lap_h I)`` in the zero-order term. Returns per-species
    Fields (arrays in probe mode) on the full grid.
    """
    cuts = split_points(grid.nt, k)
    forcing = _forcings(sys, grid, sources)
    if probes is None:
        out = {s: np.zeros(grid.shape) for s in sys.species}
    else:
        out = {s: np.zeros((grid.nt + 1, len(probes))) for s in sys.species}
    state = None
    for j in range(k):
        n0, n1 = cuts[j], cuts[j + 1]
        sub = grid.sub(n0, n1)
        fj = {s: forcing[s].sliced(n0, n1, first=(j == 0)) for s in sys.species}
        ser = _march(sys, sub, fj, n, state, probes, t0=n0 * grid.dt)
        asm = assemble(ser, sys.lam, n, check="ignore")
        for s in sys.species:
            vals = asm[s] if probes is not None else asm[s].values
            out[s][n0 : n1 + 1] = vals
        state = {s: sum(sys.lam ** i * ser.final[s][i] for i in range(n + 1)) for s in sys.species}
    for s in sys.species:
        _check_negative(s, out[s], check)
    if probes is not None:
        return out
    return {s: Field(grid, s, out[s]) for s in sys.species}


@dataclass
class SolveReport:
    concentrations: dict
    series: Optional[SeriesSolution]
    order: int
    k: int
    lambda_max: float
    remainder: Dict[str, float]
    bound_applicable: bool

    def metadata(self) -> dict:
        return {
            "order": self.order,
            "k": self.k,
            "lambda_max": self.lambda_max,
            "remainder": self.remainder,
            "bound_applicable": self.bound_applicable,
        }


def remainder_estimate(series: SeriesSolution, lam: float, n: int) -> Dict[str, float]:
    """lam^(n+1) |X_{n+1}|_inf / |sum_{i<=n} lam^i X_i|_inf per species."""
    if series.n_max < n + 1:
        raise OrderUnavailable("remainder needs order n+1")
    asm = assemble(series, lam, n, check="ignore")
    out = {}
    for s in series.orders:
        tot = asm[s] if series.probes is not None else asm[s].values
        denom = float(np.max(np.abs(tot)))
        num = lam ** (n + 1) * float(np.max(np.abs(series.orders[s][n + 1])))
        out[s] = 0.0 if num == 0 else (math.inf if denom == 0 else num / denom)
    return out


def solve(
    sys: SpeciesSystem,
    grid: SpaceTimeGrid,
    sources: Mapping,
    n: int = 2,
    *,
    probes: Optional[Sequence] = None,
    auto_split: bool = False,
    k: Optional[int] = None,
    override: bool = False,
    check: str = "raise",
) -> SolveReport:
    """Radius-checked solve with a remainder estimate.

    If the sources are bounded and ``lam >= lambda_max`` the call is refused
    unless ``auto_split`` (k = ceil(lam/lambda_max) + 1), an explicit ``k``
    or ``override`` is given. Impulsive sources make the bound vacuous; the
    solve proceeds and the report says so.
    """
    srcs = sources or {}
    b = convergence_bounds(sys, srcs.get("A"), srcs.get("B"), grid.t_end, grid)
    applicable = math.isfinite(b.m0)
    if k is None:
        k = 1
        if applicable and sys.lam >= b.lambda_max and not override:
            if not auto_split:
                raise ConvergenceRadiusExceeded(
                    f"lambda={sys.lam:.3g} >= lambda_max={b.lambda_max:.3g}; enable splitting or override"
                )
            k = math.ceil(sys.lam / b.lambda_max) + 1
    if k == 1:
        ser = solve_series(sys, grid, srcs, n + 1, probes=probes)
        conc = assemble(ser, sys.lam, n, check=check)
        return SolveReport(conc, ser, n, 1, b.lambda_max, remainder_estimate(ser, sys.lam, n), applicable)
    conc = solve_split(sys, grid, srcs, k, n, probes=probes, check=check)
    return SolveReport(conc, None, n, k, b.lambda_max, {}, applicable)


def picard_step(sys: SpeciesSystem, current: Mapping, sources: Mapping, grid: Optional[SpaceTimeGrid] = None) -> Dict[str, Field]:
    """One application of the Picard operator ``phi_X ** (reaction_X(current) + f_X)``."""
    fields_ = [f for f in current.values() if isinstance(f, Field)]
    grid = grid or same_grid(*fields_)
    state = {s: (current[s].values if isinstance(current[s], Field) else np.broadcast_to(current[s], grid.shape)) for s in sys.species}
    react = reaction_rates(sys, state)
    forcing = _forcings(sys, grid, sources)
    out = {}
    for s in sys.species:
        dens = react[s] if forcing[s].density is None else react[s] + forcing[s].density
        out[s] = Field(grid, s, K.duhamel(grid, sys.diffusion(s), dens, forcing[s].impulses))
    return out


def picard_iterate(sys: SpeciesSystem, grid: SpaceTimeGrid, sources: Mapping, steps: int) -> Dict[str, Field]:
    """``steps`` applications of the Picard operator starting from zero."""
    cur = {s: Field(grid, s, np.zeros(grid.shape)) for s in sys.species}
    for _ in range(steps):
        cur = picard_step(sys, cur, sources, grid)
    return cur


# --- uniform-source closed form ----------------------------------------------------------

def example1_alphas(n: int) -> np.ndarray:
    """alpha_0 = 1, alpha_i = sum_{j<i} alpha_j alpha_{i-1-j} / (2i+1)."""
    a = np.zeros(n + 1)
    a[0] = 1.0
    for i in range(1, n + 1):
        a[i] = np.dot(a[:i], a[i - 1 :: -1][:i]) / (2 * i + 1)
    return a


def example1_oracle(lam: float, t, n: int):
    """sum_{i<=n} (-1)^i alpha_i lam^i t^(2i+1) for a uniform unit source of A and B."""
    if n < 0:
        raise ValidationError("n must be >= 0")
    t = np.asarray(t, dtype=float)
    a = example1_alphas(n)
    out = np.zeros_like(t)
    for i in range(n, -1, -1):  # Horner in lam t^2
        out = out * (-lam * t ** 2) + a[i]
    out = out * t
    return float(out) if out.ndim == 0 else out


def example1_exact(lam: float, t):
    """Closed-form limit tanh(sqrt(lam) t)/sqrt(lam) of the same problem."""
    t = np.asarray(t, dtype=float)
    if lam == 0:
        return t
    r = math.sqrt(lam)
    return np.tanh(r * t) / r
