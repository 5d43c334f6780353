"""Space-time grids, species systems, release waveforms and sampled fields."""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    GridMismatch,
    LocationOutsideGrid,
    NonPositiveExtent,
    TooFewSamples,
    ValidationError,
)


class SnapWarning(UserWarning):
    """A delta time or location was moved to the nearest grid sample."""


class Scenario(str, enum.Enum):
    MAC_ABC = "MAC_ABC"          # A + B <-> C, receiver senses C
    AMPLIFY_ABC = "AMPLIFY_ABC"  # A + C -> P1, B + beta C -> P2
    TWO_WAY_AB = "TWO_WAY_AB"    # A + B -> P, each node senses the other's species


SPECIES = {
    Scenario.MAC_ABC: ("A", "B", "C"),
    Scenario.AMPLIFY_ABC: ("A", "B", "C"),
    Scenario.TWO_WAY_AB: ("A", "B"),
}


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid; nodes sit at ``(i - nx//2) * dx`` so the origin is a node.

    Time samples are ``n * dt`` for ``n = 0..nt`` (both ends included).
    """

    dim: int
    extent: float
    nx: int
    t_end: float
    nt: int

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / self.nx

    @property
    def dt(self) -> float:
        return self.t_end / self.nt

    @property
    def spatial_shape(self) -> tuple:
        return (self.nx,) * self.dim

    @property
    def shape(self) -> tuple:
        return (self.nt + 1,) + self.spatial_shape

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.dim

    @property
    def center(self) -> int:
        return self.nx // 2

    def axis(self) -> np.ndarray:
        return (np.arange(self.nx) - self.center) * self.dx

    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def mesh(self) -> list:
        ax = self.axis()
        return np.meshgrid(*([ax] * self.dim), indexing="ij")

    def radius2(self, point=None) -> np.ndarray:
        """Squared distance of every node from ``point`` (default origin)."""
        p = np.zeros(self.dim) if point is None else as_point(point, self.dim)
        ax = self.axis()
        r2 = np.zeros(self.spatial_shape)
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = self.nx
            r2 = r2 + ((ax - p[a]) ** 2).reshape(shape)
        return r2

    def cell_index(self, point, warn: bool = True) -> tuple:
        p = as_point(point, self.dim)
        if np.any(np.abs(p) >= self.extent):
            raise LocationOutsideGrid(f"point {tuple(p)} outside +-{self.extent}")
        idx = np.rint(p / self.dx).astype(int) + self.center
        if np.any(idx < 0) or np.any(idx >= self.nx):
            raise LocationOutsideGrid(f"point {tuple(p)} outside the sampled box")
        snap = float(np.max(np.abs((idx - self.center) * self.dx - p)))
        if warn and snap > 1e-9 * self.dx:
            warnings.warn(f"location {tuple(p)} snapped by {snap:.3g} m", SnapWarning, stacklevel=3)
        return tuple(int(i) for i in idx)

    def time_index(self, t: float, warn: bool = True) -> int:
        if t < -1e-12 * self.t_end or t > self.t_end * (1 + 1e-12):
            raise ValidationError(f"time {t} outside [0, {self.t_end}]")
        n = int(round(t / self.dt))
        n = min(max(n, 0), self.nt)
        snap = abs(n * self.dt - t)
        if warn and snap > 1e-9 * self.dt:
            warnings.warn(f"time {t} snapped by {snap:.3g} s", SnapWarning, stacklevel=3)
        return n

    def sub(self, n0: int, n1: int) -> "SpaceTimeGrid":
        """Grid over time samples n0..n1 (re-based to start at zero)."""
        return replace(self, t_end=(n1 - n0) * self.dt, nt=n1 - n0)

    def suggested_extent(self, d_max: float, points=()) -> float:
        """Box half-width meeting the six-sigma rule for the given points."""
        reach = max((float(np.max(np.abs(as_point(p, self.dim)))) for p in points), default=0.0)
        return reach + 6.0 * math.sqrt(2.0 * d_max * self.t_end)

    def check_extent(self, d_max: float, points=()) -> bool:
        need = self.suggested_extent(d_max, points)
        if self.extent < need:
            warnings.warn(
                f"box half-width {self.extent:.3g} m is below the six-sigma rule ({need:.3g} m)",
                RuntimeWarning,
                stacklevel=2,
            )
            return False
        return True


def make_grid(dim: int, extent: float, nx: int, t_end: float, nt: int) -> SpaceTimeGrid:
    if dim not in (1, 2, 3):
        raise ValidationError(f"dim must be 1, 2 or 3, got {dim}")
    if not extent > 0 or not t_end > 0:
        raise NonPositiveExtent(f"extent={extent}, t_end={t_end}")
    if nx < 2 or nt < 2:
        raise TooFewSamples(f"nx={nx}, nt={nt}")
    return SpaceTimeGrid(int(dim), float(extent), int(nx), float(t_end), int(nt))


def as_point(p, dim: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(p, dtype=float))
    if a.size == 1 and dim > 1 and np.ndim(p) == 0:
        raise ValidationError(f"expected a {dim}-vector, got scalar {p}")
    if a.size < dim:
        raise ValidationError(f"expected a {dim}-vector, got {p}")
    # Extra trailing coordinates must be zero (a 3-vector may describe a 1D point).
    if a.size > dim and np.any(a[dim:] != 0):
        raise ValidationError(f"point {p} has nonzero coordinates beyond dim={dim}")
    return a[:dim]


@dataclass(frozen=True)
class SpeciesSystem:
    dim: int
    d_a: float
    d_b: float
    d_c: float
    lam: float
    gamma: float = 0.0
    beta: int = 1
    scenario: Scenario = Scenario.MAC_ABC

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValidationError(f"dim must be 1, 2 or 3, got {self.dim}")
        if min(self.d_a, self.d_b, self.d_c) <= 0:
            raise ValidationError("diffusion coefficients must be positive")
        if self.lam < 0 or self.gamma < 0:
            raise ValidationError("rates must be nonnegative")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ValidationError(f"beta must be a positive integer, got {self.beta}")
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "beta", int(self.beta))

    @property
    def species(self) -> tuple:
        return SPECIES[self.scenario]

    def diffusion(self, species: str) -> float:
        return {"A": self.d_a, "B": self.d_b, "C": self.d_c}[species]

    @property
    def d_max(self) -> float:
        return max(self.diffusion(s) for s in self.species)

    def with_(self, **kw) -> "SpeciesSystem":
        return replace(self, **kw)


@dataclass(frozen=True)
class Delta:
    time: float
    weight: float
    location: tuple

    def __post_init__(self):
        if self.weight < 0:
            raise ValidationError(f"negative delta weight {self.weight}")
        object.__setattr__(self, "location", tuple(np.atleast_1d(np.asarray(self.location, float))))


@dataclass(frozen=True)
class Envelope:
    """Piecewise-linear release rate through (times, rates) at one location."""

    times: tuple
    rates: tuple
    location: tuple

    def __post_init__(self):
        t = np.asarray(self.times, float)
        r = np.asarray(self.rates, float)
        if t.ndim != 1 or t.shape != r.shape or t.size < 2:
            raise ValidationError("envelope needs matching 1D times and rates (>= 2 samples)")
        if np.any(np.diff(t) <= 0) or np.any(r < 0):
            raise ValidationError("envelope times must increase and rates be nonnegative")
        object.__setattr__(self, "times", tuple(t))
        object.__setattr__(self, "rates", tuple(r))
        object.__setattr__(self, "location", tuple(np.atleast_1d(np.asarray(self.location, float))))

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.rates, left=0.0, right=0.0)

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.rates, self.times))


@dataclass(frozen=True)
class Waveform:
    deltas: tuple = ()
    envelope: Optional[Envelope] = None
    mass_budget: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(self.deltas))
        if self.mass > self.mass_budget * (1 + 1e-9):
            raise ValidationError(f"released mass {self.mass:.6g} exceeds budget {self.mass_budget:.6g}")
        if any(d.time < 0 for d in self.deltas):
            raise ValidationError("delta times must be nonnegative")

    @property
    def mass(self) -> float:
        m = sum(d.weight for d in self.deltas)
        if self.envelope is not None:
            m += self.envelope.mass
        return m

    @classmethod
    def impulses(cls, pairs: Sequence, location, mass_budget: float = math.inf) -> "Waveform":
        """Waveform from ``[(time, weight), ...]`` all released at ``location``."""
        return cls(tuple(Delta(t, w, location) for t, w in pairs), None, mass_budget)

    @classmethod
    def pulse(cls, rate: float, t0: float, t1: float, location, mass_budget: float = math.inf) -> "Waveform":
        return cls((), Envelope((t0, t1), (rate, rate), location), mass_budget)


@dataclass(frozen=True, eq=False)
class Field:
    """Values indexed (time, space...) on ``grid`` for one species."""

    grid: SpaceTimeGrid
    species: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.shape:
            raise GridMismatch(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"field {self.species} has non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at(self, point) -> np.ndarray:
        """Time trace at the node nearest ``point``."""
        return self.values[(slice(None),) + self.grid.cell_index(point)]

    def total_mass(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.dim + 1))
        return self.values.sum(axis=axes) * self.grid.cell_volume

    def negative_excursion(self) -> float:
        """Most negative value relative to the peak magnitude (0 if none)."""
        peak = float(np.max(np.abs(self.values)))
        if peak == 0.0:
            return 0.0
        return max(0.0, -float(self.values.min()) / peak)

    def to_csv(self, path) -> None:
        g = self.grid
        cols = ["t", "x", "y", "z"][: g.dim + 1] + ["value"]
        t = g.times()
        ax = g.axis()
        idx = np.indices(self.values.shape).reshape(g.dim + 1, -1)
        rows = np.column_stack([t[idx[0]]] + [ax[idx[a]] for a in range(1, g.dim + 1)] + [self.values.ravel()])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(float(x)) for x in r])

    def to_binary(self, path) -> None:
        g = self.grid
        header = np.array([g.dim] + [g.nx] * g.dim + [g.nt], dtype="<i8")
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.array([g.dx, g.dt], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path, species: str = "") -> "Field":
        raw = open(path, "rb").read()
        dim = int(np.frombuffer(raw, "<i8", 1)[0])
        ints = np.frombuffer(raw, "<i8", dim + 2)
        nx, nt = int(ints[1]), int(ints[-1])
        dx, dt = np.frombuffer(raw, "<f8", 2, offset=8 * (dim + 2))
        g = SpaceTimeGrid(dim, dx * nx / 2.0, nx, dt * nt, nt)
        vals = np.frombuffer(raw, "<f8", offset=8 * (dim + 4)).reshape(g.shape)
        return cls(g, species, vals)


def zeros(grid: SpaceTimeGrid, species: str) -> Field:
    return Field(grid, species, np.zeros(grid.shape))


def same_grid(*fields_: Field) -> SpaceTimeGrid:
    grids = {f.grid for f in fields_ if f is not None}
    if len(grids) != 1:
        raise GridMismatch("fields live on different grids")
    return grids.pop()


def discretize_waveform(w: Waveform, g: SpaceTimeGrid, species: str = "") -> Field:
    """Render ``w`` as a density on ``g``.

    A delta of weight ``q`` becomes ``q / (dx**dim * dt)`` in one cell. The
    envelope is sampled at the grid times with trapezoid end weights, so the
    discrete integral of the field reproduces the released mass.
    """
    out = np.zeros(g.shape)
    for d in w.deltas:
        n = g.time_index(d.time)
        out[(n,) + g.cell_index(d.location)] += d.weight / (g.cell_volume * g.dt)
    if w.envelope is not None:
        rate = w.envelope(g.times())
        rate[0] *= 0.5
        rate[-1] *= 0.5
        out[(slice(None),) + g.cell_index(w.envelope.location)] += rate / g.cell_volume
    return Field(g, species, out)


def field_mass(f: Field) -> float:
    return float(f.values.sum() * f.grid.cell_volume * f.grid.dt)
