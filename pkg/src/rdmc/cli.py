"""Scenario-driven command line.

    rdmc <subcommand> --config <file.toml> [--out-dir DIR] [--threads N] [--override key=value]

Subcommands: solve, fdm, compare, optimize, sweep, validate. A bundled
scenario can be named without a path (``--config fig05_first_set``); ``rdmc
list`` prints them. Outputs are ``<scenario>__<artifact>.csv`` plus
``<scenario>__metadata.json``. Exit codes: 0 ok, 1 validation checks failed,
2 config error, 3 solver error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import fdm as F, kernels as K, modulate as M, perturb as P
from .errors import ConfigError, ConfigParseError, RdmcError, SolverError, ValidationError
from .fields import Scenario, SpaceTimeGrid, SpeciesSystem, Waveform, make_grid

log = logging.getLogger("rdmc")

OUT_ENV = "RDMC_OUT_DIR"
EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


# --- config loading ----------------------------------------------------------------------------

@dataclass
class Config:
    path: str
    text: str
    data: Dict[str, Any]

    def line_of(self, key: str) -> Optional[int]:
        pat = re.compile(rf"^\s*(\[+\s*)?{re.escape(key)}\b")
        for i, line in enumerate(self.text.splitlines(), 1):
            if pat.search(line):
                return i
        return None

    def error(self, key: str, msg: str) -> ConfigError:
        line = self.line_of(key.split(".")[-1])
        where = f"{self.path}:{line}" if line else self.path
        return ConfigError(f"{where}: {msg}")

    def section(self, name: str, required: bool = False) -> Dict[str, Any]:
        sec = self.data.get(name)
        if sec is None:
            if required:
                raise ConfigError(f"{self.path}: missing [{name}] section")
            return {}
        return sec

    def get(self, sec: str, key: str, default=None, required: bool = False):
        s = self.section(sec, required)
        if key not in s:
            if required:
                raise self.error(sec, f"[{sec}] needs '{key}'")
            return default
        return s[key]


def bundled_names() -> List[str]:
    root = resources.files("rdmc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _resolve(path: str) -> tuple:
    p = Path(path)
    if p.exists():
        return str(p), p.read_text()
    name = p.name[:-5] if p.name.endswith(".toml") else p.name
    res = resources.files("rdmc") / "scenarios" / f"{name}.toml"
    if res.is_file():
        return f"<bundled>/{name}.toml", res.read_text()
    raise ConfigError(f"{path}: no such file or bundled scenario")


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_override(data: Dict[str, Any], item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override '{key}' walks into a non-table")
    node[parts[-1]] = _parse_value(raw.strip())


_TOML_POS = re.compile(r"\(at line (\d+), column (\d+)\)")


def load_config(path: str, overrides=()) -> Config:
    name, text = _resolve(path)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _TOML_POS.search(str(exc))
        where = f"{name}:{m.group(1)}:{m.group(2)}" if m else name
        raise ConfigParseError(f"{where}: {_TOML_POS.sub('', str(exc)).strip()}") from None
    for item in overrides:
        apply_override(data, item)
    return Config(name, text, data)


# --- scenario construction ------------------------------------------------------------------------

_LAMBDA_KEYS = {1: "lambda_per_molecule_m_s", 2: "lambda_per_molecule_m2_s", 3: "lambda_per_molecule_m3_s"}


def build_system(cfg: Config) -> SpeciesSystem:
    s = cfg.section("system", required=True)
    dim = int(cfg.get("system", "dim", required=True))
    lam_key = _LAMBDA_KEYS.get(dim)
    if lam_key is None:
        raise cfg.error("dim", f"dim must be 1, 2 or 3, got {dim}")
    stray = [k for k in s if k.startswith("lambda") and k != lam_key]
    if stray:
        raise cfg.error(stray[0], f"'{stray[0]}' has the wrong units for dim={dim}; use '{lam_key}'")
    if "gamma_per_s" in s and "gamma_ratio" in s:
        raise cfg.error("gamma_ratio", "give gamma_per_s or gamma_ratio, not both")
    try:
        scen = Scenario(str(s.get("scenario", "MAC_ABC")).upper())
    except ValueError:
        raise cfg.error("scenario", f"unknown scenario {s.get('scenario')!r}") from None
    try:
        return SpeciesSystem(
            dim=dim,
            d_a=float(cfg.get("system", "d_a_m2_s", required=True)),
            d_b=float(cfg.get("system", "d_b_m2_s", required=True)),
            # the two-way system has no C; any positive placeholder will do
            d_c=float(s.get("d_c_m2_s", 1.0) if scen is Scenario.TWO_WAY_AB else cfg.get("system", "d_c_m2_s", required=True)),
            lam=float(cfg.get("system", lam_key, required=True)),
            gamma=float(s.get("gamma_per_s", s.get("gamma_ratio", 0.0))),
            beta=int(s.get("beta", 1)),
            scenario=scen,
        )
    except ValidationError as exc:
        raise cfg.error("system", str(exc)) from None


def build_grid(cfg: Config, dim: int) -> SpaceTimeGrid:
    cfg.section("grid", required=True)
    try:
        return make_grid(
            dim,
            float(cfg.get("grid", "extent_m", required=True)),
            int(cfg.get("grid", "nx", required=True)),
            float(cfg.get("grid", "t_end_s", required=True)),
            int(cfg.get("grid", "nt", required=True)),
        )
    except ValidationError as exc:
        raise cfg.error("grid", str(exc)) from None


def build_sources(cfg: Config, sys_: SpeciesSystem) -> Dict[str, Any]:
    out: Dict[str, list] = {}
    for j, src in enumerate(cfg.data.get("source", [])):
        sp = str(src.get("species", "")).upper()
        if sp not in sys_.species:
            raise cfg.error("species", f"source {j}: species {sp!r} not in {sys_.species}")
        kind = src.get("type", "impulse")
        try:
            if kind == "constant":
                item = float(src["value"])
            elif kind == "impulse":
                item = Waveform.impulses([(float(src.get("time_s", 0.0)), float(src["amount"]))], src.get("location_m", [0.0]))
            elif kind == "pulse":
                item = Waveform.pulse(float(src["rate"]), float(src["t0_s"]), float(src["t1_s"]), src.get("location_m", [0.0]))
            else:
                raise cfg.error("type", f"source {j}: unknown type {kind!r}")
        except KeyError as exc:
            raise cfg.error("source", f"source {j} ({kind}) needs {exc.args[0]!r}") from None
        out.setdefault(sp, []).append(item)
    merged: Dict[str, Any] = {}
    for sp, items in out.items():
        if len(items) == 1:
            merged[sp] = items[0]
        elif all(isinstance(x, Waveform) for x in items):
            merged[sp] = Waveform(tuple(d for w in items for d in w.deltas))
        else:
            merged[sp] = items
    return merged


def probe_points(cfg: Config, dim: int) -> List[tuple]:
    pts = cfg.get("probe", "points_m", [[0.0] * dim])
    return [tuple(float(v) for v in p) + (0.0,) * max(0, dim - len(p)) for p in pts]


def t_window(cfg: Config, grid: SpaceTimeGrid):
    w = cfg.get("compare", "t_window_s")
    return None if w is None else (float(w[0]), float(w[1]))


def fdm_config(cfg: Config, grid: SpaceTimeGrid) -> F.FdmConfig:
    return F.FdmConfig(grid, float(cfg.get("fdm", "stability_safety", 0.5)), cfg.get("fdm", "substeps"))


# --- output ----------------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Artifacts:
    def __init__(self, out_dir: Path, name: str):
        self.out_dir = out_dir
        self.name = name
        self.written: List[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, artifact: str, ext: str = "csv") -> Path:
        return self.out_dir / f"{self.name}__{artifact}.{ext}"

    def csv(self, artifact: str, header: List[str], rows) -> Path:
        p = self.path(artifact)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.written.append(p.name)
        return p

    def record(self, artifact: str, rec: Dict[str, Any]) -> Path:
        p = self.path(artifact, "txt")
        p.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in rec.items()))
        self.written.append(p.name)
        return p

    def metadata(self, meta: Dict[str, Any]) -> Path:
        p = self.path("metadata", "json")
        p.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
        return p


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def render_svg(csv_path: Path, x: str, ys: List[str], logy: bool = False) -> Optional[Path]:
    """Line plot of CSV columns via matplotlib, when it is installed."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", csv_path.name)
        return None
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    xs = [float(r[x]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in ys:
        ax.plot(xs, [float(r[col]) for r in rows], label=col)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.legend()
    out = csv_path.with_suffix(".svg")
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


# --- runners ------------------------------------------------------------------------------------

@dataclass
class Context:
    cfg: Config
    system: SpeciesSystem
    grid: SpaceTimeGrid
    sources: Dict[str, Any]
    probes: List[tuple]
    art: Artifacts
    threads: int
    svg: bool
    meta: Dict[str, Any] = field(default_factory=dict)


def _orders(ctx: Context) -> List[int]:
    o = ctx.cfg.get("solver", "order", 1)
    return [int(x) for x in (o if isinstance(o, list) else [o])]


def run_solve(ctx: Context) -> int:
    g, sy = ctx.grid, ctx.system
    split = ctx.cfg.get("solver", "split_k")
    auto = bool(ctx.cfg.get("solver", "auto_split", False))
    override = bool(ctx.cfg.get("solver", "override_radius", False))
    cols, data = ["t_s"], [g.times()]
    for n in _orders(ctx):
        rep = P.solve(sy, g, ctx.sources, n, probes=ctx.probes, auto_split=auto, k=split, override=override, check="warn")
        ctx.meta.setdefault("solver", {})[f"order_{n}"] = rep.metadata()
        for s in sy.species:
            for j in range(len(ctx.probes)):
                cols.append(f"{s}_p{j}_order{n}")
                data.append(rep.concentrations[s][:, j])
    if ctx.cfg.get("solver", "example1_oracle", False):
        for n in _orders(ctx):
            cols.append(f"oracle_order{n}")
            data.append(P.example1_oracle(sy.lam, g.times(), n))
        cols.append("exact")
        data.append(P.example1_exact(sy.lam, g.times()))
    p = ctx.art.csv("series", cols, zip(*data))
    if ctx.svg:
        render_svg(p, "t_s", cols[1:])
    return EXIT_OK


def run_fdm(ctx: Context) -> int:
    cfgf = fdm_config(ctx.cfg, ctx.grid)
    res = F.fdm_solve(ctx.system, ctx.sources, cfgf, probes=ctx.probes)
    ctx.meta["fdm"] = res.report()
    cols, data = ["t_s"], [ctx.grid.times()]
    for s in ctx.system.species:
        for j in range(len(ctx.probes)):
            cols.append(f"{s}_p{j}")
            data.append(res[s][:, j])
    p = ctx.art.csv("fdm", cols, zip(*data))
    if ctx.svg:
        render_svg(p, "t_s", cols[1:])
    return EXIT_OK


def run_compare(ctx: Context) -> int:
    g, sy = ctx.grid, ctx.system
    species = ctx.cfg.get("compare", "species", "C")
    probe = ctx.probes[0]
    cfgf = fdm_config(ctx.cfg, g)
    win = t_window(ctx.cfg, g)
    thr = float(ctx.cfg.get("compare", "threshold", 0.05))
    k = ctx.cfg.get("solver", "split_k")
    exact = F.fdm_solve(sy, ctx.sources, cfgf, probes=[probe])
    ctx.meta["fdm"] = exact.report()
    ex = exact[species][:, 0]
    cols, data = ["t_s", "fdm"], [g.times(), ex]
    summary = []
    orders = _orders(ctx)
    ser = None if k else P.solve_series(sy, g, ctx.sources, max(orders), probes=[probe])
    for n in orders:
        if k:
            ap = P.solve_split(sy, g, ctx.sources, int(k), n, probes=[probe], check="ignore")[species][:, 0]
        else:
            ap = P.assemble(ser, sy.lam, n, check="ignore")[species][:, 0]
        err = F._rel_errors(ex, ap, g.times(), win)
        cols += [f"order{n}", f"rel_err_order{n}"]
        data += [ap, err]
        finite = err[np.isfinite(err)]
        bad = np.nonzero(np.isfinite(err) & (err > thr))[0]
        summary.append({"order": n, "max_rel_error": float(finite.max()) if finite.size else 0.0,
                        "t_max_s": g.t_end if bad.size == 0 else float(g.times()[max(bad[0] - 1, 0)])})
    ctx.meta["compare"] = {"species": species, "probe_m": list(probe), "t_window_s": win, "threshold": thr,
                           "split_k": k, "orders": summary}
    p = ctx.art.csv("compare", cols, zip(*data))
    if ctx.svg:
        render_svg(p, "t_s", ["fdm"] + [f"order{n}" for n in orders])
    return EXIT_OK


def _mac_inputs(ctx: Context):
    o = ctx.cfg.section("optimize", required=True)
    geo = M.Geometry(d_b=tuple(o.get("d_b_m", [1e-4])), d_r=tuple(o.get("d_r_m", [5e-5])), d_a=tuple(o.get("d_a_m", [0.0])))
    T = float(o.get("t_slot_s", ctx.grid.t_end))
    V = float(ctx.cfg.get("optimize", "volume_m3", required=True))
    search = M.MacSearch(n_coarse=int(o.get("n_coarse", 16)), n_table=int(o.get("n_table", 61)),
                         amp_levels=int(o.get("amp_levels", 9)), tol=float(o.get("tol", 1e-4)))
    return geo, T, V, search


def run_optimize(ctx: Context) -> int:
    kind = ctx.cfg.get("optimize", "kind", required=True)
    sy = ctx.system
    o = ctx.cfg.section("optimize")
    budgets = (float(o.get("s_a", 0)), float(o.get("s_b", 0)))
    if kind == "mac":
        geo, T, V, search = _mac_inputs(ctx)
        res = M.optimize_mac(sy, budgets, geo, T, V, search)
        pulse = M.pulse_baseline(sy, budgets, geo, T, V, int(o.get("pulse_levels", 32)), res.table)
        ctx.art.record("design", res.record())
        ctx.art.record("pulse", pulse.record())
        ctx.art.csv("g_table", ["t_a_s"] + [f"t_b={t!r}" for t in res.table.times],
                    [[ta] + list(row) for ta, row in zip(res.table.times, res.table.values)])
        ctx.meta["optimize"] = {"kind": kind, "pe": res.pe, "pulse_pe": pulse.pe}
    elif kind == "amplify":
        # B is co-located with A unless placed explicitly
        geo = M.Geometry(d_b=tuple(o.get("d_b_m", o.get("d_a_m", [0.0]))), d_r=tuple(o["d_r_m"]), d_a=tuple(o.get("d_a_m", [0.0])))
        noise = ctx.sources.get("C")
        V = float(o["volume_m3"])
        model = M.AmplifyModel(sy, ctx.grid, geo, noise)
        s_list = [float(x) for x in o.get("s_a_sweep", [budgets[0]])]
        rows = []
        for sa in s_list:
            r = M.optimize_amplify(sy, (sa, budgets[1]), geo, ctx.grid, V, model=model)
            rows.append([sa, r.t_a, r.t_b, r.rho1, r.pe])
        main = M.optimize_amplify(sy, budgets, geo, ctx.grid, V, model=model)
        ctx.art.record("design", main.record())
        ctx.art.csv("s_a_sweep", ["s_a", "t_a1_s", "t_b1_s", "rho1", "pe"], rows)
        ctx.meta["optimize"] = {"kind": kind, "t_a1_s": main.t_a, "t_b1_s": main.t_b, "pe": main.pe}
    elif kind == "twoway":
        d_b = tuple(o["d_b_m"])
        V = float(o["volume_m3"])
        w = tuple(float(x) for x in o.get("weights", [1, 1, 1, 1]))
        res = M.optimize_twoway(sy, budgets, d_b, ctx.grid.t_end, V, w, int(o.get("n_coarse", 16)))
        ctx.art.record("design", res.record())
        ctx.meta["optimize"] = {"kind": kind, **res.record()}
    else:
        raise ctx.cfg.error("kind", f"unknown optimize kind {kind!r} (mac | amplify | twoway)")
    return EXIT_OK


def run_sweep(ctx: Context) -> int:
    sw = ctx.cfg.section("sweep", required=True)
    param = sw.get("parameter")
    values = [float(v) for v in sw.get("values", [])]
    if not values:
        raise ctx.cfg.error("values", "sweep needs a nonempty 'values' list")
    g, sy = ctx.grid, ctx.system
    probe = ctx.probes[0] if ctx.probes else None
    cfgf = fdm_config(ctx.cfg, g)
    win = t_window(ctx.cfg, g)
    thr = float(ctx.cfg.get("compare", "threshold", 0.05))
    species = ctx.cfg.get("compare", "species", "C")
    outputs = sw.get("outputs", ["relative_error", "t_max"])
    if param == "lambda":
        if "relative_error" in outputs:
            rows = []
            for n in _orders(ctx):
                pts = F.relative_error_curve(sy, ctx.sources, probe, n, values, g, cfgf, species=species,
                                             t_window=win, workers=ctx.threads)
                rows += [(n, lam, e) for lam, e in pts]
            ctx.art.csv("relative_error", ["order", "lambda", "max_rel_error"], rows)
        if "t_max" in outputs:
            pts = F.t_max_sweep(sy, ctx.sources, probe, g, threshold=thr, lambda_list=values, order_n=_orders(ctx)[0],
                                fdm_cfg=cfgf, species=species, workers=ctx.threads, t_window=win)
            ctx.art.csv("t_max", ["lambda", "t_max_s"], pts)
    elif param == "d_c":
        if "curves" in outputs:
            cols, data = ["t_s"], [g.times()]
            for dc in values:
                ser = P.solve_series(sy.with_(d_c=dc), g, ctx.sources, _orders(ctx)[0], probes=[probe])
                cols.append(f"C_dc={dc!r}")
                data.append(P.assemble(ser, sy.lam, _orders(ctx)[0], check="ignore")[species][:, 0])
            p = ctx.art.csv("c_vs_dc", cols, zip(*data))
            if ctx.svg:
                render_svg(p, "t_s", cols[1:])
        if "t_max" in outputs:
            pts = F.t_max_sweep(sy, ctx.sources, probe, g, threshold=thr, d_c_list=values, order_n=_orders(ctx)[0],
                                fdm_cfg=cfgf, species=species, workers=ctx.threads, t_window=win)
            ctx.art.csv("t_max", ["d_c_m2_s", "t_max_s"], pts)
    elif param == "s":
        geo, T, V, search = _mac_inputs(ctx)
        res = M.sweep_mac(sy, geo, T, V, [(s, s) for s in values], search,
                          int(ctx.cfg.get("optimize", "pulse_levels", 32)), search.n_table)
        rows = [(sa, r.pe, pu.pe) for sa, _, r, pu in res]
        p = ctx.art.csv("pe_vs_s", ["s", "pe_two_delta", "pe_pulse"], rows)
        if ctx.svg:
            render_svg(p, "s", ["pe_two_delta", "pe_pulse"], logy=True)
    else:
        raise ctx.cfg.error("parameter", f"unknown sweep parameter {param!r} (lambda | d_c | s)")
    ctx.meta["sweep"] = {"parameter": param, "values": values}
    return EXIT_OK


def run_validate(ctx: Context) -> int:
    """Invariant checks on the scenario; one row per check."""
    g, sy = ctx.grid, ctx.system
    rows = []

    def check(name, value, ok):
        rows.append((name, value, "pass" if ok else "fail"))

    pts = [np.asarray(s.location) for w in ctx.sources.values() if isinstance(w, Waveform) for s in w.deltas]
    need = g.suggested_extent(sy.d_max, pts + [np.asarray(p) for p in ctx.probes])
    check("extent_six_sigma", need, g.extent >= need)
    lin = sy.with_(lam=0.0)
    ser = P.solve_series(lin, g, ctx.sources, 0)
    zero = P.assemble(ser, 0.0, 0)
    for s in sy.species:
        w = ctx.sources.get(s)
        # conservation is only checkable once every release has happened
        if not (isinstance(w, Waveform) and w.envelope is None and all(d.time == 0 for d in w.deltas)):
            continue
        m = zero[s].total_mass()
        drift = float(np.max(np.abs(m - m[0]))) / m[0]
        check(f"mass_conservation_{s}", drift, drift < 1e-6)
    n = max(_orders(ctx))
    full = P.solve_series(sy, g, ctx.sources, n)
    asm = P.assemble(full, sy.lam, n, check="ignore")
    for s in sy.species:
        neg = asm[s].negative_excursion()
        check(f"negative_excursion_{s}", neg, neg <= 1e-6)
    if ctx.probes:
        try:
            change, flagged = F.refinement_check(sy, ctx.sources, ctx.probes[0], fdm_config(ctx.cfg, g),
                                                 species=ctx.cfg.get("compare", "species", "C"))
            check("fdm_refinement_change", change, not flagged)
        except SolverError as exc:
            check("fdm_refinement_change", str(exc), False)
    ctx.art.csv("validate", ["check", "value", "status"], rows)
    failed = [r[0] for r in rows if r[2] == "fail"]
    ctx.meta["validate"] = {"failed": failed}
    for r in rows:
        print(f"{r[2].upper():4s} {r[0]} = {r[1]}")
    return EXIT_CHECKS if failed else EXIT_OK


RUNNERS = {
    "solve": run_solve,
    "fdm": run_fdm,
    "compare": run_compare,
    "optimize": run_optimize,
    "sweep": run_sweep,
    "validate": run_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdmc", description="Reaction-diffusion perturbation solver and waveform design.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=RUNNERS[name].__doc__ or name)
        p.add_argument("--config", required=True, help="scenario TOML file or bundled scenario name")
        p.add_argument("--out-dir", default=os.environ.get(OUT_ENV, "rdmc_out"),
                       help=f"output directory (default ${OUT_ENV} or ./rdmc_out)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and FFTs")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config key to replace, e.g. system.lambda_per_molecule_m_s=1e-21")
        p.add_argument("--svg", action="store_true", help="also render SVG plots (needs matplotlib)")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list", help="print bundled scenario names")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for n in bundled_names():
            print(n)
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override)
        name = str(cfg.get("scenario", "name", Path(cfg.path).stem))
        sy = build_system(cfg)
        grid = build_grid(cfg, sy.dim)
        sources = build_sources(cfg, sy)
        probes = probe_points(cfg, sy.dim)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    K.set_workers(args.threads)
    ctx = Context(cfg, sy, grid, sources, probes, Artifacts(Path(args.out_dir), name), args.threads, args.svg)
    started = time.perf_counter()
    try:
        code = RUNNERS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ValidationError, RdmcError) as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    b = P.convergence_bounds(sy, sources.get("A"), sources.get("B"), grid.t_end, grid)
    ctx.meta.update(
        scenario=name,
        command=args.command,
        config=cfg.path,
        overrides=list(args.override),
        lambda_max=b.lambda_max,
        grid={"dim": grid.dim, "extent_m": grid.extent, "nx": grid.nx, "t_end_s": grid.t_end, "nt": grid.nt,
              "dx_m": grid.dx, "dt_s": grid.dt},
        solver_order=_orders(ctx),
        artifacts=ctx.art.written,
        wall_time_s=time.perf_counter() - started,
    )
    ctx.art.metadata(ctx.meta)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
