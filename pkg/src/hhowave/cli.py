"""Batch drivers: simulate, converge, cfl and efficiency subcommands.

Runs are configured by a JSON file (see README for the schema); a few common
flags override file values. Outputs are deterministic CSV tables, ASCII VTU
snapshots of cell-averaged fields, and a machine-readable JSON run summary.
Wall-clock timing covers assembly, factorization and the time loop; mesh
generation and file IO are excluded.

Exit codes: 0 success, 2 configuration error, 3 instability detected,
4 linear solver failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import hho, mesh as msh, scenarios, timestep
from .materials import FluidMaterial, MaterialMap, SolidMaterial

log = logging.getLogger("hhowave")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSTABILITY = 3
EXIT_SOLVER = 4

EXPLICIT_SCHEMES = ("ERK2", "ERK3", "ERK4")
IMPLICIT_SCHEMES = ("SDIRK22", "SDIRK23", "SDIRK34")


class CliConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "degree": 1,
    "scheme": "ERK2",
    "final_time": 1.0,
    "materials": "academic",
    "scenario": {"type": "zero"},
    "stabilization": {},
    "solver": {"kind": "direct-lu", "tol": 1e-8, "maxiter": 2000},
    "sensors": [],
    "output": {},
}


def load_config(path=None, overrides=None) -> dict:
    """Read, merge and validate a run configuration."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise CliConfigError("config root must be a JSON object")
        _deep_update(cfg, user)
    if overrides:
        _deep_update(cfg, overrides)
    validate_config(cfg)
    return cfg


def _deep_update(base, extra):
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def validate_config(cfg: dict):
    if "mesh" not in cfg or not isinstance(cfg["mesh"], dict):
        raise CliConfigError("config requires a 'mesh' section")
    scheme = str(cfg.get("scheme", "")).upper()
    if scheme not in EXPLICIT_SCHEMES + IMPLICIT_SCHEMES:
        raise CliConfigError(f"unknown scheme {cfg.get('scheme')!r}")
    cfg["scheme"] = scheme
    k = cfg.get("degree")
    if not isinstance(k, int) or k < 0 or k > 4:
        raise CliConfigError("degree must be an integer in [0, 4]")
    mode = cfg.get("order_mode")
    explicit = scheme in EXPLICIT_SCHEMES
    if mode is None:
        cfg["order_mode"] = "equal" if explicit else "mixed"
    elif mode not in ("equal", "mixed"):
        raise CliConfigError("order_mode must be 'equal' or 'mixed'")
    elif explicit and mode == "mixed":
        raise CliConfigError("explicit schemes use the equal-order path")
    elif not explicit and mode == "equal":
        raise CliConfigError("implicit schemes use the mixed-order path")
    if "dt" not in cfg and "cfl" not in cfg:
        raise CliConfigError("either 'dt' or a target 'cfl' is required")
    if cfg.get("final_time", 0) <= 0:
        raise CliConfigError("final_time must be positive")
    stype = cfg.get("scenario", {}).get("type")
    if stype not in ("zero", "manufactured", "ricker"):
        raise CliConfigError(f"unknown scenario type {stype!r}")
    for sensor in cfg.get("sensors", []):
        if sensor.get("kind") not in ("fluid", "solid", "interface"):
            raise CliConfigError(f"unknown sensor kind in {sensor}")
        if len(sensor.get("position", ())) != 2:
            raise CliConfigError(f"sensor position must be [x, y] in {sensor}")


# ---------------------------------------------------------------------------
# construction from config

def build_mesh(mesh_cfg: dict) -> msh.PolyMesh:
    if "file" in mesh_cfg:
        return msh.read_msh(mesh_cfg["file"], region_map=mesh_cfg.get("region_map"))
    if "fixture" in mesh_cfg:
        return msh.load_text(mesh_cfg["fixture"])
    if "nonconforming" in mesh_cfg:
        sub = mesh_cfg["nonconforming"]
        fluid = build_mesh(sub["fluid"])
        solid = build_mesh(sub["solid"])
        return msh.merge_nonconforming(fluid, solid)
    try:
        spec = msh.MeshGenSpec(
            family=mesh_cfg.get("family", "cartesian"),
            level=int(mesh_cfg.get("level", 0)),
            fluid_rect=_rect(mesh_cfg.get("fluid_rect")),
            solid_rect=_rect(mesh_cfg.get("solid_rect")),
            n_fluid=_pair(mesh_cfg.get("n_fluid")),
            n_solid=_pair(mesh_cfg.get("n_solid")),
        )
        return msh.generate(spec)
    except msh.MeshError as exc:
        raise CliConfigError(f"mesh generation failed: {exc}") from exc


def _rect(val):
    if val is None:
        return None
    if len(val) != 4:
        raise CliConfigError(f"rectangle must be [x0, y0, x1, y1], got {val}")
    return tuple(float(v) for v in val)


def _pair(val):
    if val is None:
        return None
    return int(val[0]), int(val[1])


def build_materials(cfg) -> MaterialMap:
    spec = cfg.get("materials", "academic")
    if isinstance(spec, str):
        return scenarios.builtin_materials(spec)
    table = {}
    for region, entry in spec.items():
        if "kappa" in entry:
            table[region] = FluidMaterial(rho=float(entry["rho"]),
                                          kappa=float(entry["kappa"]))
        elif "c_s" in entry:
            table[region] = SolidMaterial.from_speeds(
                float(entry["rho"]), float(entry["c_p"]), float(entry["c_s"]))
        elif "c_p" in entry:
            table[region] = FluidMaterial.from_speeds(
                float(entry["rho"]), float(entry["c_p"]))
        else:
            raise CliConfigError(f"material entry for {region!r} needs kappa or c_p/c_s")
    return MaterialMap(by_region=table)


def build_stabilization(cfg) -> hho.StabilizationConfig:
    stab = cfg.get("stabilization", {})
    if cfg["order_mode"] == "equal":
        return hho.StabilizationConfig.explicit(
            eta_fluid=float(stab.get("eta_fluid", 0.8)),
            eta_solid=float(stab.get("eta_solid", 1.5)))
    return hho.StabilizationConfig.implicit(
        eta_fluid=float(stab.get("eta_fluid", 1.0)),
        eta_solid=float(stab.get("eta_solid", 1.0)))


def build_scenario(cfg, system, materials):
    """Initial state and forcing for the configured scenario."""
    sc = cfg.get("scenario", {"type": "zero"})
    stype = sc.get("type", "zero")
    if stype == "zero":
        return np.zeros(system.n_cell_dofs), None, None
    if stype == "manufactured":
        case = scenarios.ManufacturedCase(float(sc.get("omega", 5.0)),
                                          float(sc.get("theta", math.sqrt(2.0))),
                                          materials)
        u0 = scenarios.manufactured_initial_state(system, case)
        forcing = scenarios.manufactured_forcing(system, case)
        return u0, forcing, case
    if stype == "ricker":
        fluid = None
        for mat in materials.by_region.values():
            if isinstance(mat, FluidMaterial):
                fluid = mat
                break
        if fluid is None:
            raise CliConfigError("ricker scenario needs a fluid material")
        cfg_r = scenarios.RickerConfig(
            amplitude=float(sc.get("amplitude", 1.0)),
            central_frequency=float(sc.get("central_frequency", 10.0)),
            center=tuple(sc.get("center", (0.0, 0.0))),
            sound_speed=fluid.c_p)
        return scenarios.ricker_initial_state(system, cfg_r), None, cfg_r
    raise CliConfigError(f"unknown scenario type {stype!r}")


def resolve_dt(cfg, mesh, materials) -> float:
    if "dt" in cfg:
        dt = float(cfg["dt"])
    else:
        c_sharp = materials.c_sharp(mesh)
        h = float(np.mean(mesh.cell_diameter))
        dt = float(cfg["cfl"]) * h / c_sharp
    if dt <= 0:
        raise CliConfigError("time step must be positive")
    return dt


def build_stepper(cfg, system, dt):
    scheme = cfg["scheme"]
    tab = timestep.tableau(scheme)
    solver_cfg = cfg.get("solver", {})
    solver = timestep.SolverConfig(kind=solver_cfg.get("kind", "direct-lu"),
                                   tol=float(solver_cfg.get("tol", 1e-8)),
                                   maxiter=int(solver_cfg.get("maxiter", 2000)))
    if tab.explicit:
        return timestep.ExplicitStepper(system, tab), tab
    return timestep.ImplicitStepper(system, tab, dt, solver), tab


def dof_summary(system, explicit: bool) -> dict:
    layout = system.layout
    total = layout.n_cell_dofs + layout.n_face_dofs
    condensed = layout.n_cell_dofs if explicit else layout.n_face_dofs
    out = layout.summary()
    out.update({
        "dofs_before_condensation": total,
        "dofs_after_condensation": condensed,
        "condensation_reduction": 1.0 - condensed / total if total else 0.0,
        "condensed_unknowns": "cells" if explicit else "faces",
    })
    return out


# ---------------------------------------------------------------------------
# output writers

def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(val):
    if isinstance(val, float):
        return repr(val)
    return str(val)


def cell_average_rows(system):
    """Mean-value functionals of the primal/dual polynomials per cell."""
    from .basis import CellBasis, polygon_quadrature

    mesh = system.mesh
    layout = system.layout
    rows = []
    for ci in range(mesh.n_cells):
        verts = mesh.vertices[mesh.cell_vertices[ci]]
        center = mesh.cell_centroid[ci]
        pts, w = polygon_quadrature(verts, layout.k_prime + 1, center=center)
        primal = CellBasis(center, mesh.cell_diameter[ci], layout.k_prime)
        rows.append((primal.eval(pts).T @ w) / mesh.cell_area[ci])
    return rows


def write_vtu(path, system, u_t, mean_rows):
    """ASCII VTU snapshot: cell-averaged pressure and solid speed magnitude."""
    mesh = system.mesh
    layout = system.layout
    pressure = np.zeros(mesh.n_cells)
    vnorm = np.zeros(mesh.n_cells)
    for ci in range(mesh.n_cells):
        sl = layout.cell_primal_slice(ci)
        coeff = u_t[sl]
        row = mean_rows[ci]
        if mesh.subdomain[ci] == msh.FLUID:
            pressure[ci] = row @ coeff
        else:
            vnorm[ci] = math.hypot(row @ coeff[0::2], row @ coeff[1::2])
    n_pts = mesh.n_vertices
    conn = np.concatenate([loop for loop in mesh.cell_vertices])
    offsets = np.cumsum([len(loop) for loop in mesh.cell_vertices])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('<?xml version="1.0"?>\n')
        fh.write('<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">\n')
        fh.write(f'<UnstructuredGrid><Piece NumberOfPoints="{n_pts}" '
                 f'NumberOfCells="{mesh.n_cells}">\n')
        fh.write('<Points><DataArray type="Float64" NumberOfComponents="3" format="ascii">\n')
        for x, y in mesh.vertices:
            fh.write(f"{x} {y} 0\n")
        fh.write('</DataArray></Points>\n<Cells>\n')
        fh.write('<DataArray type="Int64" Name="connectivity" format="ascii">\n')
        fh.write(" ".join(str(int(v)) for v in conn) + "\n")
        fh.write('</DataArray>\n<DataArray type="Int64" Name="offsets" format="ascii">\n')
        fh.write(" ".join(str(int(v)) for v in offsets) + "\n")
        fh.write('</DataArray>\n<DataArray type="UInt8" Name="types" format="ascii">\n')
        fh.write(" ".join("7" for _ in range(mesh.n_cells)) + "\n")  # VTK_POLYGON
        fh.write('</DataArray>\n</Cells>\n<CellData>\n')
        for name, arr in (("pressure", pressure), ("velocity_norm", vnorm),
                          ("subdomain", mesh.subdomain.astype(float))):
            fh.write(f'<DataArray type="Float64" Name="{name}" format="ascii">\n')
            fh.write(" ".join(repr(float(v)) for v in arr) + "\n")
            fh.write('</DataArray>\n')
        fh.write('</CellData>\n</Piece></UnstructuredGrid></VTKFile>\n')


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg, out_dir) -> int:
    os.makedirs(out_dir, exist_ok=True)
    mesh = build_mesh(cfg["mesh"])
    materials = build_materials(cfg)
    stab = build_stabilization(cfg)
    dt = resolve_dt(cfg, mesh, materials)
    final_time = float(cfg["final_time"])
    n_steps = max(1, round(final_time / dt))
    log.info("simulate: %d cells, %d steps of dt=%g", mesh.n_cells, n_steps, dt)

    t_start = time.perf_counter()
    system = hho.assemble(mesh, materials, stab, k=cfg["degree"])
    u0, forcing, _ = build_scenario(cfg, system, materials)
    stepper, tab = build_stepper(cfg, system, dt)

    sensors = [scenarios.BoundSensor(
        scenarios.SensorSpec(tuple(s["position"]), s["kind"], s.get("name", f"S{i}")),
        system) for i, s in enumerate(cfg.get("sensors", []))]
    out_cfg = cfg.get("output", {})
    trace_every = int(out_cfg.get("trace_every", 1))
    snap_every = int(out_cfg.get("snapshot_every", 0))
    mean_rows = cell_average_rows(system) if snap_every else None

    times = [0.0]
    records = [[s.record(u0, stepper.face_values(u0) if s.spec.kind == "interface"
                         else None, system.layout) for s in sensors]]
    energies = [scenarios.energy(u0, system)]
    if snap_every:
        write_vtu(os.path.join(out_dir, "snapshot_0000.vtu"), system, u0, mean_rows)

    u = u0
    status = "completed"
    failed_step = None
    try:
        for n in range(1, n_steps + 1):
            u = stepper.step(u, (n - 1) * dt, dt, forcing, step_index=n)
            if n % trace_every == 0:
                u_f = (stepper.face_values(u)
                       if any(s.spec.kind == "interface" for s in sensors) else None)
                times.append(n * dt)
                records.append([s.record(u, u_f, system.layout) for s in sensors])
                with np.errstate(over="raise"):
                    try:
                        energies.append(scenarios.energy(u, system))
                    except FloatingPointError:
                        raise timestep.InstabilityError(n) from None
            if snap_every and n % snap_every == 0:
                write_vtu(os.path.join(out_dir, f"snapshot_{n:04d}.vtu"),
                          system, u, mean_rows)
    except timestep.InstabilityError as exc:
        status = "instability"
        failed_step = exc.step_index
    wall = time.perf_counter() - t_start

    if sensors:
        header = ["time"] + [f"{s.spec.name}.{ch}" for s in sensors for ch in s.channels]
        rows = [[t] + [float(v) for rec in recs for v in rec]
                for t, recs in zip(times, records)]
        write_csv(os.path.join(out_dir, out_cfg.get("traces", "traces.csv")),
                  header, rows)
    write_csv(os.path.join(out_dir, "energy.csv"), ["time", "energy"],
              list(zip(times, energies)))

    summary = {
        "config": cfg,
        "n_cells": int(mesh.n_cells),
        "n_faces": int(mesh.n_faces),
        "dt": dt,
        "steps": n_steps,
        "wall_time_seconds": wall,
        "status": status,
        "failed_step": failed_step,
        "energy_initial": energies[0],
        "energy_final": energies[-1],
        "dofs": dof_summary(system, tab.explicit),
    }
    with open(os.path.join(out_dir, out_cfg.get("summary", "summary.json")),
              "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
    if status == "instability":
        log.error("instability detected at step %s", failed_step)
        return EXIT_INSTABILITY
    return EXIT_OK


def cmd_converge(cfg, out_dir, levels) -> int:
    if len(levels) < 2:
        raise CliConfigError("convergence study needs at least 2 levels")
    os.makedirs(out_dir, exist_ok=True)
    materials = build_materials(cfg)
    sc = cfg.get("scenario", {})
    if sc.get("type") != "manufactured":
        raise CliConfigError("convergence study requires the manufactured scenario")
    case_proto = dict(omega=float(sc.get("omega", 5.0)),
                      theta=float(sc.get("theta", math.sqrt(2.0))))
    rows = []
    prev_err = None
    for level in levels:
        mesh_cfg = dict(cfg["mesh"])
        mesh_cfg["level"] = level
        mesh = build_mesh(mesh_cfg)
        stab = build_stabilization(cfg)
        system = hho.assemble(mesh, materials, stab, k=cfg["degree"])
        case = scenarios.ManufacturedCase(case_proto["omega"], case_proto["theta"],
                                          materials)
        u0 = scenarios.manufactured_initial_state(system, case)
        forcing = scenarios.manufactured_forcing(system, case)
        dt = resolve_dt(cfg, mesh, materials)
        n_steps = max(1, round(float(cfg["final_time"]) / dt))
        stepper, _ = build_stepper(cfg, system, dt)
        u = timestep.run_time_loop(stepper, u0, dt, n_steps, forcing=forcing)
        err = scenarios.l2_error_dual(u, system, case, n_steps * dt)
        rate = math.log2(prev_err / err) if prev_err else float("nan")
        h = float(np.mean(mesh.cell_diameter))
        rows.append([level, h, err, rate])
        prev_err = err
        log.info("level %d: error %.3e rate %.2f", level, err, rate)
    write_csv(os.path.join(out_dir, "convergence.csv"),
              ["level", "h", "error", "rate"], rows)
    return EXIT_OK


def cmd_cfl(cfg, out_dir) -> int:
    os.makedirs(out_dir, exist_ok=True)
    sweep = cfg.get("cfl_sweep", {})
    families = sweep.get("families", ["cartesian"])
    degrees = sweep.get("degrees", [cfg.get("degree", 1)])
    schemes = [s.upper() for s in sweep.get("schemes", ["ERK2"])]
    level = int(sweep.get("level", 4))
    materials = build_materials(cfg)
    stab_cfg = cfg.get("stabilization", {})
    bracket_cfg = scenarios.CflBracketConfig(
        eps=float(sweep.get("eps", 0.05)), delta=float(sweep.get("delta", 0.01)))
    final_time = float(cfg.get("final_time", 1.0))
    results = {}
    rows = []
    for family in families:
        mesh_cfg = dict(cfg["mesh"])
        mesh_cfg["family"] = family
        mesh_cfg["level"] = level
        mesh = build_mesh(mesh_cfg)
        h = float(np.mean(mesh.cell_diameter))
        for k in degrees:
            stab = hho.StabilizationConfig.explicit(
                eta_fluid=float(stab_cfg.get("eta_fluid", 0.8)),
                eta_solid=float(stab_cfg.get("eta_solid", 1.5)))
            system = hho.assemble(mesh, materials, stab, k=k)
            for scheme in schemes:
                tab = timestep.tableau(scheme)
                est = scenarios.cfl_bracket(system, tab, h, final_time=final_time,
                                            config=bracket_cfg)
                results[(family, k, scheme)] = est
                log.info("cfl %s k=%d %s: [%.4f, %.4f]", family, k, scheme,
                         est.cfl_stable, est.cfl_unstable)
    for (family, k, scheme), est in results.items():
        base_s = results.get((family, k, schemes[0]))
        base_k = results.get((family, degrees[0], scheme))
        rows.append([family, k, scheme, level, est.h, est.cfl_stable,
                     est.cfl_unstable, est.n_stable, est.n_unstable,
                     est.cfl_stable / base_s.cfl_stable if base_s else float("nan"),
                     est.cfl_stable / base_k.cfl_stable if base_k else float("nan")])
    write_csv(os.path.join(out_dir, "cfl.csv"),
              ["family", "k", "scheme", "level", "h", "cfl_stable", "cfl_unstable",
               "n_stable", "n_unstable", "ratio_s", "ratio_k"], rows)
    return EXIT_OK


def cmd_efficiency(cfg, out_dir) -> int:
    os.makedirs(out_dir, exist_ok=True)
    eff = cfg.get("efficiency", {})
    schemes = [s.upper() for s in eff.get("schemes", ["ERK2", "SDIRK34"])]
    levels = eff.get("levels", [0, 1, 2])
    dt0 = float(eff.get("dt0", 0.01))
    tol0 = float(eff.get("tol0", 1e-6))
    materials = build_materials(cfg)
    sc = cfg.get("scenario", {})
    if sc.get("type") != "manufactured":
        raise CliConfigError("efficiency study requires the manufactured scenario")
    omega = float(sc.get("omega", 5.0))
    theta = float(sc.get("theta", math.sqrt(2.0)))
    k = cfg["degree"]
    final_time = float(cfg["final_time"])
    rows = []
    for scheme in schemes:
        tab = timestep.tableau(scheme)
        for level in levels:
            mesh_cfg = dict(cfg["mesh"])
            mesh_cfg["level"] = level
            mesh = build_mesh(mesh_cfg)
            factor = 2.0 ** (-level * (k + 1) / (tab.s + 1))
            dt = dt0 * factor
            if tab.explicit:
                stab = hho.StabilizationConfig.explicit()
                solver = None
                # explicit steps are bounded by the stability limit
                c_sharp = materials.c_sharp(mesh)
                h = float(np.mean(mesh.cell_diameter))
                cfl_cap = float(eff.get("cfl_cap", 0.9)) * _cfl_guess(scheme, k)
                dt = min(dt, cfl_cap * h / c_sharp)
            else:
                stab = hho.StabilizationConfig.implicit()
                solver = timestep.SolverConfig(
                    kind=eff.get("solver", "direct-lu"),
                    tol=tol0 * 2.0 ** (-level * (k + 1)),
                    maxiter=int(eff.get("maxiter", 5000)))
            n_steps = max(1, round(final_time / dt))
            dt = final_time / n_steps
            t0 = time.perf_counter()
            system = hho.assemble(mesh, materials, stab, k=k)
            case = scenarios.ManufacturedCase(omega, theta, materials)
            u0 = scenarios.manufactured_initial_state(system, case)
            forcing = scenarios.manufactured_forcing(system, case)
            if tab.explicit:
                stepper = timestep.ExplicitStepper(system, tab)
            else:
                stepper = timestep.ImplicitStepper(system, tab, dt, solver)
            u = timestep.run_time_loop(stepper, u0, dt, n_steps, forcing=forcing)
            wall = time.perf_counter() - t0
            err = scenarios.l2_error_dual(u, system, case, final_time)
            rows.append([scheme, level, dt, n_steps, err, wall])
            log.info("%s level %d: err %.3e cpu %.2fs", scheme, level, err, wall)
    write_csv(os.path.join(out_dir, "efficiency.csv"),
              ["scheme", "level", "dt", "steps", "error", "cpu_seconds"], rows)
    return EXIT_OK


_CFL_GUESS = {("ERK2", 1): 0.205, ("ERK3", 1): 0.253, ("ERK4", 1): 0.282,
              ("ERK2", 2): 0.099, ("ERK3", 2): 0.123, ("ERK4", 2): 0.138,
              ("ERK2", 3): 0.063, ("ERK3", 3): 0.079, ("ERK4", 3): 0.087}


def _cfl_guess(scheme, k):
    return _CFL_GUESS.get((scheme, k), 0.3 / (k + 1))


# ---------------------------------------------------------------------------
# entry point

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hhowave",
        description="Coupled elasto-acoustic wave simulator on polygonal meshes")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for the linear algebra backend")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "run one simulation"),
                            ("converge", "spatial convergence study"),
                            ("cfl", "empirical CFL bracketing sweep"),
                            ("efficiency", "error versus CPU-time comparison")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--mesh", help="MSH v2.2 mesh file overriding the config")
        p.add_argument("--out", default=".", help="output directory")
        if name == "converge":
            p.add_argument("--levels", default="2,3,4",
                           help="comma-separated refinement levels")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("HHOWAVE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    if args.threads is not None:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    overrides = {}
    if args.mesh:
        overrides["mesh"] = {"file": args.mesh}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "converge":
            levels = [int(v) for v in args.levels.split(",")]
            return cmd_converge(cfg, args.out, levels)
        if args.command == "cfl":
            return cmd_cfl(cfg, args.out)
        if args.command == "efficiency":
            return cmd_efficiency(cfg, args.out)
        raise CliConfigError(f"unknown command {args.command}")
    except (CliConfigError, hho.ConfigError, msh.MeshError,
            scenarios.ScenarioError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except timestep.InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except timestep.SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
