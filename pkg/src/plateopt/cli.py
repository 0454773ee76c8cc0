"""Command line entry point: ``plateopt run``, ``plateopt batch`` and ``plateopt specs``.

A run spec is an INI file with four sections::

    [run]
    name = example1_disk_max      ; defaults to the file stem
    direction = maximize          ; maximize | minimize
    bc = hinged                   ; hinged | clamped
    output_dir = runs             ; optional, relative to the working directory

    [geometry]
    kind = disk                   ; rectangle | disk | ellipse | crescent | rectangle_with_hole
    radius = 1.4142135623730951   ; parameters named as in the mesh generators
    target_h = 0.0943
    scale_to_area = 6.28          ; optional: scale the shape to this area first

    [materials]
    densities = 1, 2
    areas = 3.14, 3.14            ; must add up to the domain area within 1%

    [optimizer]                   ; every key optional
    seed = 0
    restarts = 1
    tol_rho = ...                 ; plus max_outer_iters, swap_fraction, swap_shrink,
                                  ; swap_min_area, eig_tol, eig_max_iter, init, bathtub_method

Exit status: 0 on any normal termination, 1 when the solver fails (partial
artifacts are still written), 2 for an invalid spec or command line.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from . import fem, io, mesh
from .optimize import (
    MAXIMIZE, MINIMIZE, OptConfig, OptimizationError, PlateProblem, multistart, optimize,
    run_metadata,
)
from .rearrange import RearrangementClass, save_density

log = logging.getLogger("plateopt")

OUTPUT_ENV = "PLATEOPT_OUTPUT_DIR"
DEFAULT_OUTPUT = "plateopt-runs"
AREA_SLACK = 0.01
SUMMARY_FIELDS = ("name", "geometry", "bc", "direction", "final_eigenvalue", "termination",
                  "iterations", "restarts", "status")

EXIT_OK, EXIT_SOLVER, EXIT_SPEC = 0, 1, 2

GEOMETRIES = {
    "rectangle": ("width", "height"),
    "disk": ("radius",),
    "ellipse": ("a", "b"),
    "crescent": ("r_outer", "r_inner", "offset"),
    "rectangle_with_hole": ("outer_w", "outer_h", "hole_w", "hole_h"),
}
_OPT_FLOATS = ("tol_rho", "swap_fraction", "swap_shrink", "swap_min_area", "eig_tol")
_OPT_INTS = ("max_outer_iters", "eig_max_iter", "seed", "restarts")
_OPT_STRS = ("init", "bathtub_method")


class SpecError(ValueError):
    def __init__(self, where, message):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class RunSpec:
    name: str
    geometry: str
    params: dict
    target_h: float
    densities: tuple
    areas: tuple
    bc_kind: str
    direction: str
    scale_to_area: float | None = None
    pattern: str = "alternating"
    optimizer: dict = field(default_factory=dict)
    restarts: int = 1
    output_dir: str | None = None
    source: str | None = None

    def config(self) -> OptConfig:
        return OptConfig(direction=self.direction, bc_kind=self.bc_kind, **self.optimizer)

    def effective(self) -> dict:
        d = asdict(self)
        d["config"] = asdict(self.config())
        return d


def _float(sec, key, where):
    try:
        val = float(sec[key])
    except ValueError:
        raise SpecError(where, f"expected a number, got {sec[key]!r}") from None
    if not math.isfinite(val):
        raise SpecError(where, "must be finite")
    return val


def _int(sec, key, where):
    try:
        return int(sec[key])
    except ValueError:
        raise SpecError(where, f"expected an integer, got {sec[key]!r}") from None


def _floats(sec, key, where):
    try:
        return tuple(float(x) for x in sec[key].replace(",", " ").split())
    except ValueError:
        raise SpecError(where, f"expected a list of numbers, got {sec[key]!r}") from None


def parse_spec(text, name=None, source=None) -> RunSpec:
    """Parse and validate a spec; every problem is reported as ``section.key: message``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source or "<spec>")
    except configparser.Error as exc:
        raise SpecError("spec", str(exc).splitlines()[0]) from None
    for sec in ("run", "geometry", "materials"):
        if not cp.has_section(sec):
            raise SpecError(sec, "missing section")
    unknown = set(cp.sections()) - {"run", "geometry", "materials", "optimizer"}
    if unknown:
        raise SpecError(sorted(unknown)[0], "unknown section")

    run = cp["run"]
    name = run.get("name", name)
    if not name:
        raise SpecError("run.name", "required")
    direction = run.get("direction", "")
    if direction not in (MAXIMIZE, MINIMIZE):
        raise SpecError("run.direction", f"must be {MAXIMIZE} or {MINIMIZE}, got {direction!r}")
    bc = run.get("bc", "")
    if bc not in fem.BC_KINDS:
        raise SpecError("run.bc", f"must be one of {', '.join(fem.BC_KINDS)}, got {bc!r}")
    extra = set(run) - {"name", "direction", "bc", "output_dir"}
    if extra:
        raise SpecError(f"run.{sorted(extra)[0]}", "unknown key")

    geo = cp["geometry"]
    kind = geo.get("kind", "")
    if kind not in GEOMETRIES:
        raise SpecError("geometry.kind", f"must be one of {', '.join(GEOMETRIES)}, got {kind!r}")
    params = {}
    for key in GEOMETRIES[kind]:
        if key not in geo:
            raise SpecError(f"geometry.{key}", f"required for kind {kind}")
        params[key] = _float(geo, key, f"geometry.{key}")
    if "target_h" not in geo:
        raise SpecError("geometry.target_h", "required")
    target_h = _float(geo, "target_h", "geometry.target_h")
    if target_h <= 0:
        raise SpecError("geometry.target_h", "must be positive")
    scale = _float(geo, "scale_to_area", "geometry.scale_to_area") if "scale_to_area" in geo else None
    if scale is not None and scale <= 0:
        raise SpecError("geometry.scale_to_area", "must be positive")
    pattern = geo.get("pattern", "alternating")
    extra = set(geo) - set(GEOMETRIES[kind]) - {"kind", "target_h", "scale_to_area", "pattern"}
    if extra:
        raise SpecError(f"geometry.{sorted(extra)[0]}", f"unknown key for kind {kind}")

    mat = cp["materials"]
    for key in ("densities", "areas"):
        if key not in mat:
            raise SpecError(f"materials.{key}", "required")
    dens = _floats(mat, "densities", "materials.densities")
    areas = _floats(mat, "areas", "materials.areas")
    try:
        RearrangementClass(dens, areas)
    except ValueError as exc:
        raise SpecError("materials", str(exc)) from None

    opt, restarts = {}, 1
    if cp.has_section("optimizer"):
        sec = cp["optimizer"]
        for key in sec:
            where = f"optimizer.{key}"
            if key in _OPT_FLOATS:
                opt[key] = _float(sec, key, where)
            elif key in _OPT_INTS:
                opt[key] = _int(sec, key, where)
            elif key in _OPT_STRS:
                opt[key] = sec[key]
            else:
                raise SpecError(where, "unknown key")
        restarts = opt.pop("restarts", 1)
        if restarts < 1:
            raise SpecError("optimizer.restarts", "must be at least 1")
    try:
        OptConfig(direction=direction, bc_kind=bc, **opt)
    except ValueError as exc:
        raise SpecError("optimizer", str(exc)) from None

    spec = RunSpec(name=name, geometry=kind, params=params, target_h=target_h, densities=dens,
                   areas=areas, bc_kind=bc, direction=direction, scale_to_area=scale,
                   pattern=pattern, optimizer=opt, restarts=restarts,
                   output_dir=run.get("output_dir"), source=source)
    _check_geometry(spec)
    return spec


def load_spec(path) -> RunSpec:
    path = Path(path)
    return parse_spec(path.read_text(), name=path.stem, source=str(path))


def exact_area(kind, p) -> float:
    if kind == "rectangle":
        return p["width"] * p["height"]
    if kind == "disk":
        return math.pi * p["radius"] ** 2
    if kind == "ellipse":
        return math.pi * p["a"] * p["b"]
    if kind == "crescent":
        return mesh.lune_area(p["r_outer"], p["r_inner"], p["offset"])
    return p["outer_w"] * p["outer_h"] - p["hole_w"] * p["hole_h"]


def scaled_params(spec: RunSpec) -> dict:
    if spec.scale_to_area is None:
        return dict(spec.params)
    s = math.sqrt(spec.scale_to_area / exact_area(spec.geometry, spec.params))
    return {k: v * s for k, v in spec.params.items()}


def _check_geometry(spec: RunSpec):
    p = scaled_params(spec)
    try:
        area = exact_area(spec.geometry, p)
    except (ValueError, ZeroDivisionError) as exc:
        raise SpecError("geometry", str(exc)) from None
    if not area > 0:
        raise SpecError("geometry", "the shape has no area")
    total = math.fsum(spec.areas)
    if abs(total - area) > AREA_SLACK * area:
        raise SpecError("materials.areas",
                        f"sum {total:.6g} differs from the domain area {area:.6g} by more than 1%")


def build_mesh(spec: RunSpec) -> mesh.TriMesh:
    p, h = scaled_params(spec), spec.target_h
    try:
        if spec.geometry == "rectangle":
            return mesh.generate_rectangle(p["width"], p["height"], h, pattern=spec.pattern)
        if spec.geometry == "disk":
            return mesh.generate_disk(p["radius"], h)
        if spec.geometry == "ellipse":
            return mesh.generate_ellipse(p["a"], p["b"], h)
        if spec.geometry == "crescent":
            return mesh.generate_crescent(p["r_outer"], p["r_inner"], p["offset"], h)
        return mesh.generate_rectangle_with_hole(p["outer_w"], p["outer_h"], p["hole_w"],
                                                 p["hole_h"], h)
    except ValueError as exc:
        raise SpecError("geometry", str(exc)) from None


def bundled_dir() -> Path:
    return Path(str(resources.files("plateopt") / "specs"))


def resolve_spec_path(arg) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    bundled = bundled_dir() / f"{arg}.ini"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no spec file {arg!r} and no bundled spec of that name")


def output_root(spec: RunSpec, override=None) -> Path:
    return Path(override or os.environ.get(OUTPUT_ENV) or spec.output_dir or DEFAULT_OUTPUT)


def execute(spec: RunSpec, outdir: Path) -> dict:
    """Run one spec and write its artifacts to ``outdir``; returns a summary row."""
    outdir.mkdir(parents=True, exist_ok=True)
    tri = build_mesh(spec)
    mesh.save_mesh(tri, outdir / "mesh.txt")
    areas = mesh.element_measures(tri).areas
    rclass = RearrangementClass(spec.densities, spec.areas).fitted(areas)
    cfg = spec.config()
    row = {"name": spec.name, "geometry": spec.geometry, "bc": spec.bc_kind,
           "direction": spec.direction, "restarts": spec.restarts}
    try:
        problem = PlateProblem(tri, rclass, spec.bc_kind)
        if spec.restarts > 1:
            run, runs = multistart(tri, rclass, cfg, spec.restarts, problem=problem)
        else:
            run = optimize(tri, rclass, None, cfg, problem=problem)
            runs = [run]
    except OptimizationError as exc:
        run, runs = exc.run, [exc.run]
        row.update(status=f"error: {exc}", termination="error", iterations=len(run.records),
                   final_eigenvalue="")
        io.write_trace(run.records, outdir / "trace.csv")
        io.write_metadata({"spec": spec.effective(), "error": str(exc),
                           "iterations": len(run.records)}, outdir / "metadata.json")
        return row
    meta = run_metadata(run)
    meta["spec"] = spec.effective()
    meta["mesh"] = {"vertices": tri.n_vertices, "triangles": tri.n_triangles,
                    "area": float(areas.sum()), "min_angle_deg": tri.min_angle()}
    meta["restart_eigenvalues"] = [r.eigenvalue for r in runs]
    meta.pop("wall_time", None)  # keeps the record reproducible
    io.write_trace(run.records, outdir / "trace.csv")
    save_density(run.density, outdir / "density.txt")
    io.write_metadata(meta, outdir / "metadata.json")
    u = problem.operator.vertex_values(run.eigenpair.u)
    io.write_vtk(outdir / "result.vtk", tri, run.density, u,
                 title=f"{spec.name} lambda={run.eigenvalue!r}")
    row.update(status="ok", termination=run.termination, iterations=len(run.records),
               final_eigenvalue=repr(run.eigenvalue))
    return row


def _execute_job(args):
    spec, outdir = args
    try:
        return execute(spec, outdir)
    except Exception as exc:  # recorded in the batch summary, the batch continues
        return {"name": spec.name, "geometry": spec.geometry, "bc": spec.bc_kind,
                "direction": spec.direction, "restarts": spec.restarts, "final_eigenvalue": "",
                "termination": "error", "iterations": 0, "status": f"error: {exc}"}


def _apply_overrides(spec: RunSpec, args) -> RunSpec:
    opt = dict(spec.optimizer)
    if args.seed is not None:
        opt["seed"] = args.seed
    if args.tol_rho is not None:
        opt["tol_rho"] = args.tol_rho
    restarts = args.restarts if args.restarts is not None else spec.restarts
    if restarts < 1:
        raise SpecError("--restarts", "must be at least 1")
    try:
        OptConfig(direction=spec.direction, bc_kind=spec.bc_kind, **opt)
    except ValueError as exc:
        raise SpecError("optimizer", str(exc)) from None
    return replace(spec, optimizer=opt, restarts=restarts)


def write_summary(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in SUMMARY_FIELDS})


def format_table(rows) -> str:
    cols = ("name", "direction", "geometry", "bc", "final_eigenvalue", "termination", "status")
    table = [cols] + [tuple(str(r.get(c, "")) for c in cols) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table)


def cmd_run(args) -> int:
    spec = _apply_overrides(load_spec(resolve_spec_path(args.spec)), args)
    if args.dry_run:
        print(json.dumps(spec.effective(), indent=2, sort_keys=True, default=list))
        return EXIT_OK
    outdir = output_root(spec, args.output_dir) / spec.name
    row = execute(spec, outdir)
    print(format_table([row]))
    return EXIT_OK if row["status"] == "ok" else EXIT_SOLVER


def cmd_batch(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise SpecError("batch", f"{directory} is not a directory")
    specs = [_apply_overrides(load_spec(p), args) for p in sorted(directory.glob("*.ini"))]
    seen = {}
    for s in specs:
        if s.name in seen:
            raise SpecError("run.name", f"duplicate spec name {s.name!r} in {seen[s.name]} and {s.source}")
        seen[s.name] = s.source
    root = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    if args.dry_run:
        print(json.dumps([s.effective() for s in specs], indent=2, sort_keys=True, default=list))
        return EXIT_OK
    jobs = [(s, root / s.name) for s in specs]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_execute_job, jobs))
    else:
        rows = [_execute_job(j) for j in jobs]
    root.mkdir(parents=True, exist_ok=True)
    write_summary(rows, root / "summary.csv")
    print(format_table(rows))
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_SOLVER


def cmd_specs(args) -> int:
    d = bundled_dir()
    print(d)
    for p in sorted(d.glob("*.ini")):
        print(" ", p.stem)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plateopt",
                                     description="Optimal density layouts for vibrating plates.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every outer iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, help="override optimizer.seed")
        p.add_argument("--restarts", type=int, help="random restarts; the best run is kept")
        p.add_argument("--tol-rho", type=float, dest="tol_rho", help="override optimizer.tol_rho")
        p.add_argument("--dry-run", action="store_true",
                       help="validate and print the effective config without writing anything")
        p.add_argument("--output-dir", dest="output_dir",
                       help=f"output root (else ${OUTPUT_ENV}, run.output_dir, {DEFAULT_OUTPUT})")

    p = sub.add_parser("run", help="run one spec file or bundled spec name")
    p.add_argument("spec")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run every *.ini spec in a directory")
    p.add_argument("directory")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("specs", help="list the bundled example specs")
    p.set_defaults(func=cmd_specs)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecError, FileNotFoundError) as exc:
        print(f"plateopt: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
