"""Command-line driver: ``expfit {solve,basis,converge,pathdiff,mesh-info} --config run.ini``.

Configs are INI files. Expressions may be quoted::

    [problem]
    D = 1
    beta = 1
    phi = "exp(-2*sqrt(x^2+y^2))"
    f = 0
    g = "exp(-exp(-2*sqrt(x^2+y^2)))"

Every run writes ``manifest.ini`` holding the fully resolved config, so
``expfit <cmd> --config out/manifest.ini --serial`` reproduces the CSVs.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import convergence_study
from .assembly import SolverError, assemble, evaluate_solution, solve
from .expr import Expression, ExpressionError
from .fitting import (FittingError, PathRule, SingularElementError, Variant, construct,
                      linear_phi_closed_form)
from .mesh import SIDES, MeshError, generate_unit_square, load_mesh
from .problem import ProblemSpec
from .refspace import P2_WALK_ORDER

log = logging.getLogger("expfit")

# section -> key -> default (None marks a required key)
DEFAULTS = {
    "problem": {"D": None, "beta": None, "phi": None, "f": "0", "g": "0",
                "exact_rho": "", "exact_grad_rho_x": "", "exact_grad_rho_y": "",
                "grad_phi_x": "", "grad_phi_y": ""},
    "mesh": {"file": "", "unit_square_n": "8", "dirichlet_sides": ",".join(SIDES)},
    "method": {"variant": "slotboom", "space": "rt0", "nodeset": "vertices",
               "path": "xy", "shift": "true", "node_order": "standard"},
    "quad": {"segment_order": "16", "triangle_degree": "8"},
    "solver": {"tol": "1e-10", "max_iter": "10000", "dense_threshold": "500"},
    "output": {"dir": "out", "grid_n": "21"},
}
_EXPRESSION_KEYS = {"phi", "f", "g", "exact_rho", "exact_grad_rho_x", "exact_grad_rho_y",
                    "grad_phi_x", "grad_phi_y"}


class ConfigError(ValueError):
    pass


def _unquote(value):
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


@dataclass
class RunConfig:
    values: dict            # section -> key -> string, fully resolved
    problem: ProblemSpec
    solver: dict
    out_dir: Path
    grid_n: int
    node_order: str

    def manifest(self):
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, val in keys.items():
                if key in _EXPRESSION_KEYS and val:
                    val = f'"{val}"'
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def _read_values(path):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc.message.splitlines()[0]}") from None
    values = {}
    for section, keys in DEFAULTS.items():
        have = parser[section] if parser.has_section(section) else {}
        for key in have:
            if key not in keys:
                raise ConfigError(f"unknown key '{section}.{key}'")
        values[section] = {}
        for key, default in keys.items():
            if key in have:
                values[section][key] = _unquote(have[key])
            elif default is None:
                raise ConfigError(f"missing required key '{section}.{key}'")
            else:
                values[section][key] = default
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
    return values


def _num(values, section, key, kind=float):
    raw = values[section][key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"'{section}.{key}' must be {kind.__name__}, got {raw!r}") from None


def _flag(values, section, key):
    raw = values[section][key].lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"'{section}.{key}' must be a boolean, got {raw!r}")


def _expr_or_none(values, key):
    text = values["problem"][key]
    if not text:
        return None
    try:
        return Expression(text)
    except ExpressionError as exc:
        raise ConfigError(f"problem.{key}: {exc}") from None


def _build_mesh(values, base_dir):
    sides = tuple(s.strip() for s in values["mesh"]["dirichlet_sides"].split(",") if s.strip())
    bad = [s for s in sides if s not in SIDES]
    if bad:
        raise ConfigError(f"mesh.dirichlet_sides: unknown side '{bad[0]}'")
    if values["mesh"]["file"]:
        path = Path(values["mesh"]["file"])
        if not path.is_absolute():
            path = (base_dir / path).resolve()
        values["mesh"]["file"] = str(path)
        return load_mesh(path), sides
    n = _num(values, "mesh", "unit_square_n", int)
    if n < 1:
        raise ConfigError("mesh.unit_square_n must be >= 1")
    return generate_unit_square(n, sides), sides


def load_config(path, out_dir=None) -> RunConfig:
    """Parse and validate a run config; every default is filled in."""
    path = Path(path)
    values = _read_values(path)
    exprs = {}
    for key in ("phi", "f", "g"):
        exprs[key] = _expr_or_none(values, key)
        if exprs[key] is None:
            raise ConfigError(f"problem.{key} is empty")
    mesh, sides = _build_mesh(values, path.parent)
    grad_rho = (_expr_or_none(values, "exact_grad_rho_x"), _expr_or_none(values, "exact_grad_rho_y"))
    grad_phi = (_expr_or_none(values, "grad_phi_x"), _expr_or_none(values, "grad_phi_y"))
    m = values["method"]
    if m["node_order"] not in ("standard", "walk"):
        raise ConfigError("method.node_order must be 'standard' or 'walk'")
    try:
        problem = ProblemSpec(
            D=_num(values, "problem", "D"), beta=_num(values, "problem", "beta"),
            phi=exprs["phi"], f=exprs["f"], g=exprs["g"], mesh=mesh, dirichlet_sides=sides,
            space=m["space"], nodeset=m["nodeset"], path=m["path"], variant=m["variant"],
            shift=_flag(values, "method", "shift"),
            segment_order=_num(values, "quad", "segment_order", int),
            triangle_degree=_num(values, "quad", "triangle_degree", int),
            exact_rho=_expr_or_none(values, "exact_rho"),
            exact_grad_rho=grad_rho if all(grad_rho) else None,
            grad_phi=grad_phi if all(grad_phi) else None)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    solver = {"tol": _num(values, "solver", "tol"),
              "max_iter": _num(values, "solver", "max_iter", int),
              "dense_threshold": _num(values, "solver", "dense_threshold", int)}
    if out_dir is not None:
        values["output"]["dir"] = str(out_dir)
    grid_n = _num(values, "output", "grid_n", int)
    if grid_n < 2:
        raise ConfigError("output.grid_n must be >= 2")
    return RunConfig(values, problem, solver, Path(values["output"]["dir"]), grid_n,
                     m["node_order"])


# ---------------------------------------------------------------------------
# output helpers

def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _prepare(cfg: RunConfig, command):
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "manifest.ini").write_text(
        f"; expfit {command}\n" + cfg.manifest(), encoding="utf-8")


def reference_lattice(n):
    """Points (i, j)/(n-1) with i + j <= n-1 on the reference triangle."""
    t = np.linspace(0.0, 1.0, n)
    return np.array([(t[i], t[j]) for j in range(n) for i in range(n - j)])


def _nodes_for(problem: ProblemSpec, node_order):
    nodes = problem.nodes
    if node_order == "walk":
        if problem.nodeset != "p2":
            raise ConfigError("method.node_order = walk needs the p2 node set")
        nodes = nodes.permuted(P2_WALK_ORDER)
    return nodes


def _reference_basis(problem, nodes, variant=None, path=None, solve=True):
    return construct(variant or problem.variant, problem.basis, nodes, path or problem.path,
                     problem.phi, problem.beta, problem.D, shift=problem.shift,
                     segment_order=problem.segment_order, solve=solve)


# ---------------------------------------------------------------------------
# subcommands

def cmd_solve(cfg: RunConfig):
    t0 = time.perf_counter()
    _prepare(cfg, "solve")
    problem = cfg.problem
    system = assemble(problem)
    sol = solve(system, **cfg.solver)
    verts = problem.mesh.vertices
    xs = np.linspace(verts[:, 0].min(), verts[:, 0].max(), cfg.grid_n)
    ys = np.linspace(verts[:, 1].min(), verts[:, 1].max(), cfg.grid_n)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[problem.mesh.locate(pts) >= 0]
    rho, u, J = evaluate_solution(sol, pts)
    _write_csv(cfg.out_dir / "field.csv", ("x", "y", "rho", "u", "Jx", "Jy"),
               np.column_stack([pts, rho, u, J]))
    wall = time.perf_counter() - t0
    summary = {
        "dofs": system.dofs.n_dofs,
        "free_dofs": len(system.free),
        "elements": problem.mesh.nt,
        "method": sol.method,
        "iterations": sol.iterations,
        "residual": f"{sol.residual:.3e}",
        "max_abs_J": f"{np.abs(J).max():.3e}",
        "max_abs_rho": f"{np.abs(rho).max():.6e}",
        "wall_time_s": f"{wall:.3f}",
    }
    if sol.ritz.size:
        summary["ritz_range"] = f"{sol.ritz.min():.3e} {sol.ritz.max():.3e}"
    text = "".join(f"{k} = {v}\n" for k, v in summary.items())
    (cfg.out_dir / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _print_matrix(F, stream=None):
    stream = stream or sys.stdout
    for row in F:
        print("  ".join(f"{v:12.6g}" for v in row), file=stream)


def cmd_basis(cfg: RunConfig):
    _prepare(cfg, "basis")
    problem = cfg.problem
    nodes = _nodes_for(problem, cfg.node_order)
    try:
        fb = _reference_basis(problem, nodes)
    except SingularElementError as exc:
        print("interpolation matrix F:")
        _print_matrix(exc.matrix)
        print(f"rank {np.linalg.matrix_rank(exc.matrix)} of {len(exc.matrix)}")
        raise
    pts = reference_lattice(cfg.grid_n)
    rho = fb.rho(pts)[0]
    u = fb.u(pts)[0]
    for j in range(fb.n_basis):
        _write_csv(cfg.out_dir / f"basis_{j}.csv", ("x", "y", f"rho_{j}", f"u_{j}"),
                   np.column_stack([pts, rho[:, j], u[:, j]]))
    print(f"wrote {fb.n_basis} basis files to {cfg.out_dir}")
    return 0


def cmd_converge(cfg: RunConfig, levels):
    _prepare(cfg, "converge")
    problem = cfg.problem
    if problem.exact_rho is None or problem.exact_grad_rho is None:
        raise ConfigError("converge needs problem.exact_rho, exact_grad_rho_x and exact_grad_rho_y")
    n0 = _num(cfg.values, "mesh", "unit_square_n", int)
    report = convergence_study(problem, levels, n0=n0, solver=cfg.solver)
    report.to_csv(cfg.out_dir / "convergence.csv")
    print(report)
    return 0


def _constant(e):
    if e is None or e.variables:
        return None
    return float(e(0.0, 0.0))


def path_differences(problem: ProblemSpec, grid_n=21):
    """u_1 differences between route choices on the reference element.

    Returns ``(points, columns, report)``: columns maps a name to the
    difference sampled on ``points``; report holds max |diff| at the nodes
    and over the lattice.
    """
    if problem.space != "rt0":
        raise ConfigError("pathdiff needs space = rt0")
    nodes = problem.nodes
    pts = reference_lattice(grid_n)
    probe = np.vstack([nodes.points, pts])
    nn = len(nodes)

    def u1(variant, path):
        return _reference_basis(problem, nodes, variant, path).u(probe)[0, :, 1]

    cols = {
        "d_slotboom_xy_yx": u1(Variant.Slotboom, PathRule.XThenY) - u1(Variant.Slotboom, PathRule.YThenX),
        "d_directu_line_xy": u1(Variant.DirectU, PathRule.StraightLine) - u1(Variant.DirectU, PathRule.XThenY),
    }
    report = {}
    for name, d in cols.items():
        report[f"{name}.max_nodes"] = float(np.abs(d[:nn]).max())
        report[f"{name}.max_grid"] = float(np.abs(d[nn:]).max())
    a = _constant(problem.grad_phi[0]) if problem.grad_phi else None
    b = _constant(problem.grad_phi[1]) if problem.grad_phi else None
    if a is not None and b is not None and a != 0 and b != 0:
        fb = _reference_basis(problem, nodes, Variant.DirectU, PathRule.AverageXYYX)
        c = problem.phi(0.0, 0.0)
        vals = fb.u(pts)[0]
        err = 0.0
        for j in range(fb.n_basis):
            m = fb.m[0, :, j]
            exact = linear_phi_closed_form(a, b, c, problem.beta, problem.D, m,
                                           fb.coeffs[0, -1, j], route="avg")
            err = max(err, float(np.abs(exact(pts[:, 0], pts[:, 1]) - vals[:, j]).max()))
        report["linear_oracle.max_err"] = err
    return pts, {k: v[nn:] for k, v in cols.items()}, report


def cmd_pathdiff(cfg: RunConfig):
    _prepare(cfg, "pathdiff")
    pts, cols, report = path_differences(cfg.problem, cfg.grid_n)
    _write_csv(cfg.out_dir / "pathdiff.csv", ("x", "y") + tuple(cols),
               np.column_stack([pts] + list(cols.values())))
    text = "".join(f"{k} = {v:.3e}\n" for k, v in report.items())
    (cfg.out_dir / "pathdiff.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_mesh_info(cfg_path):
    values = _read_values_mesh_only(cfg_path)
    mesh, _ = _build_mesh(values, Path(cfg_path).parent)
    markers = mesh.edge_markers
    info = {
        "vertices": mesh.nv,
        "triangles": mesh.nt,
        "edges": mesh.ne,
        "boundary_edges_D": int(np.sum(markers == "D")),
        "boundary_edges_N": int(np.sum(markers == "N")),
        "dirichlet_vertices": int(mesh.dirichlet_vertices.sum()),
        "h": f"{mesh.h:.6g}",
        "min_area": f"{mesh.areas.min():.6g}",
        "total_area": f"{mesh.areas.sum():.12g}",
    }
    for k, v in info.items():
        print(f"{k} = {v}")
    return 0


def _read_values_mesh_only(path):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc.message.splitlines()[0]}") from None
    mesh = dict(DEFAULTS["mesh"])
    if parser.has_section("mesh"):
        mesh.update({k: _unquote(v) for k, v in parser["mesh"].items()})
    return {"mesh": mesh}


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="expfit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [("solve", "assemble and solve, write field.csv and summary.txt"),
                           ("basis", "sample fitted basis functions on the reference element"),
                           ("converge", "convergence table on refined unit squares"),
                           ("pathdiff", "route dependence of the fitted basis"),
                           ("mesh-info", "print mesh statistics")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--serial", action="store_true",
                       help="deterministic single-threaded run (the default engine is serial)")
        if name == "converge":
            p.add_argument("--levels", type=int, default=4)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh-info":
            return cmd_mesh_info(args.config)
        cfg = load_config(args.config, args.out)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "basis":
            return cmd_basis(cfg)
        if args.command == "converge":
            return cmd_converge(cfg, args.levels)
        return cmd_pathdiff(cfg)
    except SingularElementError as exc:
        print(f"error: singular element: {exc}", file=sys.stderr)
    except (ConfigError, MeshError, ExpressionError, FittingError, SolverError,
            ArithmeticError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
