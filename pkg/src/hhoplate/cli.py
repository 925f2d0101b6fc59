"""Batch driver: configuration parsing, manufactured-solution registry,
convergence studies, eta sweeps, CSV emission and report figures.

Config files are flat ``key = value`` text; command-line flags override file
values.  The study writes one CSV row per (level, eta) pair and, when an
output path is given, renders convergence figures next to the CSV.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .basis import MaterialTensor
from .mesh import (generate_unit_square, generate_lshape_triangular,
                   read_mesh, uniform_refine, MeshError)
from . import assembly, postproc

CSV_HEADER = ("level,h,n_elem,n_face,n_dof_condensed,nnz,"
              "err_energy,eoc_energy,err_l2,eoc_l2,err_rec_l2,"
              "jump_seminorm,energy")


@dataclass
class ManufacturedCase:
    name: str
    domain: str
    u: object
    grad_u: object
    f: object


def builtin_square_case() -> ManufacturedCase:
    """Clamped unit-square case with u = p(x) p(y), p(t) = t^2 (1-t)^2, and
    the matching bi-Laplacian load (identity material)."""

    def p(t):
        return t ** 2 * (1.0 - t) ** 2

    def dp(t):
        return 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)

    def ddp(t):
        return 2.0 - 12.0 * t + 12.0 * t ** 2

    def u(pts):
        return p(pts[:, 0]) * p(pts[:, 1])

    def grad_u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([dp(x) * p(y), p(x) * dp(y)])

    def f(pts):
        x, y = pts[:, 0], pts[:, 1]
        return 24.0 * p(y) + 2.0 * ddp(x) * ddp(y) + 24.0 * p(x)

    return ManufacturedCase("square_manufactured", "unit_square",
                            u=u, grad_u=grad_u, f=f)


def uniform_load(pts):
    return np.ones(len(pts))


@dataclass
class StudyConfig:
    problem: str = "square_manufactured"
    k: int = 1
    family: str = "triangular"
    levels: int = 4
    etas: list = field(default_factory=lambda: [1.0])
    eta_sweep: bool = False
    material: MaterialTensor = None
    tol: float = 1e-10
    mesh_path: str = None
    out: str = None
    flux_report: bool = False
    export_matrix: str = None
    base_n: int = 2
    # optional pass/fail thresholds (None = not configured)
    min_eoc_energy: float = None
    min_eoc_l2: float = None
    energy_min: float = None
    energy_max: float = None
    flux_tol: float = None
    n_workers: int = 0

    def validate(self):
        if self.k < 1:
            raise ValueError(
                "k must be >= 1: the lowest stable degree uses affine face "
                "unknowns (k = 0 is not supported)")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        for eta in self.etas:
            if eta <= 0.0:
                raise ValueError("eta must be > 0 (stabilization weight)")
        if self.problem not in ("square_manufactured", "lshape_uniform",
                                "custom"):
            raise ValueError(
                f"unknown problem {self.problem!r}: expected "
                "square_manufactured, lshape_uniform or custom")
        if self.problem == "custom" and not self.mesh_path:
            raise ValueError("problem=custom requires --mesh <path>")
        if self.family not in ("triangular", "cartesian", "hexagonal"):
            raise ValueError(
                f"unknown family {self.family!r}: expected triangular, "
                "cartesian or hexagonal")
        if self.tol <= 0.0:
            raise ValueError("tol must be > 0")


_FLOAT_KEYS = {"eta", "tol", "min_eoc_energy", "min_eoc_l2",
               "energy_min", "energy_max", "flux_tol"}
_INT_KEYS = {"k", "levels", "base_n"}
_STR_KEYS = {"problem", "family", "mesh", "out", "export_matrix"}
_BOOL_KEYS = {"flux_report"}


def _read_config_file(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ValueError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "eta_sweep":
            values["etas"] = [float(v) for v in val.split(",")]
            values["eta_sweep"] = True
        elif key == "material":
            parts = val.split()
            if len(parts) != 6:
                raise ValueError(
                    f"{path}:{lineno}: material needs 6 upper-triangle "
                    "values (v11 v12 v13 v22 v23 v33)")
            values["material"] = MaterialTensor.from_upper_triangle(parts)
        elif key in _FLOAT_KEYS:
            if key == "eta":
                values["etas"] = [float(val)]
            else:
                values[key] = float(val)
        elif key in _INT_KEYS:
            values[key] = int(val)
        elif key in _STR_KEYS:
            values["mesh_path" if key == "mesh" else key] = val
        elif key in _BOOL_KEYS:
            values[key] = val.lower() in ("1", "true", "yes", "on")
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def parse_config(argv) -> StudyConfig:
    ap = argparse.ArgumentParser(
        prog="hho-plate",
        description="Hybrid high-order clamped plate bending solver")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a convergence study")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--k", type=int)
    run.add_argument("--family")
    run.add_argument("--levels", type=int)
    run.add_argument("--problem")
    grp = run.add_mutually_exclusive_group()
    grp.add_argument("--eta", type=float)
    grp.add_argument("--eta-sweep",
                     help="comma-separated list of eta values")
    run.add_argument("--mesh", help="custom mesh file (text format)")
    run.add_argument("--out", help="CSV output path")
    run.add_argument("--flux-report", action="store_true")
    run.add_argument("--export-matrix",
                     help="write the finest-level condensed matrix here")
    run.add_argument("--tol", type=float)
    ns = ap.parse_args(argv)
    cfg = StudyConfig()
    if ns.config:
        for key, val in _read_config_file(ns.config).items():
            setattr(cfg, key, val)
    if ns.k is not None:
        cfg.k = ns.k
    if ns.family is not None:
        cfg.family = ns.family
    if ns.levels is not None:
        cfg.levels = ns.levels
    if ns.problem is not None:
        cfg.problem = ns.problem
    if ns.eta is not None:
        cfg.etas = [ns.eta]
        cfg.eta_sweep = False
    if ns.eta_sweep is not None:
        cfg.etas = [float(v) for v in ns.eta_sweep.split(",")]
        cfg.eta_sweep = True
    if ns.mesh is not None:
        cfg.mesh_path = ns.mesh
        cfg.problem = "custom"
    if ns.out is not None:
        cfg.out = ns.out
    if ns.flux_report:
        cfg.flux_report = True
    if ns.export_matrix is not None:
        cfg.export_matrix = ns.export_matrix
    if ns.tol is not None:
        cfg.tol = ns.tol
    try:
        cfg.n_workers = int(os.environ.get("HHO_THREADS", "0"))
    except ValueError:
        cfg.n_workers = 0
    cfg.validate()
    return cfg


def _level_mesh(cfg, level, prev):
    """Mesh for 1-based refinement level; refines the previous custom mesh,
    regenerates structured families."""
    if cfg.problem == "custom":
        if prev is None:
            try:
                return read_mesh(cfg.mesh_path)
            except (OSError, MeshError) as exc:
                raise ValueError(
                    f"cannot load mesh {cfg.mesh_path}: {exc}") from None
        return uniform_refine(prev)
    n = cfg.base_n * 2 ** (level - 1)
    if cfg.problem == "lshape_uniform":
        return generate_lshape_triangular(n)
    return generate_unit_square(cfg.family, n)


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.16e}"


@dataclass
class LevelResult:
    level: int
    eta: float
    report: postproc.ErrorReport
    flux: postproc.FluxReport = None

    def csv_row(self, with_eta):
        r = self.report
        cells = [str(self.level), _fmt(r.h), str(r.n_elements),
                 str(r.n_faces), str(r.n_dof_condensed), str(r.nnz),
                 _fmt(r.err_energy), _fmt(r.eoc_energy), _fmt(r.err_l2),
                 _fmt(r.eoc_l2), _fmt(r.err_rec_l2), _fmt(r.jump_seminorm),
                 _fmt(r.energy)]
        if with_eta:
            cells.append(_fmt(self.eta))
        return ",".join(cells)


def run_level(cfg, mesh, eta, case, cache):
    system = assembly.assemble(mesh, cfg.k, materials=cfg.material, eta=eta,
                               f=case.f if case else uniform_load,
                               cache=cache, n_workers=cfg.n_workers)
    solution = assembly.solve(system, tol=cfg.tol)
    energy = postproc.discrete_energy(solution)
    if case is not None:
        err_en = postproc.error_energy_norm(solution, case.u, case.grad_u)
        err_l2 = postproc.error_l2(solution, case.u)
        err_rec = postproc.error_reconstruction_l2(solution, case.u)
    else:
        err_en = err_l2 = err_rec = float("nan")
    jump = postproc.jump_seminorm(solution)
    report = postproc.ErrorReport(
        h=mesh.h, n_elements=mesh.n_elements, n_faces=mesh.n_faces,
        n_dof_condensed=system.size, nnz=system.pattern_nnz,
        err_energy=err_en, err_l2=err_l2, err_rec_l2=err_rec,
        jump_seminorm=jump, energy=energy)
    flux = postproc.flux_report(solution) if cfg.flux_report else None
    return system, solution, report, flux


def _render_figures(cfg, results, out_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    stem, _ = os.path.splitext(out_path)
    by_eta = {}
    for res in results:
        by_eta.setdefault(res.eta, []).append(res)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    have_err = False
    for eta, rs in sorted(by_eta.items()):
        hs = [r.report.h for r in rs]
        for label, vals, style in (
                ("energy error", [r.report.err_energy for r in rs], "o-"),
                ("L2 error", [r.report.err_l2 for r in rs], "s--")):
            if all(math.isnan(v) for v in vals):
                continue
            have_err = True
            suffix = f" (eta={eta:g})" if len(by_eta) > 1 else ""
            ax.loglog(hs, vals, style, label=label + suffix)
    if have_err:
        ax.set_xlabel("h")
        ax.set_ylabel("error")
        ax.legend(fontsize=8)
        ax.grid(True, which="both", alpha=0.3)
        fig.savefig(stem + "_convergence.png", dpi=150,
                    bbox_inches="tight")
    plt.close(fig)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for eta, rs in sorted(by_eta.items()):
        suffix = f" (eta={eta:g})" if len(by_eta) > 1 else ""
        ax.plot([r.level for r in rs], [r.report.energy for r in rs],
                "o-", label="discrete energy" + suffix)
    ax.set_xlabel("level")
    ax.set_ylabel("E(u_h)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.savefig(stem + "_energy.png", dpi=150, bbox_inches="tight")
    plt.close(fig)


def run_study(cfg: StudyConfig, stream=None):
    """Run the configured study; returns (exit_code, results)."""
    if stream is None:
        stream = sys.stdout
    case = builtin_square_case() if cfg.problem == "square_manufactured" \
        else None
    with_eta = cfg.eta_sweep or len(cfg.etas) > 1
    header = CSV_HEADER + (",eta" if with_eta else "")
    results = []
    out_fh = open(cfg.out, "w", encoding="utf-8") if cfg.out else None

    def emit(line):
        print(line, file=stream)
        if out_fh:
            out_fh.write(line + "\n")
            out_fh.flush()

    emit(header)
    failures = []
    last_system = None
    try:
        for eta in cfg.etas:
            cache = {}
            mesh = None
            prev = []
            for level in range(1, cfg.levels + 1):
                try:
                    mesh = _level_mesh(cfg, level, mesh)
                except (MeshError, ValueError) as exc:
                    raise RuntimeError(f"level {level}: {exc}") from None
                try:
                    system, solution, report, flux = run_level(
                        cfg, mesh, eta, case, cache)
                except (assembly.SolverError, np.linalg.LinAlgError) as exc:
                    raise RuntimeError(
                        f"level {level} (eta={eta:g}): {exc}") from None
                if prev:
                    p = prev[-1]
                    if p.err_energy > 0 and report.err_energy > 0:
                        report.eoc_energy = math.log(
                            p.err_energy / report.err_energy) / math.log(
                            p.h / report.h)
                    if p.err_l2 > 0 and report.err_l2 > 0:
                        report.eoc_l2 = math.log(
                            p.err_l2 / report.err_l2) / math.log(
                            p.h / report.h)
                prev.append(report)
                res = LevelResult(level=level, eta=eta, report=report,
                                  flux=flux)
                results.append(res)
                emit(res.csv_row(with_eta))
                last_system = system
                if flux is not None and cfg.flux_tol is not None:
                    worst = max(flux.max_moment_rel, flux.max_shear_rel,
                                flux.max_virtual_work_rel)
                    if worst > cfg.flux_tol:
                        failures.append(
                            f"flux residual {worst:.3e} > {cfg.flux_tol:g} "
                            f"at level {level}")
            final = prev[-1]
            if cfg.min_eoc_energy is not None and not (
                    final.eoc_energy >= cfg.min_eoc_energy):
                failures.append(
                    f"energy EOC {final.eoc_energy:.3f} < "
                    f"{cfg.min_eoc_energy:g} (eta={eta:g})")
            if cfg.min_eoc_l2 is not None and not (
                    final.eoc_l2 >= cfg.min_eoc_l2):
                failures.append(
                    f"L2 EOC {final.eoc_l2:.3f} < {cfg.min_eoc_l2:g} "
                    f"(eta={eta:g})")
            if cfg.energy_min is not None and not (
                    final.energy >= cfg.energy_min):
                failures.append(
                    f"energy {final.energy:.6e} < {cfg.energy_min:g}")
            if cfg.energy_max is not None and not (
                    final.energy <= cfg.energy_max):
                failures.append(
                    f"energy {final.energy:.6e} > {cfg.energy_max:g}")
    finally:
        if out_fh:
            out_fh.close()
    if cfg.export_matrix and last_system is not None:
        assembly.export_matrix(last_system, cfg.export_matrix)
    if cfg.out:
        _render_figures(cfg, results, cfg.out)
    # summary
    print("# summary", file=stream)
    for res in results:
        r = res.report
        if res.flux is not None:
            print(f"#  eta={res.eta:g} level={res.level}: "
                  f"flux residuals moment={res.flux.max_moment_rel:.3e} "
                  f"shear={res.flux.max_shear_rel:.3e} "
                  f"work={res.flux.max_virtual_work_rel:.3e}",
                  file=stream)
        if res.level == cfg.levels:
            print(f"#  eta={res.eta:g}: final E={r.energy:.8e} "
                  f"eoc_energy={r.eoc_energy:.3f} eoc_l2={r.eoc_l2:.3f}",
                  file=stream)
    for msg in failures:
        print(f"# FAIL: {msg}", file=stream)
    return (1 if failures else 0), results


def main(argv=None):
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        code, _ = run_study(cfg)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
