"""Batch command-line front end.

Four subcommands: `eig` sweeps uniform refinements and tabulates leading
eigenvalues, `source-rates` measures manufactured-solution convergence
orders on the square, `adapt` drives the adaptive loop for one tracked
eigenvalue, and `verify` runs the acceptance suite and emits a JSON
report.  Identical configurations produce byte-identical CSV output:
fixed orderings, fixed float formats (7 decimals for a real refraction,
6 per part for a complex one), no wall-clock data in tables.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adaptivity import TrackingError, adapt_loop
from .assembly import build_space
from .geometry import DomainKind, MeshError, build_domain, save_mesh
from .solver import (
    EigenSolveError,
    SolverError,
    SortRule,
    build_pencil,
    default_sort_rule,
    solve_eigs,
    solve_source,
)
from .verification import (
    boundary_l2_error,
    broken_h1_error,
    disk_reference,
    manufactured_loads,
    observed_order,
    polygon_reference,
)

SOURCE_FIELD = "cos(pi*x)*cos(pi*y)"


@dataclass
class RunConfig:
    """Everything one batch command needs; JSON file plus flag overrides."""

    command: str
    domain: DomainKind = DomainKind.SQUARE
    n_re: float = 4.0
    n_im: float = 0.0
    k: float = 1.0
    levels: int = 4
    h0: float = 0.125
    theta: float = 0.5
    j: int = 2
    count: int = 6
    max_dof: int = 50000
    shift_re: Optional[float] = None
    shift_im: Optional[float] = None
    out: Optional[str] = None
    mesh_out: Optional[str] = None
    dump_matrices: Optional[str] = None
    quick: bool = False

    @property
    def n(self) -> complex:
        return complex(self.n_re, self.n_im)

    @property
    def shift(self) -> Optional[complex]:
        if self.shift_re is None and self.shift_im is None:
            return None
        return complex(self.shift_re or 0.0, self.shift_im or 0.0)

    def validate(self) -> None:
        if self.k <= 0.0:
            raise ValueError("k must be positive")
        if self.levels < 1:
            raise ValueError("levels must be at least 1")
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0, 1)")
        if self.j < 1 or self.count < 1:
            raise ValueError("eigenvalue indices are 1-based and positive")
        if self.h0 <= 0.0:
            raise ValueError("h0 must be positive")


def _level_h(config: RunConfig, level: int) -> float:
    return config.h0 / (2.0**level)


def _fmt_parts(lam: complex, real_n: bool) -> tuple[str, str]:
    if real_n:
        return f"{lam.real:.7f}", f"{lam.imag:.7f}"
    return f"{lam.real:.6f}", f"{lam.imag:.6f}"


def _reference_for(config: RunConfig) -> Optional[np.ndarray]:
    try:
        if config.domain == DomainKind.DISK:
            return disk_reference(config.n)
        if config.domain in (DomainKind.LSHAPE, DomainKind.SLIT):
            return polygon_reference(config.domain, config.n)
    except ValueError:
        return None
    return None


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_eig(config: RunConfig) -> int:
    """Uniform-refinement eigenvalue table with per-pair residuals."""
    real_n = config.n.imag == 0.0
    rule = default_sort_rule(config.n)
    reference = _reference_for(config)
    lines = ["dof,j,re,im,residual,ref_err"]
    mesh = None
    problem = None
    for level in range(config.levels):
        mesh = build_domain(config.domain, _level_h(config, level))
        space = build_space(mesh)
        problem = build_pencil(space, config.k, config.n)
        pairs = solve_eigs(
            problem, config.count, rule, shift=config.shift, with_duals=False
        )
        for j, pair in enumerate(pairs, start=1):
            re, im = _fmt_parts(pair.lam, real_n)
            ref = ""
            if reference is not None and j <= len(reference):
                ref = f"{abs(pair.lam - reference[j - 1]):.3e}"
            lines.append(f"{space.n_dofs},{j},{re},{im},{pair.residual:.3e},{ref}")
    _emit("\n".join(lines) + "\n", config.out)
    if config.mesh_out and mesh is not None:
        save_mesh(mesh, config.mesh_out)
    if config.dump_matrices and problem is not None:
        problem.a.dump_coo(config.dump_matrices + "-a.coo")
        problem.b.dump_coo(config.dump_matrices + "-b.coo")
    return 0


def cmd_source_rates(config: RunConfig) -> int:
    """Manufactured-solution errors and fitted orders on the square."""
    from .assembly import (
        assemble_boundary_load,
        assemble_stiffness,
        assemble_volume_load,
        assemble_volume_mass,
        combine_operator,
    )

    exact = manufactured_loads(SOURCE_FIELD, config.k, config.n)
    lines = ["level,dof,h,h1_error,bl2_error"]
    hs, e1, e0 = [], [], []
    for level in range(config.levels):
        h = _level_h(config, level)
        mesh = build_domain(DomainKind.SQUARE, h)
        space = build_space(mesh)
        a = combine_operator(
            assemble_stiffness(space),
            assemble_volume_mass(space, config.n),
            config.k,
        )
        load = assemble_boundary_load(space, exact.neumann) + assemble_volume_load(
            space, exact.volume_source
        )
        u = solve_source(a, load)
        hs.append(h)
        e1.append(broken_h1_error(space, u, exact))
        e0.append(boundary_l2_error(space, u, exact))
        lines.append(
            f"{level},{space.n_dofs},{h:.6e},{e1[-1]:.6e},{e0[-1]:.6e}"
        )
    if len(hs) >= 3:
        lines.append(f"# broken_h1_order={observed_order(hs, e1):.4f}")
        lines.append(f"# boundary_l2_order={observed_order(hs, e0):.4f}")
    _emit("\n".join(lines) + "\n", config.out)
    return 0


def cmd_adapt(config: RunConfig) -> int:
    """Adaptive eigenvalue table: level, dof, eigenvalue, estimator, marks."""
    real_n = config.n.imag == 0.0
    run = adapt_loop(
        config.domain,
        config.k,
        config.n,
        eig_index=config.j,
        theta=config.theta,
        max_dof=config.max_dof,
        target_h=config.h0,
        shift=config.shift,
    )
    lines = ["level,dof,re,im,eta_sq,marked"]
    for rec in run.records:
        re, im = _fmt_parts(rec.lam, real_n)
        lines.append(
            f"{rec.level},{rec.dof},{re},{im},{rec.eta_sq:.6e},{rec.marked}"
        )
    _emit("\n".join(lines) + "\n", config.out)
    if config.mesh_out and run.final_mesh is not None:
        save_mesh(run.final_mesh, config.mesh_out)
    return 0


def cmd_verify(config: RunConfig) -> int:
    """Acceptance suite as a JSON report; exit code 0 iff all checks pass."""
    from .acceptance import run_all

    results = run_all(quick=config.quick, log=lambda msg: print(msg, file=sys.stderr))
    report = {
        "quick": config.quick,
        "passed": all(r.passed for r in results),
        "checks": [
            {
                "criterion": r.criterion,
                "check": r.name,
                "expected": r.expected,
                "observed": r.observed,
                "tolerance": r.tolerance,
                "pass": r.passed,
            }
            for r in results
        ],
    }
    _emit(json.dumps(report, indent=2) + "\n", config.out)
    return 0 if report["passed"] else 2


_COMMANDS = {
    "eig": cmd_eig,
    "source-rates": cmd_source_rates,
    "adapt": cmd_adapt,
    "verify": cmd_verify,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steklov-cr",
        description="Crouzeix-Raviart solver for a Steklov eigenvalue problem "
        "from inverse scattering",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("eig", "uniform-refinement eigenvalue tables"),
        ("source-rates", "manufactured-solution convergence orders"),
        ("adapt", "adaptive refinement driven by the residual estimator"),
        ("verify", "run the acceptance suite and emit a JSON report"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument(
            "--domain", choices=[d.value for d in DomainKind], default=None
        )
        p.add_argument("--n-re", type=float, default=None, help="Re of refraction")
        p.add_argument("--n-im", type=float, default=None, help="Im of refraction")
        p.add_argument("--k", type=float, default=None, help="wavenumber")
        p.add_argument("--levels", type=int, default=None)
        p.add_argument("--h0", type=float, default=None, help="coarsest mesh size")
        p.add_argument("--theta", type=float, default=None, help="bulk fraction")
        p.add_argument("--j", type=int, default=None, help="tracked index, 1-based")
        p.add_argument("--count", type=int, default=None, help="eigenvalues per level")
        p.add_argument("--max-dof", type=int, default=None)
        p.add_argument("--shift-re", type=float, default=None)
        p.add_argument("--shift-im", type=float, default=None)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--mesh-out", default=None, help="write final mesh here")
        p.add_argument(
            "--dump-matrices",
            default=None,
            metavar="PREFIX",
            help="dump final pencil in coordinate format to PREFIX-{a,b}.coo",
        )
        p.add_argument("--quick", action="store_true", default=None)
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    merged: dict = {"command": args.command}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        unknown = set(data) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(data)
    for key, value in vars(args).items():
        key = key.replace("-", "_")
        if key in fields and key != "command" and value is not None:
            merged[key] = value
    if "domain" in merged:
        merged["domain"] = DomainKind(merged["domain"])
    config = RunConfig(**merged)
    config.validate()
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[config.command](config)
    except (SolverError, MeshError, TrackingError, EigenSolveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
