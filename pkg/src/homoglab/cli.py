"""Command line entry point.

Subcommands (each takes a TOML config file):

  homogenize  - solve cell problems, write the effective tensors as JSON
  solve       - solve one oscillating state problem, write the state CSV
  control     - solve one low-cost control problem, write the control CSV
  sweep       - run the configured eps-sweep, write the report CSV
  measure     - solve a measure-data problem and check the duality identity

Exit codes: 0 success, 2 configuration error, 3 solver/optimizer failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .control import OptimizerError, solve_lowcost, ControlProblem
from .domain import sample_epsilon, write_field_csv
from .elliptic import SolverError, assemble, solve
from .homogenize import HomogenizedTensors, assemble_Bsharp, homogenize_A, homogenize_B0
from .lab import ConfigError, load_config, load_config_dict, parse_measure, run_sweep
from .measure import check_duality, stampacchia_solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _cmd_homogenize(config) -> int:
    A = config.coefficient_A()
    B = config.coefficient_B()
    A0, table = homogenize_A(A, config.cell_resolution)
    Bsharp = assemble_Bsharp(B, table)
    B0 = homogenize_B0(B, config.cell_resolution)
    tensors = HomogenizedTensors(
        A0=A0, Bsharp=Bsharp, B0=B0,
        cell_resolution=config.cell_resolution,
        preset_A=A.name, preset_B=B.name,
    )
    tensors.save(config.tensor_output)
    print(f"wrote {config.tensor_output}")
    print(tensors.to_json())
    return EXIT_OK


def _cmd_solve(config) -> int:
    mesh = config.mesh()
    eps = config.eps_list[0]
    table = sample_epsilon(config.coefficient_A(), mesh, eps)
    u, report = solve(assemble(mesh, table), config.source(mesh),
                      tag=f"state-eps-{eps}")
    write_field_csv(config.output, u)
    print(f"eps={eps} dof={report.dof} iterations={report.iterations} "
          f"residual={report.residual:.3e} energy={report.energy:.12e}")
    print(f"wrote {config.output}")
    return EXIT_OK


def _cmd_control(config) -> int:
    mesh = config.mesh()
    eps = config.eps_list[0]
    A_tab = sample_epsilon(config.coefficient_A(), mesh, eps)
    if config.set_kind == "l1-ball" or config.r != 2.0:
        cost = ("lr", config.r)
    else:
        cost = ("dirichlet", sample_epsilon(config.coefficient_B(), mesh, eps))
    problem = ControlProblem(mesh=mesh, A_table=A_tab, cost=cost,
                             f=config.source(mesh), U=config.admissible_set(),
                             weight=eps)
    opt = solve_lowcost(problem)
    write_field_csv(config.output, opt.theta)
    print(f"eps={eps} J={opt.value:.12e} kkt={opt.kkt_residual:.3e} "
          f"iterations={opt.iterations}")
    print(f"wrote {config.output}")
    return EXIT_OK


def _cmd_sweep(config) -> int:
    report = run_sweep(config)
    report.to_csv(config.output)
    print(f"{config.kind}: {len(report.rows)} eps rows -> {config.output}")
    for eps, msg in report.meta.get("failures", []):
        print(f"  optimizer failure at eps={eps}: {msg}")
    return EXIT_OK


def _cmd_measure(config) -> int:
    mesh = config.mesh()
    lam = parse_measure(config.measure, mesh)
    A = config.coefficient_A()
    if config.eps_list:
        table = sample_epsilon(A, mesh, config.eps_list[0])
    else:
        table = sample_epsilon(A, mesh, 1.0)
    u = stampacchia_solve(mesh, table, lam)
    write_field_csv(config.output, u)
    duality = check_duality(u, table, lam, trials=20, seed=config.seed)
    csv_path = config.output.rsplit(".", 1)[0] + "-duality.csv"
    duality.to_csv(csv_path)
    print(f"total variation = {lam.total_variation():.12e}")
    print(f"max duality gap = {duality.max_gap:.3e}")
    print(f"wrote {config.output} and {csv_path}")
    return EXIT_OK


_COMMANDS = {
    "homogenize": _cmd_homogenize,
    "solve": _cmd_solve,
    "control": _cmd_control,
    "sweep": _cmd_sweep,
    "measure": _cmd_measure,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="homoglab",
        description="periodic homogenization and low-cost control laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="TOML config file")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OptimizerError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
