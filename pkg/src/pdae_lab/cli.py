"""``pdae-lab`` command line.

Exit codes: 0 analysis ok or simulation converged, 2 simulation diverged or
did not settle, 1 error.
"""

from __future__ import annotations

import argparse
import os
import sys

# cap BLAS threads before numpy loads
if os.environ.get("PDAE_LAB_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["PDAE_LAB_THREADS"])

from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
from scipy.interpolate import RegularGridInterpolator  # noqa: E402

from .eigenbasis import GridField, poincare_constant, tensor_modes, uniform_grid  # noqa: E402
from .modal_dae import PdaeProblem, assemble_modal_family, field_response, output_response, solve_family  # noqa: E402
from .modelfile import ModelFile, ModelFileError, SimSection, parse_model  # noqa: E402
from .pencil import MatrixPencil, PencilError, verdict  # noqa: E402
from .report import RunSummary, write_csv  # noqa: E402
from .semilinear_sim import SemilinearModel, SimConfig, SimResult, simulate  # noqa: E402
from .stability import (  # noqa: E402
    delta_criterion,
    fit_log_rate,
    folded_lambda1,
    lmi_certificate,
    literal_lambda1,
    spectrum_report,
)

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2
DEFAULT_OUT = "pdae-lab-out"


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def _system_matrices(model: ModelFile):
    """``(E, D, A)``; for wetland files ``A`` is the Jacobian at the coexistence state."""
    if model.is_wetland:
        from .wetland import equilibrium, jacobian_at, wetland_model

        p = model.wetland
        return p.E, p.D, jacobian_at(wetland_model(p), equilibrium(p))
    return model.E, model.D, model.A


def _basis(model: ModelFile):
    return tensor_modes(model.domain, model.bc, model.N, model.quad_nodes)


def _lmi_section(E, A, lam1) -> dict:
    try:
        cert = lmi_certificate(E, A, lam1)
    except (PencilError, np.linalg.LinAlgError) as exc:
        return {"lambda1": lam1, "feasible": False, "error": str(exc)}
    return {
        "lambda1": lam1,
        "P": cert.P,
        "sym_residual": cert.sym_residual,
        "semidef_margin": cert.semidef_margin,
        "neg_margin": cert.neg_margin,
        "feasible": cert.feasible,
        "diagnostics": list(cert.diagnostics),
    }


def _decay_section(cert) -> dict:
    return {
        "d1": cert.d1,
        "mu1": cert.mu1,
        "normA": cert.normA,
        "normE": cert.normE,
        "delta": cert.delta,
        "applicable": cert.applicable,
        "margin": cert.margin,
        "table_margin": cert.table_margin,
        "reasons": list(cert.reasons),
    }


def _table1_section(row) -> dict:
    return {
        "h1": row.h1,
        "h2": row.h2,
        "A_J": row.A_J,
        "norm_AJ": row.norm_AJ,
        "margin_min_d": row.margin_min_d,
        "margin_table_reading": row.margin_table,
        "tabulated_norm": row.tabulated_norm,
        "tabulated_margin": row.tabulated_margin,
        "norm_matches": row.norm_matches,
        "margin_matches_table_reading": row.margin_matches_table_reading,
        "margin_matches_min_d": row.margin_matches_min_d,
        "delta": row.certificate.delta,
        "applicable": row.certificate.applicable,
    }


def _sim_config(sim: SimSection) -> SimConfig:
    return SimConfig(dt=sim.dt, t_end=sim.t_end, snapshot_stride=sim.snapshot_stride, steady_tol=sim.steady_tol)


def _exit_for(status: str) -> int:
    return EXIT_OK if status == "converged" else EXIT_DIVERGED


def _field_rows(times, fields):
    coords = None
    for t, fld in zip(times, fields):
        if coords is None:
            coords = np.stack([m.ravel() for m in fld.mesh()], axis=1)
        vals = fld.values.reshape(-1, fld.n)
        for c, v in zip(coords, vals):
            yield (float(t), *(float(x) for x in c), *(float(x) for x in v))


def _field_header(d: int, n: int) -> list[str]:
    return ["t", *(f"z{i + 1}" for i in range(d)), *(f"x{i + 1}" for i in range(n))]


# ---------------------------------------------------------------- commands


def cmd_analyze(model: ModelFile, out: Path) -> tuple[RunSummary, int]:
    E, D, A = _system_matrices(model)
    basis = _basis(model)
    N = model.N
    summary = RunSummary("analyze", model.source)

    if model.is_wetland:
        problem = PdaeProblem(E, D, A, model.domain, model.bc)
        fam = assemble_modal_family(problem, basis, N, skip_irregular=True)
        for j in fam.irregular:
            summary.notes.append(
                f"mode {j} pencil irregular (mu={basis.modes[j - 1].mu:.12g}); the algebraic row has a kernel there"
            )
    else:
        problem = PdaeProblem(E, D, A, model.domain, model.bc, model.B, model.C)
        assemble_modal_family(problem, basis, N)  # raises on an irregular mode
    summary.notes.extend(problem.flags)

    verdicts = []
    for j, mode in enumerate(basis.modes[:N], start=1):
        v = verdict(MatrixPencil(E, A - mode.mu * D))
        verdicts.append(
            {
                "j": j,
                "mu": mode.mu,
                "regular": v.regular,
                "nu": v.nu,
                "impulse_free": v.impulse_free,
                "admissible": v.admissible,
                "finite_spectrum": list(v.finite_spectrum),
            }
        )
    spec = spectrum_report(E, D, A, basis, N)
    summary.sections["spectrum"] = {
        "lambdas": list(spec.lambdas),
        "g": spec.g,
        "epsilon": spec.epsilon,
        "epsilon_below_one": spec.epsilon_below_one,
        "all_real": spec.all_real,
        "tail_negative_from": spec.tail_negative_from,
    }
    summary.sections["verdicts"] = verdicts
    summary.sections["admissible"] = all(v["admissible"] for v in verdicts)
    summary.sections["lmi"] = {
        "literal": _lmi_section(E, A, literal_lambda1(D, basis, N)),
        "folded": _lmi_section(E, np.zeros_like(A), folded_lambda1(D, A, basis, N)),
    }
    try:
        mu1 = poincare_constant(basis)
    except ValueError as exc:
        summary.notes.append(f"decay certificate skipped: {exc}")
    else:
        summary.sections["decay"] = _decay_section(delta_criterion(E, D, A, mu1))
    if model.is_wetland:
        from .wetland import classify_stability

        summary.sections["table1"] = _table1_section(classify_stability(model.wetland, model.domain, basis))
    summary.write(out / "summary.json")
    return summary, EXIT_OK


def linear_problem(model: ModelFile) -> PdaeProblem:
    if model.is_wetland:
        raise CommandError("solve-linear needs a linear model (a 'matrices' section), not a wetland block")
    return PdaeProblem(
        model.E,
        model.D,
        model.A,
        model.domain,
        model.bc,
        model.B,
        model.C,
        initial=model.initial_function(),
        input=model.input,
        disturbance=model.disturbance,
    )


def sample_times(sim: SimSection) -> np.ndarray:
    h = sim.dt * sim.snapshot_stride
    count = int(round(sim.t_end / h))
    return np.arange(count + 1) * h


def cmd_solve_linear(model: ModelFile, out: Path) -> tuple[RunSummary, int]:
    problem = linear_problem(model)
    basis = _basis(model)
    family = assemble_modal_family(problem, basis, model.N)
    times = sample_times(model.sim)
    trajs, residuals = solve_family(problem, family, times)
    grid = uniform_grid(model.domain, model.grid)
    fields = field_response(family, trajs, grid)
    y = output_response(family, trajs, problem.disturbance, times)
    n, d = problem.n, model.domain.d

    write_csv(
        out / "modes.csv",
        ["t", "j", *(f"X{i + 1}" for i in range(n))],
        ((float(t), tr.j, *(float(v) for v in tr.X[k])) for k, t in enumerate(times) for tr in trajs),
    )
    write_csv(out / "field.csv", _field_header(d, n), _field_rows(times, fields))
    write_csv(
        out / "output.csv",
        ["t", *(f"y{i + 1}" for i in range(y.shape[1]))],
        ((float(t), *(float(v) for v in row)) for t, row in zip(times, y)),
    )
    summary = RunSummary("solve-linear", model.source)
    final = fields[-1].values if fields else np.zeros(1)
    summary.sections["solve"] = {
        "modes": len(trajs),
        "samples": len(times),
        "t_end": float(times[-1]),
        "max_consistency_residual": max(residuals, default=0.0),
        "final_state_norm": float(np.abs(final).max()),
        "uniform_index": family.uniform_index,
    }
    summary.notes.extend(family.diagnostics + problem.flags)
    summary.write(out / "summary.json")
    return summary, EXIT_OK


def _semilinear(model: ModelFile) -> SemilinearModel:
    if model.is_wetland:
        from .wetland import wetland_model

        return wetland_model(model.wetland)
    if model.input is not None and not model.input.is_zero:
        raise CommandError("simulate does not take inputs; remove the 'input' section")
    return SemilinearModel.linear(model.E, model.D, model.A)


def _simulation_section(result: SimResult, model: ModelFile) -> dict:
    diag = result.diagnostics
    sec = {
        "status": result.status,
        "steps": result.steps,
        "t_final": float(result.times[-1]),
        "final_residual": result.final_residual,
        "converged_at": result.converged_at,
        "final_state_norm": float(np.nanmax(np.abs(result.final.values))),
        "energy_decay_rate": fit_log_rate(result.times, diag["energy"]),
        "deviation_decay_rate": fit_log_rate(result.times, diag["mean_deviation"]),
        "algebraic_mode": result.algebraic_mode,
        "kernel_dimension": result.kernel_dimension,
        "x3_amplitude": model.sim.x3_amplitude,
    }
    if model.is_wetland:
        from .wetland import equilibrium

        x_star = equilibrium(model.wetland)
        sec["equilibrium"] = x_star
        sec["distance_to_equilibrium"] = float(np.nanmax(np.abs(result.final.values - x_star)))
        sec["left_ball_0.05"] = sec["distance_to_equilibrium"] > 0.05
    return sec


def _run_simulation(model: ModelFile) -> SimResult:
    sm = _semilinear(model)
    init = model.initial_function()
    if init is None:
        init = np.zeros(tuple(model.grid) + (sm.n,))
    return simulate(sm, model.domain, model.grid, init, model.sim.x3_amplitude, _sim_config(model.sim), bc=model.bc)


def _write_diagnostics(out: Path, result: SimResult, n: int):
    diag = result.diagnostics
    write_csv(
        out / "diagnostics.csv",
        ["t", "E_L", "spatial_avg_dev", *(f"min_x{i + 1}" for i in range(n)), *(f"max_x{i + 1}" for i in range(n))],
        (
            (float(t), float(e), float(m), *(float(v) for v in lo), *(float(v) for v in hi))
            for t, e, m, lo, hi in zip(result.times, diag["energy"], diag["mean_deviation"], diag["min"], diag["max"])
        ),
    )


def cmd_simulate(model: ModelFile, out: Path) -> tuple[RunSummary, int]:
    result = _run_simulation(model)
    n, d = result.final.n, model.domain.d
    write_csv(out / "field.csv", _field_header(d, n), _field_rows(result.snapshot_times, result.snapshots))
    _write_diagnostics(out, result, n)
    summary = RunSummary("simulate", model.source, status=result.status)
    summary.sections["simulation"] = _simulation_section(result, model)
    summary.notes.extend(result.notes)
    summary.write(out / "summary.json")
    return summary, _exit_for(result.status)


DEMO_CASES = {"stable": ({}, 0.0), "unstable": ({"h1": 24.0}, 0.01)}


def demo_model(case: str) -> ModelFile:
    from .wetland import WetlandParams, reference_domain
    from .modelfile import Expression
    from .eigenbasis import BoundarySpec

    if case not in DEMO_CASES:
        raise CommandError(f"unknown case {case!r}; choose stable or unstable")
    overrides, amp = DEMO_CASES[case]
    domain = reference_domain()
    return ModelFile(
        domain=domain,
        bc=BoundarySpec.uniform("neumann", 2),
        N=16,
        initial=(Expression.parse("0.3", 2), Expression.parse("0.3*(1 + cos(z1))", 2)),
        wetland=WetlandParams(**overrides),
        sim=SimSection(dt=0.01, t_end=100.0, grid=(64, 16), snapshot_stride=10, x3_amplitude=amp),
        source=f"wetland-demo:{case}",
    )


def _slice_z2(result: SimResult, comp: int, z2: float):
    grid = result.snapshots[0].grid
    z1 = grid[0]
    pts = np.stack([z1, np.full_like(z1, z2)], axis=1)
    rows = []
    for t, fld in zip(result.snapshot_times, result.snapshots):
        interp = RegularGridInterpolator(grid, fld.values[..., comp])
        rows.append((float(t), *(float(v) for v in interp(pts))))
    return ["t", *(f"z1={float(z)!r}" for z in z1)], rows


def cmd_wetland_demo(case: str, out: Path, model: ModelFile | None = None) -> tuple[RunSummary, int]:
    from .wetland import classify_stability

    model = demo_model(case) if model is None else model
    basis = _basis(model)
    row = classify_stability(model.wetland, model.domain, basis)
    t1 = _table1_section(row)
    write_csv(
        out / "table1.csv",
        ["h1", "h2", "norm_AJ", "tabulated_norm", "margin_min_d", "margin_table_reading", "tabulated_margin", "delta", "applicable"],
        [
            (
                row.h1,
                row.h2,
                row.norm_AJ,
                "" if row.tabulated_norm is None else row.tabulated_norm,
                row.margin_min_d,
                row.margin_table,
                "" if row.tabulated_margin is None else row.tabulated_margin,
                row.certificate.delta,
                row.certificate.applicable,
            )
        ],
    )
    result = _run_simulation(model)
    z2 = 0.5 * model.domain.lengths[1]
    for comp in (0, 1):
        header, rows = _slice_z2(result, comp, z2)
        write_csv(out / f"x{comp + 1}_tz.csv", header, rows)
    probe = np.array([[0.5 * model.domain.lengths[0], z2]])
    phase = []
    for t, fld in zip(result.snapshot_times, result.snapshots):
        v = [RegularGridInterpolator(fld.grid, fld.values[..., c])(probe)[0] for c in (0, 1)]
        phase.append((float(t), float(v[0]), float(v[1])))
    write_csv(out / "phase.csv", ["t", "x1", "x2"], phase)
    _write_diagnostics(out, result, result.final.n)

    summary = RunSummary("wetland-demo", model.source, status=result.status)
    summary.sections["case"] = case
    summary.sections["seed"] = model.seed
    summary.sections["table1"] = t1
    summary.sections["simulation"] = _simulation_section(result, model)
    summary.sections["probe"] = probe[0]
    summary.notes.extend(result.notes)
    if not row.margin_matches_table_reading:
        summary.notes.append(
            "tabulated margin not reproduced by n*d1*mu1 - |A_J| nor by d1*mu1 - |A_J| with d1 = min eig(D)"
        )
    summary.write(out / "summary.json")
    return summary, _exit_for(result.status)


# ---------------------------------------------------------------- entry point


def _grid_arg(text: str) -> tuple[int, ...]:
    try:
        nodes = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x16, got {text!r}") from None
    if not nodes or min(nodes) < 3:
        raise argparse.ArgumentTypeError("grid needs at least 3 nodes per axis")
    return nodes


class _Parser(argparse.ArgumentParser):
    # exit 2 is reserved for diverged runs; usage errors are plain errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdae-lab", description="Modal analysis and simulation of linear and semilinear PDAEs.")
    common = _Parser(add_help=False)
    common.add_argument("--modes", type=int, help="number of eigenmodes N")
    common.add_argument("--grid", type=_grid_arg, help="grid nodes per axis, e.g. 64x16")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--t-end", type=float, dest="t_end", help="final time")
    common.add_argument("--seed", type=int, help="seed recorded in the summary")
    common.add_argument("--out", type=Path, default=Path(DEFAULT_OUT), help=f"output directory (default {DEFAULT_OUT})")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("analyze", "spectrum, pencil verdicts, LMI and decay certificates"),
        ("solve-linear", "closed-form modal solution of a linear model"),
        ("simulate", "grid IMEX simulation"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("model", type=Path, help="model file (YAML)")
    demo = sub.add_parser("wetland-demo", parents=[common], help="tabulated stability rows and figure data for the wetland model")
    demo.add_argument("--case", choices=sorted(DEMO_CASES), required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "wetland-demo":
            model = demo_model(args.case)
        else:
            model = parse_model(args.model)
        model = model.with_overrides(N=args.modes, grid=args.grid, dt=args.dt, t_end=args.t_end, seed=args.seed)
        out = args.out
        if args.command == "analyze":
            summary, code = cmd_analyze(model, out)
        elif args.command == "solve-linear":
            summary, code = cmd_solve_linear(model, out)
        elif args.command == "simulate":
            summary, code = cmd_simulate(model, out)
        else:
            summary, code = cmd_wetland_demo(args.case, out, model)
    except (ModelFileError, CommandError, PencilError, ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"pdae-lab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"pdae-lab {args.command}: {summary.status}; wrote {out / 'summary.json'}")
    for note in summary.notes:
        print(f"  note: {note}")
    return code


if __name__ == "__main__":
    sys.exit(main())
