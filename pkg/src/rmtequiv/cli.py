"""Command-line front end.

Every run writes its outputs plus ``manifest.json`` (config echo, embedded
input files, library version, wall time) into ``--out``. Failures exit
non-zero and print a JSON error document on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import ReplicateError, resolve_workers
from .canonical import ConvergenceError, SolverOptions, solve_canonical
from .equivalents import (
    STABILITY_CSV_HEADER,
    build_T,
    duality_residual,
    stability_report,
    trace_consistency,
)
from .mimo import (
    PrecoderProblem,
    mmse_capacity_equiv,
    mmse_capacity_mc,
    optimize_precoder,
    trace_norm,
)
from .model import (
    ModelSpec,
    ModelSpecError,
    as_point,
    check_rank_one_identities,
    matrix_from_json,
    matrix_to_json,
    parse_complex,
    sample_sigma,
    SpectralResolvent,
)
from .montecarlo import MOMENT_CSV_HEADER, moment_grid, rate_regression, trace_gap
from .subspace import (
    SUBSPACE_CSV_HEADER,
    auto_contour,
    estimate_projector_quadform,
    signal_basis,
    true_projector,
)

FILE_ARGS = ("spec", "problem", "K")


def _csv(path: Path, header: str, rows) -> None:
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows))


def _json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _cx(z: complex, prefix: str) -> dict:
    z = complex(z)
    return {f"{prefix}_re": z.real, f"{prefix}_im": z.imag}


def _opts(args) -> SolverOptions:
    return SolverOptions(tol=args.tol, max_iter=args.max_iter, damping=args.damping)


def _points(args) -> list[complex]:
    zs = args.z or ["-1"]
    return [as_point(parse_complex(z)).z for z in zs]


def _seeds(text: str) -> list[int]:
    """``"1..50"`` (inclusive) or a comma list."""
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s]


def _solution_doc(sol) -> dict:
    return {**_cx(sol.z, "z"), **_cx(sol.delta, "delta"), **_cx(sol.delta_tilde, "delta_tilde"),
            "residual": sol.residual, "iterations": sol.iterations, "converged": sol.converged}


# ------------------------------------------------------------------ commands

def cmd_solve(args, out: Path):
    spec = ModelSpec.load(args.spec)
    sols = [solve_canonical(spec, z, _opts(args)) for z in _points(args)]
    doc = {"solutions": [_solution_doc(s) for s in sols]}
    if len(sols) == 1:
        doc.update(delta=sols[0].delta.real if sols[0].z.imag == 0 else None)
    _json(out / "solve.json", doc)
    return doc


def cmd_equiv(args, out: Path):
    spec = ModelSpec.load(args.spec)
    z = _points(args)[0]
    sol = solve_canonical(spec, z, _opts(args))
    pair = build_T(spec, sol)
    _json(out / "T.json", matrix_to_json(pair.T))
    _json(out / "T_tilde.json", matrix_to_json(pair.T_tilde))
    e, et = trace_consistency(spec, pair)
    doc = {"solution": _solution_doc(sol), "trace_consistency": e, "trace_consistency_tilde": et,
           "duality_residual": duality_residual(spec, pair),
           "norm_T_times_dist": float(np.linalg.norm(pair.T, 2) * as_point(z).dist_to_R_plus)}
    _json(out / "equiv.json", doc)
    return doc


def cmd_diagnostics(args, out: Path):
    spec = ModelSpec.load(args.spec)
    rows = []
    for z in _points(args):
        sol = solve_canonical(spec, z, _opts(args))
        rows.append(stability_report(spec, z, sol).csv_row())
    _csv(out / "stability.csv", STABILITY_CSV_HEADER, rows)
    return {"rows": len(rows)}


def cmd_mc_moments(args, out: Path):
    spec = ModelSpec.load(args.spec)
    z = _points(args)[0]
    grid = [int(v) for v in args.ngrid.split(",")]
    ests = moment_grid(spec, z, grid, args.p, args.reps, args.seed, args.u, args.v,
                       args.workers, _opts(args))
    _csv(out / "moments.csv", MOMENT_CSV_HEADER, [e.csv_row() for e in ests])
    doc = {"estimates": len(ests)}
    if len(ests) >= 3:
        fit = rate_regression(ests)
        (out / "rate.json").write_text(fit.to_json() + "\n")
        doc["slope"] = fit.slope
    return doc


def cmd_trace_gap(args, out: Path):
    spec = ModelSpec.load(args.spec)
    z = _points(args)[0]
    res = trace_gap(spec, z, args.reps, args.seed, args.workers, _opts(args))
    rows = [f"{r},{g.real:.17g},{g.imag:.17g},{a.real:.17g},{a.imag:.17g},{t.real:.17g},{t.imag:.17g}"
            for r, (g, a, t) in enumerate(zip(res.gaps, res.alpha_gaps, res.alpha_tilde_gaps))]
    _csv(out / "trace_gap.csv",
         "replicate,gap_re,gap_im,alpha_gap_re,alpha_gap_im,alpha_tilde_gap_re,alpha_tilde_gap_im", rows)
    doc = res.summary()
    _json(out / "trace_gap.json", doc)
    return doc


def subspace_rows(spec: ModelSpec, seeds, r_hint, y, nodes, u_kinds=("orth", "signal")) -> list[str]:
    Pi = true_projector(spec.A)
    U = signal_basis(spec.A)
    vectors = {}
    if "orth" in u_kinds:
        k = int(np.argmax(np.real(np.diag(Pi))))
        vectors["orth"] = Pi[:, k] / np.linalg.norm(Pi[:, k])
    if "signal" in u_kinds:
        if U.shape[1] == 0:
            raise ValueError("u_kind 'signal' needs A != 0")
        vectors["signal"] = U[:, 0]
    rows = []
    for seed in seeds:
        sample = sample_sigma(spec, seed)
        sr = SpectralResolvent(sample)
        contour = auto_contour(sample, r_hint, y, nodes, spectral=sr)
        for kind, u in vectors.items():
            est = estimate_projector_quadform(sample, u, contour, sr)
            oracle = float(np.vdot(u, Pi @ u).real)
            rows.append(",".join([
                str(seed), str(spec.N), str(spec.n), str(contour.rank), kind,
                f"{est.value:.17g}", f"{oracle:.17g}", f"{abs(est.value - oracle):.17g}",
                str(nodes), f"{contour.x_minus:.17g}", f"{contour.x_plus:.17g}", f"{y:.17g}"]))
    return rows


def cmd_subspace(args, out: Path):
    spec = ModelSpec.load(args.spec)
    rows = subspace_rows(spec, _seeds(args.seeds), args.r_hint, args.y, args.nodes,
                         tuple(args.u_kinds.split(",")))
    _csv(out / "subspace.csv", SUBSPACE_CSV_HEADER, rows)
    errs = [float(r.split(",")[7]) for r in rows]
    return {"rows": len(rows), "median_abs_err": float(np.median(errs))}


def _problem(args) -> PrecoderProblem:
    prob = PrecoderProblem.load(args.problem)
    if getattr(args, "budget", None) is not None:
        prob = PrecoderProblem(prob.B, prob.R, prob.R_tilde, args.budget)
    return prob


def cmd_mimo_eval(args, out: Path):
    prob = _problem(args)
    if args.K:
        K = matrix_from_json(json.loads(Path(args.K).read_text()))
    else:
        K = np.sqrt(prob.a) * np.eye(prob.N)
    equiv = mmse_capacity_equiv(prob, K, _opts(args))
    doc = {"equiv": equiv, "trace_norm": trace_norm(K), "sign": -1.0 if args.negate else 1.0}
    if args.reps > 0:
        mc = mmse_capacity_mc(prob, K, args.reps, args.seed, args.workers)
        doc.update(mc=mc.value, mc_std_error=mc.std_error, replicates=mc.replicates,
                   abs_gap_per_antenna=abs(mc.value - equiv) / prob.N)
    if args.negate:
        doc = {k: (-v if k in ("equiv", "mc") else v) for k, v in doc.items()}
    _json(out / "mimo_eval.json", doc)
    return doc


def cmd_mimo_opt(args, out: Path):
    prob = _problem(args)
    res = optimize_precoder(prob, args.max_iter_opt, args.step, args.fd_step, args.restarts,
                            args.seed, -1.0 if args.negate else 1.0, _opts(args))
    (out / "mimo_opt.csv").write_text(res.csv())
    doc = {"objective": res.objective, "trace_norm": res.candidate.trace_norm,
           "restart": res.restart, "K": matrix_to_json(res.candidate.K)}
    _json(out / "mimo_opt.json", doc)
    return {k: v for k, v in doc.items() if k != "K"}


def cmd_identities(args, out: Path):
    spec = ModelSpec.load(args.spec)
    sample = sample_sigma(spec, args.seed)
    names = ("diag_coresolvent", "remove_column", "add_column", "quadform_ratio", "row_identity")
    rows = []
    worst = 0.0
    for z in _points(args):
        for j in range(spec.n):
            rep = check_rank_one_identities(sample, z, j)
            worst = max(worst, rep.max_residual)
            rows.append(",".join([f"{z.real:.17g}", f"{z.imag:.17g}", str(j)]
                                 + [f"{rep.residuals[k]:.17g}" for k in names]
                                 + [f"{rep.scale:.17g}", str(int(rep.st_bound_ok))]))
    _csv(out / "identities.csv", "z_re,z_im,j," + ",".join(names) + ",scale,st_bound_ok", rows)
    return {"rows": len(rows), "max_residual": worst}


COMMANDS = {
    "solve": cmd_solve,
    "equiv": cmd_equiv,
    "diagnostics": cmd_diagnostics,
    "mc-moments": cmd_mc_moments,
    "trace-gap": cmd_trace_gap,
    "subspace": cmd_subspace,
    "mimo-eval": cmd_mimo_eval,
    "mimo-opt": cmd_mimo_opt,
    "identities": cmd_identities,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="rmtequiv_out", help="output directory")
    common.add_argument("--workers", type=int, default=None,
                        help="replicate workers (default: $RMTEQUIV_WORKERS or 1)")
    common.add_argument("--tol", type=float, default=1e-12)
    common.add_argument("--max-iter", type=int, default=10_000)
    common.add_argument("--damping", type=float, default=1.0)
    common.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="rmtequiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    for name, help_ in (("solve", "solve the canonical system"),
                        ("equiv", "build T and T_tilde at one point"),
                        ("diagnostics", "stability coefficients along a list of points")):
        p = add(name, help_)
        p.add_argument("--spec", required=True)
        p.add_argument("--z", action="append", help="evaluation point, e.g. -1+0i (repeatable)")

    p = add("mc-moments", "Monte Carlo moments of u*(Q-T)v over an n grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--z", action="append")
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--ngrid", default="50,100,200,400")
    p.add_argument("--reps", type=int, default=400)
    p.add_argument("--u", default="e1", choices=("e1", "flat"))
    p.add_argument("--v", default=None, choices=("e1", "flat"))

    p = add("trace-gap", "Monte Carlo gaps of normalized traces")
    p.add_argument("--spec", required=True)
    p.add_argument("--z", action="append")
    p.add_argument("--reps", type=int, default=200)

    p = add("subspace", "subspace estimator over a range of seeds")
    p.add_argument("--spec", required=True)
    p.add_argument("--r-hint", type=int, default=None)
    p.add_argument("--y", type=float, default=1.0)
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--seeds", default="1..50")
    p.add_argument("--u-kinds", default="orth,signal")

    p = add("mimo-eval", "MMSE capacity: deterministic approximation and Monte Carlo")
    p.add_argument("--problem", required=True)
    p.add_argument("--K", default=None, help="precoder matrix JSON (default sqrt(a) I)")
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--negate", action="store_true", help="report -I (engineering sign)")

    p = add("mimo-opt", "projected-gradient precoder search")
    p.add_argument("--problem", required=True)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--max-iter-opt", type=int, default=50)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--negate", action="store_true", help="maximize -Ibar (minimize Ibar)")

    p = add("identities", "rank-one resolvent identity residuals for every column")
    p.add_argument("--spec", required=True)
    p.add_argument("--z", action="append")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="override the recorded worker count")
    return parser


def _normalize_argv(argv: list[str]) -> list[str]:
    # "--z -1+0i" would be parsed as an option; glue the value to the flag.
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok == "--z":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--z={nxt}")
        else:
            out.append(tok)
    return out


def _error_doc(exc: BaseException) -> tuple[dict, int]:
    doc = {"error": type(exc).__name__, "message": str(exc),
           "module": type(exc).__module__.rsplit(".", 1)[-1]}
    if isinstance(exc, ModelSpecError):
        doc["field"] = exc.field
        return doc, 2
    if isinstance(exc, ConvergenceError):
        doc["last_iterate"] = _solution_doc(exc.last)
        doc["index"] = exc.index
    if isinstance(exc, ReplicateError):
        doc["replicate"] = exc.index
    if isinstance(exc, (ValueError, FileNotFoundError, json.JSONDecodeError)):
        return doc, 2
    return doc, 1


def execute(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items()}
    inputs = {}
    for key in FILE_ARGS:
        path = config.get(key)
        if path:
            try:
                inputs[key] = Path(path).read_text()
            except OSError:
                pass
    start = time.perf_counter()
    try:
        result = COMMANDS[args.command](args, out)
    except Exception as exc:  # noqa: BLE001 - reported as JSON
        doc, code = _error_doc(exc)
        print(json.dumps(doc), file=sys.stderr)
        _json(out / "error.json", doc)
        return code
    manifest = {
        "command": args.command,
        "config": config,
        "inputs": inputs,
        "version": __version__,
        "numpy": np.__version__,
        "workers_resolved": resolve_workers(args.workers),
        "wall_time_s": time.perf_counter() - start,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    _json(out / "manifest.json", manifest)
    print(json.dumps(result))
    return 0


def replay(manifest_path: str, out_dir: str, workers: int | None = None) -> int:
    manifest = json.loads(Path(manifest_path).read_text())
    out = Path(out_dir)
    inputs_dir = out / "inputs"
    inputs_dir.mkdir(parents=True, exist_ok=True)
    config = dict(manifest["config"])
    for key, text in manifest.get("inputs", {}).items():
        target = inputs_dir / f"{key}.json"
        target.write_text(text)
        config[key] = str(target)
    config["out"] = str(out)
    if workers is not None:
        config["workers"] = workers
    return execute(argparse.Namespace(**config))


def main(argv=None) -> int:
    argv = _normalize_argv(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return replay(args.manifest, args.out, args.workers)
    return execute(args)


if __name__ == "__main__":
    sys.exit(main())
