"""Command-line driver: solve single instances, sweep solver/size grids,
stream rows from disk, fit kernel models, and verify the library's
deterministic and statistical guarantees on synthetic data.

Exit codes: 0 full success, 1 configuration error, 2 partial failures
(failed sweep cells or failed verification checks).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import evaluation as ev
from . import io as data_io
from . import kernel as kpcr
from . import sketch, solvers, streaming

SCHEMA_VERSION = 1
DEFAULT_SVD_BUDGET = 300_000_000  # n * d * min(n, d) ceiling for exact references
SYNTH_NOISE_LEVEL = 0.3


class CliError(Exception):
    """Configuration problem; maps to exit code 1."""


@dataclass
class RunRecord:
    method: str
    k: int
    s: int | None
    t: int | None
    seed: int
    objective_over_b: float | None = None
    objective_over_exact: float | None = None
    constraint_over_b: float | None = None
    wall_time: float | None = None
    error: str | None = None


@dataclass
class RunReport:
    task: str
    records: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_payload(self):
        return {
            "schema_version": self.schema_version,
            "task": self.task,
            "records": [asdict(r) for r in self.records],
            "aggregates": self.aggregates,
        }


def emit_report(report: RunReport, fmt, path):
    """Write the report as versioned JSON or a header-first CSV of records."""
    payload = report.to_payload()
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if path is None:
            sys.stdout.write(text)
        else:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return
    if fmt == "csv":
        fields = ["method", "k", "s", "t", "seed", "objective_over_b",
                  "objective_over_exact", "constraint_over_b", "wall_time", "error"]
        out = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
        try:
            writer = csv.DictWriter(out, fieldnames=fields)
            writer.writeheader()
            for rec in payload["records"]:
                writer.writerow({f: rec.get(f) for f in fields})
        finally:
            if path:
                out.close()
        return
    raise CliError(f"unknown report format {fmt!r}")


# ---------------------------------------------------------------------------
# Problem construction.

def _parse_synthetic(spec_str, seed):
    try:
        n_s, d_s, k_s, gap_s = spec_str.split(",")
        n, d, k, gap = int(n_s), int(d_s), int(k_s), float(gap_s)
    except ValueError:
        raise CliError(f"--synthetic expects n,d,k,gap, got {spec_str!r}") from None
    a = ev.planted_matrix(n, d, k, gap, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x_true = rng.standard_normal(d)
    x_true /= np.linalg.norm(x_true)
    f = a @ x_true
    sigma = SYNTH_NOISE_LEVEL * np.linalg.norm(f) / math.sqrt(n)
    b = f + sigma * rng.standard_normal(n)
    return a, b, k


def _load_problem(args, need_k=True):
    if args.synthetic and args.data:
        raise CliError("pass either --data or --synthetic, not both")
    if args.synthetic:
        a, b, planted_k = _parse_synthetic(args.synthetic, args.seed0)
        default_k = planted_k
    elif args.data:
        if args.data.endswith(".csv"):
            a, b = data_io.load_dense_csv(args.data)
        else:
            a, b = data_io.load_svmlight(args.data, center_response=args.center_response)
        default_k = None
    else:
        raise CliError("one of --data or --synthetic is required")
    k_list = args.k if args.k else ([default_k] if default_k else None)
    if need_k and not k_list:
        raise CliError("--k is required for this dataset")
    return a, b, k_list


def _certify_budget_ok(shape, budget=DEFAULT_SVD_BUDGET):
    n, d = shape
    return n * d * min(n, d) <= budget


# ---------------------------------------------------------------------------
# Single-cell execution.

def _run_cell(problem, solver, s, t, seed):
    n, d = problem.shape
    if solver == "exact":
        return solvers.exact_pcr(problem)
    if solver == "left":
        if s is None:
            raise CliError("left sketching needs --s or --ratio")
        s_op = sketch.gen_subgaussian(s, n, seed)
        return solvers.sketched_pcr(problem, solvers.build_r_left(problem, s_op))
    if solver == "right":
        if t is None:
            raise CliError("right sketching needs --t or --ratio")
        g_op = sketch.gen_countsketch(t, d, seed)
        return solvers.sketched_pcr(problem, solvers.build_r_right(g_op))
    if solver == "twosided":
        if s is None or t is None:
            raise CliError("two-sided sketching needs --s and --t (or --ratio)")
        rng = np.random.default_rng(seed)
        seed_s, seed_g = (int(x) for x in rng.integers(0, 2**63 - 1, size=2))
        s_op = sketch.gen_countsketch(s, n, seed_s)
        g_op = sketch.gen_countsketch(t, d, seed_g)
        return solvers.sketched_pcr(problem, solvers.build_r_twosided(problem, s_op, g_op))
    if solver == "cls":
        if t is None:
            raise CliError("cls needs --t or --ratio")
        g_op = sketch.gen_subgaussian(t, d, seed)
        return solvers.cls(problem, solvers.build_r_right(g_op))
    if solver == "input-sparsity":
        t0 = time.perf_counter()
        y = solvers.input_sparsity_pcp(problem, s=s, t=t, seed=seed)
        return solvers.PcrSolution(
            x=y, method="input-sparsity", r_cols=t or 0,
            objective=float(np.linalg.norm(problem.a @ y - problem.b)),
            constraint_norm=None, wall_time=time.perf_counter() - t0,
        )
    raise CliError(f"unknown solver {solver!r}")


def _record_for(problem, solver, k, s, t, seed, certify_ok):
    rec = RunRecord(method=solver, k=k, s=s, t=t, seed=seed)
    try:
        sol = _run_cell(problem, solver, s, t, seed)
        nb = float(np.linalg.norm(problem.b))
        rec.objective_over_b = sol.objective / nb if sol.objective is not None else None
        rec.wall_time = sol.wall_time
        if certify_ok:
            cert = solvers.certify(problem, sol, mode="pcr")
            rec.constraint_over_b = cert.upsilon_observed
            if cert.reference_objective > 0:
                rec.objective_over_exact = sol.objective / cert.reference_objective
    except CliError:
        raise
    except Exception as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


# ---------------------------------------------------------------------------
# Sweep.

def _aggregate(records):
    groups = {}
    for rec in records:
        groups.setdefault((rec.method, rec.k, rec.s, rec.t), []).append(rec)
    metrics = ["objective_over_b", "objective_over_exact", "constraint_over_b", "wall_time"]
    out = []
    for (method, k, s, t), recs in sorted(groups.items(),
                                          key=lambda kv: tuple(str(x) for x in kv[0])):
        entry = {"method": method, "k": k, "s": s, "t": t,
                 "seeds": len(recs), "errors": sum(r.error is not None for r in recs)}
        for metric in metrics:
            vals = [getattr(r, metric) for r in recs
                    if r.error is None and getattr(r, metric) is not None]
            if vals:
                entry[metric] = {
                    "median": float(np.median(vals)),
                    "min": float(np.min(vals)),
                    "max": float(np.max(vals)),
                }
            else:
                entry[metric] = None
        out.append(entry)
    return out


def _sizes_for(solver, k, args):
    """Resolve the sketch-size axis of a sweep cell for one solver."""
    s_list = args.s or []
    t_list = args.t or []
    if args.ratio is not None:
        if not s_list:
            s_list = [args.ratio * k]
        if not t_list:
            t_list = [args.ratio * k]
    if solver == "exact":
        return [(None, None)]
    if solver == "left":
        if not s_list:
            raise CliError("left sketching needs --s or --ratio")
        return [(s, None) for s in s_list]
    if solver in ("right", "cls"):
        if not t_list:
            raise CliError(f"{solver} needs --t or --ratio")
        return [(None, t) for t in t_list]
    if not s_list or not t_list:
        raise CliError(f"{solver} needs --s and --t (or --ratio)")
    return [(s, t) for s in s_list for t in t_list]


def run_sweep(problem_by_k, solvers_list, args) -> RunReport:
    report = RunReport(task="sweep")
    seeds = [args.seed0 + i for i in range(args.seeds)]
    for solver in solvers_list:
        for k, problem in problem_by_k.items():
            certify_ok = _certify_budget_ok(problem.shape)
            for (s, t) in _sizes_for(solver, k, args):
                for seed in seeds:
                    report.records.append(
                        _record_for(problem, solver, k, s, t, seed, certify_ok)
                    )
    report.records.sort(key=lambda r: (r.method, r.k, str(r.s), str(r.t), r.seed))
    report.aggregates = _aggregate(report.records)
    return report


# ---------------------------------------------------------------------------
# Verify: deterministic lemmas, risk bounds and sketch calibration.

def _rotation_basis(f, k, theta):
    """Orthonormal d x k basis at principal angle theta from V_{A,k}."""
    w = f.v_rest[:, :k]
    if w.shape[1] < k:
        raise ValueError("not enough trailing directions to rotate into")
    return f.v_k * math.cos(theta) + w * math.sin(theta)


def _verify_checks(args):
    """Each check is (name, lhs, rhs) asserting lhs <= rhs."""
    from .linalg import spectral_norm, stable_rank, subspace_distance, thin_svd

    n, d, k, gap = 96, 64, 5, 0.4
    seed = args.seed0
    a = ev.planted_matrix(n, d, k, gap, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x_true = rng.standard_normal(d)
    x_true /= np.linalg.norm(x_true)
    f_vec = a @ x_true
    sigma = SYNTH_NOISE_LEVEL * np.linalg.norm(f_vec) / math.sqrt(n)
    model = ev.FixedDesignModel(a=a, f=f_vec, sigma=sigma)
    fsvd = thin_svd(a, k)
    sk, sk1 = fsvd.sigma_k[-1], fsvd.sigma_rest[0]
    checks = []

    theta = 0.25
    r = _rotation_basis(fsvd, k, theta)
    nu = math.sin(theta)
    checks.append(("lemma11_leakage", spectral_norm(fsvd.v_rest.T @ r), nu))
    checks.append(("lemma11_sigma_min",
                   sk * (math.sqrt(1 - nu**2) - nu),
                   float(np.linalg.svd(a @ r, compute_uv=False)[-1])))
    nu_tan = math.tan(theta)
    f_ar = thin_svd(a @ r, k)
    checks.append(("lemma14", subspace_distance(f_ar.u_k, fsvd.u_k), (sk1 / sk) * nu_tan))

    sym = a.T @ a
    pert = rng.standard_normal((d, d))
    pert = (pert + pert.T) / 2
    lam = np.sort(np.linalg.eigvalsh(sym))[::-1]
    pert *= 0.4 * (lam[k - 1] - lam[k]) / spectral_norm(pert)
    lam_tilde = np.sort(np.linalg.eigvalsh(sym + pert))[::-1]
    v1 = thin_svd(sym, k).v_k
    v2 = thin_svd(sym + pert, k).v_k
    checks.append(("davis_kahan", subspace_distance(v1, v2),
                   spectral_norm(pert) / (lam[k - 1] - lam_tilde[k])))

    for kind, params in [
        ("pcr_corollary", None),
        ("stat_structural", {"r": r, "nu": nu_tan}),
        ("struct_stat_pcp", {"r": r, "nu": subspace_distance(f_ar.u_k, fsvd.u_k)}),
    ]:
        rep = ev.risk_bound_check(model, k, kind, params)
        checks.append((f"risk_{kind}", rep.risk, rep.bound))
    checks.append(("risk_classic_pcr",
                   ev.exact_risk(model, fsvd.v_k), ev.classic_pcr_risk_bound(model, k)))

    bias, var = ev.bias_variance(model, fsvd.v_k)
    est_v = fsvd.v_k @ np.linalg.pinv(a @ fsvd.v_k)
    mc = ev.excess_risk_mc(model, lambda _a, b: est_v @ b, trials=400, seed=seed + 2)
    checks.append(("bias_variance_identity",
                   abs(bias + var - mc.mean), 3 * mc.std_error))

    eps, delta = 0.25, 0.1
    rows = ev.capped_sketch_rows(eps, delta, stable_rank(a), n, const=args.const_c)
    fails = 0
    n_draws = 200
    for i in range(n_draws):
        op = sketch.gen_subgaussian(rows, n, seed + 10_000 + i)
        if not sketch.gram_error(op, a, eps).passed:
            fails += 1
    checks.append(("gram_subgaussian_failure_rate", fails / n_draws, delta))
    return checks


def cmd_verify(args):
    checks = _verify_checks(args)
    report = RunReport(task="verify")
    rows = []
    all_ok = True
    for name, lhs, rhs in checks:
        slack = rhs - lhs
        ok = slack >= -1e-8
        all_ok = all_ok and ok
        rows.append({"check": name, "lhs": lhs, "rhs": rhs,
                     "slack": slack, "pass": ok})
        print(f"{'PASS' if ok else 'FAIL'}  {name}: lhs={lhs:.6g} rhs={rhs:.6g} slack={slack:.3g}")
    report.aggregates = rows
    if args.out:
        emit_report(report, args.format, args.out)
    return 0 if all_ok else 2


# ---------------------------------------------------------------------------
# Other subcommands.

def cmd_solve(args):
    a, b, k_list = _load_problem(args)
    problem = solvers.PcrProblem(a=a, b=b, k=k_list[0])
    s = args.s[0] if args.s else (args.ratio * k_list[0] if args.ratio else None)
    t = args.t[0] if args.t else (args.ratio * k_list[0] if args.ratio else None)
    rec = _record_for(problem, args.solver, k_list[0], s, t, args.seed0,
                      _certify_budget_ok(problem.shape))
    report = RunReport(task="solve", records=[rec])
    emit_report(report, args.format, args.out)
    return 0 if rec.error is None else 2


def cmd_sweep(args):
    a, b, k_list = _load_problem(args)
    problems = {k: solvers.PcrProblem(a=a, b=b, k=k) for k in k_list}
    solvers_list = args.solver.split(",") if args.solver else ["exact"]
    report = run_sweep(problems, solvers_list, args)
    emit_report(report, args.format, args.out)
    return 2 if any(r.error is not None for r in report.records) else 0


def _stream_rows(args):
    """Yield (row, b_entry) pairs one at a time from the input file."""
    if args.data.endswith(".csv"):
        dims = None
        with open(args.data, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                fields = line.split(",")
                if dims is None:
                    try:
                        [float(tok) for tok in fields]
                    except ValueError:
                        continue  # header
                    dims = len(fields) - 1
                row = [data_io._parse_float(tok, f"{args.data}:{lineno}:col {j + 1}")
                       for j, tok in enumerate(fields)]
                if len(row) != dims + 1:
                    raise data_io.DataFormatError(f"{args.data}:{lineno}: ragged row")
                yield np.asarray(row[:-1]), row[-1]
    else:
        if not args.dims:
            raise CliError("streaming svmlight input needs --dims")
        with open(args.data, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                label = data_io._parse_float(parts[0], f"{args.data}:{lineno}:label")
                row = np.zeros(args.dims)
                for tok in parts[1:]:
                    idx_s, val_s = tok.split(":")
                    row[int(idx_s) - 1] = float(val_s)
                yield row, label


def cmd_stream(args):
    if not args.data:
        raise CliError("stream mode requires --data")
    if not args.k:
        raise CliError("stream mode requires --k")
    k = args.k[0]
    s_rows = args.s[0] if args.s else (args.ratio * k if args.ratio else None)
    t_rows = args.t[0] if args.t else (args.ratio * k if args.ratio else None)
    if s_rows is None or t_rows is None:
        raise CliError("stream mode requires --s and --t (or --ratio)")
    state = None
    for row, b_entry in _stream_rows(args):
        if state is None:
            state = streaming.stream_init(len(row), s_rows, t_rows, args.seed0)
        streaming.stream_update(state, row, b_entry)
    if state is None:
        raise CliError(f"{args.data}: no data rows")
    sol = streaming.stream_finalize(state, k)
    rec = RunRecord(method="stream", k=k, s=s_rows, t=t_rows, seed=args.seed0,
                    wall_time=sol.wall_time)
    report = RunReport(task="stream", records=[rec])
    report.aggregates = [{"rows_seen": state.rows_seen,
                          "accumulator_bytes": state.memory_bytes(),
                          "x_norm": float(np.linalg.norm(sol.x))}]
    emit_report(report, args.format, args.out)
    return 0


def cmd_kernel(args):
    a, b, k_list = _load_problem(args)
    if sp.issparse(a):
        a = a.toarray()
    rank = args.rank or k_list[0]
    t0 = time.perf_counter()
    if args.mode == "exact":
        model = kpcr.fit_exact(a, b, rank, kpcr.KernelSpec(args.degree, args.offset))
        preds = kpcr.kernel_matrix(a, model.spec) @ model.alpha
    else:
        if not args.sketch_cols:
            raise CliError("sketched kernel mode needs --sketch-cols")
        d_eff = a.shape[1] + (1 if args.offset > 0 else 0)
        ts = sketch.gen_tensorsketch(args.degree, d_eff, args.sketch_cols, args.seed0)
        model = kpcr.sketched_kernel_pcr(a, b, rank, ts, offset=args.offset)
        preds = kpcr.sketched_feature_matrix(a, ts, args.offset) @ model.gamma
    elapsed = time.perf_counter() - t0
    rmse = float(np.linalg.norm(preds - b) / math.sqrt(len(b)))
    report = RunReport(task="kernel")
    report.aggregates = [{
        "mode": args.mode, "degree": args.degree, "offset": args.offset,
        "rank": rank, "sketch_cols": args.sketch_cols,
        "train_rmse": rmse, "wall_time": elapsed,
    }]
    emit_report(report, args.format, args.out)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _int_list(text):
    return [int(tok) for tok in text.split(",") if tok]


def build_parser():
    parser = _Parser(prog="pcr", description=__doc__)
    sub = parser.add_subparsers(dest="task", required=True)
    for name in ("solve", "sweep", "stream", "kernel", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--data", help="CSV (dense, last column response) or svmlight path")
        p.add_argument("--synthetic", help="planted instance spec: n,d,k,gap")
        p.add_argument("--solver", default="exact",
                       help="exact|left|right|twosided|cls|input-sparsity "
                            "(comma list allowed for sweep)")
        p.add_argument("--k", type=_int_list, help="target rank, or comma list")
        p.add_argument("--s", type=_int_list, help="left/row sketch size(s)")
        p.add_argument("--t", type=_int_list, help="right/column sketch size(s)")
        p.add_argument("--ratio", type=int, help="sets s = t = ratio * k when unset")
        p.add_argument("--seeds", type=int, default=1, help="number of seeds per cell")
        p.add_argument("--seed0", type=int, default=0, help="base seed")
        p.add_argument("--out", help="report output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--const-c", dest="const_c", type=float,
                       default=sketch.DEFAULT_GRAM_CONST,
                       help="constant in the Gram-property sizing formulas")
        p.add_argument("--center-response", action="store_true",
                       help="subtract the response mean when loading svmlight data")
        p.add_argument("--dims", type=int, help="feature count for streamed svmlight input")
        p.add_argument("--degree", type=int, default=2, help="polynomial kernel degree")
        p.add_argument("--offset", type=float, default=0.0, help="polynomial kernel offset")
        p.add_argument("--rank", type=int, help="kernel PCR rank")
        p.add_argument("--sketch-cols", dest="sketch_cols", type=int,
                       help="TensorSketch width for sketched kernel mode")
        p.add_argument("--mode", choices=("exact", "sketched"), default="exact",
                       help="kernel solver mode")
    return parser


_COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "stream": cmd_stream,
    "kernel": cmd_kernel,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.task](args)
    except (CliError, data_io.DataFormatError, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
