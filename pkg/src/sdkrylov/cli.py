"""``sdkrylov gen|solve|compare|sweep --config <path> [--problem <path>] [--out <dir>]``.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import inspect
import os
import sys
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .covariance import KernelSpec
from .mm_oracle import mm_solve
from .problems import TestProblem, gen_case1, gen_custom, gen_dynamic_problem, load_problem, rel_error, save_problem
from .regparam import SelectionRule, StoppingPolicy
from .solvers import IterRecord, SolveOptions, alternating, fhybr, genhybr, sdhybr, sdhybr_alt

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3

SUMMARY_FIELDS = ("method", "status", "iterations", "stop_reason", "lambda", "alpha", "relerr", "relerr_s1", "relerr_s2")


class SolverFailure(RuntimeError):
    pass


def _given(cfg: RunConfig, **names) -> dict:
    """Generator keyword arguments for the config fields that were set."""
    return {kw: getattr(cfg, field) for kw, field in names.items() if getattr(cfg, field) is not None}


def _kernel(cfg: RunConfig, which: str, default: KernelSpec) -> KernelSpec:
    nu, ell = getattr(cfg, which + "_nu"), getattr(cfg, which + "_ell")
    return replace(default, nu=default.nu if nu is None else nu, ell=default.ell if ell is None else ell)


def _defaults(fn) -> dict:
    return {k: v.default for k, v in inspect.signature(fn).parameters.items()}


def generate(cfg: RunConfig) -> TestProblem:
    """Build the configured test problem; unset fields keep the generator defaults."""
    amp = {} if cfg.amp_lo is None else {"amp_range": (cfg.amp_lo, cfg.amp_hi)}
    if cfg.case == "case1":
        d = _defaults(gen_case1)
        kw = _given(cfg, side="side", nlevel="nlevel", m_frac="m_frac", n_spikes="n_spikes",
                    footprint_width="footprint_width")
        return gen_case1(seed=cfg.seed, truth_spec=_kernel(cfg, "truth", d["truth_spec"]),
                         recon_spec=_kernel(cfg, "recon", d["recon_spec"]), **kw, **amp)
    if cfg.case == "case2":
        kw = _given(cfg, n_frames="n_frames", img_side="side", n_angles_per_frame="n_angles", nlevel="nlevel")
        specs = dict(_given(cfg, truth_nu="truth_nu", truth_ell="truth_ell", recon_nu="recon_nu",
                            recon_ell="recon_ell"), **amp)
        return gen_dynamic_problem(seed=cfg.seed, specs=specs, **kw)
    kw = _given(cfg, n="n", m="m", nlevel="nlevel", n_spikes="n_spikes", smooth_amp="smooth_amp")
    return gen_custom(seed=cfg.seed, kernel=_kernel(cfg, "recon", _defaults(gen_custom)["kernel"]), **kw)


def solve_options(cfg: RunConfig, tp: TestProblem, rule=None, stopping=None) -> SolveOptions:
    return SolveOptions(epsilon=cfg.epsilon, rule=rule or cfg.selection_rule(tp.s_true),
                        stopping=stopping or cfg.stopping(), reorthogonalize=cfg.reorthogonalize,
                        s_true=tp.s_true, s1_true=tp.s1_true, s2_true=tp.s2_true)


def _run_mm(cfg: RunConfig, tp: TestProblem, opts: SolveOptions):
    from .solvers import SolveResult

    if cfg.fixed_lambda is None or cfg.fixed_alpha is None:
        raise ConfigError("method = mm needs fixed_lambda and fixed_alpha")
    p = tp.problem
    its = mm_solve(p, cfg.fixed_lambda, cfg.fixed_alpha, cfg.epsilon, cfg.max_iter)
    hist = []
    for k, it in enumerate(its[1:], 1):
        s1, s2 = p.mu1 + p.Q.apply(it.x), p.mu2 + it.xi
        hist.append(IterRecord(k, cfg.fixed_lambda, cfg.fixed_alpha, None, None, _safe_rel(s1 + s2, tp.s_true),
                               _safe_rel(s1, tp.s1_true), _safe_rel(s2, tp.s2_true), it.objective))
    last = its[-1]
    return SolveResult(p.mu1 + p.Q.apply(last.x), p.mu2 + last.xi, hist, "max_iter", k=len(hist),
                       lam=cfg.fixed_lambda, alpha=cfg.fixed_alpha, x=last.x, xi=last.xi)


def _safe_rel(est, truth):
    return rel_error(est, truth) if np.any(truth) else None


def run_method(method: str, cfg: RunConfig, tp: TestProblem, opts: SolveOptions):
    try:
        if method == "mm":
            return _run_mm(cfg, tp, opts)
        if method == "sdhybr_alt":
            return sdhybr_alt(tp.problem, opts, cfg.lambda_ratio)
        if method == "alternating":
            return alternating(tp.problem, opts)
        return {"sdhybr": sdhybr, "genhybr": genhybr, "fhybr": fhybr}[method](tp.problem, opts)
    except ConfigError:
        raise
    except Exception as exc:
        raise SolverFailure(f"{method} failed: {exc}") from exc


def _load_or_generate(cfg, problem_path):
    return load_problem(problem_path) if problem_path else generate(cfg)


def cmd_gen(cfg: RunConfig, out: Path, problem_path=None) -> int:
    tp = generate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_problem(tp, out / "problem.sdkp")
    lines = [f"{k} = {v!r}" for k, v in tp.descriptor.items()]
    (out / "descriptor.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def _write_images(out: Path, tp: TestProblem, res, prefix=""):
    for name, arr in (("s", res.s), ("s1", res.s1), ("s2", res.s2)):
        io.write_pgm(out / f"{prefix}{name}.pgm", io.field_to_image(arr, tp.grid_shape))


def cmd_solve(cfg: RunConfig, out: Path, problem_path=None) -> int:
    tp = _load_or_generate(cfg, problem_path)
    opts = solve_options(cfg, tp)
    res = run_method(cfg.method, cfg, tp, opts)
    out.mkdir(parents=True, exist_ok=True)
    formats = {f.strip() for f in cfg.formats.split(",")}
    if "csv" in formats:
        io.write_csv(out / "history.csv", io.HISTORY_FIELDS, io.history_rows(res.history))
    if "pgm" in formats and len(tp.grid_shape) >= 2:
        _write_images(out, tp, res)
    if res.stop_reason == "v_breakdown" and not res.history:
        raise SolverFailure(f"{cfg.method} stopped: {res.stop_reason}")
    err = _safe_rel(res.s, tp.s_true)
    print(f"{cfg.method}: stop_reason={res.stop_reason} iterations={res.k} relerr={err if err is None else f'{err:.6g}'}")
    return EXIT_OK


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SDKRYLOV_THREADS", "1")))
    except ValueError:
        return 1


def cmd_compare(cfg: RunConfig, out: Path, problem_path=None) -> int:
    tp = _load_or_generate(cfg, problem_path)
    methods = ["sdhybr", "genhybr", "fhybr"] + (["alternating"] if cfg.compare_alternating else [])
    opts = solve_options(cfg, tp)

    def job(method):
        try:
            return method, run_method(method, cfg, tp, opts), None
        except SolverFailure as exc:
            return method, None, str(exc)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(job, methods))
    out.mkdir(parents=True, exist_ok=True)
    rows, summary, timings = [], [], []
    for method, res, err in results:
        if res is None:
            summary.append((method, "failed: " + err, 0, "", None, None, None, None, None))
            continue
        rows += [(method,) + r for r in io.history_rows(res.history)]
        summary.append((method, "ok", res.k, res.stop_reason, res.lam, res.alpha, _safe_rel(res.s, tp.s_true),
                        _safe_rel(res.s1, tp.s1_true), _safe_rel(res.s2, tp.s2_true)))
        timings.append(f"{method} {res.wall_time:.6f}")
        if "pgm" in cfg.formats and len(tp.grid_shape) >= 2:
            _write_images(out, tp, res, prefix=method + "_")
    io.write_csv(out / "compare.csv", ("method",) + io.HISTORY_FIELDS, rows)
    io.write_csv(out / "compare_summary.csv", SUMMARY_FIELDS, summary)
    (out / "timings.txt").write_text("\n".join(timings) + "\n")
    for row in summary:
        print(" ".join(str(v) for v in row))
    if all(res is None for _, res, _ in results):
        raise SolverFailure("every method failed")
    return EXIT_OK


def sweep_grid(cfg: RunConfig):
    return 10.0 ** np.linspace(cfg.sweep_lo, cfg.sweep_hi, cfg.sweep_points)


def cmd_sweep(cfg: RunConfig, out: Path, problem_path=None) -> int:
    tp = _load_or_generate(cfg, problem_path)
    grid = sweep_grid(cfg)
    iters = cfg.max_iter
    # no early stopping: every grid point runs exactly max_iter iterations
    stopping = StoppingPolicy(max_iter=iters, gcv_tol=1e-300, window=iters + 1)
    method = cfg.method if cfg.method in ("sdhybr", "genhybr", "fhybr") else "sdhybr"

    def job(pair):
        lam, alpha = pair
        opts = solve_options(cfg, tp, SelectionRule("fixed", fixed_values=(lam, alpha)), stopping)
        res = run_method(method, cfg, tp, opts)
        return (lam, alpha, res.k, _safe_rel(res.s, tp.s_true), _safe_rel(res.s1, tp.s1_true),
                _safe_rel(res.s2, tp.s2_true))

    pairs = [(lam, alpha) for lam in grid for alpha in grid]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(job, pairs))
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "sweep.csv", ("lambda", "alpha", "iterations", "relerr", "relerr_s1", "relerr_s2"), rows)
    scored = [r for r in rows if r[3] is not None]
    if scored:
        best = min(scored, key=lambda r: r[3])
        print(f"grid minimum relerr={best[3]:.6g} at lambda={best[0]:.3g} alpha={best[1]:.3g}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sdkrylov", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--problem", default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out or cfg.out_dir)
    try:
        return COMMANDS[args.command](cfg, out, args.problem)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
