"""Command-line drivers: single runs, convergence studies and invariant checks.

Usage::

    viscofem run config.json [--output-dir DIR] [--vtk]
    viscofem convergence config.json [--workers K] [--full-scale] [--output-dir DIR]
    viscofem verify
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fespace import build_space
from .mesh import DIAGONALS, unit_square_mesh, write_vtk
from .mms import ErrorTriple, ManufacturedSolution, error_norms
from .report import ConvergenceReport, side_by_side_csv
from .stepper import FORMS, MaterialModel, ProblemData, Simulation

log = logging.getLogger("viscofem")

MODES = ("fixed_dt", "fixed_h", "coupled")
DESK_SCALE_N = 128
FULL_SCALE_N = 512

_EXPR_NAMESPACE = {name: getattr(np, name) for name in
                   ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh", "abs", "pi")}


class ConfigError(ValueError):
    pass


def _expr(source: str, args: tuple):
    """Compile a numpy expression in the given variables into a vectorized callable."""
    code = compile(source, f"<expr {source!r}>", "eval")

    def func(*values):
        env = dict(_EXPR_NAMESPACE)
        env.update(zip(args, values))
        result = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(result, dtype=float), np.shape(values[0]))
    return func


@dataclass
class ExpressionSolution:
    """Exact solution given by expressions for u, u_t, u_x, u_y in (x, y, t)."""

    u: object
    u_t: object
    u_x: object
    u_y: object

    def grad_u(self, x, y, t):
        return self.u_x(x, y, t), self.u_y(x, y, t)


@dataclass
class RunConfig:
    form: str
    degree: int
    n: int
    T: float
    N: int
    material: MaterialModel
    problem: str = "manufactured"
    custom: dict = field(default_factory=dict)
    diagonal: str = "right"
    solver_method: str = "auto"
    solver_tol: float = 1e-12
    vtk_every: int = 0
    convergence: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.T / self.N

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        def need(key, where=raw, prefix=""):
            if key not in where:
                raise ConfigError(f"{prefix}{key}: required field is missing")
            return where[key]

        form = need("form")
        if form not in FORMS:
            raise ConfigError(f"form: must be one of {FORMS}, got {form!r}")
        degree = need("degree")
        if degree not in (1, 2):
            raise ConfigError(f"degree: must be 1 or 2, got {degree!r}")
        n = raw.get("n")
        if n is not None and (not isinstance(n, int) or n < 1):
            raise ConfigError(f"n: must be a positive integer, got {n!r}")
        T = float(need("T"))
        if T <= 0:
            raise ConfigError("T: must be positive")
        if "N" in raw and "dt" in raw:
            N = int(raw["N"])
            if not math.isclose(float(raw["dt"]) * N, T, rel_tol=1e-12):
                raise ConfigError(f"dt: dt*N must equal T ({raw['dt']} * {N} != {T})")
        elif "N" in raw:
            N = int(raw["N"])
        elif "dt" in raw:
            ratio = T / float(raw["dt"])
            N = round(ratio)
            if N < 1 or not math.isclose(ratio, N, rel_tol=1e-9):
                raise ConfigError(f"dt: T/dt must be a positive integer, got {ratio}")
        else:
            N = None
        if N is not None and N < 1:
            raise ConfigError("N: must be at least 1")

        mraw = need("material")
        try:
            material = MaterialModel(rho=float(need("rho", mraw, "material.")),
                                     D=float(need("D", mraw, "material.")),
                                     phi=tuple(need("phi", mraw, "material.")),
                                     tau=tuple(need("tau", mraw, "material.")))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"material: {exc}") from None

        problem = raw.get("problem", "manufactured")
        if problem not in ("manufactured", "custom"):
            raise ConfigError(f"problem: must be 'manufactured' or 'custom', got {problem!r}")
        custom = raw.get("custom", {})
        if problem == "custom":
            allowed = {"f", "g", "u0", "w0", "u0_x", "u0_y", "exact"}
            unknown = set(custom) - allowed
            if unknown:
                raise ConfigError(f"custom: unknown keys {sorted(unknown)}")
        diagonal = raw.get("diagonal", "right")
        if diagonal not in DIAGONALS:
            raise ConfigError(f"diagonal: must be one of {DIAGONALS}")
        solver = raw.get("solver", {})
        conv = raw.get("convergence", {})
        if conv:
            mode = conv.get("mode")
            if mode not in MODES:
                raise ConfigError(f"convergence.mode: must be one of {MODES}, got {mode!r}")
            sched = conv.get("schedule", [])
            if len(sched) < 3:
                raise ConfigError("convergence.schedule: need at least 3 refinement levels")
        return cls(form=form, degree=degree, n=n, T=T, N=N, material=material, problem=problem,
                   custom=custom, diagonal=diagonal,
                   solver_method=solver.get("method", "auto"),
                   solver_tol=float(solver.get("tol", 1e-12)),
                   vtk_every=int(raw.get("vtk_every", 0)), convergence=conv)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def problem_data(self):
        """(ProblemData, exact solution or None)."""
        if self.problem == "manufactured":
            ex = ManufacturedSolution(self.material)
            return ex.problem_data(), ex
        c = self.custom
        xyt, xy = ("x", "y", "t"), ("x", "y")
        data = ProblemData(
            f=_expr(c["f"], xyt) if "f" in c else None,
            g=_expr(c["g"], xyt) if "g" in c else None,
            u0=_expr(c["u0"], xy) if "u0" in c else None,
            w0=_expr(c["w0"], xy) if "w0" in c else None,
        )
        if "u0_x" in c and "u0_y" in c:
            gx, gy = _expr(c["u0_x"], xy), _expr(c["u0_y"], xy)
            data.u0_grad = lambda x, y: (gx(x, y), gy(x, y))
        exact = None
        if "exact" in c:
            e = c["exact"]
            missing = {"u", "u_t", "u_x", "u_y"} - set(e)
            if missing:
                raise ConfigError(f"custom.exact: missing {sorted(missing)}")
            exact = ExpressionSolution(*(_expr(e[k], xyt) for k in ("u", "u_t", "u_x", "u_y")))
        return data, exact


@dataclass
class RunResult:
    errors: ErrorTriple | None
    identity_residual: float
    csv_path: str | None = None


ENERGY_COLUMNS = ("step", "t", "kinetic", "elastic", "internal", "cross", "dissipation",
                  "work", "identity_residual")


def run(config: RunConfig, output_dir=None, vtk: bool = False) -> RunResult:
    """One simulation to t = T; writes energy diagnostics (and VTK) when output_dir is set."""
    if config.n is None or config.N is None:
        raise ConfigError("run: both n and N (or dt) are required")
    space = build_space(unit_square_mesh(config.n, config.diagonal), config.degree)
    data, exact = config.problem_data()
    sim = Simulation(space, config.material, data, config.form, config.dt,
                     method=config.solver_method, tol=config.solver_tol)
    rows = []
    out = Path(output_dir) if output_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    every = config.vtk_every or max(1, config.N // 10)

    def record(state, bal):
        rows.append((state.n, state.n * config.dt, bal.kinetic, bal.elastic, bal.internal,
                     bal.cross, bal.dissipation, bal.work, bal.residual()))
        if out and vtk and (state.n % every == 0 or state.n == config.N):
            write_vtk(space.mesh, out / f"displacement_{state.n:06d}.vtk",
                      {"displacement": space.expand(state.z), "velocity": space.expand(state.w)},
                      title=f"t={state.n * config.dt!r}")

    final, balance, _ = sim.run(config.N, callback=record)
    errors = None
    if exact is not None:
        errors = error_norms(space, space.expand(final.z), space.expand(final.w), exact,
                             config.N * config.dt, config.material.D)
    csv_path = None
    if out:
        csv_path = str(out / "energy.csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ENERGY_COLUMNS)
            for r in rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    return RunResult(errors, balance.residual(), csv_path)


def _level_config(config: RunConfig, mode: str, level: int, full_scale: bool) -> RunConfig:
    cfg = RunConfig(**{**config.__dict__})
    if mode == "fixed_dt":
        cfg.n = level
    elif mode == "fixed_h":
        cfg.N = level
        if cfg.n is None:
            cfg.n = FULL_SCALE_N if full_scale else DESK_SCALE_N
        elif full_scale:
            cfg.n = FULL_SCALE_N
    else:
        cfg.n = level
        cfg.N = max(1, round(level * cfg.T))
    return cfg


def _run_level(cfg: RunConfig) -> tuple:
    res = run(cfg)
    if res.errors is None:
        raise ConfigError("convergence studies need an exact solution")
    return res.errors.as_tuple()


def convergence(config: RunConfig, forms=None, workers: int = 1, full_scale: bool = False,
                output_dir=None) -> list:
    """Run every refinement level for each requested form; one report per form.

    Schedule entries are mesh subdivisions n for ``fixed_dt`` and
    ``coupled`` (dt = h), and step counts N for ``fixed_h``.
    """
    conv = config.convergence
    if not conv:
        raise ConfigError("convergence: block is missing from the config")
    mode = conv["mode"]
    schedule = list(conv["schedule"])
    forms = forms or conv.get("forms") or [config.form]
    jobs = []
    for form in forms:
        for level in schedule:
            cfg = _level_config(config, mode, level, full_scale)
            cfg.form = form
            if mode == "fixed_dt" and cfg.N is None:
                raise ConfigError("fixed_dt mode needs N or dt")
            jobs.append((form, level, cfg))

    results = {}
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [(form, level, pool.submit(_run_level, cfg)) for form, level, cfg in jobs]
                for form, level, fut in futures:
                    results[(form, level)] = fut.result()
        else:
            for form, level, cfg in jobs:
                log.info("running %s level %s", form, level)
                results[(form, level)] = _run_level(cfg)
    except Exception:
        if output_dir:
            _save_partial(results, output_dir)
        raise

    reports = []
    for form in forms:
        steps, errs = [], []
        for level in schedule:
            cfg = _level_config(config, mode, level, full_scale)
            steps.append(cfg.dt if mode == "fixed_h" else 1.0 / cfg.n)
            errs.append(results[(form, level)])
        cfg0 = _level_config(config, mode, schedule[0], full_scale)
        fixed = {"fixed_dt": f"dt={cfg0.dt:.4E}", "fixed_h": f"h={1.0 / cfg0.n:.4E}",
                 "coupled": "dt=h"}[mode]
        reports.append(ConvergenceReport.build(form, config.degree, mode, fixed, steps, errs))
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in reports:
            (out / f"convergence_{r.mode}_{r.form}.csv").write_text(r.to_csv())
        (out / f"convergence_{mode}_table.csv").write_text(side_by_side_csv(reports))
    return reports


def _save_partial(results: dict, output_dir):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "partial_results.json", "w") as fh:
        json.dump([{"form": f, "level": lvl, "errors": list(e)} for (f, lvl), e in results.items()],
                  fh, indent=2)


def verify() -> bool:
    from .verify import all_checks
    ok = True
    for name, check in all_checks().items():
        passed, value, threshold = check()
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3e} (threshold {threshold:.0e})")
    return ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="viscofem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single simulation")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--vtk", action="store_true", help="write a VTK time series")

    p_conv = sub.add_parser("convergence", help="refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument("--workers", type=int, default=1)
    p_conv.add_argument("--full-scale", action="store_true",
                        help=f"use h=1/{FULL_SCALE_N} in fixed_h mode instead of 1/{DESK_SCALE_N}")
    p_conv.add_argument("--output-dir", default=None)

    sub.add_parser("verify", help="run the invariant checks")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    try:
        if args.command == "run":
            result = run(RunConfig.load(args.config), args.output_dir, args.vtk)
            out = {"identity_residual": result.identity_residual, "energy_csv": result.csv_path}
            if result.errors is not None:
                out["errors"] = asdict(result.errors)
            print(json.dumps(out, indent=2))
            return 0
        if args.command == "convergence":
            reports = convergence(RunConfig.load(args.config), workers=args.workers,
                                  full_scale=args.full_scale, output_dir=args.output_dir)
            for r in reports:
                print(r.to_csv())
            return 0
        return 0 if verify() else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
