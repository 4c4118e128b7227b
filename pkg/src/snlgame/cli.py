"""Command-line entry point: generate, solve, verify, experiment, sweep.

Exit codes: 0 success, 1 malformed arguments or configuration, 2 solver did
not converge (the report is still written), 3 file I/O failure.

Environment: SNL_THREADS caps worker threads for node updates and sweeps
(default 1).  Results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .central import run_alg1
from .distributed import run_dsdeg, thread_count
from .network import InstanceError, apply_noise, generate_instance, load_instance, save_instance
from .report import SolverConfig, atomic_write
from .verify import baseline_projected_gradient, verify_ne

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3

# name -> (N, M, box, sensing radius, noise std)
SCENARIOS = {
    "fig4": (7, 3, (0.0, 1.0), 0.75, 0.0),
    "small": (2, 4, (-2.0, 2.0), 3.0, 0.0),
    "large": (50, 18, (-3.0, 3.0), 2.0, 0.0),
    "table1": (10, 10, (-5.0, 5.0), 5.0, 0.0),
    "noisy": (18, 6, (-2.5, 2.5), 2.5, math.sqrt(0.001)),
    "custom": (7, 3, (0.0, 1.0), 1.0, 0.0),
}
SOLVERS = ("alg1", "dsdeg", "baseline")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "fig4"
    solver: str = "alg1"
    seed: int = 0
    dim: int = 2
    num_sensors: int | None = None
    num_anchors: int | None = None
    box: list | None = None
    sensing_radius: float | None = None
    noise_std: float | None = None
    anchor_layout: str = "uniform"
    out: str | None = None
    trace: bool = False
    solver_config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}")
        if isinstance(self.solver_config, dict):
            self.solver_config = SolverConfig.from_dict(self.solver_config)
        N, M, box, radius, noise = SCENARIOS[self.scenario]
        # named scenarios fix their geometry; table1 also takes N and M
        free_counts = self.scenario in ("custom", "table1")
        free_geometry = self.scenario == "custom"
        for name, default, free in (
            ("num_sensors", N, free_counts),
            ("num_anchors", M, free_counts),
            ("box", list(box), free_geometry),
            ("sensing_radius", radius, free_geometry),
        ):
            val = getattr(self, name)
            if val is None:
                setattr(self, name, default)
            elif not free and val != default:
                raise ConfigError(f"scenario {self.scenario!r} fixes {name} = {default}, got {val}")
        self.box = [float(b) for b in self.box]
        if self.noise_std is None:
            self.noise_std = noise
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver_config"] = self.solver_config.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    def make_instance(self):
        inst = generate_instance(
            self.seed,
            dim=self.dim,
            num_sensors=self.num_sensors,
            num_anchors=self.num_anchors,
            box=tuple(self.box),
            sensing_radius=self.sensing_radius,
            anchor_layout=self.anchor_layout,
        )
        if self.noise_std > 0:
            inst = apply_noise(inst, self.noise_std, self.seed)
        return inst


def run_solver(name: str, inst, cfg: SolverConfig, trace_path=None, workers=None):
    if name == "alg1":
        return run_alg1(inst, cfg)
    if name == "dsdeg":
        return run_dsdeg(inst, cfg, trace_path=trace_path, workers=workers)
    if name == "baseline":
        return baseline_projected_gradient(inst, cfg)
    raise ConfigError(f"unknown solver {name!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _solver_flags(p):
    p.add_argument("--solver", choices=SOLVERS, help="solver to run (default: alg1)")
    p.add_argument("--seed", type=int, help="RNG seed for instance and initial point (default: 0)")
    p.add_argument("--config", help="experiment configuration JSON")
    p.add_argument("--out", help="output directory (default: runs/<scenario>-<solver>-<seed>)")
    p.add_argument("--trace", action="store_true", help="write per-node trace.csv (dsdeg only)")
    p.add_argument("--max-iters", type=int, help="iteration cap (default: 200000)")
    p.add_argument("--tol", type=float, help="termination tolerance on step norms (default: 1e-3)")
    p.add_argument("--alpha0", type=float, help="centralized base step, alpha_k = alpha0/sqrt(k) (default: 0.0637)")
    p.add_argument("--beta", type=float, help="distributed step size (default: 0.9 / sampled Lipschitz estimate)")
    p.add_argument("--W", type=float, help="dual box bound (default: computed from the boxes, at least 1)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snlgame", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a random instance file")
    g.add_argument("scenario", nargs="?", default="fig4", choices=sorted(SCENARIOS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--N", type=int, help="number of sensors (table1/custom)")
    g.add_argument("--M", type=int, help="number of anchors (table1/custom)")
    g.add_argument("--radius", type=float, help="sensing radius (custom)")
    g.add_argument("--noise-std", type=float, help="multiplicative noise std (default per scenario)")
    g.add_argument("--layout", choices=("uniform", "enclosing"), default="uniform")
    g.add_argument("--out", required=True, help="instance JSON path")

    s = sub.add_parser("solve", help="solve an instance file or a configured experiment")
    s.add_argument("--instance", help="instance JSON path")
    _solver_flags(s)

    v = sub.add_parser("verify", help="print the certificate of a saved state")
    v.add_argument("--instance", required=True, help="instance JSON path")
    v.add_argument("--state", required=True, help="report JSON or {x, sigma} JSON")
    v.add_argument("--tol", type=float, default=1e-3)
    v.add_argument("--probes", type=int, default=16)
    v.add_argument("--seed", type=int, default=0)

    e = sub.add_parser(
        "experiment",
        help="generate and solve a named scenario",
        epilog="SNL_THREADS caps worker threads (default 1); results do not depend on it.",
    )
    e.add_argument("scenario", nargs="?", choices=sorted(SCENARIOS))
    e.add_argument("--N", type=int)
    e.add_argument("--M", type=int)
    e.add_argument("--layout", choices=("uniform", "enclosing"))
    _solver_flags(e)

    w = sub.add_parser(
        "sweep",
        help="run a scenario over consecutive seeds",
        epilog="SNL_THREADS sets how many seeds run in parallel (default 1).",
    )
    w.add_argument("scenario", nargs="?", choices=sorted(SCENARIOS))
    w.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed")
    w.add_argument("--N", type=int)
    w.add_argument("--M", type=int)
    w.add_argument("--layout", choices=("uniform", "enclosing"))
    _solver_flags(w)
    return p


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc


class _IOFailure(Exception):
    pass


def _experiment_config(args) -> ExperimentConfig:
    base = ExperimentConfig.from_json(_read_text(args.config)).to_dict() if args.config else {}
    over = {
        "scenario": getattr(args, "scenario", None),
        "solver": args.solver,
        "seed": args.seed,
        "num_sensors": getattr(args, "N", None),
        "num_anchors": getattr(args, "M", None),
        "anchor_layout": getattr(args, "layout", None),
        "out": args.out,
    }
    base.update({k: v for k, v in over.items() if v is not None})
    if args.trace:
        base["trace"] = True
    sc = dict(base.get("solver_config", {}))
    for key, val in (
        ("max_iters", args.max_iters),
        ("t_tol", args.tol),
        ("alpha0", args.alpha0),
        ("beta", args.beta),
        ("W", args.W),
    ):
        if val is not None:
            sc[key] = val
    if "seed" in base:
        sc["seed"] = base["seed"]
    base["solver_config"] = sc
    return ExperimentConfig.from_dict(base)


def _default_out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out or f"runs/{cfg.scenario}-{cfg.solver}-{cfg.seed}")


def _write_run(report, out: Path, inst=None, cfg: ExperimentConfig | None = None):
    try:
        report.write(out, "report")
        out.joinpath("report.csv").replace(out / "series.csv")
        if inst is not None:
            save_instance(inst, out / "instance.json")
        if cfg is not None:
            atomic_write(out / "config.json", cfg.to_json())
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc


def _summary_line(report) -> str:
    s = report.summary
    verdict = report.certificate["verdict"] if report.certificate else "n/a"
    mle = f"{s['mle']:.3e}" if "mle" in s else "n/a"
    return (
        f"{report.solver}: converged={report.converged} iterations={report.iterations} "
        f"mle={mle} constraint_residual={s['constraint_residual']:.3e} "
        f"duality_residual={s['duality_residual']:.3e} verdict={verdict}"
    )


def cmd_generate(args) -> int:
    data = {"scenario": args.scenario, "seed": args.seed}
    if args.N is not None:
        data["num_sensors"] = args.N
    if args.M is not None:
        data["num_anchors"] = args.M
    if args.radius is not None:
        data["sensing_radius"] = args.radius
    if args.noise_std is not None:
        data["noise_std"] = args.noise_std
    data["anchor_layout"] = args.layout
    inst = ExperimentConfig.from_dict(data).make_instance()
    try:
        save_instance(inst, args.out)
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc
    print(f"wrote {args.out} (N={inst.num_sensors}, M={inst.num_anchors}, q={inst.q})")
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.instance:
        try:
            inst = load_instance(args.instance)
        except OSError as exc:
            raise _IOFailure(str(exc)) from exc
        cfg = _experiment_config(args)
        solver_cfg = cfg.solver_config
    else:
        if not args.config:
            raise ConfigError("solve needs --instance or --config")
        cfg = _experiment_config(args)
        inst = cfg.make_instance()
        solver_cfg = cfg.solver_config
    out = _default_out(cfg)
    return _solve_and_write(cfg, inst, solver_cfg, out)


def _solve_and_write(cfg, inst, solver_cfg, out: Path, workers=None, quiet=False):
    trace = out / "trace.csv" if cfg.trace and cfg.solver == "dsdeg" else None
    if trace is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = run_solver(cfg.solver, inst, solver_cfg, trace, workers)
    _write_run(report, out, inst, cfg)
    if not quiet:
        print(_summary_line(report))
        print(f"report: {out / 'report.json'}")
    return report


def cmd_verify(args) -> int:
    try:
        inst = load_instance(args.instance)
        data = json.loads(_read_text(args.state))
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid state file: {exc}") from exc
    state = data.get("final_state", data)
    if "x" not in state or "sigma" not in state:
        raise ConfigError("state file needs x and sigma")
    cert = verify_ne(np.asarray(state["x"]), np.asarray(state["sigma"]), inst, args.tol, args.probes, args.seed)
    print(json.dumps(cert.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    inst = cfg.make_instance()
    report = _solve_and_write(cfg, inst, cfg.solver_config, _default_out(cfg))
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


SWEEP_FIELDS = ("seed", "converged", "iterations", "mle", "constraint_residual", "duality_residual", "verdict", "wall_clock")


def cmd_sweep(args) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    base = _experiment_config(args)
    root = Path(base.out or f"runs/sweep-{base.scenario}-{base.solver}")
    seeds = [base.seed + s for s in range(args.seeds)]

    def one(seed):
        d = base.to_dict()
        d["seed"] = seed
        d["solver_config"]["seed"] = seed
        d["out"] = str(root / f"seed_{seed}")
        cfg = ExperimentConfig.from_dict(d)
        rep = _solve_and_write(cfg, cfg.make_instance(), cfg.solver_config, Path(cfg.out), workers=1, quiet=True)
        s = rep.summary
        return {
            "seed": seed,
            "converged": rep.converged,
            "iterations": rep.iterations,
            "mle": s.get("mle", float("nan")),
            "constraint_residual": s["constraint_residual"],
            "duality_residual": s["duality_residual"],
            "verdict": rep.certificate["verdict"] if rep.certificate else "n/a",
            "wall_clock": rep.wall_clock,
        }

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, seeds))
    else:
        rows = [one(s) for s in seeds]
    mles = np.array([r["mle"] for r in rows], dtype=float)
    conv = np.mean([r["converged"] for r in rows])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    agg = (
        f"# aggregate,mean_mle={float(np.mean(mles))!r},max_mle={float(np.max(mles))!r},"
        f"converged_fraction={float(conv)!r}\n"
    )
    try:
        root.mkdir(parents=True, exist_ok=True)
        atomic_write(root / "summary.csv", buf.getvalue() + agg)
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc
    sys.stdout.write(buf.getvalue() + agg)
    return EXIT_OK if conv == 1.0 else EXIT_NONCONVERGED


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "experiment" and args.scenario is None and not args.config:
            raise ConfigError("experiment needs a scenario or --config")
        rc = COMMANDS[args.command](args)
        if args.command == "solve":
            rc = EXIT_OK if rc.converged else EXIT_NONCONVERGED
        return rc
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, InstanceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
