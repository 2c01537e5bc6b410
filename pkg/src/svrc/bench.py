"""Command-line benchmark driver and the Hessian-sample scaling experiment.

Single runs::

    svrc-bench --algo adaptive_svrc --problem trig --n 1000 --d 20 --eps 0.05 --seed 0 1 2 --out runs/trig.csv

Scaling experiment::

    svrc-bench scaling --problem logistic --ns 250 500 1000 2000 4000 --eps 0.05 --seeds 10 --out scaling/
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import RunResult, run
from .core import ALGORITHMS, CSV_HEADER, ConfigError, ProblemInstance, RunConfig, SVRCError
from .problems import PROBLEM_KINDS, DatasetFormatError, generate, load_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3

SUMMARY_HEADER = ("algo", "problem", "N", "d", "seed", "sampling", "eps", "sigma", "m", "K",
                  "iterations", "B_G", "B_H", "snapshot_B_H", "k_sel", "t_sel", "F_out",
                  "grad_norm", "lambda_min", "second_order_ok")

SAMPLING_ALIASES = {"with": "with_replacement", "without": "without_replacement",
                    "with_replacement": "with_replacement",
                    "without_replacement": "without_replacement"}
OUTPUT_ALIASES = {"argmin": "argmin", "uniform": "uniform_random", "uniform_random": "uniform_random"}


def default_sigma(algorithm: str, problem: ProblemInstance) -> float:
    """Smallest-order sigma each method's guarantee asks for (plus 1 for the strict inequality)."""
    if algorithm == "full_grad_svrc":
        return 3 * problem.rho
    if algorithm == "corrected_svrc":
        return 4 * problem.rho
    return 13 * problem.rho + 4 * problem.L + 1


def far_start(problem: ProblemInstance, radius: float) -> np.ndarray:
    """Point at distance ``radius`` from the origin along grad F(0), i.e. uphill."""
    g = problem.exact_gradient(np.zeros(problem.d))
    norm = float(np.linalg.norm(g))
    if norm == 0:
        return np.zeros(problem.d)
    return radius * g / norm


def snapshot_cost(cfg: RunConfig, N: int) -> int:
    """Hessian samples spent on stage snapshots: K*N for the snapshot methods, 0 for full CR."""
    return 0 if cfg.algorithm == "full_cr" else cfg.K * N


def write_telemetry(result: RunResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in result.history:
        w.writerow(rec.csv_row())


def summary_row(result: RunResult, problem_name: str, problem: ProblemInstance) -> list:
    cfg = result.config
    k, t = result.selected
    ok = result.grad_norm <= cfg.epsilon and result.lambda_min >= -math.sqrt(cfg.epsilon)
    return [cfg.algorithm, problem_name, problem.N, problem.d, cfg.seed, cfg.sampling_mode,
            cfg.epsilon, cfg.sigma, cfg.m, cfg.K, result.iterations,
            result.ledger.gradient_samples, result.ledger.hessian_samples,
            snapshot_cost(cfg, problem.N), k, t, repr(problem.value(result.x_out)),
            repr(result.grad_norm), repr(result.lambda_min), int(ok)]


# ---------------------------------------------------------------------------
# config handling

_CONFIG_KEYS = {"algo", "problem", "data", "lam", "n", "d", "eps", "sigma", "m", "k", "seed",
                "sampling", "output", "b", "s", "out", "summary", "diag", "count_pairs_once",
                "problem_seed"}


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _run_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="svrc-bench",
        description="Run a cubic-regularised Newton method on a finite-sum problem and write CSV "
                    "telemetry. Use 'svrc-bench scaling --help' for the scaling experiment.")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--problem", choices=PROBLEM_KINDS)
    p.add_argument("--data", help="dataset file (label then features per line); implies logistic")
    p.add_argument("--lam", type=float, help="logistic regulariser weight")
    p.add_argument("--n", type=int, help="number of components N")
    p.add_argument("--d", type=int, help="dimension d")
    p.add_argument("--eps", type=float, help="target tolerance epsilon")
    p.add_argument("--sigma", type=float, help="cubic coefficient (default depends on --algo)")
    p.add_argument("--m", type=int, help="inner steps per stage")
    p.add_argument("--k", type=int, help="number of stages")
    p.add_argument("--seed", type=int, nargs="+", help="one or more run seeds")
    p.add_argument("--problem-seed", type=int, help="seed of the generated instance (default 0)")
    p.add_argument("--sampling", choices=sorted(SAMPLING_ALIASES))
    p.add_argument("--output", choices=sorted(OUTPUT_ALIASES), help="output selection rule")
    p.add_argument("--B", dest="b", type=int, help="fixed Hessian batch size")
    p.add_argument("--S", dest="s", type=int, help="fixed gradient batch size")
    p.add_argument("--diag", choices=("output", "full"))
    p.add_argument("--count-pairs-once", action="store_const", const="true", default=None,
                   help="charge one sample per sampled index")
    p.add_argument("--out", help="telemetry CSV path (stdout if omitted)")
    p.add_argument("--summary", help="summary CSV path (default: <out>_summary.csv)")
    p.add_argument("--config", help="file of key=value lines; flags override it")
    return p


def _merged(args: argparse.Namespace) -> dict:
    values = read_config(args.config) if args.config else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _typed(values: dict, key: str, kind, default=None):
    raw = values.get(key)
    if raw is None:
        return default
    if isinstance(raw, list):
        return [kind(v) for v in raw]
    try:
        if kind is bool:
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _build_problem(values: dict) -> tuple[str, ProblemInstance]:
    lam = _typed(values, "lam", float, 0.1)
    if values.get("data"):
        try:
            return "logistic", load_dataset(values["data"], lam=lam)
        except (OSError, DatasetFormatError) as exc:
            raise ConfigError(str(exc)) from None
    kind = values.get("problem", "trig")
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"unknown problem {kind!r}")
    N = _typed(values, "n", int)
    d = _typed(values, "d", int)
    if N is None or d is None:
        raise ConfigError("--n and --d are required for generated problems")
    if N < 1 or d < 1:
        raise ConfigError("--n and --d must be positive")
    params = {"lam": lam} if kind == "logistic" else {}
    return kind, generate(kind, N, d, _typed(values, "problem_seed", int, 0), **params)


def _configs(values: dict, problem: ProblemInstance) -> list[RunConfig]:
    eps = _typed(values, "eps", float)
    if eps is None:
        raise ConfigError("--eps is required (flag or config file)")
    algo = values.get("algo", "adaptive_svrc")
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}")
    sampling = SAMPLING_ALIASES.get(values.get("sampling", "with"))
    if sampling is None:
        raise ConfigError(f"unknown sampling mode {values['sampling']!r}")
    output = OUTPUT_ALIASES.get(values.get("output", "argmin"))
    if output is None:
        raise ConfigError(f"unknown output rule {values['output']!r}")
    seeds = values.get("seed", [0])
    if not isinstance(seeds, list):
        seeds = str(seeds).replace(",", " ").split()
    try:
        seeds = [int(s) for s in seeds]
    except ValueError:
        raise ConfigError(f"bad seed list {values.get('seed')!r}") from None
    sigma = _typed(values, "sigma", float)
    if sigma is None:
        sigma = default_sigma(algo, problem)
    base = RunConfig(sigma=sigma, epsilon=eps, algorithm=algo, m=_typed(values, "m", int),
                     K=_typed(values, "k", int), sampling_mode=sampling, output_option=output,
                     B=_typed(values, "b", int), S=_typed(values, "s", int),
                     count_pairs_once=_typed(values, "count_pairs_once", bool, False),
                     diag=values.get("diag", "output"))
    base.validate()
    return [dataclasses.replace(base, seed=s) for s in seeds]


def _telemetry_path(out: str, seed: int, many: bool) -> Path:
    path = Path(out)
    if not many:
        return path
    return path.with_name(f"{path.stem}_seed{seed}{path.suffix or '.csv'}")


def run_command(argv) -> int:
    parser = _run_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        values = _merged(args)
        name, problem = _build_problem(values)
        configs = _configs(values, problem)
    except (ConfigError, ValueError) as exc:
        print(f"svrc-bench: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = values.get("out")
    summary_path = values.get("summary")
    if summary_path is None and out:
        p = Path(out)
        summary_path = str(p.with_name(f"{p.stem}_summary.csv"))
    rows = []
    status = EXIT_OK
    for cfg in configs:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore" if out is None else "default")
                result = run(problem, cfg)
        except (SVRCError, np.linalg.LinAlgError) as exc:
            print(f"svrc-bench: run failed (seed {cfg.seed}): {exc}", file=sys.stderr)
            status = EXIT_RUN
            continue
        if out:
            path = _telemetry_path(out, cfg.seed, len(configs) > 1)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                write_telemetry(result, fh)
        else:
            write_telemetry(result, sys.stdout)
        rows.append(summary_row(result, name, problem))
    if summary_path:
        Path(summary_path).parent.mkdir(parents=True, exist_ok=True)
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(rows)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)
        sys.stderr.write(buf.getvalue())
    return status


# ---------------------------------------------------------------------------
# scaling experiment

@dataclass
class ExperimentSpec:
    """Grid of problem sizes, tolerances, algorithms and seeds.

    ``start`` is ``"zero"`` (x0 = 0) or ``"far"`` (x0 at distance ``radius``
    uphill along grad F(0)). Generated instances use seed ``seed`` for
    run ``seed`` so each seed sees a fresh instance.
    """

    problem: str = "logistic"
    Ns: list[int] = field(default_factory=lambda: [250, 500, 1000, 2000, 4000])
    epsilons: list[float] = field(default_factory=lambda: [0.05])
    algorithms: list[str] = field(default_factory=lambda: ["adaptive_svrc", "full_cr"])
    seeds: int = 10
    out_dir: str | None = None
    d: int = 5
    start: str = "far"
    radius: float = 100.0
    sampling_mode: str = "with_replacement"
    count_pairs_once: bool = True
    problem_params: dict = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> None:
        if not self.Ns or not self.epsilons or not self.algorithms:
            raise ConfigError("size, tolerance and algorithm grids must be nonempty")
        if self.seeds < 1:
            raise ConfigError("need at least one seed")
        if len(set(self.Ns)) < 4:
            raise ConfigError("scaling needs at least 4 distinct values of N")
        if max(self.Ns) < 16 * min(self.Ns):
            raise ConfigError("values of N must span at least a factor of 16")
        if self.problem not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}")
        if self.start not in ("zero", "far"):
            raise ConfigError("start must be 'zero' or 'far'")
        if self.sampling_mode not in SAMPLING_ALIASES.values():
            raise ConfigError(f"unknown sampling mode {self.sampling_mode!r}")


@dataclass
class CellResult:
    algorithm: str
    N: int
    epsilon: float
    seed: int
    total_BH: int = 0
    snapshot_BH: int = 0
    iterations: int = 0
    grad_norm: float = math.nan
    error: str | None = None

    @property
    def inner_BH(self) -> int:
        return self.total_BH - self.snapshot_BH


@dataclass
class ScalingRow:
    algorithm: str
    epsilon: float
    N: int
    runs: int
    failed: int
    mean_total_BH: float
    mean_snapshot_BH: float
    mean_inner_BH: float


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    cells: list[CellResult]
    # (algorithm, epsilon) -> least-squares slope of log mean inner / total B_H against log N
    inner_slope: dict
    total_slope: dict

    @property
    def flagged(self) -> list[CellResult]:
        return [c for c in self.cells if c.error is not None]

    def row(self, algorithm: str, N: int, epsilon: float | None = None) -> ScalingRow:
        for r in self.rows:
            if r.algorithm == algorithm and r.N == N and (epsilon is None or r.epsilon == epsilon):
                return r
        raise KeyError((algorithm, N, epsilon))

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("algo", "eps", "N", "runs", "failed", "mean_total_B_H", "mean_snapshot_B_H",
                    "mean_inner_B_H", "inner_slope", "total_slope"))
        for r in self.rows:
            key = (r.algorithm, r.epsilon)
            w.writerow((r.algorithm, r.epsilon, r.N, r.runs, r.failed, repr(r.mean_total_BH),
                        repr(r.mean_snapshot_BH), repr(r.mean_inner_BH),
                        repr(self.inner_slope.get(key, math.nan)),
                        repr(self.total_slope.get(key, math.nan))))


def _run_cell(spec: ExperimentSpec, algorithm: str, N: int, eps: float, seed: int) -> CellResult:
    cell = CellResult(algorithm, N, eps, seed)
    try:
        problem = generate(spec.problem, N, spec.d, seed, **spec.problem_params)
        x0 = far_start(problem, spec.radius) if spec.start == "far" else None
        cfg = RunConfig(sigma=default_sigma(algorithm, problem), epsilon=eps, algorithm=algorithm,
                        seed=seed, sampling_mode=spec.sampling_mode,
                        count_pairs_once=spec.count_pairs_once, x0=x0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = run(problem, cfg)
        if spec.out_dir:
            path = Path(spec.out_dir) / f"{algorithm}_N{N}_eps{eps:g}_seed{seed}.csv"
            with open(path, "w", newline="") as fh:
                write_telemetry(result, fh)
        cell.total_BH = result.ledger.hessian_samples
        cell.snapshot_BH = snapshot_cost(result.config, N)
        cell.iterations = result.iterations
        cell.grad_norm = result.grad_norm
    except (SVRCError, np.linalg.LinAlgError, ValueError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def _slope(Ns, values) -> float:
    pts = [(math.log(n), math.log(v)) for n, v in zip(Ns, values) if v > 0 and math.isfinite(v)]
    if len(pts) < 2:
        return math.nan
    x, y = zip(*pts)
    return float(np.polyfit(x, y, 1)[0])


def scaling_experiment(spec: ExperimentSpec) -> ScalingReport:
    """Run every (algorithm, eps, N, seed) cell and fit log mean B_H against log N.

    Inner-loop B_H is the total minus the K*N snapshot charge. Failed cells
    are kept in the report with their error and left out of the means.
    """
    spec.validate()
    if spec.out_dir:
        Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(a, N, e, s) for a in spec.algorithms for e in spec.epsilons
            for N in sorted(spec.Ns) for s in range(spec.seeds)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            cells = list(pool.map(_run_cell, *zip(*[(spec, *j) for j in jobs])))
    else:
        cells = [_run_cell(spec, *j) for j in jobs]

    rows, inner_slope, total_slope = [], {}, {}
    for a in spec.algorithms:
        for e in spec.epsilons:
            Ns_ok, inner_means, total_means = [], [], []
            for N in sorted(spec.Ns):
                group = [c for c in cells if (c.algorithm, c.epsilon, c.N) == (a, e, N)]
                ok = [c for c in group if c.error is None]
                mean = (lambda f: float(np.mean([f(c) for c in ok])) if ok else math.nan)
                row = ScalingRow(a, e, N, len(group), len(group) - len(ok),
                                 mean(lambda c: c.total_BH), mean(lambda c: c.snapshot_BH),
                                 mean(lambda c: c.inner_BH))
                rows.append(row)
                if ok:
                    Ns_ok.append(N)
                    inner_means.append(row.mean_inner_BH)
                    total_means.append(row.mean_total_BH)
            inner_slope[(a, e)] = _slope(Ns_ok, inner_means)
            total_slope[(a, e)] = _slope(Ns_ok, total_means)
    return ScalingReport(rows, cells, inner_slope, total_slope)


def _scaling_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svrc-bench scaling",
                                description="Hessian-sample count against N for a grid of problem sizes.")
    p.add_argument("--problem", choices=PROBLEM_KINDS, default="logistic")
    p.add_argument("--ns", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000])
    p.add_argument("--eps", type=float, nargs="+", default=[0.05])
    p.add_argument("--algo", nargs="+", choices=ALGORITHMS, default=["adaptive_svrc", "full_cr"])
    p.add_argument("--seeds", type=int, default=10, help="number of seeds per cell")
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--start", choices=("zero", "far"), default="far")
    p.add_argument("--radius", type=float, default=100.0)
    p.add_argument("--sampling", choices=sorted(SAMPLING_ALIASES), default="with")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="directory for per-cell telemetry and scaling.csv")
    return p


def scaling_command(argv) -> int:
    parser = _scaling_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    spec = ExperimentSpec(problem=args.problem, Ns=args.ns, epsilons=args.eps, algorithms=args.algo,
                          seeds=args.seeds, out_dir=args.out, d=args.d, start=args.start,
                          radius=args.radius, sampling_mode=SAMPLING_ALIASES[args.sampling],
                          workers=args.workers)
    try:
        report = scaling_experiment(spec)
    except ConfigError as exc:
        print(f"svrc-bench scaling: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        with open(Path(args.out) / "scaling.csv", "w", newline="") as fh:
            report.write_csv(fh)
    report.write_csv(sys.stdout)
    for cell in report.flagged:
        print(f"failed cell {cell.algorithm} N={cell.N} eps={cell.epsilon} seed={cell.seed}: "
              f"{cell.error}", file=sys.stderr)
    return EXIT_RUN if report.flagged else EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "scaling":
        return scaling_command(argv[1:])
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
