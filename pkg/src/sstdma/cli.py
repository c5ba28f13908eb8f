"""Command-line experiment runner.

    sstdma run experiments.toml -o out.csv [--trace-dir traces/]
    sstdma sweep --family grid --sizes 2x2,3x3,4x4 --seeds 16 -o out.csv
    sstdma check

Independent runs execute in a process pool; ``SSTDMA_JOBS`` caps its size
(``1`` runs everything in-process). Exit status is 0 on success, 1 when a run
fails to converge unexpectedly or a check fails, 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import random
import re
import statistics
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import analysis
from .engine import INITIAL_CONDITIONS, ConfigError, FaultSpec, SimConfig, run, validate
from .medium import OmissionPolicy
from .topology import GraphError, Topology, complete, grid, path, read_edge_list, star, unit_disk

log = logging.getLogger("sstdma")

JOBS_ENV = "SSTDMA_JOBS"
RUN_FIELDS = (
    "row",
    "experiment",
    "seed",
    "n",
    "topology",
    "tau",
    "xi",
    "convergence_frame",
    "collisions_total",
    "collisions_post_convergence",
    "runs",
    "converged",
    "mean_convergence",
    "min_convergence",
    "max_convergence",
)

_EXPERIMENT_KEYS = {
    "name",
    "topology",
    "xi",
    "tau",
    "c",
    "time_out",
    "seeds",
    "max_frames",
    "initial_condition",
    "jitter",
    "omission",
    "faults",
    "stop_after_safe",
    "expected_nonconvergence",
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Experiment:
    name: str
    topology: str
    seeds: tuple[int, ...]
    xi: int = 20
    tau: int = 16
    c: Optional[int] = None
    time_out: Optional[int] = None
    max_frames: int = 400
    initial_condition: str = "random_offsets"
    jitter: int = 0
    omission: str = "none"
    faults: tuple[FaultSpec, ...] = ()
    stop_after_safe: Optional[int] = 32
    expected_nonconvergence: bool = False
    base_dir: Path = field(default=Path("."), compare=False)


def parse_topology(text: str, seed: int = 0, base_dir: Path = Path(".")) -> Topology:
    """``grid:WxH``, ``star:K``, ``path:N``, ``complete:N``, ``unit_disk:N[:RADIUS]`` or ``file:PATH``.

    Unit disk graphs are drawn from the run seed, so each seed gets its own graph.
    """
    kind, _, arg = text.partition(":")
    try:
        if kind == "grid":
            w, h = (int(x) for x in arg.lower().split("x"))
            return grid(w, h)
        if kind == "star":
            return star(int(arg))
        if kind == "path":
            return path(int(arg))
        if kind == "complete":
            return complete(int(arg))
        if kind == "unit_disk":
            n_text, _, r_text = arg.partition(":")
            n = int(n_text)
            radius = float(r_text) if r_text else default_radius(n)
            return unit_disk(n, radius, 1.0, random.Random(f"{seed}:topology"))
        if kind == "file":
            p = Path(arg)
            if not p.is_absolute():
                p = base_dir / p
            return read_edge_list(p.read_text(), name=p.stem)
    except (ValueError, OSError) as exc:
        raise SpecError(f"bad topology {text!r}: {exc}") from exc
    raise SpecError(f"unknown topology family in {text!r}")


def default_radius(n: int) -> float:
    # about eight expected neighbours in the unit square
    return max(0.5, math.sqrt(8.0 / (math.pi * n)))


def _seeds(value) -> tuple[int, ...]:
    if isinstance(value, bool):
        raise SpecError("seeds must be a count or a list of integers")
    if isinstance(value, int):
        seeds = tuple(range(value))
    elif isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        seeds = tuple(value)
    else:
        raise SpecError("seeds must be a count or a list of integers")
    if not seeds:
        raise SpecError("seeds must not be empty")
    return seeds


def _faults(value) -> tuple[FaultSpec, ...]:
    if not isinstance(value, list):
        raise SpecError("faults must be an array of tables")
    out = []
    for f in value:
        if not isinstance(f, dict) or "frame" not in f:
            raise SpecError(f"fault entry {f!r} needs a frame")
        try:
            out.append(FaultSpec(**f))
        except (TypeError, ConfigError) as exc:
            raise SpecError(f"bad fault entry {f!r}: {exc}") from exc
    return tuple(out)


def parse_spec(text: str, base_dir: Path = Path(".")) -> list[Experiment]:
    """Parse an experiment file and validate every (experiment, seed) config."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"TOML parse error: {exc}") from exc
    tables = doc.get("experiment")
    if not isinstance(tables, list) or not tables:
        raise SpecError("spec needs at least one [[experiment]] table")
    out = []
    for idx, t in enumerate(tables):
        unknown = set(t) - _EXPERIMENT_KEYS
        if unknown:
            raise SpecError(f"experiment {idx}: unknown keys {sorted(unknown)}")
        if "topology" not in t:
            raise SpecError(f"experiment {idx}: missing topology")
        kw = {k: v for k, v in t.items() if k not in ("seeds", "faults", "name")}
        exp = Experiment(
            name=str(t.get("name", f"exp{idx}")),
            seeds=_seeds(t.get("seeds", 16)),
            faults=_faults(t.get("faults", [])),
            base_dir=base_dir,
            **kw,
        )
        if exp.initial_condition not in INITIAL_CONDITIONS:
            raise SpecError(f"experiment {idx}: unknown initial_condition {exp.initial_condition!r}")
        for seed in exp.seeds:
            try:
                validate(make_config(exp, seed))
            except (ConfigError, GraphError, ValueError) as exc:
                raise SpecError(f"experiment {exp.name!r}, seed {seed}: {exc}") from exc
        out.append(exp)
    names = [e.name for e in out]
    if len(set(names)) != len(names):
        raise SpecError("experiment names must be unique")
    return out


def make_config(exp: Experiment, seed: int) -> SimConfig:
    return SimConfig(
        topology=parse_topology(exp.topology, seed, exp.base_dir),
        xi=exp.xi,
        tau=exp.tau,
        c=exp.c,
        time_out=exp.time_out,
        omission=OmissionPolicy.parse(exp.omission),
        seed=seed,
        max_frames=exp.max_frames,
        jitter=exp.jitter,
        initial_condition=exp.initial_condition,
        faults=exp.faults,
        stop_after_safe=exp.stop_after_safe,
    )


def _run_one(job: tuple[Experiment, int, Optional[str]]) -> dict:
    exp, seed, trace_dir = job
    cfg = make_config(exp, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trace = run(cfg)
    if trace_dir:
        out = Path(trace_dir) / f"{exp.name}-seed{seed}.ndjson"
        with out.open("w") as fp:
            trace.dump(fp)
    row = analysis.run_metrics(trace, cfg.topology)
    row.update(row="run", experiment=exp.name)
    return row


def jobs_limit() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", JOBS_ENV, raw)
    return os.cpu_count() or 1


def execute(experiments: Sequence[Experiment], trace_dir: Optional[str] = None) -> list[dict]:
    jobs = [(e, s, trace_dir) for e in experiments for s in e.seeds]
    workers = min(jobs_limit(), len(jobs))
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def summarize(name: str, rows: list[dict]) -> dict:
    convs = [r["convergence_frame"] for r in rows if r["convergence_frame"] != ""]
    first = rows[0]
    return {
        "row": "summary",
        "experiment": name,
        "n": first["n"],
        "topology": first["topology"],
        "tau": first["tau"],
        "xi": first["xi"],
        "runs": len(rows),
        "converged": len(convs),
        "mean_convergence": f"{statistics.fmean(convs):.3f}" if convs else "",
        "min_convergence": min(convs) if convs else "",
        "max_convergence": max(convs) if convs else "",
    }


def write_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RUN_FIELDS, restval="", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _report(experiments: Sequence[Experiment], rows: list[dict], out: Path) -> int:
    table = []
    status = 0
    for exp in experiments:
        mine = [r for r in rows if r["experiment"] == exp.name]
        table.extend(mine)
        summ = summarize(exp.name, mine)
        table.append(summ)
        all_ok = summ["converged"] == summ["runs"]
        if not all_ok and not exp.expected_nonconvergence:
            log.error("%s: %d of %d runs did not converge", exp.name, summ["runs"] - summ["converged"], summ["runs"])
            status = 1
        print(
            f"{exp.name}: {summ['converged']}/{summ['runs']} converged, "
            f"mean frame {summ['mean_convergence'] or '-'}"
        )
    out.write_text(write_csv(table))
    return status


def cmd_run(args) -> int:
    spec_path = Path(args.spec)
    try:
        experiments = parse_spec(spec_path.read_text(), base_dir=spec_path.parent)
    except OSError as exc:
        print(f"error: cannot read {spec_path}: {exc}", file=sys.stderr)
        return 2
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    rows = execute(experiments, args.trace_dir)
    return _report(experiments, rows, Path(args.output))


def parse_sizes(family: str, text: str) -> list[str]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise SpecError("empty size list")
    out = []
    for p in parts:
        if family == "grid":
            if not re.fullmatch(r"\d+x\d+", p):
                raise SpecError(f"grid size {p!r} is not WxH")
            out.append(f"grid:{p}")
        else:
            if not p.isdigit():
                raise SpecError(f"unit_disk size {p!r} is not a node count")
            out.append(f"unit_disk:{p}")
    return out


def cmd_sweep(args) -> int:
    try:
        topologies = parse_sizes(args.family, args.sizes)
        if args.seeds < 1:
            raise SpecError("--seeds must be >= 1")
        tau = args.tau if args.tau is not None else (16 if args.family == "grid" else 64)
        experiments = []
        for topo in topologies:
            exp = Experiment(
                name=topo.replace(":", "_"),
                topology=topo,
                seeds=tuple(range(args.seeds)),
                xi=args.xi,
                tau=tau,
                max_frames=args.max_frames,
                jitter=args.jitter,
            )
            for seed in exp.seeds:
                validate(make_config(exp, seed))
            experiments.append(exp)
    except (SpecError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = execute(experiments)
    return _report(experiments, rows, Path(args.output))


def cmd_check(args) -> int:
    from .selfcheck import run_checks

    failures = run_checks(verbose=not args.quiet)
    if failures:
        print("failed checks: " + ", ".join(failures), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sstdma", description="Self-stabilizing TDMA simulator and experiment runner")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiments of a TOML spec file")
    r.add_argument("spec")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--trace-dir", help="write one NDJSON trace per run into this directory")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="convergence time against network size")
    s.add_argument("--family", choices=("grid", "unit_disk"), required=True)
    s.add_argument("--sizes", required=True, help="grid: 2x2,3x3 ; unit_disk: 8,16")
    s.add_argument("--seeds", type=int, default=16)
    s.add_argument("--tau", type=int, help="slots per frame (default 16 for grid, 64 for unit_disk)")
    s.add_argument("--xi", type=int, default=20)
    s.add_argument("--max-frames", type=int, default=400)
    s.add_argument("--jitter", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="run the built-in property checks")
    c.add_argument("-q", "--quiet", action="store_true")
    c.set_defaults(func=cmd_check)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
