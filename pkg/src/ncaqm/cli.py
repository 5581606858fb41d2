"""Experiment orchestration and the ``ncaqm`` command line.

An :class:`ExperimentSpec` names a scenario, the queue disciplines to compare,
a seed list and an optional sweep axis. :func:`run_experiment` runs every
(point, seed, discipline) cell and pairs each with the baseline run of the
same point and seed. Results land in a :class:`ResultTable` that can be
written as CSV or JSON and read back.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .simcore import SimConfig, run
from .topology import Scenario, TopologyError, load_scenario, named_scenario

AXES = ("none", "buffer", "capacity", "flow-count")
OPTIMAL = "optimal"   # label for paced optimal sources over NCAQM queues


@dataclass
class ExperimentSpec:
    scenario: str
    disciplines: tuple[str, ...] = ("nonc", "cope", "ncaqm")
    baseline: str = "nonc"
    transport: str = "tcp"
    buffer: int = 10
    capacity: float = 1e6
    packet_size: int = 500
    duration: float = 60.0
    seeds: tuple[int, ...] = tuple(range(10))
    sweep: str = "none"
    values: tuple[float, ...] = ()
    name: str = ""
    optimum: bool = False
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.disciplines = tuple(self.disciplines)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.values = tuple(float(v) for v in self.values)
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.sweep not in AXES:
            raise ValueError(f"sweep axis must be one of {AXES}")
        if self.sweep == "none" and self.values:
            raise ValueError("sweep values given without a sweep axis")
        if self.sweep != "none" and not self.values:
            raise ValueError(f"sweep over {self.sweep} needs values")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.sweep == "flow-count" and not self.scenario.startswith("wheel"):
            raise ValueError("flow-count sweeps need the wheel topology")
        if not self.name:
            self.name = f"{self.scenario}-{self.sweep}" if self.sweep != "none" else self.scenario

    def points(self) -> list[float | None]:
        return list(self.values) if self.sweep != "none" else [None]

    def arms(self) -> list[str]:
        arms = [self.baseline] + [d for d in self.disciplines if d != self.baseline]
        if self.optimum and OPTIMAL not in arms:
            arms.append(OPTIMAL)
        return arms

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("disciplines", "seeds", "values"):
            d[k] = list(d[k])
        return d


def resolve_scenario(ref: str, seed: int = 0, flows: int | None = None) -> Scenario:
    """A built-in name (``x``, ``wheel(8)``), a JSON file, or bare ``grid`` (seeded per run)."""
    path = Path(ref)
    if ref.endswith(".json") or path.is_file():
        return load_scenario(path)
    if flows is not None:
        return named_scenario(f"wheel({int(flows)})")
    if ref == "grid":
        return named_scenario(f"grid({seed})")
    return named_scenario(ref)


@dataclass
class Cell:
    experiment: str
    scenario: str
    axis: str
    value: float | None
    arm: str
    seed: int
    config: dict


def cells(spec: ExperimentSpec) -> list[Cell]:
    out = []
    for value in spec.points():
        for seed in spec.seeds:
            for arm in spec.arms():
                cfg = dict(spec.options, buffer=spec.buffer, bitrate=spec.capacity,
                           packet_size=spec.packet_size, duration=spec.duration,
                           discipline=arm, transport=spec.transport)
                if arm == OPTIMAL:
                    cfg.update(discipline="ncaqm", transport="optimal")
                if spec.sweep == "buffer":
                    cfg["buffer"] = int(value)
                elif spec.sweep == "capacity":
                    cfg["bitrate"] = float(value)
                out.append(Cell(spec.name, spec.scenario, spec.sweep, value, arm, seed, cfg))
    return out


COLUMNS = ("experiment", "scenario", "axis", "value", "discipline", "transport", "seed",
           "aggregate_bps", "flow_bps", "improvement_pct", "coded_fraction", "no_partner_fraction",
           "drops_queue", "drops_channel", "drops_coding", "status")


@dataclass
class Row:
    experiment: str
    scenario: str
    axis: str
    value: float | None
    discipline: str
    transport: str
    seed: int
    aggregate_bps: float
    flow_bps: list[float]
    improvement_pct: float | None
    coded_fraction: float
    no_partner_fraction: float
    drops_queue: int
    drops_channel: int
    drops_coding: int
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_cell(cell: Cell) -> Row:
    flows = cell.value if cell.axis == "flow-count" else None
    try:
        sc = resolve_scenario(cell.scenario, cell.seed, flows)
        m = run(sc, SimConfig(**cell.config), seed=cell.seed)
    except Exception as exc:  # reported per cell, the sweep goes on
        return Row(cell.experiment, cell.scenario, cell.axis, cell.value, cell.arm,
                   cell.config["transport"], cell.seed, 0.0, [], None, 0.0, 0.0, 0, 0, 0,
                   status=f"error: {type(exc).__name__}: {exc}")
    return Row(cell.experiment, cell.scenario, cell.axis, cell.value, cell.arm,
               cell.config["transport"], cell.seed, m.aggregate_bps, list(m.throughput_bps), None,
               m.coded_fraction, m.no_partner_fraction, m.drops["queue"], m.drops["channel"],
               m.drops["coding"])


@dataclass
class ResultTable:
    rows: list[Row] = field(default_factory=list)
    baseline: str = "nonc"
    analytic: dict = field(default_factory=dict)   # (scenario, value) -> optimum improvement %

    @property
    def failures(self) -> int:
        return sum(not r.ok for r in self.rows)

    def pair(self) -> None:
        """Fill improvement_pct against the baseline row of the same point and seed."""
        base = {(r.experiment, r.value, r.seed): r for r in self.rows
                if r.discipline == self.baseline and r.ok}
        for r in self.rows:
            b = base.get((r.experiment, r.value, r.seed))
            if r.ok and b is not None and b.aggregate_bps > 0:
                r.improvement_pct = 100.0 * (r.aggregate_bps / b.aggregate_bps - 1.0)
            else:
                r.improvement_pct = None

    def select(self, discipline: str, value=None, experiment: str | None = None) -> list[Row]:
        return [r for r in self.rows if r.discipline == discipline and r.ok
                and (value is None or r.value == value)
                and (experiment is None or r.experiment == experiment)]

    def mean_bps(self, discipline: str, value=None, experiment: str | None = None) -> float:
        rows = self.select(discipline, value, experiment)
        return average_runs([[r.aggregate_bps] for r in rows])

    # serialization -----------------------------------------------------------

    def records(self) -> list[dict]:
        return [{c: getattr(r, c) for c in COLUMNS} for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for rec in self.records():
            w.writerow([_cell_text(c, rec[c]) for c in COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.records(), indent=1) + "\n"

    @classmethod
    def from_csv(cls, text: str, baseline: str = "nonc") -> "ResultTable":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError("unexpected CSV header")
        return cls([_row_from_text(rec) for rec in reader], baseline)

    @classmethod
    def from_json(cls, text: str, baseline: str = "nonc") -> "ResultTable":
        return cls([Row(**rec) for rec in json.loads(text)], baseline)


_INT = {"seed", "drops_queue", "drops_channel", "drops_coding"}
_FLOAT = {"aggregate_bps", "coded_fraction", "no_partner_fraction"}
_OPT_FLOAT = {"value", "improvement_pct"}


def _cell_text(col: str, v) -> str:
    if col == "flow_bps":
        return ";".join(repr(float(x)) for x in v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row_from_text(rec: dict) -> Row:
    out = {}
    for c in COLUMNS:
        s = rec[c]
        if c == "flow_bps":
            out[c] = [float(x) for x in s.split(";")] if s else []
        elif c in _INT:
            out[c] = int(s)
        elif c in _FLOAT:
            out[c] = float(s)
        elif c in _OPT_FLOAT:
            out[c] = float(s) if s else None
        else:
            out[c] = s
    return Row(**out)


def average_runs(per_seed: list[list[float]]) -> float:
    """Average each run's samples over time first, then average across runs."""
    if not per_seed:
        return float("nan")
    return float(np.mean([np.mean(s) for s in per_seed]))


def analytic_improvement(scenario: Scenario, depth: int | None = None) -> float:
    """Coded vs uncoded optimum of the NUM problem, in percent."""
    from .numopt import NUMSolver
    coded = NUMSolver(coding_depth=depth).fit(scenario).x_.sum()
    plain = NUMSolver(coding_depth=0).fit(scenario).x_.sum()
    return 100.0 * (coded / plain - 1.0)


def run_experiment(spec: ExperimentSpec, jobs: int = 1, progress=None) -> ResultTable:
    """Run every cell of ``spec``; failed cells are kept with an error status."""
    todo = cells(spec)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(run_cell, todo))
    else:
        rows = []
        for c in todo:
            rows.append(run_cell(c))
            if progress:
                progress(c, rows[-1])
    table = ResultTable(rows, spec.baseline)
    table.pair()
    if spec.optimum:
        for value in spec.points():
            flows = value if spec.sweep == "flow-count" else None
            sc = resolve_scenario(spec.scenario, spec.seeds[0], flows)
            table.analytic[(spec.scenario, value)] = analytic_improvement(sc)
    return table


def merge_tables(tables: list[ResultTable]) -> ResultTable:
    out = ResultTable(baseline=tables[0].baseline if tables else "nonc")
    for t in tables:
        out.rows.extend(t.rows)
        out.analytic.update(t.analytic)
    return out


def summarize(table: ResultTable) -> list[dict]:
    """One row per (experiment, point): mean throughput and improvement of each arm.

    Improvement is the ratio of seed-averaged throughputs; ``*_paired_pct`` is
    the mean of per-seed paired improvements.
    """
    arms: list[str] = []
    for r in table.rows:
        if r.discipline not in arms:
            arms.append(r.discipline)
    keys = []
    for r in table.rows:
        k = (r.experiment, r.scenario, r.axis, r.value)
        if k not in keys:
            keys.append(k)
    base = table.baseline
    out = []
    for exp, scen, axis, value in keys:
        rec = {"experiment": exp, "scenario": scen, "axis": axis, "value": value}
        b = table.mean_bps(base, value, exp)
        rec["seeds"] = len(table.select(base, value, exp))
        for a in arms:
            rows = table.select(a, value, exp)
            m = table.mean_bps(a, value, exp)
            rec[f"{a}_bps"] = m
            if a != base:
                rec[f"{a}_pct"] = 100.0 * (m / b - 1.0) if rows and b > 0 else None
                paired = [r.improvement_pct for r in rows if r.improvement_pct is not None]
                rec[f"{a}_paired_pct"] = float(np.mean(paired)) if paired else None
        if (scen, value) in table.analytic:
            rec["optimum_pct"] = table.analytic[(scen, value)]
        out.append(rec)
    return out


def improvement_cdf(table: ResultTable, discipline: str, experiment: str | None = None):
    """Sorted per-seed improvements with their empirical cumulative probability."""
    vals = sorted(r.improvement_pct for r in table.select(discipline, experiment=experiment)
                  if r.improvement_pct is not None)
    n = len(vals)
    return [(v, (i + 1) / n) for i, v in enumerate(vals)]


def emit(table: ResultTable, out_dir: str | Path, name: str, fmt: str = "csv") -> list[Path]:
    """Write the cell table and its summary; returns the files written."""
    if not table.rows:
        raise ValueError("nothing to emit: empty result table")
    if fmt not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells_path = out / f"{name}.{fmt}"
    cells_path.write_text(table.to_csv() if fmt == "csv" else table.to_json())
    summary = summarize(table)
    summary_path = out / f"{name}_summary.{fmt}"
    summary_path.write_text(_dump_records(summary, fmt))
    return [cells_path, summary_path]


def _dump_records(records: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(records, indent=1) + "\n"
    cols: list[str] = []
    for rec in records:
        cols.extend(k for k in rec if k not in cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in records:
        w.writerow(["" if rec.get(c) is None else (repr(rec[c]) if isinstance(rec[c], float) else rec[c])
                    for c in cols])
    return buf.getvalue()


# presets --------------------------------------------------------------------------

TABLE_TOPOLOGIES = ("alice-bob", "x", "cross", "grid")
BUFFERS = (5.0, 10.0, 20.0, 30.0, 50.0)          # 10, 30, 50 named; 5 and 20 interpolated
CAPACITIES = (1e6, 2e6, 5.5e6, 11e6)              # 1 and 11 Mb/s named; 2 and 5.5 interpolated
WHEEL_FLOWS = (2.0, 4.0, 6.0, 8.0)


def presets() -> dict[str, list[ExperimentSpec]]:
    return {
        "table1": [ExperimentSpec(t, name=f"table1-{t}", optimum=True) for t in TABLE_TOPOLOGIES],
        "fig3-cdf": [ExperimentSpec(t, name=f"cdf-{t}", seeds=tuple(range(30)))
                     for t in TABLE_TOPOLOGIES],
        "fig4-buffers": [ExperimentSpec(t, name=f"buffers-{t}", sweep="buffer", values=BUFFERS)
                         for t in TABLE_TOPOLOGIES],
        "fig5-wheel": [ExperimentSpec("wheel", name="wheel-flows", buffer=30, sweep="flow-count",
                                      values=WHEEL_FLOWS)],
        "fig6-capacity": [ExperimentSpec(t, name=f"capacity-{t}", buffer=30, sweep="capacity",
                                         values=CAPACITIES) for t in TABLE_TOPOLOGIES],
        "fig8-butterfly": [
            ExperimentSpec("butterfly", disciplines=("nonc", "bfly", "ncaqm"),
                           name="butterfly-buffers", sweep="buffer", values=BUFFERS),
            ExperimentSpec("butterfly", disciplines=("nonc", "bfly", "ncaqm"), buffer=30,
                           name="butterfly-capacity", sweep="capacity", values=CAPACITIES),
        ],
    }


# command line ------------------------------------------------------------------------

def _coding(text: str) -> int:
    t = text.lower().removesuffix("-hop")
    if t not in ("0", "1", "2"):
        raise argparse.ArgumentTypeError("coding must be 0-hop, 1-hop or 2-hop")
    return int(t)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncaqm", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run one simulation")
    sim.add_argument("--scenario", default="x")
    sim.add_argument("--qm", default="ncaqm", choices=("nonc", "cope", "bfly", "ncaqm"))
    sim.add_argument("--transport", default="tcp", choices=("tcp", "optimal"))
    sim.add_argument("--buffer", type=int, default=10)
    sim.add_argument("--capacity", type=float, default=1e6, help="bits per second")
    sim.add_argument("--packet-size", type=int, default=500)
    sim.add_argument("--duration", type=float, default=60.0)
    sim.add_argument("--success-prob", type=float, default=None)
    sim.add_argument("--window", type=int, default=100)
    sim.add_argument("--recode", default="on-enqueue")
    sim.add_argument("--drop-fallback", default="tail", choices=("tail", "incoming"))
    sim.add_argument("--knowledge-delay", type=float, default=None)
    sim.add_argument("--trace", action="store_true")

    sw = sub.add_parser("sweep", help="run an experiment file or a named preset")
    src = sw.add_mutually_exclusive_group(required=True)
    src.add_argument("spec", nargs="?", help="experiment JSON file (object or list of objects)")
    src.add_argument("--preset", choices=sorted(presets()))
    sw.add_argument("--seeds", type=int, default=None, help="override: use seeds 0..N-1")
    sw.add_argument("--duration", type=float, default=None)
    sw.add_argument("--jobs", type=int, default=1)

    for name, helptext in (("solve", "run the NUM solver"), ("oracle", "grid-search the optimum")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--scenario", default="x")
        s.add_argument("--coding", type=_coding, default=None, help="0-hop, 1-hop or 2-hop")
        if name == "solve":
            s.add_argument("--max-iters", type=int, default=2_000_000)
            s.add_argument("--tol", type=float, default=5e-4)
            s.add_argument("--step-size", type=float, default=0.1)
            s.add_argument("--trace", default=None, help="write the convergence trace CSV here")
        else:
            s.add_argument("--grid-step", type=float, default=0.01)
    return p


def _cmd_sim(args) -> int:
    sc = resolve_scenario(args.scenario, args.seed)
    cfg = SimConfig(discipline=args.qm, transport=args.transport, buffer=args.buffer,
                    bitrate=args.capacity, packet_size=args.packet_size, duration=args.duration,
                    success_prob=args.success_prob, window=args.window, recode=args.recode,
                    drop_fallback=args.drop_fallback, knowledge_delay=args.knowledge_delay,
                    trace=args.trace)
    m = run(sc, cfg, seed=args.seed)
    flows = " ".join(f"{x / 1e3:.1f}" for x in m.throughput_bps)
    print(f"{sc.name} {args.qm}/{args.transport} seed={args.seed}: {m.aggregate_bps / 1e3:.1f} kb/s "
          f"[{flows}] coded={m.coded_fraction:.3f} no-partner={m.no_partner_fraction:.3f} "
          f"drops={m.drops}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"sim-{sc.name}-{args.qm}-{args.seed}"
        if args.format == "json":
            (out / f"{stem}.json").write_text(m.to_json() + "\n")
        else:
            table = ResultTable([Row("sim", args.scenario, "none", None, args.qm, args.transport,
                                     args.seed, m.aggregate_bps, list(m.throughput_bps), None,
                                     m.coded_fraction, m.no_partner_fraction, m.drops["queue"],
                                     m.drops["channel"], m.drops["coding"])], args.qm)
            (out / f"{stem}.csv").write_text(table.to_csv())
    return 0


def _load_specs(args) -> tuple[str, list[ExperimentSpec]]:
    if args.preset:
        name, specs = args.preset, presets()[args.preset]
    else:
        data = json.loads(Path(args.spec).read_text())
        items = data if isinstance(data, list) else [data]
        name, specs = Path(args.spec).stem, [ExperimentSpec.from_dict(d) for d in items]
    if args.seeds is not None:
        specs = [replace(s, seeds=tuple(range(args.seeds))) for s in specs]
    if args.duration is not None:
        specs = [replace(s, duration=args.duration) for s in specs]
    return name, specs


def _cmd_sweep(args) -> int:
    name, specs = _load_specs(args)
    tables = []
    for spec in specs:
        t = run_experiment(spec, jobs=args.jobs)
        for r in t.rows:
            if not r.ok:
                print(f"cell failed: {r.experiment} value={r.value} seed={r.seed} "
                      f"{r.discipline}: {r.status}", file=sys.stderr)
        tables.append(t)
    table = merge_tables(tables)
    for rec in summarize(table):
        parts = [f"{k}={v:.1f}" for k, v in rec.items() if k.endswith("_pct") and
                 not k.endswith("paired_pct") and v is not None]
        val = "" if rec["value"] is None else f" {rec['axis']}={rec['value']:g}"
        print(f"{rec['experiment']}{val}: " + " ".join(parts))
    if args.out_dir:
        for path in emit(table, args.out_dir, name, args.format):
            print(f"wrote {path}")
    return table.failures


def _cmd_solve(args) -> int:
    from .numopt import NUMSolver
    sc = resolve_scenario(args.scenario, args.seed)
    est = NUMSolver(step_size=args.step_size, max_iters=args.max_iters, tol=args.tol,
                    coding_depth=args.coding).fit(sc)
    xs = " ".join(f"{v:.4f}" for v in est.x_)
    print(f"{sc.name}: x = [{xs}] sum = {est.x_.sum():.4f} iters = {est.n_iter_} "
          f"converged = {est.converged_}")
    if args.trace:
        est.trace_.to_csv(args.trace)
    return 0


def _cmd_oracle(args) -> int:
    from .numopt import brute_force_optimum
    sc = resolve_scenario(args.scenario, args.seed)
    x, obj = brute_force_optimum(sc, grid_step=args.grid_step, coding_depth=args.coding)
    xs = " ".join(f"{v:.4f}" for v in x)
    print(f"{sc.name}: x = [{xs}] sum = {x.sum():.4f} utility = {obj:.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"sim": _cmd_sim, "sweep": _cmd_sweep, "solve": _cmd_solve, "oracle": _cmd_oracle}
    try:
        return handler[args.command](args)
    except (TopologyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
