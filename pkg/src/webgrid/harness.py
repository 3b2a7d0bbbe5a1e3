"""Factorial experiment runner: config, per-cell seeds, logs, tables and plots."""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .policies import SSI_POLICIES, PolicyKind, PolicyParams, PolicyState
from .simcore import Engine, JobKind, Outcome, SimConfig, SimResult
from .stats import AnovaTable, UnbalancedDesign, fit_anova3, format_table
from .workload import FlashCrowd, Flat, Profile, RateSchedule, TimeOfDay, WorkloadSpec, default_schedule, generate

log = logging.getLogger(__name__)

LOG_NAME = "observations.csv"
TIMINGS_NAME = "timings.csv"
LOG_HEADER = "# webgrid observations v1"
LOG_FIELDS = (
    "policy", "rate", "grid_size", "replicate", "x1", "x2", "x3", "job_kind", "seed",
    "t", "m", "generated", "completed", "in_flight", "dropped", "migrations", "status", "reason",
)

RESPONSE_LABELS = {"t": "mean response time t (s)", "m": "missed requests m"}


@dataclass(frozen=True)
class ExperimentDesign:
    policies: tuple = SSI_POLICIES
    schedule: RateSchedule = field(default_factory=default_schedule)
    grid_sizes: tuple = (2, 4, 6)
    replicates: int = 5
    base_seed: int = 2012
    job_kind: JobKind = JobKind.SIMPLE
    sim: SimConfig = field(default_factory=SimConfig)
    policy_params: PolicyParams = field(default_factory=PolicyParams)
    arrival_process: str = "poisson"
    profile: Profile = field(default_factory=Flat)
    complex_fraction: Optional[float] = None
    warmup: float = 0.0

    def __post_init__(self):
        if not self.policies or not self.schedule or not self.grid_sizes:
            raise ValueError("every factor needs at least one level")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if any(n < 1 for n in self.grid_sizes):
            raise ValueError("grid sizes must be >= 1")
        if self.warmup < 0 or self.warmup > self.sim.duration:
            raise ValueError("warmup must lie in [0, duration]")

    def cells(self) -> list["Cell"]:
        out = []
        for i1, policy in enumerate(self.policies):
            for i2, rate in enumerate(self.schedule):
                for i3, n in enumerate(self.grid_sizes):
                    for rep in range(1, self.replicates + 1):
                        out.append(Cell(policy, rate, n, rep, i1, i2, i3))
        return out


@dataclass(frozen=True)
class Cell:
    policy: PolicyKind
    rate: float
    grid_size: int
    replicate: int
    x1: int
    x2: int
    x3: int

    @property
    def key(self) -> tuple:
        return (self.x1, self.x2, self.x3, self.replicate)


@dataclass
class ObservationRecord:
    policy: str
    rate: float
    grid_size: int
    replicate: int
    x1: int
    x2: int
    x3: int
    job_kind: str
    seed: int
    t: Optional[float]
    m: Optional[int]
    generated: int = 0
    completed: int = 0
    in_flight: int = 0
    dropped: int = 0
    migrations: int = 0
    status: str = "ok"
    reason: str = ""
    wall_time: float = field(default=0.0, compare=False)

    @property
    def key(self) -> tuple:
        return (self.x1, self.x2, self.x3, self.replicate)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_row(self) -> list[str]:
        def num(v):
            return "" if v is None else repr(v)
        return [
            self.policy, repr(self.rate), str(self.grid_size), str(self.replicate),
            str(self.x1), str(self.x2), str(self.x3), self.job_kind, str(self.seed),
            num(self.t), num(self.m), str(self.generated), str(self.completed),
            str(self.in_flight), str(self.dropped), str(self.migrations), self.status, self.reason,
        ]

    @classmethod
    def from_row(cls, row: dict) -> "ObservationRecord":
        return cls(
            policy=row["policy"], rate=float(row["rate"]), grid_size=int(row["grid_size"]),
            replicate=int(row["replicate"]), x1=int(row["x1"]), x2=int(row["x2"]), x3=int(row["x3"]),
            job_kind=row["job_kind"], seed=int(row["seed"]),
            t=float(row["t"]) if row["t"] else None,
            m=int(row["m"]) if row["m"] else None,
            generated=int(row["generated"]), completed=int(row["completed"]),
            in_flight=int(row["in_flight"]), dropped=int(row["dropped"]),
            migrations=int(row["migrations"]), status=row["status"], reason=row["reason"],
        )


# -- seeds -------------------------------------------------------------------

def cell_seed(base_seed: int, policy: str, rate: float, grid_size: int, replicate: int) -> int:
    """Stable 64-bit seed for one cell.

    Keyed on level values rather than positions, so adding a level to any
    factor leaves the streams of existing cells untouched.
    """
    key = f"{base_seed}|{policy}|{rate!r}|{grid_size}|{replicate}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _substream(seed: int, tag: str) -> int:
    key = f"{seed}|{tag}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# -- running -----------------------------------------------------------------

def summarize(result: SimResult, warmup: float = 0.0) -> tuple[float, int, int, int, int]:
    """``(t, m, generated, completed, in_flight)`` over requests sent at or after ``warmup``."""
    if warmup <= 0:
        return result.mean_response, result.miss_count, result.generated, result.completed, result.in_flight_at_end
    kept = [r for r in result.observations if r.arrival_time >= warmup]
    done = [r.completion_time - r.arrival_time for r in kept if r.outcome is Outcome.COMPLETED]
    missed = sum(r.outcome is Outcome.MISSED for r in kept)
    t = math.fsum(done) / len(done) if done else 0.0
    return t, missed, len(kept), len(done), len(kept) - len(done) - missed


def simulate_cell(design: ExperimentDesign, cell: Cell) -> ObservationRecord:
    seed = cell_seed(design.base_seed, cell.policy.value, cell.rate, cell.grid_size, cell.replicate)
    record = ObservationRecord(
        cell.policy.value, float(cell.rate), cell.grid_size, cell.replicate,
        cell.x1, cell.x2, cell.x3, design.job_kind.value, seed, None, None,
    )
    started = time.perf_counter()
    try:
        config = replace(design.sim, n_nodes=cell.grid_size, seed=_substream(seed, "engine"))
        spec = WorkloadSpec(
            rate=cell.rate, job_kind=design.job_kind, duration=config.duration,
            arrival_process=design.arrival_process, profile=design.profile,
            seed=_substream(seed, "arrivals"), complex_fraction=design.complex_fraction,
        )
        state = PolicyState.create(cell.policy, cell.grid_size, design.policy_params)
        result = Engine(config, state, generate(spec)).run()
        t, m, generated, completed, in_flight = summarize(result, design.warmup)
        record.t, record.m = t, m
        record.generated, record.completed, record.in_flight = generated, completed, in_flight
        record.dropped, record.migrations = result.dropped, result.migrations
    except Exception as exc:  # one bad cell must not sink the sweep
        record.status = "failed"
        record.reason = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        log.warning("cell %s failed: %s", cell.key, record.reason)
    record.wall_time = time.perf_counter() - started
    return record


def _run_chunk(design: ExperimentDesign, cells: Sequence[Cell]) -> list[ObservationRecord]:
    return [simulate_cell(design, c) for c in cells]


def run_experiment(
    design: ExperimentDesign,
    out_dir: Optional[os.PathLike] = None,
    jobs: int = 1,
    progress: bool = False,
) -> list[ObservationRecord]:
    """Run every cell of ``design``; returns records sorted by cell key.

    With ``out_dir`` set, records are appended to ``observations.csv`` as
    cells finish, cells already logged as ok are skipped, and the finished log
    is rewritten in cell-key order.
    """
    cells = design.cells()
    done: dict[tuple, ObservationRecord] = {}
    log_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / LOG_NAME
        if log_path.exists():
            for rec in read_log(log_path):
                if rec.ok:
                    done[rec.key] = rec
        else:
            log_path.write_text(_log_preamble())
    todo = [c for c in cells if c.key not in done]
    if done:
        log.info("resuming: %d of %d cells already logged", len(done), len(cells))

    def keep(records: Iterable[ObservationRecord]) -> None:
        batch = list(records)
        for rec in batch:
            done[rec.key] = rec
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for rec in batch:
                    writer.writerow(rec.to_row())

    if jobs <= 1 or len(todo) <= 1:
        for i, cell in enumerate(todo):
            keep([simulate_cell(design, cell)])
            if progress and (i + 1) % 50 == 0:
                log.info("%d/%d cells", i + 1, len(todo))
    else:
        # interleave cells so heavy (high rate) cells spread across workers
        chunks = [todo[i::jobs * 4] for i in range(jobs * 4)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for records in pool.map(_run_chunk, [design] * len(chunks), chunks):
                keep(records)

    records = sorted((done[c.key] for c in cells), key=lambda r: r.key)
    if log_path is not None:
        write_log(log_path, records)
        write_timings(log_path.parent / TIMINGS_NAME, records)
    return records


# -- files -------------------------------------------------------------------

def _log_preamble() -> str:
    return LOG_HEADER + "\n" + ",".join(LOG_FIELDS) + "\n"


def write_log(path: os.PathLike, records: Sequence[ObservationRecord]) -> None:
    buf = io.StringIO()
    buf.write(_log_preamble())
    writer = csv.writer(buf, lineterminator="\n")
    for rec in sorted(records, key=lambda r: r.key):
        writer.writerow(rec.to_row())
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


def write_timings(path: os.PathLike, records: Sequence[ObservationRecord]) -> None:
    # wall-clock lives apart from the log so the log stays reproducible
    with open(path, "w", newline="") as fh:
        fh.write("# webgrid timings v1\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x1", "x2", "x3", "replicate", "wall_time"])
        for rec in records:
            writer.writerow([rec.x1, rec.x2, rec.x3, rec.replicate, f"{rec.wall_time:.6f}"])


def read_log(path: os.PathLike) -> list[ObservationRecord]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(LOG_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{path}: not an observation log (missing columns {sorted(missing)})")
    return [ObservationRecord.from_row(row) for row in reader]


# -- tables ------------------------------------------------------------------

def _check_complete(records: Sequence[ObservationRecord]) -> None:
    levels = [sorted({getattr(r, k) for r in records}) for k in ("x1", "x2", "x3", "replicate")]
    ok = {r.key for r in records if r.ok}
    failed = {r.key: r.reason for r in records if not r.ok}
    missing = []
    for key in itertools.product(*levels):
        if key not in ok:
            missing.append(key)
    if missing:
        shown = ", ".join(
            f"(x1={k[0]}, x2={k[1]}, x3={k[2]}, R={k[3]})" + (f" failed: {failed[k]}" if k in failed else "")
            for k in missing[:10]
        )
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise UnbalancedDesign(f"incomplete design, missing cells {shown}{more}")


def caption_for(response: str, job_kind: str) -> str:
    return f"Analysis of variance for {RESPONSE_LABELS[response]}, {job_kind} jobs"


def anova_tables(records: Sequence[ObservationRecord], responses: Sequence[str] = ("t", "m")) -> dict[str, AnovaTable]:
    _check_complete(records)
    kinds = sorted({r.job_kind for r in records})
    job_kind = "+".join(kinds)
    return {resp: fit_anova3(records, resp, caption=caption_for(resp, job_kind)) for resp in responses}


def emit_tables(
    records: Sequence[ObservationRecord], out_dir: os.PathLike, responses: Sequence[str] = ("t", "m")
) -> list[Path]:
    """Write ``anova_<resp>_<kind>.txt`` and ``.csv`` for each response."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = anova_tables(records, responses)
    kind = "+".join(sorted({r.job_kind for r in records}))
    written = []
    for resp, table in tables.items():
        policies = _level_names(records, "x1", "policy")
        rates = _level_names(records, "x2", "rate")
        sizes = _level_names(records, "x3", "grid_size")
        legend = (
            f"x1 = policy {policies}; x2 = rate (req/s) {rates}; x3 = nodes {sizes}\n"
            f"highest-order significant factor term at 5%: {table.decision()}\n"
        )
        text_path = out / f"anova_{resp}_{kind}.txt"
        text_path.write_text(f"# webgrid anova-text v1\n{format_table(table)}{legend}")
        csv_path = out / f"anova_{resp}_{kind}.csv"
        csv_path.write_text(table.to_csv())
        written += [text_path, csv_path]
    return written


def _level_names(records, index_attr, value_attr) -> str:
    pairs = sorted({(getattr(r, index_attr), getattr(r, value_attr)) for r in records})
    return "[" + ", ".join(_fmt_level(v) for _, v in pairs) + "]"


def _fmt_level(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


# -- plots -------------------------------------------------------------------

def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def series_by_policy(records: Sequence[ObservationRecord], response: str = "t") -> dict[str, list[tuple[float, float]]]:
    """One series per policy: rate -> response averaged over grid sizes and replicates."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        if r.ok:
            groups.setdefault((r.x1, r.policy, r.x2, r.rate), []).append(getattr(r, response))
    series: dict[str, list] = {}
    for (x1, policy, x2, rate), vals in sorted(groups.items()):
        series.setdefault(policy, []).append((rate, _mean(vals)))
    return series


def panels_by_policy(
    records: Sequence[ObservationRecord], response: str = "t"
) -> dict[str, dict[int, list[tuple[float, float]]]]:
    """One panel per policy, one series per grid size, averaged over replicates."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        if r.ok:
            groups.setdefault((r.x1, r.policy, r.x3, r.grid_size, r.x2, r.rate), []).append(getattr(r, response))
    panels: dict[str, dict[int, list]] = {}
    for (x1, policy, x3, n, x2, rate), vals in sorted(groups.items()):
        panels.setdefault(policy, {}).setdefault(n, []).append((rate, _mean(vals)))
    return panels


def _series_csv(header: str, rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(header)
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def emit_plots(records: Sequence[ObservationRecord], out_dir: os.PathLike, responses: Sequence[str] = ("t", "m")) -> list[Path]:
    """Semi-log plots: per-policy curves, and per-policy panels split by grid size.

    Each figure is written as comma-separated series data plus an SVG.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = "+".join(sorted({r.job_kind for r in records}))
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "webgrid", "svg.fonttype": "none"}):
        for resp in responses:
            label = RESPONSE_LABELS[resp]

            series = series_by_policy(records, resp)
            data = _series_csv(
                "# webgrid plot-series v1\nseries,rate,value\n",
                ([name, repr(x), repr(y)] for name, pts in series.items() for x, y in pts),
            )
            path = out / f"fig_policies_{resp}_{kind}.csv"
            path.write_text(data)
            written.append(path)

            fig, ax = plt.subplots(figsize=(6, 4))
            for name, pts in series.items():
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=name)
            ax.set_xscale("log")
            ax.set_xlabel("workload x2 (requests/s)")
            ax.set_ylabel(label)
            ax.set_title(f"{label} by policy, {kind} jobs (mean over x3 and R)")
            ax.legend()
            fig.tight_layout()
            svg = out / f"fig_policies_{resp}_{kind}.svg"
            fig.savefig(svg, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(svg)

            panels = panels_by_policy(records, resp)
            data = _series_csv(
                "# webgrid plot-panels v1\npanel,series,rate,value\n",
                (
                    [policy, str(n), repr(x), repr(y)]
                    for policy, by_n in panels.items()
                    for n, pts in by_n.items()
                    for x, y in pts
                ),
            )
            path = out / f"fig_panels_{resp}_{kind}.csv"
            path.write_text(data)
            written.append(path)

            fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.6), sharey=True, squeeze=False)
            for ax, (policy, by_n) in zip(axes[0], panels.items()):
                for n, pts in by_n.items():
                    xs, ys = zip(*pts)
                    ax.plot(xs, ys, marker="o", label=f"n = {n}")
                ax.set_xscale("log")
                ax.set_title(policy)
                ax.set_xlabel("workload x2 (requests/s)")
                ax.legend()
            axes[0][0].set_ylabel(label)
            fig.tight_layout()
            svg = out / f"fig_panels_{resp}_{kind}.svg"
            fig.savefig(svg, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(svg)
    return written


# -- config ------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _typed_section(section, cls, base):
    updates = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        raw = section[f.name]
        current = getattr(base, f.name)
        if f.name == "node_speeds":
            updates[f.name] = tuple(_floats(raw)) if raw.strip() else None
        elif isinstance(current, bool):
            updates[f.name] = section.getboolean(f.name)
        elif isinstance(current, int):
            updates[f.name] = int(raw)
        else:
            updates[f.name] = float(raw)
    unknown = set(section) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown keys in [{section.name}]: {sorted(unknown)}")
    return replace(base, **updates)


def _profile(section) -> Profile:
    kind = section.get("profile", "flat").strip().lower()
    if kind == "flat":
        return Flat()
    if kind in ("tod", "timeofday", "time_of_day"):
        return TimeOfDay(period=section.getfloat("tod_period", 10.0), amplitude=section.getfloat("tod_amplitude", 0.5))
    if kind in ("flash", "flashcrowd", "flash_crowd"):
        return FlashCrowd(
            start=section.getfloat("flash_start", 3.0),
            duration=section.getfloat("flash_duration", 2.0),
            multiplier=section.getfloat("flash_multiplier", 10.0),
        )
    raise ValueError(f"unknown rate profile {kind!r}")


_WORKLOAD_KEYS = {
    "arrival_process", "profile", "tod_period", "tod_amplitude", "flash_start",
    "flash_duration", "flash_multiplier", "complex_fraction", "warmup",
}
_EXPERIMENT_KEYS = {"policies", "rates", "grid_sizes", "replicates", "base_seed", "job_kind"}


def parse_config(text: str) -> ExperimentDesign:
    """Build a design from ``key = value`` text with [experiment], [sim], [policy] and [workload] sections.

    Anything left out keeps its default.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    unknown_sections = set(cp.sections()) - {"experiment", "sim", "policy", "workload"}
    if unknown_sections:
        raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")
    design = ExperimentDesign()
    kw = {}
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        unknown = set(sec) - _EXPERIMENT_KEYS
        if unknown:
            raise ValueError(f"unknown keys in [experiment]: {sorted(unknown)}")
        if "policies" in sec:
            kw["policies"] = tuple(PolicyKind.parse(p) for p in sec["policies"].replace(",", " ").split())
        if "rates" in sec:
            kw["schedule"] = RateSchedule(_floats(sec["rates"]))
        if "grid_sizes" in sec:
            kw["grid_sizes"] = tuple(_ints(sec["grid_sizes"]))
        if "replicates" in sec:
            kw["replicates"] = sec.getint("replicates")
        if "base_seed" in sec:
            kw["base_seed"] = sec.getint("base_seed")
        if "job_kind" in sec:
            kw["job_kind"] = JobKind(sec["job_kind"].strip().lower())
    if cp.has_section("sim"):
        kw["sim"] = _typed_section(cp["sim"], SimConfig, design.sim)
    if cp.has_section("policy"):
        kw["policy_params"] = _typed_section(cp["policy"], PolicyParams, design.policy_params)
    if cp.has_section("workload"):
        sec = cp["workload"]
        unknown = set(sec) - _WORKLOAD_KEYS
        if unknown:
            raise ValueError(f"unknown keys in [workload]: {sorted(unknown)}")
        kw["arrival_process"] = sec.get("arrival_process", "poisson").strip().lower()
        kw["profile"] = _profile(sec)
        if "complex_fraction" in sec:
            kw["complex_fraction"] = sec.getfloat("complex_fraction")
        if "warmup" in sec:
            kw["warmup"] = sec.getfloat("warmup")
    design = replace(design, **kw)
    for n in design.grid_sizes:
        design.policy_params.validate(n)
    return design


def load_config(path: os.PathLike) -> ExperimentDesign:
    return parse_config(Path(path).read_text())


DEFAULT_CONFIG = """\
# webgrid experiment v1
[experiment]
policies = kerrighed, mosix, lvs
rates = 2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 100, 150, 300, 350, 400, 500, 1000
grid_sizes = 2, 4, 6
replicates = 5
base_seed = 2012
job_kind = simple

[sim]
node_speed = 1000          # demand units per second
simple_demand = 10
complexity_ratio = 100
network_delay = 0.001      # s
dispatch_overhead = 0.0005 # s
miss_deadline = 10         # s
queue_capacity = 100
duration = 10              # s of traffic per cell

[policy]
tick_interval = 0.1
imbalance_threshold = 2.0
gossip_fanout = 1
migration_cost = 0.01

[workload]
arrival_process = poisson
profile = flat
warmup = 0
"""
