"""Experiment plans, per-seed result rows, aggregation and emission.

A plan expands into cells (scenario, method, sweep point); every cell runs
once per seed and produces one ``run`` row, followed by one ``aggregate`` row
holding the mean and a normal-approximation 95% confidence interval over the
seeds.  Rows are sorted canonically so the emitted files are independent of
execution order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .cityflow import load_cityflow
from .controllers import CONTROLLERS, ControllerConfig, run_policy
from .metrics import TRUNCATION_RULE
from .network import generate_grid, generate_poisson_flow
from .observer import OBS_MODES, observation_range
from .rl import TrainConfig, run_xlight
from .simulator import SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METHODS = CONTROLLERS + ("mplight",)
COLUMNS = (
    "kind", "scenario", "method", "w1", "t_duration", "obs_mode", "obs_range", "seed", "n",
    "average_travel_time", "ci95", "throughput", "injected", "unfinished", "empty",
    "status", "error", "config_hash",
)
CI_METHOD = "normal approximation over seeds: mean +/- 1.96 * sample_sd / sqrt(n)"


class PlanError(ValueError):
    pass


class EmitError(OSError):
    pass


@dataclass(frozen=True)
class Scenario:
    """A synthetic Poisson grid, or a pair of CityFlow files."""
    name: str
    kind: str = "grid"
    rows: int = 1
    cols: int = 1
    ew_length: float = 300.0
    ns_length: float = 300.0
    lanes: int = 3
    max_speed: float = 11.11
    rate: float = 0.1
    turn_probs: tuple = (0.2, 0.6, 0.2)
    roadnet: str = ""
    flow: str = ""

    def __post_init__(self):
        if self.kind not in ("grid", "cityflow"):
            raise PlanError(f"scenario {self.name!r}: kind must be 'grid' or 'cityflow'")
        if self.kind == "cityflow" and not (self.roadnet and self.flow):
            raise PlanError(f"scenario {self.name!r}: cityflow scenarios need roadnet and flow paths")

    def build(self, seed: int, horizon: int) -> tuple:
        """(network, flow); grid arrivals are drawn with ``seed``."""
        if self.kind == "cityflow":
            net, flow = load_cityflow(Path(self.roadnet).read_bytes(), Path(self.flow).read_bytes())
            return net, flow
        net = generate_grid(self.rows, self.cols, self.ew_length, self.ns_length, self.lanes, self.max_speed)
        flow = generate_poisson_flow(net, self.rate, horizon, seed, tuple(self.turn_probs))
        return net, flow


@dataclass(frozen=True)
class Cell:
    scenario: Scenario
    method: str
    w1: Optional[float] = None
    t_duration: Optional[int] = None
    obs_mode: Optional[str] = None

    def key(self) -> tuple:
        return (self.scenario.name, METHODS.index(self.method),
                -1.0 if self.w1 is None else self.w1,
                -1 if self.t_duration is None else self.t_duration,
                -1 if self.obs_mode is None else OBS_MODES.index(self.obs_mode))


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple
    methods: tuple
    w1: tuple = (1.0,)
    t_duration: tuple = (15,)
    obs_mode: tuple = ("default",)
    seeds: tuple = (0, 1, 2)
    horizon: int = 3600
    split: tuple = (30, 30, 30, 30)
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios or not self.methods:
            raise PlanError("a plan needs at least one scenario and one method")
        if not self.seeds:
            raise PlanError("a plan needs at least one seed")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise PlanError(f"unknown methods {bad}; expected a subset of {METHODS}")
        bad = [m for m in self.obs_mode if m not in OBS_MODES]
        if bad:
            raise PlanError(f"unknown observation modes {bad}; expected a subset of {OBS_MODES}")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise PlanError("scenario names must be unique")
        if self.horizon <= 0:
            raise PlanError("horizon must be positive")
        known = {f.name for f in fields(TrainConfig)}
        extra = set(self.train) - known
        if extra:
            raise PlanError(f"unknown train settings {sorted(extra)}")

    def cells(self) -> list:
        """Sweep axes only multiply the methods they affect."""
        out = []
        for sc in self.scenarios:
            for m in self.methods:
                if m == "fixedtime":
                    out.append(Cell(sc, m))
                elif m in ("maxpressure", "efficientmp"):
                    out += [Cell(sc, m, t_duration=t) for t in self.t_duration]
                elif m == "advancedmp":
                    out += [Cell(sc, m, w, t, o) for w in self.w1 for t in self.t_duration
                            for o in self.obs_mode]
                else:
                    out += [Cell(sc, m, None, t, o) for t in self.t_duration for o in self.obs_mode]
        if not out:
            raise PlanError("plan expands to zero cells")
        return sorted(set(out), key=Cell.key)


@dataclass
class ResultTable:
    rows: list
    metadata: dict = field(default_factory=dict)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def cell_hash(cell: Cell, plan: ExperimentPlan) -> str:
    doc = {"scenario": asdict(cell.scenario), "method": cell.method, "w1": cell.w1,
           "t_duration": cell.t_duration, "obs_mode": cell.obs_mode, "horizon": plan.horizon}
    if cell.method == "fixedtime":
        doc["split"] = list(plan.split)
    if cell.method == "mplight":
        doc["train"] = plan.train
    return _digest(doc)


def _base_row(cell: Cell, plan: ExperimentPlan, kind: str, seed) -> dict:
    row = dict.fromkeys(COLUMNS)
    obs_range = None
    if cell.obs_mode is not None and cell.scenario.kind == "grid":
        obs_range = observation_range(cell.obs_mode, cell.scenario.max_speed, cell.t_duration)
    row.update(kind=kind, scenario=cell.scenario.name, method=cell.method, w1=cell.w1,
               t_duration=cell.t_duration, obs_mode=cell.obs_mode, obs_range=obs_range,
               seed=seed, config_hash=cell_hash(cell, plan))
    return row


def controller_config(cell: Cell, plan: ExperimentPlan) -> ControllerConfig:
    return ControllerConfig(
        t_duration=cell.t_duration or 15,
        w1=1.0 if cell.w1 is None else cell.w1,
        split=tuple(plan.split),
        obs_mode=cell.obs_mode or "default",
    )


def train_config(cell: Cell, plan: ExperimentPlan, seed: int) -> TrainConfig:
    cfg = dict(plan.train)
    if "hidden" in cfg:
        cfg["hidden"] = tuple(cfg["hidden"])
    cfg.update(t_duration=cell.t_duration, obs_mode=cell.obs_mode, seed=seed)
    return TrainConfig(**cfg)


def run_cell(cell: Cell, plan: ExperimentPlan, seed: int) -> dict:
    """One run row; failures are captured in ``status``/``error``."""
    row = _base_row(cell, plan, "run", seed)
    try:
        network, flow = cell.scenario.build(seed, plan.horizon)
        sim_config = SimConfig(horizon=plan.horizon, seed=seed)
        if cell.obs_mode is not None:
            row["obs_range"] = observation_range(cell.obs_mode, network.max_speed, cell.t_duration)
        if cell.method == "mplight":
            result = run_xlight(network, flow, train_config(cell, plan, seed), sim_config)
            m = result.metrics
            att = result.eval_travel_time
        else:
            m = run_policy(network, flow, cell.method, controller_config(cell, plan), sim_config=sim_config)
            att = m.average_travel_time
        row.update(n=1, average_travel_time=att, throughput=m.throughput, injected=m.injected,
                   unfinished=m.unfinished, empty=m.empty, status="ok", error="")
    except Exception as exc:  # recorded per row, the plan carries on
        log.warning("cell %s/%s seed %s failed: %s", cell.scenario.name, cell.method, seed, exc)
        row.update(n=0, status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def mean_ci(values) -> tuple:
    n = len(values)
    if n == 0:
        return None, None
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, 1.96 * math.sqrt(var) / math.sqrt(n)


def aggregate(cell: Cell, plan: ExperimentPlan, runs: list) -> dict:
    ok = [r for r in runs if r["status"] == "ok"]
    row = _base_row(cell, plan, "aggregate", None)
    ranges = [r["obs_range"] for r in runs if r["obs_range"] is not None]
    if ranges:
        row["obs_range"] = ranges[0]
    mean, ci = mean_ci([r["average_travel_time"] for r in ok])
    tp, _ = mean_ci([float(r["throughput"]) for r in ok])
    row.update(n=len(ok), average_travel_time=mean, ci95=ci, throughput=tp,
               status="ok" if len(ok) == len(runs) else ("partial" if ok else "error"), error="")
    return row


def _job(args):
    cell, plan, seed = args
    return run_cell(cell, plan, seed)


def run_plan(plan: ExperimentPlan, workers: int = 1) -> ResultTable:
    cells = plan.cells()
    jobs = [(c, plan, s) for c in cells for s in plan.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    by_cell = {}
    for (cell, _, _), row in zip(jobs, rows):
        by_cell.setdefault(cell, []).append(row)
    out = []
    for cell in cells:
        runs = sorted(by_cell[cell], key=lambda r: r["seed"])
        out += runs
        out.append(aggregate(cell, plan, runs))
    return ResultTable(out, plan_metadata(plan))


def plan_metadata(plan: Optional[ExperimentPlan] = None) -> dict:
    meta = {"columns": list(COLUMNS), "truncation_rule": TRUNCATION_RULE, "ci95": CI_METHOD,
            "rl_metric": "mean evaluation travel time over the last training episodes (greedy)"}
    if plan is not None:
        meta["horizon"] = plan.horizon
        meta["seeds"] = list(plan.seeds)
    return meta


# ---- plan files -------------------------------------------------------------

def read_config_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PlanError(f"{path}: {exc.strerror or exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode())
        return json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise PlanError(f"{path}: {exc}") from exc


def plan_from_dict(doc: dict) -> ExperimentPlan:
    doc = dict(doc)
    allowed = {f.name for f in fields(ExperimentPlan)}
    extra = set(doc) - allowed
    if extra:
        raise PlanError(f"unknown plan keys {sorted(extra)}")
    try:
        scenarios = []
        for s in doc.pop("scenarios", []):
            s = dict(s)
            if "turn_probs" in s:
                s["turn_probs"] = tuple(s["turn_probs"])
            scenarios.append(Scenario(**s))
    except TypeError as exc:
        raise PlanError(f"bad scenario entry: {exc}") from exc
    for key in ("methods", "w1", "t_duration", "obs_mode", "seeds", "split"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return ExperimentPlan(scenarios=tuple(scenarios), **doc)


def load_plan(path) -> ExperimentPlan:
    return plan_from_dict(read_config_file(path))


# ---- emission -----------------------------------------------------------------

def _text(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def render(results: ResultTable, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in results.rows:
            w.writerow([_text(row.get(c)) for c in COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {"metadata": results.metadata,
               "rows": [{c: _json_value(row.get(c)) for c in COLUMNS} for row in results.rows]}
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'json'")


def emit(results: ResultTable, fmt: str, path) -> Path:
    path = Path(path)
    text = render(results, fmt)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise EmitError(exc.errno, f"cannot write results: {exc.strerror}", str(path)) from exc
    return path


def _canonical(v):
    if v is None or isinstance(v, (bool, int, float)):
        return v
    if v == "":
        return None
    if v in ("true", "false"):
        return v == "true"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_results(path) -> list:
    """Rows of an emitted CSV or JSON file, with values parsed canonically."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        raw = json.loads(text)["rows"]
    else:
        raw = list(csv.DictReader(io.StringIO(text)))
    return [{k: _canonical(v) for k, v in r.items()} for r in raw]


def format_for(path) -> str:
    return "json" if str(path).lower().endswith(".json") else "csv"


def with_horizon(plan: ExperimentPlan, horizon: int) -> ExperimentPlan:
    return replace(plan, horizon=horizon)
