"""Command-line entry point: simulate, sweep, train, transfer, validate."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import bench
from .bench import Cell, ExperimentPlan, PlanError, ResultTable, Scenario
from .cityflow import load_cityflow
from .controllers import ControllerConfig, run_policy
from .network import NetworkError
from .observer import OBS_MODES, observation_range, observe_all
from .rl import TrainConfig, evaluate, load_checkpoint, run_xlight, save_checkpoint, transfer_eval, write_curve
from .simulator import SimConfig

log = logging.getLogger("atsc")


def _grid(text: str) -> tuple:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}")


def add_scenario_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--grid", type=_grid, default=(1, 1), help="synthetic grid ROWSxCOLS (default 1x1)")
    g.add_argument("--ew-length", type=float, default=300.0)
    g.add_argument("--ns-length", type=float, default=300.0)
    g.add_argument("--lanes", type=int, default=3)
    g.add_argument("--max-speed", type=float, default=11.11)
    g.add_argument("--rate", type=float, default=0.1, help="Poisson arrivals per entry road per second")
    g.add_argument("--roadnet", help="CityFlow roadnet JSON (replaces the synthetic grid)")
    g.add_argument("--flow", help="CityFlow flow JSON, required with --roadnet")


def scenario_of(args, name: str = "cli") -> Scenario:
    if args.roadnet or args.flow:
        if not (args.roadnet and args.flow):
            raise PlanError("--roadnet and --flow must be given together")
        return Scenario(name, "cityflow", roadnet=args.roadnet, flow=args.flow)
    rows, cols = args.grid
    return Scenario(name, "grid", rows, cols, args.ew_length, args.ns_length, args.lanes,
                    args.max_speed, args.rate)


def _config_file(path) -> dict:
    return bench.read_config_file(path) if path else {}


def _open_out(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise bench.EmitError(exc.errno, f"cannot open output: {exc.strerror}", str(path)) from exc


def _tick_writers(args, t_duration: int, obs_mode: str):
    handles = []
    hooks = []
    if args.trace:
        fh = _open_out(args.trace)
        handles.append(fh)
        hooks.append(lambda sim, world: fh.write(sim.trace_record(world) + "\n"))
    if args.obs_dump:
        fh2 = _open_out(args.obs_dump)
        handles.append(fh2)

        def dump(sim, world):
            obs = observe_all(sim, world, t_duration, obs_mode)
            fh2.write(json.dumps({"clock": world.clock, "intersections": [{
                "id": o.intersection, "phase": o.phase, "phase_pressure": list(o.phase_pressure),
                "phase_demand": list(o.phase_demand), "intersection_pressure": o.intersection_pressure,
                "ats": o.ats()} for o in obs]}) + "\n")
        hooks.append(dump)
    if not hooks:
        return None, handles

    def on_tick(sim, world):
        for h in hooks:
            h(sim, world)
    return on_tick, handles


def cmd_simulate(args) -> int:
    cfg = _config_file(args.config)
    if args.t_duration is not None:
        cfg["t_duration"] = args.t_duration
    if args.w1 is not None:
        cfg["w1"] = args.w1
    if args.obs_mode is not None:
        cfg["obs_mode"] = args.obs_mode
    if "split" in cfg:
        cfg["split"] = tuple(cfg["split"])
    known = {f.name for f in fields(ControllerConfig)}
    unknown = set(cfg) - known
    if unknown:
        raise PlanError(f"unknown controller settings {sorted(unknown)}")
    config = ControllerConfig(**cfg)
    tcfg = None
    if args.controller == "mplight":
        if not args.checkpoint:
            raise PlanError("--controller mplight needs --checkpoint (produce one with `atsc train`)")
        net, tcfg = load_checkpoint(args.checkpoint)
        over = {"seed": args.seed}
        if args.t_duration is not None:
            over["t_duration"] = args.t_duration
        if args.obs_mode is not None:
            over["obs_mode"] = args.obs_mode
        tcfg = TrainConfig(**{**tcfg.__dict__, **over})
    t_duration = tcfg.t_duration if tcfg else config.t_duration
    obs_mode = tcfg.obs_mode if tcfg else config.obs_mode
    sc = scenario_of(args)
    network, flow = sc.build(args.seed, args.horizon)
    sim_config = SimConfig(horizon=args.horizon, seed=args.seed)
    plan = ExperimentPlan((sc,), (args.controller,), seeds=(args.seed,), horizon=args.horizon,
                          split=config.split)
    is_mp = args.controller != "fixedtime"
    cell = Cell(sc, args.controller, config.w1 if args.controller == "advancedmp" else None,
                t_duration if is_mp else None,
                obs_mode if args.controller in ("advancedmp", "mplight") else None)
    row = bench._base_row(cell, plan, "run", args.seed)
    if cell.obs_mode is not None:
        row["obs_range"] = observation_range(cell.obs_mode, network.max_speed, cell.t_duration)
    on_tick, handles = _tick_writers(args, t_duration, obs_mode)
    try:
        if tcfg is not None:
            m = evaluate(network, flow, net, tcfg, sim_config, on_tick=on_tick)
            row["config_hash"] = tcfg.digest()
        else:
            m = run_policy(network, flow, args.controller, config, sim_config=sim_config, on_tick=on_tick)
    finally:
        for fh in handles:
            fh.close()
    row.update(n=1, average_travel_time=m.average_travel_time, throughput=m.throughput,
               injected=m.injected, unfinished=m.unfinished, empty=m.empty, status="ok", error="")
    _write_results(ResultTable([row], bench.plan_metadata(plan)), args.out)
    return 0


def _write_results(table: ResultTable, out) -> None:
    if out:
        bench.emit(table, bench.format_for(out), out)
    else:
        sys.stdout.write(bench.render(table, "csv"))


def cmd_sweep(args) -> int:
    plan = bench.load_plan(args.plan)
    if args.horizon is not None:
        plan = bench.with_horizon(plan, args.horizon)
    table = bench.run_plan(plan, workers=args.workers)
    _write_results(table, args.out)
    failed = sum(1 for r in table.rows if r["kind"] == "run" and r["status"] != "ok")
    if failed:
        log.warning("%d run(s) failed; see the status/error columns", failed)
    return 0


def _train_config(args) -> TrainConfig:
    cfg = _config_file(args.config)
    for key in ("episodes", "t_duration", "obs_mode", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.reward is not None:
        cfg["reward_mode"] = args.reward
    if "hidden" in cfg:
        cfg["hidden"] = tuple(cfg["hidden"])
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(cfg) - known
    if unknown:
        raise PlanError(f"unknown train settings {sorted(unknown)}")
    return TrainConfig(**cfg)


def cmd_train(args) -> int:
    config = _train_config(args)
    network, flow = scenario_of(args).build(config.seed, args.horizon)
    sim_config = SimConfig(horizon=args.horizon, seed=config.seed)
    result = run_xlight(network, flow, config, sim_config)
    save_checkpoint(result.net, config, args.out)
    if args.curve:
        write_curve(result.curve, args.curve)
    print(json.dumps({"eval_travel_time": result.eval_travel_time, "config_hash": config.digest(),
                      "checkpoint": str(args.out)}, sort_keys=True))
    return 0


def cmd_transfer(args) -> int:
    net, config = load_checkpoint(args.checkpoint)
    if args.episodes is not None:
        config = TrainConfig(**{**config.__dict__, "episodes": args.episodes})
    network, flow = scenario_of(args).build(args.seed, args.horizon)
    sim_config = SimConfig(horizon=args.horizon, seed=args.seed)
    ratio = transfer_eval(net, network, flow, config, sim_config)
    doc = {"ratio": ratio, "checkpoint": Path(args.checkpoint).name, "config_hash": config.digest(),
           "seed": args.seed, "horizon": args.horizon}
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if args.out:
        with _open_out(args.out) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    roadnet = Path(args.roadnet).read_bytes()
    flow = Path(args.flow).read_bytes() if args.flow else b"[]"
    network, spec = load_cityflow(roadnet, flow)
    doc = {"intersections": len(network.intersections), "roads": len(network.roads),
           "lanes": len(network.lane_ids), "vehicles": len(spec.vehicles),
           "provenance": network.provenance}
    print(json.dumps(doc, sort_keys=True, default=list))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atsc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one controller on one scenario")
    add_scenario_args(s)
    s.add_argument("--controller", choices=bench.METHODS, default="advancedmp")
    s.add_argument("--w1", type=float)
    s.add_argument("--t-duration", type=int)
    s.add_argument("--obs-mode", choices=OBS_MODES)
    s.add_argument("--config", help="TOML/JSON file with controller settings")
    s.add_argument("--checkpoint", help="trained network for --controller mplight")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=int, default=3600)
    s.add_argument("--out", help="result file (.csv or .json); stdout CSV when omitted")
    s.add_argument("--trace", help="per-tick JSON-lines trace file")
    s.add_argument("--obs-dump", help="per-tick JSON-lines observation file")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run an experiment plan file")
    w.add_argument("plan", help="TOML or JSON plan")
    w.add_argument("--out")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--horizon", type=int, help="override the plan's episode length")
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train", help="train the shared deep-Q agent")
    add_scenario_args(t)
    t.add_argument("--episodes", type=int)
    t.add_argument("--t-duration", type=int)
    t.add_argument("--obs-mode", choices=OBS_MODES)
    t.add_argument("--reward", choices=("pressure", "queue"))
    t.add_argument("--config", help="TOML/JSON file with training settings")
    t.add_argument("--seed", type=int)
    t.add_argument("--horizon", type=int, default=3600)
    t.add_argument("--out", required=True, help="checkpoint path (JSON)")
    t.add_argument("--curve", help="training-curve CSV")
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transfer", help="travel-time ratio of a frozen policy on a target scenario")
    add_scenario_args(x)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--episodes", type=int, help="training budget of the direct baseline")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--horizon", type=int, default=3600)
    x.add_argument("--out")
    x.set_defaults(func=cmd_transfer)

    v = sub.add_parser("validate", help="parse CityFlow files and report counts")
    v.add_argument("--roadnet", required=True)
    v.add_argument("--flow")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PlanError, NetworkError, OSError, ValueError) as exc:
        print(f"atsc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
