"""Command-line entry point: ``roomnav <subcommand> [options]``.

Every subcommand reads the shared YAML config (``--config``) with dotted
``--set section.field=value`` overrides, writes its outputs into ``--out``
and records a ``manifest.json`` there. Failures print one ``error: ...``
line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import platform
import sys
import time
from typing import Optional

import numpy as np

from .config import RunConfig, dump_config, load_config
from .rlcore import CheckpointError, ConfigError

log = logging.getLogger("roomnav")

MANIFEST_VERSION = 1
EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 2, 3, 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _versions() -> dict:
    import scipy
    import torch

    from . import __version__

    return {"roomnav": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__}


class Run:
    """Output directory plus manifest bookkeeping for one subcommand."""

    def __init__(self, command: str, cfg: RunConfig, out: str, argv):
        self.command, self.cfg, self.out = command, cfg, out
        os.makedirs(out, exist_ok=True)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.extra: dict = {}
        self.t0 = time.time()
        self.argv = list(argv)
        self.manifest_name = "manifest.json"
        cfg_path = self.path("config.yaml")
        dump_config(cfg, cfg_path)
        self.outputs.append(cfg_path)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def finish(self) -> str:
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "command": self.command,
            "argv": self.argv,
            "config_hash": self.cfg.hash(),
            "seeds": self.cfg.to_dict()["seeds"],
            "versions": _versions(),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.t0)),
            "wall_clock_s": round(time.time() - self.t0, 3),
            "inputs": [os.path.abspath(p) for p in self.inputs],
            "outputs": [os.path.abspath(p) for p in self.outputs],
            **self.extra,
        }
        path = self.path(self.manifest_name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        return path


# subcommands ----------------------------------------------------------------

def cmd_gen_floorplans(args, cfg: RunConfig, run: Run):
    from .floorplan import default_holdout_size, enumerate_floorplans, get_template, split_plans, write_plan_file

    plans = enumerate_floorplans(get_template(cfg.environment.template))
    n = cfg.environment.holdout_plans
    split = split_plans(plans, default_holdout_size(len(plans)) if n < 0 else n, cfg.seeds.plans)
    plan_file = args.plans_file or run.path("plans.txt")
    write_plan_file(plan_file, plans, split)
    split_file = os.path.splitext(plan_file)[0] + ".split.json"
    with open(split_file, "w", encoding="utf-8") as fh:
        json.dump({"template": cfg.environment.template, "seed": cfg.seeds.plans,
                   "train": list(split.train), "holdout": list(split.holdout)}, fh)
    run.outputs += [plan_file, split_file]
    run.extra["plan_count"] = len(plans)
    print(f"{len(plans)} plans ({len(split.train)} train, {len(split.holdout)} holdout) -> {plan_file}")


def cmd_train_controller(args, cfg, run):
    from .hierarchy import train_controller

    _, history, path = train_controller(cfg, run.out)
    run.outputs += [path, run.path("controller_metrics.csv")]
    _report_training(history)


def cmd_train_baseline(args, cfg, run):
    from .hierarchy import train_flat

    _, history, path = train_flat(cfg, run.out)
    run.outputs += [path, run.path("baseline_metrics.csv")]
    _report_training(history)


def cmd_train_meta(args, cfg, run):
    from .hierarchy import evaluate_coverage, load_controller, plans_for, train_meta_coverage, train_meta_frozen

    scheme = args.scheme or cfg.hierarchy.scheme
    if scheme == "coverage":
        model, history, path = train_meta_coverage(cfg, run.out)
        cov = {s: evaluate_coverage(model, plans_for(cfg, s), cfg.hierarchy.abstract_horizon, 200, cfg.seeds.eval)
               for s in ("train", "holdout")}
        run.extra["rooms_visited"] = cov
        print(f"mean rooms visited: train {cov['train']:.2f}, holdout {cov['holdout']:.2f}")
    elif scheme == "frozen":
        ckpt = args.controller or cfg.hierarchy.controller
        if not ckpt:
            raise ConfigError("hierarchy.controller", "frozen scheme needs a controller checkpoint")
        controller = load_controller(ckpt)
        run.inputs.append(ckpt)
        model, history, path = train_meta_frozen(controller, cfg, run.out)
    else:
        raise ConfigError("hierarchy.scheme", f"expected coverage|frozen, got {scheme!r}")
    run.outputs += [path, run.path("meta_metrics.csv")]
    _report_training(history)


def _ga_objects(cfg):
    from .hierarchy import object_set

    return object_set(cfg.ga.objects)


def cmd_collect_ga_data(args, cfg, run):
    from .goalassess import collect_ga_dataset, label_violations, save_dataset
    from .hierarchy import plans_for

    g = cfg.ga
    n = args.frames if args.frames is not None else g.dataset_size
    ds = collect_ga_dataset(plans_for(cfg, "train"), n, cfg.seeds.ga_data, objects=_ga_objects(cfg),
                            params=cfg.environment.params(), n_distractors=g.n_distractors,
                            episode_len=g.episode_len, near_spawn_prob=g.near_spawn_prob,
                            min_pixels=g.visible_pixels)
    index = save_dataset(ds, run.out)
    run.outputs.append(index)
    qual = ds.qualifying > 0
    stats = {"frames": len(ds), "positive_fraction": ds.positive_fraction,
             "qualifying_fraction": float(qual.mean()) if len(ds) else 0.0,
             "qualifying_positive_fraction": float(ds.labels[qual].mean()) if qual.any() else float("nan"),
             "label_violations": label_violations(ds, cfg.environment.success_radius, g.visible_pixels)}
    run.extra["dataset"] = stats
    print(json.dumps(stats))


def cmd_train_ga(args, cfg, run):
    from .goalassess import load_dataset, save_ga, train_ga

    g = cfg.ga
    ds = load_dataset(args.data)
    run.inputs.append(args.data)
    model, report = train_ga(ds, epochs=g.epochs, patience=g.patience, batch_size=g.batch_size, lr=g.lr,
                             val_fraction=g.val_fraction, seed=cfg.seeds.ga_train, arch=cfg.rl.arch,
                             metrics_path=run.path("ga_metrics.csv"))
    path = run.path("ga.npz")
    save_ga(path, model, g.threshold, objects=[list(o) for o in _ga_objects(cfg)], config_hash=cfg.hash(),
            val_accuracy=report["val_accuracy"])
    with open(run.path("ga_report.json"), "w", encoding="utf-8") as fh:
        json.dump({k: float(v) if isinstance(v, (float, np.floating)) else v for k, v in report.items()}, fh, indent=2)
    run.outputs += [path, run.path("ga_report.json"), run.path("ga_metrics.csv")]
    print(f"validation accuracy {report['val_accuracy']:.4f}, flip error {report['val_flip_error']:.4f}")


AGENT_FORMAT = "roomnav-agent"


def cmd_compose(args, cfg, run):
    from .hierarchy import compose_agent

    ga = args.ga
    compose_agent(args.meta, args.controller, _gate_arg(ga), c=cfg.hierarchy.c)  # validates compatibility
    desc = {"format": AGENT_FORMAT, "version": 1, "kind": "composed", "c": cfg.hierarchy.c,
            "meta": os.path.abspath(args.meta), "controller": os.path.abspath(args.controller),
            "ga": ga if ga in ("oracle", "never") else os.path.abspath(ga), "config_hash": cfg.hash()}
    path = args.agent_file or run.path("composed.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(desc, fh, indent=2)
    run.inputs += [args.meta, args.controller] + ([] if ga in ("oracle", "never") else [ga])
    run.outputs.append(path)
    print(f"composed agent -> {path}")


def _gate_arg(ga: str):
    from .hierarchy import never_gate, oracle_gate

    return {"oracle": oracle_gate, "never": never_gate}.get(ga, ga)


def load_agent(path: str, cfg: RunConfig, enhance: Optional[str] = None):
    """Agent from a composed-agent JSON or a controller / baseline checkpoint."""
    from .hierarchy import ControllerAgent, FlatAgent, compose_agent
    from .rlcore import load_policy

    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            desc = json.load(fh)
        if desc.get("format") != AGENT_FORMAT:
            raise ConfigError("agent", f"{path} is not an agent description")
        return compose_agent(desc["meta"], desc["controller"], _gate_arg(desc["ga"]), c=desc["c"])
    model, meta = load_policy(path)
    if meta.get("kind") == "controller":
        return ControllerAgent(model, enhance or meta.get("enhance", "oracle"))
    if meta.get("kind") == "flat":
        return FlatAgent(model)
    raise ConfigError("agent", f"{path} holds a {meta.get('kind')!r} policy, which cannot act alone")


def cmd_eval(args, cfg, run):
    from .evalbench import plot_failures, run_eval, write_reports
    from .hierarchy import object_set, plans_for

    e = cfg.eval
    split = args.split or e.split
    objects = args.objects or e.objects
    agent = load_agent(args.agent, cfg, args.enhance)
    run.inputs.append(args.agent)
    env = cfg.environment
    report = run_eval(agent, plans_for(cfg, split), split=split, objects_mode=objects,
                      n_runs=args.runs or e.runs, n_episodes=args.episodes or e.episodes, seed=cfg.seeds.eval,
                      params=env.params(), instructions=object_set(args.instructions or e.instructions),
                      n_distractors=env.n_distractors, soft_termination=args.soft_termination,
                      keep_traces=bool(args.traces), config_hash=cfg.hash())
    path = run.path("report.csv")
    write_reports([report], path)
    plot_failures(report.failure_histogram, run.path("failures.svg"), f"{report.agent} / {split}")
    run.outputs += [path, run.path("failures.svg")]
    if args.traces:
        tdir = run.path("traces")
        os.makedirs(tdir, exist_ok=True)
        for i, t in enumerate(report.traces):
            t.save(os.path.join(tdir, f"episode_{i:05d}.jsonl"))
        run.outputs.append(tdir)
    print(f"SR {report.success_rate:.1f} +/- {report.std:.1f}  coverage {report.room_coverage:.1f}%  "
          f"failures {report.failure_histogram}")


def cmd_classify_failures(args, cfg, run):
    import csv

    from .evalbench import EpisodeTrace, classify_failure, plot_failures

    files = sorted(glob.glob(os.path.join(args.traces, "*.jsonl"))) if os.path.isdir(args.traces) else [args.traces]
    hist = {"Detection": 0, "Stuck": 0, "Timeout": 0}
    path = run.path("failures.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trace", "outcome", "mode"])
        for f in files:
            t = EpisodeTrace.load(f)
            mode = classify_failure(t) if t.outcome == "Failure" else ""
            if mode:
                hist[mode] += 1
            w.writerow([os.path.basename(f), t.outcome, mode])
    plot_failures(hist, run.path("failures.svg"))
    run.inputs += files
    run.outputs += [path, run.path("failures.svg")]
    print(json.dumps(hist))


def cmd_plot(args, cfg, run):
    from .evalbench import plot_success, plot_training, read_reports

    if args.reports:
        rows = [r for p in args.reports for r in read_reports(p)]
        plot_success(rows, run.path("success.svg"))
        run.inputs += args.reports
        run.outputs.append(run.path("success.svg"))
    if args.metrics:
        plot_training(args.metrics, run.path("training.svg"), args.key)
        run.inputs += args.metrics
        run.outputs.append(run.path("training.svg"))
    if not (args.reports or args.metrics):
        raise UsageError("plot needs --reports and/or --metrics")


def cmd_dump_obs(args, cfg, run):
    from PIL import Image

    from .floorplan import enumerate_floorplans, get_template
    from .langspec import all_instructions
    from .renderer import to_uint8, write_ppm
    from .simworld import AgentPose, EpisodeConfig, World

    plans = enumerate_floorplans(get_template(cfg.environment.template))
    if not 0 <= args.plan < len(plans):
        raise ConfigError("plan", f"plan id {args.plan} out of range [0, {len(plans)})")
    world = World(plans[args.plan], cfg.environment.params())
    goal = all_instructions()[args.goal_index % 12]
    world.reset(EpisodeConfig(args.plan, goal, cfg.environment.distractors, seed=args.seed))
    obs = world._obs
    if args.x is not None and args.y is not None:
        obs = world.place_agent(AgentPose(args.x, args.y, args.heading))
    path = args.image or run.path("obs.ppm")
    if path.lower().endswith(".ppm"):
        write_ppm(path, obs)
    else:
        Image.fromarray(to_uint8(obs)).save(path)
    run.outputs.append(path)
    s = world.state
    print(f"plan {args.plan} pose ({s.pose.x:.2f}, {s.pose.y:.2f}, {s.pose.heading_index}) "
          f"room {s.current_room.label} goal {goal} at {world.geodesic:.2f} m -> {path}")


def _report_training(history):
    if history:
        last = history[-1]
        print(f"steps {last['env_steps']} success {last['success_rate']:.3f} return {last['mean_return']:.3f}")


# parser -----------------------------------------------------------------------

COMMANDS = {
    "gen-floorplans": cmd_gen_floorplans,
    "train-controller": cmd_train_controller,
    "train-meta": cmd_train_meta,
    "train-ga": cmd_train_ga,
    "collect-ga-data": cmd_collect_ga_data,
    "train-baseline": cmd_train_baseline,
    "compose": cmd_compose,
    "eval": cmd_eval,
    "classify-failures": cmd_classify_failures,
    "plot": cmd_plot,
    "dump-obs": cmd_dump_obs,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roomnav", description="Room-level hierarchical object navigation lab.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                       help="override one config field (repeatable)")
        p.add_argument("--out", help="output directory (default: <paths.out_dir>/<command>)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "gen-floorplans":
            p.add_argument("--plans-file", dest="plans_file", help="plan list path (default: <out>/plans.txt)")
        elif name == "train-meta":
            p.add_argument("--scheme", choices=("coverage", "frozen"))
            p.add_argument("--controller", help="controller checkpoint (frozen scheme)")
        elif name == "collect-ga-data":
            p.add_argument("--frames", type=int)
        elif name == "train-ga":
            p.add_argument("--data", required=True, help="dataset directory or index file")
        elif name == "compose":
            p.add_argument("--meta", required=True)
            p.add_argument("--controller", required=True)
            p.add_argument("--ga", required=True, help="GA checkpoint, or 'oracle' / 'never' stubs")
            p.add_argument("--agent-file", dest="agent_file")
        elif name == "eval":
            p.add_argument("--agent", required=True, help="composed.json, controller or baseline checkpoint")
            p.add_argument("--split", choices=("static", "train", "holdout", "all"))
            p.add_argument("--objects", choices=("single", "multiple"))
            p.add_argument("--instructions", choices=("train", "holdout"))
            p.add_argument("--enhance", choices=("oracle", "none"), help="controller agents only")
            p.add_argument("--runs", type=int)
            p.add_argument("--episodes", type=int)
            p.add_argument("--soft-termination", dest="soft_termination", action="store_true")
            p.add_argument("--traces", action="store_true", help="write per-episode traces")
        elif name == "classify-failures":
            p.add_argument("--traces", required=True, help="trace file or directory of traces")
        elif name == "plot":
            p.add_argument("--reports", nargs="*", default=[])
            p.add_argument("--metrics", nargs="*", default=[])
            p.add_argument("--key", default="success_rate")
        elif name == "dump-obs":
            p.add_argument("--plan", type=int, default=0)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--goal-index", dest="goal_index", type=int, default=0)
            p.add_argument("--x", type=float)
            p.add_argument("--y", type=float)
            p.add_argument("--heading", type=int, default=0)
            p.add_argument("--image", help="output image, .ppm (default: <out>/obs.ppm) or any Pillow format")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def dispatch(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand; choose from " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        import torch

        torch.set_num_threads(max(1, int(os.environ.get("ROOMNAV_THREADS", "1"))))
        cfg = load_config(args.config, args.set)
        out = args.out or os.path.join(cfg.paths.out_dir, args.command)
        plan_file = None
        if args.command == "gen-floorplans" and out.endswith(".txt"):  # --out names the plan file itself
            plan_file, out = out, os.path.dirname(out) or "."
            args.plans_file = args.plans_file or plan_file
        run = Run(args.command, cfg, out, argv)
        if plan_file:
            run.manifest_name = os.path.splitext(os.path.basename(plan_file))[0] + ".manifest.json"
        if args.config:
            run.inputs.append(args.config)
        COMMANDS[args.command](args, cfg, run)
        run.finish()
        return 0
    except UsageError as e:
        return _fail("usage", e, EXIT_USAGE)
    except ConfigError as e:
        return _fail(f"config field={e.field}", e, EXIT_CONFIG)
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        return _fail(type(e).__name__, e, EXIT_RUNTIME)
    except Exception as e:  # noqa: BLE001 - one parsable line for anything unexpected
        return _fail(type(e).__name__, e, EXIT_RUNTIME)


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
