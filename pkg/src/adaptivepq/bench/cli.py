"""``bench`` command line: run workloads, generate training data, train and query trees."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from adaptivepq import classify, topology
from adaptivepq.bench.phases import PRESETS, PhaseFileError, load_phases, scale_phases
from adaptivepq.bench.runner import IMPLS, ConfigError, ConservationError, RunConfig, run_workload
from adaptivepq.bench.training import DESK_THRESHOLD, GRID_PRESETS, GridFileError, gen_training, load_grid

log = logging.getLogger("adaptivepq.bench")

CLASS_NAMES = {classify.NEUTRAL: "neutral", classify.OBLIVIOUS: "numa-oblivious", classify.AWARE: "numa-aware"}

# Desk-scale shrink factors applied to the paper's phase tables.
DESK_PHASE_SECONDS = 1.0
DESK_THREAD_SCALE = 0.25
DESK_SIZE_SCALE = 0.01


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--servers", type=int, default=2, help="server threads for delegating implementations")
    p.add_argument("--line-size", type=int, choices=(64, 128), default=64)
    p.add_argument("--pause-iters", type=int, default=25, help="delay-loop iterations between operations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact", action="store_true", help="use exact deleteMin instead of the spray")
    p.add_argument("--topology", help="simulate a topology, e.g. nodes=4,cpn=16")
    p.add_argument("--pin", action="store_true", help="pin threads per the placement policy")


def _run_config(args: argparse.Namespace, **extra) -> RunConfig:
    topo = topology.discover(args.topology) if args.topology else None
    return RunConfig(
        servers=args.servers,
        line_size=args.line_size,
        pause_iters=args.pause_iters,
        seed=args.seed,
        relaxed=not args.exact,
        topo=topo,
        pin=args.pin,
        **extra,
    )


def cmd_run(args: argparse.Namespace) -> int:
    phases = load_phases(args.phases)
    if not args.paper_scale:
        phases = scale_phases(
            phases,
            phase_seconds=args.phase_seconds,
            thread_scale=args.thread_scale,
            size_scale=args.size_scale,
        )
    tree = classify.load_tree(args.tree) if args.tree else None
    if args.impl == "smartpq" and tree is None:
        log.warning("no --tree given; smartpq stays in its initial mode")
    cfg = _run_config(args, sample_interval=args.sample_interval, decision_interval=args.decision_interval, tree=tree)
    result = run_workload(args.impl, phases, cfg)
    csv_text = result.to_csv()
    if args.csv:
        Path(args.csv).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    for i, (mean, (t0, t1)) in enumerate(zip(result.phase_means, result.phase_bounds)):
        log.info("phase %d [%.1f s, %.1f s): %.0f ops/s", i, t0, t1, mean)
    for tr in result.transitions:
        log.info("mode %d -> %d at %.2f s", tr.old, tr.new, tr.time)
    log.info("final size %d, conservation audit passed", result.final_size)
    return 0


def cmd_gen_training(args: argparse.Namespace) -> int:
    grid = load_grid(args.grid)
    duration = args.duration if args.duration is not None else (5.0 if args.paper_scale else 1.0)
    threshold = args.threshold if args.threshold is not None else (
        classify.DEFAULT_THRESHOLD if args.paper_scale else DESK_THRESHOLD
    )

    def progress(done: int, total: int) -> None:
        log.info("grid point %d/%d", done, total)

    n = gen_training(grid, args.out, duration, threshold, _run_config(args), append=args.append, progress=progress)
    print(f"rows={n} out={args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    samples = classify.read_samples(args.input)
    config = classify.TrainConfig(max_depth=args.max_depth, min_leaf=args.min_leaf)
    if args.holdout:
        train_set, test_set = classify.holdout_split(samples, args.holdout, args.seed)
    else:
        train_set, test_set = samples, []
    tree = classify.train(train_set, config)
    classify.save_tree(tree, args.out)
    print(f"nodes={tree.n_nodes} leaves={tree.n_leaves} depth={tree.depth}")
    print(f"train_accuracy={classify.accuracy(tree, train_set):.4f}")
    if test_set:
        print(f"holdout_accuracy={classify.accuracy(tree, test_set):.4f}")
        print(f"majority_baseline={classify.majority_baseline(train_set, test_set):.4f}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    tree = classify.load_tree(args.tree)
    f = classify.FeatureVector.parse(args.features)
    cls = tree.predict(f)
    print(f"{cls} {CLASS_NAMES[cls]}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    """Convert run CSVs into one gnuplot data file, one index block per input."""
    blocks = []
    for path in args.inputs:
        rows = Path(path).read_text().splitlines()
        if not rows or rows[0].strip() != "time_s,thr_ops,mode":
            raise ConfigError(f"{path}: not a 'bench run' CSV")
        lines = [f"# {path}", "# time_s  thr_Mops  mode"]
        for row in rows[1:]:
            if row.strip():
                t, thr, mode = row.split(",")
                lines.append(f"{float(t):.3f} {float(thr) / 1e6:.6f} {int(mode)}")
        blocks.append("\n".join(lines))
    text = "\n\n\n".join(blocks) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a phase-varying workload and emit throughput CSV")
    p.add_argument("--impl", choices=IMPLS, required=True)
    p.add_argument("--phases", required=True, help=f"phase file (.txt table or .toml) or preset: {', '.join(PRESETS)}")
    p.add_argument("--csv", help="write CSV here instead of stdout")
    p.add_argument("--tree", help="decision tree file for smartpq")
    p.add_argument("--paper-scale", action="store_true", help="use the phase file as written (no desk shrink)")
    p.add_argument("--phase-seconds", type=float, default=DESK_PHASE_SECONDS)
    p.add_argument("--thread-scale", type=float, default=DESK_THREAD_SCALE)
    p.add_argument("--size-scale", type=float, default=DESK_SIZE_SCALE)
    p.add_argument("--sample-interval", type=float, default=1.0)
    p.add_argument("--decision-interval", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-training", help="measure both modes over a feature grid")
    p.add_argument("--grid", default="desk", help=f"grid file or preset: {', '.join(GRID_PRESETS)}")
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, help="seconds per mode per grid point")
    p.add_argument("--threshold", type=float, help="tie threshold in ops/s")
    p.add_argument("--append", action="store_true")
    p.add_argument("--paper-scale", action="store_true", help="5 s runs and the 1.5M ops/s threshold")
    _common(p)
    p.set_defaults(func=cmd_gen_training)

    p = sub.add_parser("train", help="train a decision tree from a samples CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-depth", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--holdout", type=float, default=0.0, help="fraction held out for testing, e.g. 0.25")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one feature vector")
    p.add_argument("--tree", required=True)
    p.add_argument("--features", required=True, help="threads,size,key_range,insert_pct")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="turn run CSVs into a gnuplot data file")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConservationError as exc:
        log.error("%s", exc)
        return 1
    except (ConfigError, PhaseFileError, GridFileError, classify.TreeFormatError, ValueError) as exc:
        parser.exit(2, f"bench: error: {exc}\n")
    except OSError as exc:
        parser.exit(1, f"bench: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
