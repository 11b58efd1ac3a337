"""Command-line entry point: ``seedgnn {generate,train,sweep,ablate,dump-layers}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import bench
from .graphs import CorrelatedPairSpec, generate_correlated_er
from .model import VARIANTS, SQUASHES, ModelDims, SeedGnnModel, TrainConfig, load_checkpoint, train

log = logging.getLogger("seedgnn")


def floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def add_grid_args(p: argparse.ArgumentParser, thetas: str) -> None:
    p.add_argument("--n", type=ints, default=[500], help="comma-separated node counts")
    p.add_argument("--p", type=floats, default=[0.2], help="comma-separated edge probabilities")
    p.add_argument("--s", type=floats, default=[0.8], help="comma-separated edge keep probabilities")
    p.add_argument("--theta", type=floats, default=floats(thetas), help="comma-separated seed fractions")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--graph", help="edge list of a real parent graph (replaces the ER grid)")
    p.add_argument("--node-keep", type=float, default=1.0, help="node keep probability for --graph")


def grid_spec(args, algos) -> bench.ExperimentSpec:
    return bench.ExperimentSpec(tuple(algos), tuple(args.n), tuple(args.p), tuple(args.s), tuple(args.theta),
                                args.trials, args.base_seed, args.graph, args.node_keep)


def add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--squash", choices=SQUASHES, default=ModelDims.squash)


def dims_from(args) -> ModelDims:
    return ModelDims(L=args.layers, hidden=args.hidden, squash=args.squash)


def cmd_generate(args) -> int:
    surrogates = 0
    if args.recipe == "train":
        specs = bench.training_specs(size=args.size, base_seed=args.base_seed)
        surrogates = args.surrogates
    else:
        specs = []
        for n in args.n:
            for p in args.p:
                for s in args.s:
                    for th in args.theta:
                        cell = len(specs) // args.trials
                        specs.extend(CorrelatedPairSpec(n, p, s, th, bench.trial_seed(args.base_seed, cell, t))
                                     for t in range(args.trials))
    manifest = bench.generate_dataset(specs, args.out, surrogates)
    print(f"wrote {len(specs) + surrogates} instances; manifest {manifest}")
    return 0


def cmd_train(args) -> int:
    data = bench.load_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model = SeedGnnModel.init(dims_from(args), args.variant, seed=args.init_seed)
    loss_log = Path(args.loss_log) if args.loss_log else out.with_suffix(".loss.csv")
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, shuffle_seed=args.shuffle_seed,
                      checkpoint_every=args.checkpoint_every, checkpoint_path=out, loss_log=loss_log)
    hist = train(model, data, cfg, progress=True)
    print(f"trained {len(hist)} steps; checkpoint {out}; loss log {loss_log}")
    return 0


def cmd_sweep(args) -> int:
    spec = grid_spec(args, args.algos.split(","))
    rows = bench.run_sweep(spec, args.out, args.checkpoint, args.workers)
    for key, acc in sorted(bench.summarize(bench.read_results(args.out)).items()):
        print("%-8s n=%-4d p=%-6g s=%-4g theta=%-6g acc=%.3f" % (key + (acc,)))
    print(f"wrote {rows} rows to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    variants = args.variants.split(",")
    if args.checkpoints:
        paths = dict(zip(variants, args.checkpoints.split(",")))
        if len(paths) != len(variants):
            raise ValueError("give one checkpoint per variant")
    else:
        if not args.data:
            raise ValueError("ablate needs --data to train or --checkpoints to evaluate")
        data = bench.load_dataset(args.data)
        cfg = TrainConfig(lr=args.lr, epochs=args.epochs, shuffle_seed=args.shuffle_seed)
        paths = bench.train_variants(data, variants, args.model_dir, dims_from(args), cfg, args.init_seed)
    spec = grid_spec(args, ["seedgnn"])
    rows = bench.run_ablation(paths, spec, args.out)
    for key, acc in sorted(bench.summarize(bench.read_results(args.out)).items()):
        print("%-16s theta=%-6g acc=%.3f" % (key[0], key[4], acc))
    print(f"wrote {rows} rows to {args.out}")
    return 0


def cmd_dump_layers(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.instance:
        inst = bench.read_instance(args.instance, need_truth=False)
    else:
        inst = generate_correlated_er(CorrelatedPairSpec(args.n, args.p, args.s, args.theta, args.seed))
    counts = bench.dump_layers(model, inst, args.out, svg=args.svg)
    if counts:
        print("true pairs matched per layer:", " ".join(map(str, counts)))
    print(f"wrote {2 * model.dims.L} matrices to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seedgnn", description="Seeded graph matching experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="write correlated ER instances and a manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--recipe", choices=["train", "grid"], default="train")
    g.add_argument("--size", type=int, default=bench.TRAIN_SIZE, help="ER pairs in the training recipe")
    g.add_argument("--surrogates", type=int, default=bench.SOCIAL_COUNT,
                   help="heavy-tailed pairs appended to the training recipe")
    add_grid_args(g, "0.1")
    g.set_defaults(func=cmd_generate, base_seed=bench.TRAIN_SEED)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--variant", choices=VARIANTS, default="full")
    t.add_argument("--loss-log")
    t.add_argument("--checkpoint-every", type=int, default=0)
    add_model_args(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="evaluate algorithms over a parameter grid")
    s.add_argument("--algos", default="seedgnn,sgm,1hop,2hop,pgm")
    s.add_argument("--checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    add_grid_args(s, "0,0.01,0.02,0.03,0.04,0.05")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="train and compare the model variants")
    a.add_argument("--variants", default=",".join(VARIANTS))
    a.add_argument("--checkpoints", help="comma-separated checkpoints, one per variant")
    a.add_argument("--data", help="training dataset (when no checkpoints are given)")
    a.add_argument("--model-dir", default="ablation_models")
    a.add_argument("--out", required=True)
    add_model_args(a)
    add_grid_args(a, "0.05")
    a.set_defaults(func=cmd_ablate, p=[0.04])

    d = sub.add_parser("dump-layers", help="write Y_l and R_l of every layer")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--instance", help="instance folder (g1.txt, g2.txt, seeds.txt, truth.txt)")
    d.add_argument("--n", type=int, default=50)
    d.add_argument("--p", type=float, default=0.1)
    d.add_argument("--s", type=float, default=0.8)
    d.add_argument("--theta", type=float, default=0.1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--svg", action="store_true", help="also write SVG heatmaps")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dump_layers)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, MemoryError, FloatingPointError) as exc:
        print(f"seedgnn {args.cmd}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
