"""Command-line entry point tying the pipeline together.

Subcommands: gen, label, stats, train, eval, gap, predict, inspect. Every
command exits 0 on success and 1 with a single `category: message` line on
stderr otherwise. All randomness flows from --seed; subsystem seeds are
derived by stable hashing, and machine-readable outputs sit next to a
provenance.json echoing the command, seed and configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import oracle, report, syngen, training
from .frontend import ParseError, build_cdfg, build_dfg, featurize, parse_program
from .graph import compute_stats, from_json, to_json, validate
from .models import ModelConfig
from .oracle import LabelImportError, OracleConfig
from .seeding import derive_seed
from .syngen import GenConfig
from .tensor import NonFiniteGradient
from .training import (
    TARGETS,
    Checkpoint,
    TrainConfig,
    TrainingError,
    evaluate,
    generalization_eval,
    load_dataset,
    multi_run_train,
    split,
    train,
)


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _data_dir(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get("P2C_DATA_DIR")
    if env:
        return Path(env)
    raise CliError("config-error",
                   "no dataset given: pass --dataset or set P2C_DATA_DIR")


def _oracle_config(path: str | None) -> OracleConfig:
    if path is None:
        return OracleConfig()
    if not Path(path).exists():
        raise CliError("io-error", f"oracle config not found: {path}")
    return OracleConfig.from_toml(path)


def _load_graph_file(path: Path):
    try:
        return from_json(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise CliError("io-error", f"cannot read graph {path}: {err}") from None


# --- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = GenConfig(
        preset=args.preset, count=args.count, seed=derive_seed(args.seed, "gen"),
        size_range=(args.size_min, args.size_max)
        if args.size_min is not None else None,
        loop_prob=args.loop_prob, branch_prob=args.branch_prob,
    )
    cfg.validate()
    manifest = syngen.generate_dataset(cfg, args.out,
                                       oracle_config=_oracle_config(args.oracle_config),
                                       jobs=args.jobs)
    report.write_provenance(args.out, "gen", args.seed, cfg.to_dict())
    print(f"gen: {cfg.count} {cfg.preset} programs -> {args.out}")
    print(f"gen: dataset hash {manifest.dataset_hash}")
    return 0


def cmd_label(args) -> int:
    graph_dir = Path(args.graphs)
    paths = sorted(graph_dir.glob("*.json"))
    if not paths:
        raise CliError("io-error", f"no graph JSON files under {graph_dir}")
    ocfg = _oracle_config(args.oracle_config)
    dt = ocfg.delay_table()

    def label_one(path: Path):
        g = _load_graph_file(path)
        problems = validate(g)
        if problems:
            raise CliError("graph-error",
                           f"{path.name}: {problems[0].message}")
        return g.name, oracle.label_graph(g, dt, ocfg)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(label_one, paths))
    else:
        rows = [label_one(p) for p in paths]

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(oracle.LABELS_HEADER)]
    lines += [oracle.format_label_row(name, lv) for name, lv in rows]
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    report.write_provenance(out_path.parent, "label", args.seed,
                            {"graphs": str(graph_dir), "count": len(rows)})
    print(f"label: wrote {len(rows)} rows -> {out_path}")
    return 0


def cmd_stats(args) -> int:
    root = _data_dir(args.dataset)
    graph_dir = root / "graphs" if (root / "graphs").is_dir() else root
    paths = sorted(graph_dir.glob("*.json"))
    if not paths:
        raise CliError("io-error", f"no graph JSON files under {graph_dir}")
    names, kinds, stats = [], [], []
    for p in paths:
        g = _load_graph_file(p)
        names.append(g.name)
        kinds.append(g.kind)
        stats.append(compute_stats(g))
    labels = None
    if (root / "labels.csv").exists():
        labels = oracle.import_labels(root / "labels.csv")
    summary = report.stats_report(args.out, names, kinds, stats, labels)
    report.write_provenance(args.out, "stats", args.seed,
                            {"dataset": str(root), "graphs": len(names)})
    print(f"stats: {summary['graphs']} graphs, "
          f"mean nodes {summary['mean_nodes']:.1f}, "
          f"{summary['graphs_with_loops']} with loops -> {args.out}")
    return 0


def _model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        layer_kind=args.layer_kind,
        num_layers=args.num_layers,
        hidden_dim=args.hidden_dim,
        virtual_node=args.virtual_node,
        readout=args.readout,
        head_dims=(args.hidden_dim, 2 * args.hidden_dim, args.hidden_dim, 1),
        dropout=args.dropout,
    )


def cmd_train(args) -> int:
    root = _data_dir(args.dataset)
    records = load_dataset(root)
    splits = split(records, seed=derive_seed(args.seed, "split"))
    mc = _model_config_from_args(args)
    targets = TARGETS if args.target == "all" else (args.target,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_metrics = {}
    for target in targets:
        tc = TrainConfig(epochs=args.epochs, lr=args.lr,
                         weight_decay=args.weight_decay, dropout=args.dropout,
                         batch_size=args.batch_size,
                         seed=derive_seed(args.seed, "train", target),
                         target=target)
        if args.runs > 1:
            summary, outcomes = multi_run_train(mc, tc, splits,
                                                runs=args.runs, keep=args.keep)
            best_idx = summary["kept_runs"][0]
            ckpt, history = outcomes[best_idx]
            (out / f"runs_{target}.json").write_text(
                json.dumps(summary, sort_keys=True, indent=2) + "\n")
            test_err = summary["mean_test_rel_err"]
        else:
            ckpt, history = train(mc, tc, splits)
            test_err = None
        ckpt.save(out / f"{target}.npz")
        report.write_history(out, history, target)
        metrics = evaluate(ckpt, splits.test, "test")
        all_metrics[target] = metrics
        shown = test_err if test_err is not None else metrics.mean_rel_err
        print(f"train[{target}]: test rel err {shown:.4f} "
              f"(best epoch {ckpt.meta['best_epoch']})")
    report.write_metrics(out, all_metrics)
    report.write_provenance(out, "train", args.seed, {
        "dataset": str(root), "model": mc.to_dict(),
        "epochs": args.epochs, "lr": args.lr, "runs": args.runs,
        "keep": args.keep, "targets": list(targets),
    })
    return 0


def _load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CliError("io-error", f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def cmd_eval(args) -> int:
    root = _data_dir(args.dataset)
    records = load_dataset(root)
    if args.split == "all":
        chosen = records
    else:
        splits = split(records, seed=derive_seed(args.seed, "split"))
        chosen = getattr(splits, args.split)
    ckpt = _load_checkpoint(args.model)
    metrics = evaluate(ckpt, chosen, args.split)
    report.write_metrics(args.out, metrics)
    report.write_provenance(args.out, "eval", args.seed, {
        "dataset": str(root), "model": str(args.model), "split": args.split,
    })
    print(f"eval[{metrics.target}/{args.split}]: "
          f"mean rel err {metrics.mean_rel_err:.4f} over {len(metrics.records)}")
    return 0


def cmd_gap(args) -> int:
    root = _data_dir(args.dataset)
    records = load_dataset(root)
    splits = split(records, seed=derive_seed(args.seed, "split"))
    ood = load_dataset(Path(args.ood_dataset))
    ckpt = _load_checkpoint(args.model)
    override = "mean" if args.mean_readout else None
    _, gap = generalization_eval(ckpt, splits.test, ood,
                                 readout_override=override)
    report.gap_files(args.out, gap)
    report.write_provenance(args.out, "gap", args.seed, {
        "dataset": str(root), "ood_dataset": str(args.ood_dataset),
        "model": str(args.model), "mean_readout": args.mean_readout,
    })
    print(f"gap[{gap.target}]: in-dist {gap.in_dist_err:.4f}, "
          f"out-of-dist {gap.out_dist_err:.4f}, ratio {gap.ratio:.2f}")
    return 0


def cmd_predict(args) -> int:
    model_dir = Path(args.model)
    if model_dir.is_file():
        raise CliError("config-error",
                       "--model must be a directory holding one checkpoint "
                       "per target (dsp.npz, lut.npz, ff.npz, slice.npz, cp.npz)")
    missing = [t for t in TARGETS if not (model_dir / f"{t}.npz").exists()]
    if missing:
        raise CliError("io-error",
                       f"missing checkpoints under {model_dir}: {missing}")
    g = _load_graph_file(Path(args.graph))
    problems = validate(g)
    if problems:
        raise CliError("graph-error", f"invalid graph: {problems[0].message}")
    fg = featurize(g)
    out: dict[str, float] = {}
    for target in TARGETS:
        ckpt = Checkpoint.load(model_dir / f"{target}.npz")
        transform = training.LabelTransform(**ckpt.meta["transform"])
        raw = ckpt.model.predict(fg)
        value = float(transform.invert(raw))
        if target in training.RESOURCE_TARGETS:
            value = max(value, 0.0)
        out["cp_ns" if target == "cp" else target] = value
    payload = {
        "name": g.name,
        "predictions": out,
        "provenance": {"command": "predict", "model": str(model_dir),
                       "graph": str(args.graph)},
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.program)
    if not path.exists():
        raise CliError("io-error", f"program not found: {path}")
    program = parse_program(path.read_text("utf-8"))
    if len(program.blocks) == 1 and program.blocks[0].terminator.kind == "ret":
        g = build_dfg(program.blocks[0], list(program.args), name=program.name)
    else:
        g = build_cdfg(program)
    problems = validate(g)
    st = compute_stats(g)
    print(f"{program.name}: {g.kind} with {st.num_nodes} nodes, "
          f"{st.num_edges} edges, {st.num_loops} loops "
          f"(longest {st.max_loop_length})")
    if problems:
        for v in problems:
            print(f"  violation[{v.code}]: {v.message}")
    else:
        print("  valid")
    if args.json:
        Path(args.json).write_text(to_json(g), encoding="utf-8")
        print(f"  graph JSON -> {args.json}")
    return 0 if not problems else 1


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2cir",
        description="Generate IR-graph datasets, label them with the "
                    "deterministic cost model, and train/evaluate GNN "
                    "predictors of circuit resources and timing.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="top-level seed; subsystem seeds derive from it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled synthetic dataset",
                       parents=[common])
    p.add_argument("--preset", choices=syngen.PRESETS, default="dfg")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--size-min", type=int, default=None)
    p.add_argument("--size-max", type=int, default=None)
    p.add_argument("--loop-prob", type=float, default=None)
    p.add_argument("--branch-prob", type=float, default=None)
    p.add_argument("--oracle-config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", help="label a directory of graph JSON files",
                       parents=[common])
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle-config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("stats", help="dataset statistics report with figures",
                       parents=[common])
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model per target",
                       parents=[common])
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--target", choices=TARGETS + ("all",), default="all")
    p.add_argument("--layer-kind", choices=("gcn", "graphsage", "gin", "rgcn", "pna"),
                   default="pna")
    p.add_argument("--num-layers", type=int, default=5)
    p.add_argument("--hidden-dim", type=int, default=300)
    p.add_argument("--readout", choices=("sum", "mean"), default="sum")
    p.add_argument("--virtual-node", action="store_true")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--runs", type=int, default=5,
                   help="training runs per target; metrics average the best")
    p.add_argument("--keep", type=int, default=3,
                   help="runs kept (by validation error) when averaging")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split",
                       parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gap", help="size-generalization study",
                       parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default=None,
                   help="in-distribution dataset (test split is used)")
    p.add_argument("--ood-dataset", required=True)
    p.add_argument("--mean-readout", action="store_true",
                   help="substitute mean pooling at evaluation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("predict", help="five predictions for one graph",
                       parents=[common])
    p.add_argument("--model", required=True,
                   help="directory with dsp/lut/ff/slice/cp checkpoints")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="parse, validate and summarize a program",
                       parents=[common])
    p.add_argument("--program", required=True)
    p.add_argument("--json", default=None,
                   help="also write the constructed graph JSON here")
    p.set_defaults(func=cmd_inspect)
    return parser


_ERROR_CATEGORIES = (
    (ParseError, "parse-error"),
    (LabelImportError, "label-error"),
    (TrainingError, "training-error"),
    (NonFiniteGradient, "training-error"),
    (FileNotFoundError, "io-error"),
    (PermissionError, "io-error"),
    (ValueError, "config-error"),
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"{err.category}: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - single reporting point
        for exc_type, category in _ERROR_CATEGORIES:
            if isinstance(err, exc_type):
                print(f"{category}: {err}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
