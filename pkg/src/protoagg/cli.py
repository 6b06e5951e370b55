"""Command-line entry point for reproducible generate/train/eval/compress runs.

Every command is deterministic given its configuration: one global seed
fans out to labelled per-stage seeds, and output files carry no
timestamps or timing data (timings are printed, not stored).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation
from .dataset import SynthConfig, generate_synthetic, load_dataset, save_dataset, split_by_keyframe
from .errors import ConfigError, DegenerateDataError, FormatError, TrainingDivergedError
from .evaluation import EvalConfig, benchmark_table
from .network import MlpArchitecture, load_network, save_network
from .prototypes import PrototypeStore, memory_report, save_store
from .runconfig import (
    RunConfig,
    apply_env_overrides,
    config_hash,
    load_config,
    parse_int_list,
    validate,
)
from .seeding import derive_seed
from .training import PrototypicalLoss, TrainConfig, TripletLoss, format_training_log, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the global seed")
    common.add_argument("--threads", type=int, metavar="N",
                        help="cap on worker threads (the current implementation is sequential)")
    common.add_argument("--out", metavar="DIR",
                        help="run directory (default: runs/<config hash>)")
    common.add_argument("--ann", action="store_true",
                        help="match with the approximate index instead of exact search")

    parser = argparse.ArgumentParser(
        prog="protoagg",
        description="Compress landmark-linked binary descriptors into compact prototypes "
                    "and benchmark nearest-neighbour matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate a synthetic labelled dataset")

    p = sub.add_parser("train", parents=[common], help="train an embedding network")
    p.add_argument("train_data", help="training dataset file")
    p.add_argument("val_data", help="validation dataset file")

    p = sub.add_parser("eval", parents=[common], help="run the six-method benchmark table")
    p.add_argument("dataset", help="evaluation dataset file (split internally)")
    p.add_argument("--model16", required=True, metavar="PATH", help="16-dim embedding model")
    p.add_argument("--model32", required=True, metavar="PATH", help="32-dim embedding model")

    p = sub.add_parser("compress", parents=[common],
                       help="embed a dataset and write one prototype per landmark")
    p.add_argument("model", help="embedding model file")
    p.add_argument("dataset", help="dataset file to compress")

    p = sub.add_parser("sweep-dim", parents=[common],
                       help="train and evaluate one network per embedding dimension")
    p.add_argument("train_data")
    p.add_argument("val_data")
    p.add_argument("eval_data")
    p.add_argument("--dims", metavar="LIST", help="comma-separated output dims")

    p = sub.add_parser("sweep-arch", parents=[common],
                       help="train and evaluate a family/depth/loss grid")
    p.add_argument("train_data")
    p.add_argument("val_data")
    p.add_argument("eval_data")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    cfg = apply_env_overrides(cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    return validate(cfg)


def _run_dir(args, cfg: RunConfig) -> Path:
    path = Path(args.out) if args.out else Path("runs") / config_hash(cfg)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _train_config(cfg: RunConfig) -> TrainConfig:
    if cfg.train_loss == "triplet":
        loss = TripletLoss(margin=cfg.train_margin)
    else:
        loss = PrototypicalLoss(
            classes_per_episode=cfg.train_classes_per_episode,
            support_per_class=cfg.train_support_per_class,
            query_per_class=cfg.train_query_per_class,
        )
    return TrainConfig(
        loss=loss,
        initial_lr=cfg.train_initial_lr,
        plateau_patience=cfg.train_plateau_patience,
        lr_factor=cfg.train_lr_factor,
        min_lr=cfg.train_min_lr,
        max_epochs=cfg.train_max_epochs,
        batch_size=cfg.train_batch_size,
        seed=derive_seed(cfg.seed, "training"),
    )


def _eval_config(cfg: RunConfig, use_ann: bool) -> EvalConfig:
    return EvalConfig(
        support_fraction=cfg.eval_support_fraction,
        num_query_samples=cfg.eval_num_query_samples,
        seed=derive_seed(cfg.seed, "query-sample"),
        use_ann=use_ann,
        ann_budget=cfg.eval_ann_budget,
    )


def cmd_gen(args, cfg: RunConfig) -> int:
    synth = SynthConfig(
        num_landmarks=cfg.synth_num_landmarks,
        num_keyframes=cfg.synth_num_keyframes,
        observations_per_landmark=(cfg.synth_observations_min, cfg.synth_observations_max),
        bit_flip_prob=cfg.synth_bit_flip_prob,
        width=cfg.synth_width,
        seed=derive_seed(cfg.seed, "synthetic-data"),
    )
    dataset = generate_synthetic(synth)
    out = _run_dir(args, cfg) / "dataset.pdsc"
    save_dataset(dataset, out)
    print(f"wrote {out}")
    print(
        f"landmarks={len(dataset.landmarks())} keyframes={len(dataset.keyframes())} "
        f"records={len(dataset)} width={dataset.width}"
    )
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    train_set = load_dataset(args.train_data)
    val_set = load_dataset(args.val_data)
    arch = MlpArchitecture(cfg.arch_family, cfg.arch_num_layers,
                           train_set.width, cfg.arch_output_dim)
    net, log = train(train_set, val_set, arch, _train_config(cfg))
    run = _run_dir(args, cfg)
    model_path = run / "model.pagg"
    save_network(net, model_path)
    (run / "train_log.txt").write_text(format_training_log(log), encoding="ascii")
    print(f"wrote {model_path}")
    if log:
        best = min(log, key=lambda r: r.val_loss)
        print(f"epochs={len(log)} best_val_loss={best.val_loss:.6f} (epoch {best.epoch})")
    else:
        print("epochs=0 (saved the initialized network)")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    dataset = load_dataset(args.dataset)
    net16 = load_network(args.model16)
    net32 = load_network(args.model32)
    split_seed = derive_seed(cfg.seed, "keyframe-split")
    support, query = split_by_keyframe(dataset, cfg.eval_support_fraction, split_seed)
    report = benchmark_table(support, query, net32, net16, _eval_config(cfg, args.ann))
    report.split_seed = split_seed
    run = _run_dir(args, cfg)
    (run / "report.txt").write_text(evaluation.format_report_table(report), encoding="ascii")
    (run / "report.tsv").write_text(evaluation.format_report_records(report), encoding="ascii")
    print(evaluation.format_report_table(report))
    print("timings (not stored in report files):")
    print(evaluation.format_timings(report))
    print(f"wrote {run / 'report.txt'} and {run / 'report.tsv'}")
    return EXIT_OK


def cmd_compress(args, cfg: RunConfig) -> int:
    net = load_network(args.model)
    dataset = load_dataset(args.dataset)
    embeddings = evaluation.embed_dataset_words(net, dataset.words, dataset.width)
    store = PrototypeStore(net.output_dim)
    ids, offsets, rows = dataset.landmark_csr()
    for i in range(len(ids)):
        group = rows[offsets[i]: offsets[i + 1]]
        store.add_landmark(int(ids[i]), embeddings[group])
    run = _run_dir(args, cfg)
    out = run / "store.psto"
    save_store(store, out)
    rep = memory_report(store, descriptor_width_bits=dataset.width)
    print(f"wrote {out}")
    print(
        f"landmarks={rep.num_landmarks} "
        f"prototype_bytes_per_landmark={rep.prototype_bytes_per_landmark:.1f} "
        f"raw_bytes_per_landmark={rep.raw_bytes_per_landmark:.1f} "
        f"compression_ratio={rep.compression_ratio:.2f}x"
    )
    return EXIT_OK


def cmd_sweep_dim(args, cfg: RunConfig) -> int:
    train_set = load_dataset(args.train_data)
    val_set = load_dataset(args.val_data)
    eval_set = load_dataset(args.eval_data)
    dims = parse_int_list(args.dims if args.dims else cfg.sweep_dims, "sweep.dims")
    if not dims:
        raise ConfigError("config key sweep.dims: no dimensions given")
    split_seed = derive_seed(cfg.seed, "keyframe-split")
    support, query = split_by_keyframe(eval_set, cfg.eval_support_fraction, split_seed)
    tcfg = _train_config(cfg)
    if not isinstance(tcfg.loss, TripletLoss):
        raise ConfigError("config key train.loss: the dimension sweep trains triplet networks")
    pairs = evaluation.dimension_sweep(
        train_set, val_set, support, query, dims, tcfg, _eval_config(cfg, args.ann),
        family=cfg.arch_family, num_layers=cfg.arch_num_layers,
    )
    lines = [f"dim={dim}\tprecision={prec!r}" for dim, prec in pairs]
    body = "\n".join(lines) + "\n"
    run = _run_dir(args, cfg)
    (run / "sweep_dim.tsv").write_text(body, encoding="ascii")
    print(body, end="")
    print(f"wrote {run / 'sweep_dim.tsv'}")
    return EXIT_OK


def cmd_sweep_arch(args, cfg: RunConfig) -> int:
    train_set = load_dataset(args.train_data)
    val_set = load_dataset(args.val_data)
    eval_set = load_dataset(args.eval_data)
    families = [f.strip() for f in cfg.sweep_families.split(",") if f.strip()]
    for fam in families:
        if fam not in ("fat", "funnel"):
            raise ConfigError(f"config key sweep.families: unknown family {fam!r}")
    depths = parse_int_list(cfg.sweep_depths, "sweep.depths")
    losses = []
    for name in (s.strip() for s in cfg.sweep_losses.split(",")):
        if name == "triplet":
            losses.append(TripletLoss(margin=cfg.train_margin))
        elif name == "prototypical":
            losses.append(PrototypicalLoss(
                classes_per_episode=cfg.train_classes_per_episode,
                support_per_class=cfg.train_support_per_class,
                query_per_class=cfg.train_query_per_class,
            ))
        elif name:
            raise ConfigError(f"config key sweep.losses: unknown loss {name!r}")
    split_seed = derive_seed(cfg.seed, "keyframe-split")
    support, query = split_by_keyframe(eval_set, cfg.eval_support_fraction, split_seed)
    records = evaluation.architecture_sweep(
        train_set, val_set, support, query, families, depths, losses,
        _train_config(cfg), _eval_config(cfg, args.ann), output_dim=cfg.arch_output_dim,
    )
    lines = [
        f"family={fam}\tdepth={depth}\tloss={loss}\tprecision={prec!r}"
        for fam, depth, loss, prec in records
    ]
    body = "\n".join(lines) + "\n"
    run = _run_dir(args, cfg)
    (run / "sweep_arch.tsv").write_text(body, encoding="ascii")
    print(body, end="")
    print(f"wrote {run / 'sweep_arch.tsv'}")
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "compress": cmd_compress,
    "sweep-dim": cmd_sweep_dim,
    "sweep-arch": cmd_sweep_arch,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, DegenerateDataError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
