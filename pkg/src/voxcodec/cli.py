"""Command-line interface.

Subcommands: voxelize, partition-stats, train, train-seq, encode, decode,
metrics, bdpsnr, rd-sweep, suite.  A key=value config file given with
--config overrides any matching flag.

Exit codes: 0 ok, 2 usage/configuration, 3 format or decoding error,
4 model mismatch.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from typing import List, Optional

import numpy as np

from .codec import PRESETS, decode, encode
from .errors import (
    ConfigurationError,
    DecodingError,
    DomainError,
    ModelMismatchError,
    ParseError,
    VoxcodecError,
)
from .geometry import PointCloud, read_ply, to_voxels, write_ply
from .metrics import RdCurve, RdPoint, bd_psnr, d1_mse, d2_mse, estimate_normals, geometry_psnr
from .nn.weights import WeightStore
from .partition import partition_blocks
from .sweep import plot_curves, rd_sweep, run_condition_suite
from .synthetic import synthetic_block_dataset, synthetic_cloud
from .training import FocalParams, TrainConfig, sequential_train, train_model


def _load_cloud(path: str) -> PointCloud:
    with open(path, "rb") as fh:
        return read_ply(fh)


def _save_cloud(pc: PointCloud, path: str) -> None:
    with open(path, "wb") as fh:
        write_ply(pc, fh)


def _apply_config_file(args: argparse.Namespace, path: str) -> None:
    """key=value lines override parsed flags; types follow the defaults."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if not hasattr(args, key):
                raise ConfigurationError(f"{path}:{lineno}: unknown option {key!r}")
            current = getattr(args, key)
            if isinstance(current, bool):
                setattr(args, key, value.lower() in ("1", "true", "yes", "on"))
            elif isinstance(current, int):
                setattr(args, key, int(value))
            elif isinstance(current, float):
                setattr(args, key, float(value))
            else:
                setattr(args, key, value)


def _dataset_from_args(args) -> list:
    if args.input:
        cloud = _load_cloud(args.input)
        grid = partition_blocks(to_voxels(cloud), args.block_size)
        from .partition import block_to_tensor

        return [block_to_tensor(vs, args.block_size) for vs in grid.blocks.values()]
    return synthetic_block_dataset(args.synthetic_blocks, args.block_size, args.seed)


def _train_config(args, preset=None) -> TrainConfig:
    model = preset.model if preset else args.model
    transforms = preset.transforms if preset else args.transforms
    alpha = preset.alpha if preset else args.alpha
    return TrainConfig(
        lam=getattr(args, "lam", 1.0) or 1.0,
        model_kind=model,
        transform_kind=transforms,
        focal=FocalParams(alpha=alpha, gamma=args.gamma),
        lr=args.lr,
        steps=args.steps,
        seed=args.seed,
        filters=args.filters,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxcodec",
        description="Learned point cloud geometry codec and evaluation tools",
    )
    parser.add_argument("--config", help="key=value file overriding flags")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train=False):
        p.add_argument("--block-size", type=int, default=16, dest="block_size")
        p.add_argument("--seed", type=int, default=0)
        if train:
            p.add_argument("--preset", choices=sorted(PRESETS), default=None)
            p.add_argument("--model", choices=("baseline", "hyperprior"),
                           default="hyperprior")
            p.add_argument("--transforms", choices=("v1", "v2"), default="v2")
            p.add_argument("--alpha", type=float, default=0.75)
            p.add_argument("--gamma", type=float, default=2.0)
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--steps", type=int, default=200)
            p.add_argument("--filters", type=int, default=8)
            p.add_argument("--input", help="training cloud (PLY); default synthetic")
            p.add_argument("--synthetic-blocks", type=int, default=12,
                           dest="synthetic_blocks")

    p = sub.add_parser("voxelize", help="deduplicate a cloud into voxels")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("partition-stats", help="print block occupancy statistics")
    p.add_argument("input")
    common(p)

    p = sub.add_parser("train", help="train one model")
    common(p, train=True)
    p.add_argument("--lambda", type=float, default=1.0, dest="lam")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--log-csv", dest="log_csv", help="training log CSV path")

    p = sub.add_parser("train-seq", help="sequentially train a lambda schedule")
    common(p, train=True)
    p.add_argument("--lambdas", required=True,
                   help="comma-separated, strictly descending")
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    p.add_argument("--finetune-fraction", type=float, default=0.125,
                   dest="finetune_fraction")

    p = sub.add_parser("encode", help="compress a PLY cloud")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="c5")
    p.add_argument("--metric", choices=("d1", "d2"), default="d1")
    p.add_argument("--block-size", type=int, default=None, dest="block_size")

    p = sub.add_parser("decode", help="decompress a bitstream")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", required=True)

    p = sub.add_parser("metrics", help="D1/D2 PSNR between two clouds (CSV row)")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--bpp", type=float, default=None)
    p.add_argument("--knn", type=int, default=9)

    p = sub.add_parser("bdpsnr", help="BD-PSNR between two sweep CSV files")
    p.add_argument("test_csv")
    p.add_argument("ref_csv")
    p.add_argument("--metric", choices=("d1", "d2"), default="d1")

    p = sub.add_parser("rd-sweep", help="sweep trained models over one cloud")
    p.add_argument("input")
    p.add_argument("--weights", nargs="+", required=True,
                   help="weight files, one per lambda")
    p.add_argument("--lambdas", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="c5")
    p.add_argument("--metric", choices=("d1", "d2"), default="d1")
    p.add_argument("--csv", required=True)
    p.add_argument("--svg")
    p.add_argument("--block-size", type=int, default=None, dest="block_size")

    p = sub.add_parser("suite", help="train and compare several conditions")
    common(p, train=True)
    p.add_argument("--conditions", default="c1,c5")
    p.add_argument("--lambdas", default="30,10,3,1")
    p.add_argument("--outdir", required=True)
    p.add_argument("--metric", choices=("d1", "d2"), default="d1")
    p.add_argument("--eval-bit-depth", type=int, default=6, dest="eval_bit_depth")

    return parser


def _cmd_voxelize(args) -> int:
    cloud = _load_cloud(args.input)
    from .geometry import from_voxels

    _save_cloud(from_voxels(to_voxels(cloud)), args.output)
    return 0


def _cmd_partition_stats(args) -> int:
    cloud = _load_cloud(args.input)
    grid = partition_blocks(to_voxels(cloud), args.block_size)
    sizes = sorted(len(vs) for vs in grid.blocks.values())
    total = sum(sizes)
    print(f"points: {len(cloud)}")
    print(f"unique voxels: {total}")
    print(f"occupied blocks: {len(grid)} of {grid.grid_side ** 3}")
    if sizes:
        print(f"voxels per block: min {sizes[0]}, median {sizes[len(sizes) // 2]}, "
              f"max {sizes[-1]}")
    return 0


def _cmd_train(args) -> int:
    preset = PRESETS[args.preset] if args.preset else None
    cfg = _train_config(args, preset)
    cfg = TrainConfig(**{**cfg.__dict__, "lam": args.lam})
    dataset = _dataset_from_args(args)
    weights, log = train_model(cfg, dataset)
    weights.save(args.out)
    if args.log_csv:
        log.write_csv(args.log_csv)
    print(f"trained {cfg.model_kind}/{cfg.transform_kind} lambda={cfg.lam:g} "
          f"steps={cfg.steps} final_loss={log.final_loss:.4f} -> {args.out}")
    return 0


def _cmd_train_seq(args) -> int:
    preset = PRESETS[args.preset] if args.preset else None
    cfg = _train_config(args, preset)
    lams = [float(x) for x in args.lambdas.split(",")]
    result = sequential_train(lams, cfg, _dataset_from_args(args),
                              args.finetune_fraction)
    for lam, ws in result.weights.items():
        path = f"{args.out_prefix}_lam{lam:g}.vcw"
        ws.save(path)
        log = result.logs[lam]
        print(f"lambda={lam:g}: steps={len(log.total)} "
              f"final_loss={log.final_loss:.4f} -> {path}")
    return 0


def _cmd_encode(args) -> int:
    cloud = _load_cloud(args.input)
    weights = WeightStore.load(args.weights)
    result = encode(cloud, weights, PRESETS[args.preset], args.metric,
                    args.block_size)
    with open(args.output, "wb") as fh:
        fh.write(result.data)
    print(f"{len(result.data)} bytes, {result.bpp:.4f} bpp, "
          f"{len(result.bitstream.records)} blocks")
    return 0


def _cmd_decode(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    weights = WeightStore.load(args.weights)
    cloud = decode(data, weights)
    _save_cloud(cloud, args.output)
    print(f"decoded {len(cloud)} points")
    return 0


def _cmd_metrics(args) -> int:
    reference = _load_cloud(args.reference)
    test = _load_cloud(args.test)
    if reference.normals is None:
        reference = estimate_normals(reference, k=args.knn)
    v_d1 = d1_mse(test, reference)
    v_d2 = d2_mse(test, reference)
    one_sided = test.normals is None
    writer = csv.writer(sys.stdout)
    writer.writerow(["cloud_id", "d1_mse", "d1_psnr", "d2_mse", "d2_psnr", "bpp"])
    writer.writerow([
        args.test,
        f"{v_d1:.6f}", f"{geometry_psnr(v_d1, reference.bit_depth):.4f}",
        f"{v_d2:.6f}", f"{geometry_psnr(v_d2, reference.bit_depth):.4f}",
        "" if args.bpp is None else f"{args.bpp:.6f}",
    ])
    if one_sided:
        print("note: D2 computed one-sided (test cloud has no normals)",
              file=sys.stderr)
    return 0


def _read_curve_csv(path: str, metric: str) -> RdCurve:
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            psnr = float(row[f"{metric}_psnr"])
            if math.isfinite(psnr) and psnr < 990.0:
                points.append(RdPoint(float(row["bpp"]), psnr))
    return RdCurve(points)


def _cmd_bdpsnr(args) -> int:
    test = _read_curve_csv(args.test_csv, args.metric)
    ref = _read_curve_csv(args.ref_csv, args.metric)
    print(f"{bd_psnr(test, ref):+.4f} dB")
    return 0


def _cmd_rd_sweep(args) -> int:
    cloud = _load_cloud(args.input)
    lams = [float(x) for x in args.lambdas.split(",")]
    if len(lams) != len(args.weights):
        raise ConfigurationError("need exactly one weight file per lambda")
    models = [(lam, WeightStore.load(path)) for lam, path in zip(lams, args.weights)]
    result = rd_sweep(cloud, models, PRESETS[args.preset], args.metric,
                      args.block_size)
    result.write_csv(args.csv)
    if args.svg:
        plot_curves({args.preset: result}, args.svg, args.metric)
    if len(result.rows) < 4:
        print("warning: fewer than 4 RD points, BD-PSNR unavailable", file=sys.stderr)
    print(f"wrote {args.csv} ({len(result.rows)} points)")
    return 0


def _cmd_suite(args) -> int:
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    lams = [float(x) for x in args.lambdas.split(",")]
    cfg = _train_config(args)
    dataset = _dataset_from_args(args)
    clouds = {"synthetic": synthetic_cloud(args.eval_bit_depth, seed=args.seed + 7)}
    if args.input:
        clouds = {"input": _load_cloud(args.input)}
    report = run_condition_suite(clouds, conditions, lams, dataset, cfg,
                                 block_size=args.block_size,
                                 metric_flag=args.metric, outdir=args.outdir)
    print(f"wrote report to {args.outdir}")
    for cloud_id, matrix in report.bd_matrix.items():
        for test, row in matrix.items():
            cells = ", ".join(
                f"{ref}:{'n/a' if v is None else format(v, '+.2f')}"
                for ref, v in sorted(row.items()))
            print(f"{cloud_id} {test} vs {{{cells}}}")
    return 0


_COMMANDS = {
    "voxelize": _cmd_voxelize,
    "partition-stats": _cmd_partition_stats,
    "train": _cmd_train,
    "train-seq": _cmd_train_seq,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "metrics": _cmd_metrics,
    "bdpsnr": _cmd_bdpsnr,
    "rd-sweep": _cmd_rd_sweep,
    "suite": _cmd_suite,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            _apply_config_file(args, args.config)
        return _COMMANDS[args.command](args)
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ParseError, DecodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VoxcodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
