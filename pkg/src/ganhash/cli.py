"""Command line front end: dataset prep, training, encoding, search, scoring.

Subcommands chain through files in the package's binary formats, so a
full experiment is a short shell script.  `synth` writes a toy dataset,
`neighborhood` turns features into a positive-pair file, `train` fits a
model, `encode` emits packed codes, and `search`/`eval`/`recon` consume
them.  Every command is deterministic given its inputs and flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, formats
from .config import RunConfig, load_config, save_config
from .continuation import unpack_codes
from .datatypes import ValidationError
from .evaluation import ablation_run, ablation_table, evaluate, random_code_baseline
from .neighborhood import build_neighborhood
from .networks import build_model, encode_images
from .retrieval import HammingIndex
from .synthetic import make_synthetic_dataset
from .training import train

logger = logging.getLogger(__name__)


def _shape(text: str) -> tuple:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("shape must be C,H,W")
    return parts


def _int_list(text: str) -> tuple:
    return tuple(int(p) for p in text.split(","))


def _load_model(checkpoint_path, config_path, image_shape):
    """Model from either a run directory or an explicit ckpt + config pair."""
    if os.path.isdir(checkpoint_path):
        ckpt = os.path.join(checkpoint_path, "model.ckpt")
        with open(os.path.join(checkpoint_path, "manifest.json"), "r", encoding="utf-8") as fh:
            cfg = RunConfig(
                **{
                    k: v
                    for k, v in json.load(fh)["config"].items()
                    if k not in ("format", "version")
                }
            )
    else:
        ckpt = checkpoint_path
        if config_path is None:
            raise ValidationError("--config is required when --checkpoint is a bare file")
        cfg = load_config(config_path)
    model = build_model(cfg, image_shape)
    model.load_arrays(formats.load_tensors(ckpt))
    return model, cfg


def cmd_synth(args) -> int:
    ds = make_synthetic_dataset(
        seed=args.seed, n_items=args.items, n_classes=args.classes, image_shape=args.shape
    )
    os.makedirs(args.out_dir, exist_ok=True)
    formats.save_images(ds.images, os.path.join(args.out_dir, "images.bin"))
    formats.save_features(ds.features, os.path.join(args.out_dir, "features.bin"))
    formats.save_labels(ds.labels, os.path.join(args.out_dir, "labels.json"))
    logger.info("wrote %d items to %s", ds.n, args.out_dir)
    return 0


def cmd_default_config(args) -> int:
    save_config(RunConfig(), args.out)
    return 0


def cmd_neighborhood(args) -> int:
    fs = formats.load_features(args.features)
    s = build_neighborhood(fs, args.k1, args.k2)
    formats.save_neighborhood(s, args.out)
    logger.info("%d items, %d positive pairs", s.n, len(s.positive_pairs))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    images = formats.load_images(args.images)
    s = formats.load_neighborhood(args.neighborhood)
    result = train(cfg, images, s, out_dir=args.out_dir)
    last = result.rows[-1]
    logger.info(
        "finished after %d epochs (converged=%s), final total %.6f",
        len(result.rows),
        result.converged,
        last.losses.total,
    )
    return 0


def cmd_encode(args) -> int:
    images = formats.load_images(args.images)
    model, _ = _load_model(args.checkpoint, args.config, images.shape)
    codes = encode_images(model, images, batch_size=args.batch_size)
    formats.save_codes(codes, args.out)
    logger.info("encoded %d items at %d bits", len(codes.ids), codes.n_bits)
    return 0


def cmd_search(args) -> int:
    db = formats.load_codes(args.codes)
    queries = formats.load_codes(args.query)
    if db.n_bits != queries.n_bits:
        raise ValidationError(
            f"code lengths differ: database {db.n_bits}, queries {queries.n_bits}"
        )
    index = HammingIndex(db)
    lines = ["query_id,rank,item_id,distance"]
    for qi in range(len(queries.ids)):
        top = index.top_k(queries.words[qi], args.k)
        qid = int(queries.ids[qi])
        for rank, (item, dist) in enumerate(zip(top.item_ids, top.distances), start=1):
            lines.append(f"{qid},{rank},{int(item)},{int(dist)}")
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_eval(args) -> int:
    db = formats.load_codes(args.codes)
    queries = formats.load_codes(args.query_codes)
    labels = formats.load_labels(args.labels)
    report = evaluate(
        db, queries, labels, precision_ks=args.precision_at, map_at=args.map_at
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if args.pr_csv:
        with open(args.pr_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.pr_csv())
    if args.baseline_seed is not None:
        base = random_code_baseline(
            db, queries, labels, seed=args.baseline_seed,
            precision_ks=args.precision_at, map_at=args.map_at,
        )
        logger.info("map %.4f (random-code baseline %.4f)", report.map, base.map)
    else:
        logger.info("map %.4f", report.map)
    return 0


def cmd_recon(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    images = formats.load_images(args.images)
    model, _ = _load_model(args.checkpoint, args.config, images.shape)
    n = min(args.count, images.n)
    subset = images.subset(np.arange(n))
    codes = encode_images(model, subset)
    from . import autodiff as ad

    with ad.no_grad():
        bits = unpack_codes(codes).astype(model.dtype)
        recon = model.generate(ad.Tensor(bits), training=False).data

    fig, axes = plt.subplots(2, n, figsize=(1.2 * n, 2.6), squeeze=False)
    for col in range(n):
        for row, pix in enumerate((subset.pixels[col], recon[col])):
            ax = axes[row][col]
            img = np.transpose(pix, (1, 2, 0))
            ax.imshow(img.squeeze(-1) if img.shape[-1] == 1 else img,
                      cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_axis_off()
    axes[0][0].set_title("original", fontsize=8, loc="left")
    axes[1][0].set_title("from code", fontsize=8, loc="left")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    logger.info("wrote %d original/reconstruction pairs to %s", n, args.out)
    return 0


def cmd_ablation(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    rows = ablation_run(
        cfg,
        modes=tuple(args.modes.split(",")),
        activations=tuple(args.activations.split(",")),
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        n_train=args.train_items,
        n_query=args.query_items,
        n_classes=args.classes,
        image_shape=args.shape,
    )
    table = ablation_table(rows)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(table)
    for line in table.strip().split("\n"):
        logger.info("%s", line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganhash", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"ganhash {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="write a synthetic labeled dataset")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--items", type=int, default=660)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--shape", type=_shape, default=(1, 16, 16))
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(run=cmd_synth)

    sp = sub.add_parser("default-config", help="write the stock run configuration")
    sp.add_argument("--out", required=True)
    sp.set_defaults(run=cmd_default_config)

    sp = sub.add_parser("neighborhood", help="build the positive-pair matrix from features")
    sp.add_argument("--features", required=True)
    sp.add_argument("--k1", type=int, default=20)
    sp.add_argument("--k2", type=int, default=30)
    sp.add_argument("--out", required=True)
    sp.set_defaults(run=cmd_neighborhood)

    sp = sub.add_parser("train", help="fit the model and write run artifacts")
    sp.add_argument("--config", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--neighborhood", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(run=cmd_train)

    sp = sub.add_parser("encode", help="emit packed binary codes for an image file")
    sp.add_argument("--checkpoint", required=True, help="run directory or model.ckpt file")
    sp.add_argument("--config", default=None, help="needed when --checkpoint is a bare file")
    sp.add_argument("--images", required=True)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--out", required=True)
    sp.set_defaults(run=cmd_encode)

    sp = sub.add_parser("search", help="rank a code database against query codes")
    sp.add_argument("--codes", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(run=cmd_search)

    sp = sub.add_parser("eval", help="score retrieval quality against labels")
    sp.add_argument("--codes", required=True)
    sp.add_argument("--query-codes", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pr-csv", default=None)
    sp.add_argument("--map-at", type=int, default=None)
    sp.add_argument("--precision-at", type=_int_list, default=(1, 5, 10))
    sp.add_argument("--baseline-seed", type=int, default=None)
    sp.set_defaults(run=cmd_eval)

    sp = sub.add_parser("recon", help="save an original/reconstruction image grid")
    sp.add_argument("--checkpoint", required=True, help="run directory or model.ckpt file")
    sp.add_argument("--config", default=None)
    sp.add_argument("--images", required=True)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--out", required=True)
    sp.set_defaults(run=cmd_recon)

    sp = sub.add_parser("ablation", help="train a grid of loss/surrogate variants")
    sp.add_argument("--config", default=None)
    sp.add_argument("--modes", default="pair_only,full")
    sp.add_argument("--activations", default="app")
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--train-items", type=int, default=600)
    sp.add_argument("--query-items", type=int, default=60)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--shape", type=_shape, default=(1, 16, 16))
    sp.add_argument("--out", required=True)
    sp.set_defaults(run=cmd_ablation)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.run(args)
    except (ValidationError, formats.FormatError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
