"""Command-line surface.

Subcommands mirror the pipeline: ``pd`` (diagram of an image), ``dist``
(bottleneck report between two diagram files), ``calibrate`` (build an
augmentation table from an image directory), ``augment`` (apply a
calibrated band or explicit ops), ``encode`` (diagram -> 256-vector),
``embed`` (image -> fused embedding via a checkpoint bundle),
``gen-corpus`` (synthetic shapes), ``train-toy`` (full staged training),
``probe`` (linear probe of a finished run), and ``ttest`` (paired t-test
of two score files).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .augment import (
    AugmentationCombo,
    AugmentationOp,
    CalibrationTable,
    OpRange,
    apply_ops,
    calibrate,
    default_combo_templates,
    sample_view_pair,
)
from .corpus import CorpusConfig, generate_corpus
from .cubical import read_pd_csv, restrict_and_compute, write_pd_csv
from .encoder import EncoderConfig, TopoEncoder, select_points, stack_points
from .fusion import infer_single, load_bundle
from .image import RoiMask, extract_roi, load_image, save_image
from .metrics import relative_bottleneck_report
from .nn import ParameterSet, load_tensors, no_grad
from .probe import linear_probe
from .rng import Stream
from .stats import paired_ttest
from .train import (
    TrainConfig,
    embed_corpus,
    prepare_data,
    save_run,
    train_pipeline,
)

__all__ = ["main"]


def _load_corpus_dir(directory: Path):
    """Images (+labels when a manifest is present) from a directory."""
    manifest = directory / "manifest.csv"
    images, labels = [], []
    if manifest.exists():
        for line in manifest.read_text().strip().splitlines()[1:]:
            name, label = line.split(",")
            images.append(load_image(directory / name))
            labels.append(int(label))
    else:
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() in (".pgm", ".png"):
                images.append(load_image(path))
                labels.append(-1)
    if not images:
        raise SystemExit(f"no images found in {directory}")
    return images, np.array(labels)


def _roi_for(img, spec: str):
    if spec == "otsu":
        return extract_roi(img)
    if spec == "none":
        return RoiMask.full(img.height, img.width)
    return extract_roi(img, method="external-mask", mask_path=spec)


def _parse_ops(text: str):
    ops = []
    for part in text.split(","):
        part = part.strip()
        if "=" in part:
            kind, value = part.split("=")
            num = float(value)
            if kind in ("rot90", "dilate", "erode"):
                num = int(num)
            ops.append(AugmentationOp(kind, num))
        else:
            ops.append(AugmentationOp(part))
    return tuple(ops)


def _write_vector(vec: np.ndarray, path: Path):
    path.write_text("\n".join(f"{v:.9f}" for v in vec) + "\n")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_pd(args):
    img = load_image(args.img, args.format)
    roi = _roi_for(img, args.roi)
    pd = restrict_and_compute(img, roi)
    write_pd_csv(pd, args.out)
    print(f"wrote {args.out}: {len(pd.dim0)} H0 pairs, {len(pd.dim1)} H1 pairs")


def cmd_dist(args):
    pd_a = read_pd_csv(args.a)
    pd_b = read_pd_csv(args.b)
    report = relative_bottleneck_report(pd_a, pd_b)
    print("dim,d_B,span,ratio,max_ratio")
    for dim in (0, 1):
        row = report[dim]
        print(f"{dim},{row['d_b']:.9f},{row['span']:.9f},{row['ratio']:.9f},"
              f"{report['max_ratio']:.9f}")


def cmd_calibrate(args):
    images, _ = _load_corpus_dir(Path(args.corpus))
    items = []
    for img in images:
        items.append((img, _roi_for(img, args.roi)))
    if args.combos:
        spec = json.loads(Path(args.combos).read_text())
        combos = [AugmentationCombo(tuple(
            OpRange(o["kind"], o.get("lo", 0.0), o.get("hi", 0.0)) for o in c["ops"]))
            for c in spec]
    else:
        combos = default_combo_templates()
    table = calibrate(items, combos, grid=args.grid, m_samples=args.samples,
                      stream=Stream(key=args.seed), dataset=Path(args.corpus).name)
    table.save(args.out)
    print(f"wrote {args.out}: {len(table.entries)} calibrated band entries")


def cmd_augment(args):
    img = load_image(args.img)
    if args.table:
        table = CalibrationTable.load(args.table)
        weak, strong, ops_w, ops_s = sample_view_pair(img, table, Stream(key=args.seed))
        out = weak if args.band == "weak" else strong
        ops = ops_w if args.band == "weak" else ops_s
    elif args.ops:
        ops = _parse_ops(args.ops)
        out = apply_ops(img, ops, Stream(key=args.seed))
    else:
        raise SystemExit("augment needs either --table or --ops")
    save_image(out, args.out)
    print(f"wrote {args.out} after " + ", ".join(
        f"{o.kind}={o.param}" if o.param is not None else o.kind for o in ops))


def cmd_encode(args):
    pd = read_pd_csv(args.pd)
    ckpt = Path(args.ckpt)
    if ckpt.is_dir():
        bundle = load_bundle(ckpt)
        encoder = bundle.topo_encoder
        config = bundle.encoder_config
    else:
        arrays, meta = load_tensors(ckpt)
        config = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in meta.get("encoder_config", {}).items()})
        params = ParameterSet()
        encoder = TopoEncoder(params, Stream(key=0), config)
        params.load_arrays(arrays)
    sel = select_points(pd, config.k_h0, config.k_h1)
    with no_grad():
        pts, valid = stack_points([sel])
        t = encoder(pts, valid).data[0]
    _write_vector(t, Path(args.out))
    print(f"wrote {args.out}: {t.shape[0]}-d topology feature")


def cmd_embed(args):
    bundle = load_bundle(args.ckpt)
    img = load_image(args.img)
    if args.roi == "none":
        from .fusion import infer_batch

        z = infer_batch(bundle, [img], rois=[RoiMask.full(img.height, img.width)])[0]
    elif args.roi == "otsu":
        z = infer_single(img, bundle)
    else:
        z = infer_single(img, bundle, roi_method="external-mask", mask_path=args.roi)
    _write_vector(z, Path(args.out))
    print(f"wrote {args.out}: {z.shape[0]}-d fused embedding")


def cmd_gen_corpus(args):
    cfg = CorpusConfig(n_per_class=args.n_per_class, size=args.size,
                       noise_sigma=args.noise, seed=args.seed)
    corpus = generate_corpus(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["filename,label"]
    for i, (img, label) in enumerate(zip(corpus.images, corpus.labels)):
        name = f"img_{i:05d}_c{label}.pgm"
        save_image(img, out / name, "pgm-binary")
        lines.append(f"{name},{label}")
    (out / "manifest.csv").write_text("\n".join(lines) + "\n")
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    print(f"wrote {len(corpus.images)} images to {out}")


def _train_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        for key in ("encoder", "fusion", "visual"):
            if key in overrides:
                raise SystemExit(f"nested {key} config is not supported via JSON")
    cfg = TrainConfig(**overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train_toy(args):
    cfg = _train_config(args)
    out = Path(args.out)
    result = train_pipeline(cfg)
    save_run(result, out)
    probes = {}
    for which in ("encoders", "topo", "visual"):
        z = embed_corpus(result, which)
        labels = result.data.corpus.labels
        train_idx, test_idx = result.data.corpus.split(0.5, Stream(key=17))
        probes[which] = linear_probe(z[train_idx], labels[train_idx],
                                     z[test_idx], labels[test_idx]).accuracy
    (out / "probe.json").write_text(json.dumps(probes, indent=2) + "\n")
    print(f"run saved to {out}; probe accuracies: " +
          " ".join(f"{k}={v:.3f}" for k, v in probes.items()))


def cmd_probe(args):
    run_dir = Path(args.run)
    overrides = json.loads((run_dir / "config.json").read_text())
    for key in ("encoder", "fusion", "visual"):
        overrides.pop(key, None)
    cfg = TrainConfig(**overrides)
    table = CalibrationTable.load(run_dir / "calibration.json")
    data = prepare_data(cfg, table=table)
    result = train_pipeline(cfg, data=data, stages=())
    from .fusion import load_bundle as _lb
    bundle = _lb(run_dir / "bundle")
    result.bundle.visual_params.load_arrays(bundle.visual_params.state_arrays())
    result.bundle.topo_params.load_arrays(bundle.topo_params.state_arrays())
    result.bundle.fusion_params.load_arrays(bundle.fusion_params.state_arrays())
    z = embed_corpus(result, args.which)
    labels = data.corpus.labels
    train_idx, test_idx = data.corpus.split(args.train_fraction, Stream(key=17))
    res = linear_probe(z[train_idx], labels[train_idx], z[test_idx], labels[test_idx])
    payload = {"which": args.which, "accuracy": res.accuracy,
               "per_class": res.per_class, "n_train": res.n_train, "n_test": res.n_test}
    out = Path(args.out) if args.out else run_dir / f"probe_{args.which}.json"
    out.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"probe[{args.which}] accuracy {res.accuracy:.4f} -> {out}")


def cmd_ttest(args):
    def read_scores(path):
        return [float(line) for line in Path(path).read_text().split() if line.strip()]

    result = paired_ttest(read_scores(args.a), read_scores(args.b))
    if result.degenerate:
        print("t=nan p=nan (degenerate: zero-variance differences)")
    else:
        print(f"t={result.t:.6f} p={result.p:.6g} dof={result.dof}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topofuse",
                                     description="topology-aware contrastive learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pd", help="persistence diagram of an image")
    p.add_argument("--img", required=True)
    p.add_argument("--format", choices=["pgm-ascii", "pgm-binary", "png-gray8"])
    p.add_argument("--roi", default="otsu",
                   help="'otsu', 'none', or a mask PGM path")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pd)

    p = sub.add_parser("dist", help="bottleneck report between two diagram files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=cmd_dist)

    p = sub.add_parser("calibrate", help="calibrate augmentation bands on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--combos", help="JSON combo templates (default: built-ins)")
    p.add_argument("--grid", type=int, default=17)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--roi", default="otsu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("augment", help="apply calibrated or explicit augmentations")
    p.add_argument("--img", required=True)
    p.add_argument("--table")
    p.add_argument("--band", choices=["weak", "strong"], default="weak")
    p.add_argument("--ops", help="e.g. 'hflip,gaussian_noise=0.1'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("encode", help="encode a diagram file to a topology feature")
    p.add_argument("--pd", required=True)
    p.add_argument("--ckpt", required=True, help="bundle dir or topo params file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("embed", help="fused embedding of an image via a bundle")
    p.add_argument("--img", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint bundle directory")
    p.add_argument("--roi", default="otsu")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("gen-corpus", help="generate the synthetic shape corpus")
    p.add_argument("--n-per-class", type=int, default=300)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.04)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train-toy", help="run the staged training pipeline")
    p.add_argument("--config", help="JSON overrides for the training config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("probe", help="linear-probe a finished training run")
    p.add_argument("--run", required=True)
    p.add_argument("--which", default="encoders",
                   choices=["encoders", "fused", "final", "visual", "topo"])
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("ttest", help="paired t-test between two score files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=cmd_ttest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
