"""Command-line entry points: gen-data, train, eval, ablate, render."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, harness, metrics, training


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().replace("x", " ").split())
        return h, w
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def _cmd_gen_data(args) -> int:
    corpus = data.generate_synthetic_corpus(args.n_source, args.n_target,
                                            args.dims, args.seed)
    corpus.save(args.out)
    print(f"wrote {len(corpus)} samples ({args.n_source} source, "
          f"{args.n_target} target) at {args.dims[0]}x{args.dims[1]} to {args.out}")
    return 0


def _load_config(path: str | None) -> training.TrainConfig:
    if path is None:
        return training.desk_config()
    with open(path) as f:
        return training.TrainConfig.from_json(f.read())


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    corpus = data.load_corpus(args.data)
    result = training.train(config, corpus, out_dir=args.out)
    last_gen = next(r for r in reversed(result.log) if r.get("pass") == "gen")
    print(f"trained {config.epochs} epochs; final generator loss "
          f"{last_gen['l_g_total']:.4f}; checkpoint at {result.checkpoint_path}")
    return 0


def _select_eval_samples(corpus: data.Corpus, domain: str) -> list:
    if domain == "source":
        return corpus.source_samples()
    if domain == "target":
        return corpus.target_samples()
    return corpus.source_samples() + corpus.target_samples()


def _cmd_eval(args) -> int:
    generator, _, config, _ = training.load_checkpoint(args.checkpoint)
    corpus = data.load_corpus(args.data)
    samples = _select_eval_samples(corpus, args.domain)
    layouts = harness.predict_layouts(generator, samples,
                                      score_threshold=args.score_threshold
                                      if args.score_threshold is not None
                                      else config.score_threshold)
    report = metrics.evaluate_corpus(layouts, samples)
    print(metrics.format_report_table({"checkpoint": report}))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as f:
            f.write(report.to_json() + "\n")
        print(f"report written to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    base = _load_config(args.config)
    corpus = data.load_corpus(args.data)
    suite = harness.build_suite(args.axis, base,
                                image_dims=corpus.manifest.image_dims,
                                trials=args.trials)
    eval_samples = _select_eval_samples(corpus, args.domain)
    rows = harness.run_ablation(suite, corpus, eval_samples, out_dir=args.out)
    print(harness.format_ablation_table(rows))
    return 0


def _cmd_render(args) -> int:
    from PIL import Image

    generator, _, config, _ = training.load_checkpoint(args.checkpoint)
    image = np.asarray(Image.open(args.image).convert("RGB"),
                       dtype=np.float32) / np.float32(255.0)
    if args.saliency:
        saliency = data._load_gray_png(Path(args.saliency))
    else:
        # No saliency supplied: fall back to a smoothed gradient-magnitude proxy.
        from scipy import ndimage

        saliency = ndimage.gaussian_filter(
            metrics.gradient_magnitude_map(image).astype(np.float64),
            sigma=min(image.shape[:2]) / 16.0)
        peak = saliency.max()
        saliency = (saliency / peak if peak > 0 else saliency).astype(np.float32)
    sample = data.DomainSample(image=image, saliency=saliency,
                               product_mask=np.zeros(image.shape[:2], np.float32),
                               domain=data.DOMAIN_TARGET,
                               white_patch=np.zeros(image.shape[:2], np.float32),
                               gt_layout=None, sample_id="render")
    layout = harness.predict_layouts(generator, [sample],
                                     score_threshold=config.score_threshold)[0]
    harness.save_render(args.out, image, layout)
    print(f"{len(layout)} elements rendered to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adlayout",
        description="Image-aware graphic layout generation with a "
                    "pixel-level domain-adversarial GAN")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a two-domain corpus")
    p.add_argument("--n-source", type=int, required=True)
    p.add_argument("--n-target", type=int, required=True)
    p.add_argument("--dims", type=_parse_dims, default=(64, 64),
                   help="image dims as HxW (default 64x64)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated corpus")
    p.add_argument("--config", help="TrainConfig JSON (default: desk preset)")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target", "all"),
                   default="target")
    p.add_argument("--score-threshold", type=float, default=None)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation axis")
    p.add_argument("--axis", required=True, choices=harness.ABLATION_AXES)
    p.add_argument("--config", help="base TrainConfig JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target", "all"),
                   default="target")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("render", help="draw a predicted layout over an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--saliency", help="optional saliency PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
