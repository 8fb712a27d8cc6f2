"""Command line entry point: ``skipdepth {train,infer,eval,check}``.

Exit codes: 0 success, 1 check or evaluation failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import tensor as T
from .checks import format_report, run_checks
from .data import pad_image, read_list_file
from .errors import CheckpointError, ConfigError, ContractError, FormatError, NumericInputError, RangeError
from .fileio import DEPTH_SUFFIX, read_depth, read_image, write_depth
from .metrics import MetricReport, eval_metrics, pooled_metrics
from .model import DepthModel, load_model

log = logging.getLogger("skipdepth")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


# ------------------------------------------------------------------------ train


def cmd_train(cfg: config_mod.RunConfig, out_dir=None, figures: bool = True):
    from .plots import loss_curve
    from .train import train

    result = train(cfg, out_dir=out_dir)
    out = result.log_path.parent
    (out / "config.ini").write_text(config_mod.render(cfg), encoding="utf-8")
    if figures and result.losses:
        loss_curve(range(1, len(result.losses) + 1), result.losses, result.lrs, out / "loss_curve.png")
    return result


# ------------------------------------------------------------------------ infer


def predict_depth(model: DepthModel, image: np.ndarray, flip_average: bool = False) -> np.ndarray:
    """Depth at the image's own resolution; optionally averaged with the mirrored prediction."""
    h, w = image.shape[:2]

    def once(img):
        with T.no_grad():
            return model.predict_full(pad_image(img)).data[:h, :w]

    depth = once(image)
    if flip_average:
        depth = 0.5 * (depth + once(image[:, ::-1])[:, ::-1])
    return depth


def cmd_infer(checkpoint, images, out_dir, flip_average: bool = False, fmt: str = "pfm", precision: str = "f32", figures: bool = False):
    from .plots import depth_preview

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with T.precision(precision):
        model, _ = load_model(checkpoint)
        for path in images:
            image = read_image(path)
            depth = predict_depth(model, image, flip_average)
            target = out / (Path(path).stem + DEPTH_SUFFIX[fmt])
            write_depth(target, depth, fmt)
            if figures:
                depth_preview(image, depth, out / f"{Path(path).stem}_preview.png", vmax=model.config.d_max)
            written.append(target)
    return written


# ------------------------------------------------------------------------- eval


@dataclass
class EvalResult:
    per_sample: dict[str, MetricReport] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    aggregate: MetricReport | None = None
    unmatched_gt: list[str] = field(default_factory=list)
    unmatched_pred: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.errors or self.unmatched_gt or self.unmatched_pred) and self.aggregate is not None


def _find_prediction(pred_dir: Path, sample_id: str) -> Path | None:
    for suffix in (".pfm", ".png"):
        candidate = pred_dir / f"{sample_id}{suffix}"
        if candidate.exists():
            return candidate
    return None


def cmd_eval(pred_dir, gt_list, d_min: float = 1e-3, d_max: float = 10.0, crop=None) -> EvalResult:
    """Per-sample metrics plus a pixel-pooled aggregate over every evaluable sample."""
    pred_dir = Path(pred_dir)
    result = EvalResult()
    pooled = []
    seen = set()
    for _, depth_path in read_list_file(gt_list):
        sample_id = Path(depth_path).stem
        seen.add(sample_id)
        pred_path = _find_prediction(pred_dir, sample_id)
        if pred_path is None:
            result.unmatched_gt.append(sample_id)
            continue
        gt = read_depth(depth_path)
        pred = read_depth(pred_path)
        mask = np.isfinite(gt) & (gt > 0) & (gt <= d_max)
        try:
            if pred.shape != gt.shape:
                raise ContractError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
            result.per_sample[sample_id] = eval_metrics(pred, gt, mask, d_min, d_max, crop)
            pooled.append((pred, gt, mask))
        except (ContractError, NumericInputError) as exc:
            result.errors[sample_id] = str(exc)
    result.unmatched_pred = sorted(p.stem for p in pred_dir.iterdir() if p.suffix in (".pfm", ".png") and p.stem not in seen and not p.stem.endswith("_preview"))
    if pooled:
        result.aggregate = pooled_metrics(pooled, d_min, d_max, crop)
    return result


def render_eval(result: EvalResult, d_min: float, d_max: float, crop) -> str:
    lines = ["# depth evaluation report", f"range = {d_min} {d_max}", f"crop = {'none' if crop is None else ' '.join(map(str, crop))}", ""]
    for sample_id, rep in result.per_sample.items():
        lines.append(f"[sample {sample_id}]")
        lines.extend(f"{k} = {v}" for k, v in rep.as_dict().items())
        lines.append("")
    for sample_id, msg in result.errors.items():
        lines += [f"[sample {sample_id}]", f"error = {msg}", ""]
    if result.unmatched_gt or result.unmatched_pred:
        lines.append("[unmatched]")
        lines.append(f"missing_predictions = {' '.join(result.unmatched_gt) or '-'}")
        lines.append(f"missing_ground_truth = {' '.join(result.unmatched_pred) or '-'}")
        lines.append("")
    lines.append("[aggregate]")
    if result.aggregate is not None:
        lines.extend(f"{k} = {v}" for k, v in result.aggregate.as_dict().items())
    else:
        lines.append("error = no evaluable samples")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------------ parser


def _crop(text: str):
    try:
        values = tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError("crop must be four integers: top,bottom,left,right") from None
    if len(values) != 4:
        raise argparse.ArgumentTypeError("crop must be four integers: top,bottom,left,right")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skipdepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on synthetic scenes or a list file")
    p.add_argument("--config", type=Path)
    p.add_argument("--preset", choices=sorted(config_mod.PRESETS), default="toy")
    p.add_argument("--out", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--precision", choices=["f32", "f64"])
    p.add_argument("--fusion", choices=["sam", "add_conv", "cat_conv"])
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("infer", help="predict depth maps for images")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("predictions"))
    p.add_argument("--flip-average", action="store_true")
    p.add_argument("--format", choices=["pfm", "png16"], default="pfm")
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--figures", action="store_true", help="also write image/depth preview PNGs")

    p = sub.add_parser("eval", help="score predicted depth maps against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="directory of <id>.pfm / <id>.png predictions")
    p.add_argument("--gt", type=Path, required=True, help="list file of 'image_path depth_path' lines")
    p.add_argument("--crop", type=_crop, help="top,bottom,left,right in pixels")
    p.add_argument("--d-min", type=float, default=1e-3)
    p.add_argument("--d-max", type=float, default=10.0)
    p.add_argument("--out", type=Path, help="write report.txt, summary.txt and metrics.png here")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("check", help="run the self-verification suite")
    p.add_argument("--level", choices=["fast", "full"], default="fast")
    return parser


def _train_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config, args.preset) if args.config else config_mod.PRESETS[args.preset]
    train_updates = {k: v for k, v in (("seed", args.seed), ("steps", args.steps), ("precision", args.precision)) if v is not None}
    cfg = replace(cfg, train=replace(cfg.train, **train_updates))
    if args.fusion:
        cfg = replace(cfg, model=replace(cfg.model, fusion=args.fusion))
    if args.out:
        cfg = replace(cfg, io=replace(cfg.io, out_dir=str(args.out)))
    if args.checkpoint:
        cfg = replace(cfg, io=replace(cfg.io, checkpoint=str(args.checkpoint)))
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            result = cmd_train(_train_config(args), figures=not args.no_figures)
            if result.losses:
                print(f"steps={len(result.losses)} first_loss={result.losses[0]:.6f} final_loss={result.losses[-1]:.6f}")
            print(f"checkpoint={result.checkpoint} log={result.log_path}")
            return EXIT_OK
        if args.command == "infer":
            written = cmd_infer(args.checkpoint, args.images, args.out, args.flip_average, args.format, args.precision, args.figures)
            for path in written:
                print(path)
            return EXIT_OK
        if args.command == "eval":
            result = cmd_eval(args.pred, args.gt, args.d_min, args.d_max, args.crop)
            report = render_eval(result, args.d_min, args.d_max, args.crop)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "report.txt").write_text(report, encoding="utf-8")
                if result.aggregate is not None:
                    (args.out / "summary.txt").write_text(result.aggregate.summary_line() + "\n", encoding="utf-8")
                if result.per_sample and not args.no_figures:
                    from .plots import metric_bars

                    ids = list(result.per_sample)
                    metric_bars(ids, [r.abs_rel for r in result.per_sample.values()], [r.delta1 for r in result.per_sample.values()], args.out / "metrics.png")
            else:
                sys.stdout.write(report)
            for sample_id, msg in result.errors.items():
                print(f"error {sample_id}: {msg}", file=sys.stderr)
            if result.unmatched_gt:
                print("no prediction for: " + " ".join(result.unmatched_gt), file=sys.stderr)
            if result.unmatched_pred:
                print("no ground truth for: " + " ".join(result.unmatched_pred), file=sys.stderr)
            if result.aggregate is not None:
                print(result.aggregate.summary_line())
            return EXIT_OK if result.ok else EXIT_FAIL
        if args.command == "check":
            results = run_checks(args.level)
            print(format_report(results))
            return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, RangeError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
