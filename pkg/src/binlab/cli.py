"""Command-line entry points: train, synthesize, binarize, evaluate, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset, imaging, metrics
from .classical import SauvolaParams, otsu, sauvola
from .errors import DataError, NumericsError, UsageError

ENV_DATA_ROOT = "BINLAB_DATA_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="binlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-data", help="generate a synthetic clean/degraded corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--noise-level", type=float, default=1.0)
    p.add_argument("--name", default="toy")

    p = sub.add_parser("train", help="run the staged training schedule")
    p.add_argument("--config", default=None, help="JSON file mirroring TrainConfig")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--stages", default="1,2,3,4", help="comma-separated stage ids")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--data-root", default=None)
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")

    p = sub.add_parser("synthesize", help="apply the texture generator to a clean page")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--degraded", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("binarize", help="binarize an image with a checkpoint or classical method")
    p.add_argument("input")
    p.add_argument("--method", default=None, help="otsu or sauvola")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--k", type=float, default=0.2)
    p.add_argument("--r", type=float, default=0.5)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="combine metrics files and a loss log")
    p.add_argument("--metrics", action="append", default=[], metavar="LABEL=CSV")
    p.add_argument("--loss-log", default=None)
    p.add_argument("--out", required=True)
    return parser


def _parse_extras(extras: list[str]) -> dict[str, str]:
    """Turn leftover ``--dotted.key value`` tokens into overrides."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise UsageError(f"unexpected argument: {token}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extras):
                raise UsageError(f"missing value for {token}")
            value = extras[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def _parse_stages(text: str) -> tuple[int, ...]:
    try:
        stages = tuple(int(part) for part in text.split(",") if part)
    except ValueError as exc:
        raise UsageError(f"bad --stages value: {text!r}") from exc
    if not stages or any(s not in (1, 2, 3, 4) for s in stages):
        raise UsageError(f"stages must be within 1..4, got {text!r}")
    if list(stages) != sorted(stages):
        raise UsageError("stages must be given in increasing order")
    return stages


def cmd_toy_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    manifest = dataset.synth_toy_corpus(
        args.out, args.n, rng, image_size=args.size,
        noise_level=args.noise_level, name=args.name,
    )
    manifest.save(os.path.join(args.out, "manifest.json"))
    print(f"wrote {args.n} image pair(s) under {args.out}")
    return 0


def _load_train_config(args, overrides: dict[str, str]):
    from .trainer import apply_overrides, config_from_dict, config_to_dict

    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config file is not valid JSON: {exc}") from exc
    else:
        data = {}
    sets = dict(overrides)
    for item in args.sets:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        sets[key] = value
    if args.seed is not None:
        sets["seed"] = str(args.seed)
    merged = apply_overrides(config_to_dict(config_from_dict(data)), sets)
    return config_from_dict(merged)


def cmd_train(args, overrides: dict[str, str]) -> int:
    from . import trainer

    config = _load_train_config(args, overrides)
    stages = _parse_stages(args.stages)

    data_root = args.data_root or os.environ.get(ENV_DATA_ROOT)
    if not data_root:
        raise UsageError(
            f"no data root given: pass --data-root or set {ENV_DATA_ROOT}"
        )
    manifest_path = os.path.join(data_root, "manifest.json")
    if os.path.exists(manifest_path):
        manifest = dataset.DatasetManifest.load(manifest_path)
    else:
        manifest = dataset.build_manifest(data_root)

    os.makedirs(args.out, exist_ok=True)
    effective = {
        "command": "train",
        "config_file": args.config,
        "overrides": overrides,
        "set": list(args.sets),
        "stages": list(stages),
        "seed": config.seed,
        "out": args.out,
        "data_root": data_root,
        "train_config": trainer.config_to_dict(config),
    }
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(effective, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if args.resume:
        state = trainer.load_checkpoint(args.resume, out_dir=args.out)
    else:
        state = trainer.init_state(config, out_dir=args.out)
    trainer.run_stages(state, manifest, stages)
    print(f"finished stages {','.join(map(str, stages))}; checkpoints under {args.out}")
    return 0


def _tiled_apply(fn, gray: np.ndarray, patch_size: int) -> np.ndarray:
    """Run a patch-level function over a whole image and stitch the result."""
    h, w = gray.shape
    padded = imaging.pad_to_min(gray, patch_size, patch_size)
    patches, grid = imaging.extract_patches(padded, patch_size, patch_size)
    outputs = [fn(p) for p in patches]
    stitched = imaging.stitch_patches(outputs, grid)
    return stitched[:h, :w]


def _load_nets_for_inference(checkpoint: str):
    from . import trainer

    state = trainer.load_checkpoint(checkpoint)
    for net in state.nets.values():
        net.eval()
    return state


def cmd_synthesize(args) -> int:
    from .networks import from_tensor, to_tensor

    state = _load_nets_for_inference(args.checkpoint)
    patch = state.config.patch_size
    texture_gen = state.nets["t"]

    clean = imaging.to_grayscale(imaging.load_image(args.clean))
    degraded = imaging.to_grayscale(imaging.load_image(args.degraded))
    degraded = imaging.pad_to_min(degraded, patch, patch)
    ref_patches, _ = imaging.extract_patches(degraded, patch, patch)

    counter = {"i": 0}

    def run(patch_img: np.ndarray) -> np.ndarray:
        ref = ref_patches[counter["i"] % len(ref_patches)]
        counter["i"] += 1
        import torch

        with torch.no_grad():
            generated, _, _ = texture_gen(to_tensor(patch_img), to_tensor(ref))
        return from_tensor(generated)

    out = _tiled_apply(run, clean, patch)
    imaging.save_image(args.out, out)
    print(f"wrote {args.out}")
    return 0


def cmd_binarize(args) -> int:
    if bool(args.method) == bool(args.checkpoint):
        raise UsageError("give exactly one of --method or --checkpoint")
    gray = imaging.to_grayscale(imaging.load_image(args.input))
    if args.method:
        if args.method == "otsu":
            _, binary = otsu(gray)
        elif args.method == "sauvola":
            binary = sauvola(gray, SauvolaParams(window=args.window, k=args.k, r=args.r))
        else:
            raise UsageError(f"unknown method {args.method!r}, expected otsu or sauvola")
    else:
        import torch

        from .networks import from_tensor, to_tensor

        state = _load_nets_for_inference(args.checkpoint)
        binarizer = state.nets["f"]
        patch = state.config.patch_size

        def run(patch_img: np.ndarray) -> np.ndarray:
            with torch.no_grad():
                return from_tensor(binarizer(to_tensor(patch_img)))

        soft = _tiled_apply(run, gray, patch)
        binary = imaging.threshold_output(soft, args.threshold)
    out = args.out or os.path.splitext(args.input)[0] + "_bin.png"
    imaging.save_binary(out, binary)
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    report = metrics.evaluate_dataset(args.pred, args.gt)
    table = metrics.format_table(report)
    print(table, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        metrics.write_csv(report, os.path.join(args.out, "metrics.csv"))
        with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
    return 0


def _read_metrics_mean(path: str) -> dict[str, float]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except FileNotFoundError as exc:
        raise DataError(f"metrics file not found: {path}") from exc
    header = lines[0].split(",")
    expected = ["image", "f", "f_ps", "psnr", "drd"]
    if header != expected:
        raise DataError(f"unexpected metrics columns in {path}: {header}")
    for line in lines[1:]:
        cells = line.split(",")
        if cells[0] == "mean":
            return dict(zip(expected[1:], map(float, cells[1:])))
    raise DataError(f"no mean row in {path}")


def cmd_report(args) -> int:
    if not args.metrics:
        raise UsageError("report needs at least one --metrics LABEL=CSV")
    rows = []
    for item in args.metrics:
        if "=" not in item:
            raise UsageError(f"--metrics expects LABEL=CSV, got {item!r}")
        label, path = item.split("=", 1)
        rows.append((label, _read_metrics_mean(path)))

    os.makedirs(args.out, exist_ok=True)
    name_width = max(len("Method"), max(len(label) for label, _ in rows))
    columns = metrics.METRIC_COLUMNS
    lines = [
        f"{'Method':<{name_width}}  " + "  ".join(f"{c:>9}" for c in columns)
    ]
    lines.append("-" * len(lines[0]))
    for label, means in rows:
        lines.append(
            f"{label:<{name_width}}  "
            f"{means['f']:>9.2f}  {means['f_ps']:>9.2f}  "
            f"{means['psnr']:>9.2f}  {means['drd']:>9.2f}"
        )
    table = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "comparison.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table)
    with open(os.path.join(args.out, "comparison.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,f,f_ps,psnr,drd\n")
        for label, means in rows:
            fh.write(
                f"{label},{means['f']:.6f},{means['f_ps']:.6f},"
                f"{means['psnr']:.6f},{means['drd']:.6f}\n"
            )
    print(table, end="")

    if args.loss_log:
        skipped = _write_loss_curves(args.loss_log, args.out)
        if skipped:
            print(f"skipped {skipped} malformed loss-log line(s)", file=sys.stderr)
    return 0


def _write_loss_curves(log_path: str, out_dir: str) -> int:
    """Emit one x-y series file per loss name; returns skipped line count."""
    series: dict[str, list[tuple[int, float]]] = {}
    skipped = 0
    try:
        with open(log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    series.setdefault(record["loss"], []).append(
                        (int(record["step"]), float(record["value"]))
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    skipped += 1
    except FileNotFoundError as exc:
        raise DataError(f"loss log not found: {log_path}") from exc
    if not series:
        raise DataError(f"loss log has no readable records: {log_path}")
    curves_dir = os.path.join(out_dir, "curves")
    os.makedirs(curves_dir, exist_ok=True)
    for name in sorted(series):
        with open(
            os.path.join(curves_dir, f"{name}.csv"), "w", encoding="utf-8", newline="\n"
        ) as fh:
            fh.write("step,value\n")
            for step, value in series[name]:
                fh.write(f"{step},{value}\n")
    return skipped


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if args.command == "train":
            overrides = _parse_extras(extras)
            return cmd_train(args, overrides)
        if extras:
            raise UsageError(f"unexpected arguments: {extras}")
        if args.command == "toy-data":
            return cmd_toy_data(args)
        if args.command == "synthesize":
            return cmd_synthesize(args)
        if args.command == "binarize":
            return cmd_binarize(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "report":
            return cmd_report(args)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
