"""Command-line interface.

Exit codes: 0 success, 2 invalid input (flags, files, manifest, config),
3 failure while running. Results go to stdout or --out; diagnostics go to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path


from . import __version__
from .dataset_io import ManifestError, PgmError, format_manifest, load_manifest, load_pgm, make_split
from .evaluation import parse_policy, select_threshold
from .pipeline import (BundleError, ModelBundle, PipelineConfig, PipelineError, calibrate_and_test,
                       evaluate, fit, fit_images, verify)
from .synthetic import make_subjects, write_dataset

log = logging.getLogger("mvface")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
BENCH_STAGES = ("gabor", "pca_fit", "cc_fit", "fusion_fit", "svm_train", "verify")


class InvalidInput(Exception):
    pass


def _existing_file(path, what):
    if path is None:
        raise InvalidInput(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InvalidInput(f"{what} file not found: {p}")
    return p


def _existing_dir(path, what):
    if path is None:
        raise InvalidInput(f"--{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise InvalidInput(f"{what} directory not found: {p}")
    return p


def _load_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.load(_existing_file(args.config, "config")) if args.config else PipelineConfig()
        if getattr(args, "seed", None) is not None:
            cfg = cfg.replace(seed=args.seed)
        return cfg
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc


def _load_manifest(path):
    try:
        return load_manifest(_existing_file(path, "manifest"))
    except ManifestError as exc:
        raise InvalidInput(str(exc)) from exc


def _load_bundle(path) -> ModelBundle:
    try:
        return ModelBundle.load(_existing_dir(path, "bundle"))
    except BundleError as exc:
        raise InvalidInput(str(exc)) from exc


def _parse_threshold(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold {text!r}") from None
    if math.isnan(value):
        raise argparse.ArgumentTypeError("threshold must not be NaN")
    return value


def _policy(text: str) -> str:
    try:
        parse_policy(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated values")
    return parts


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sizes {text!r}") from None
    if any(s < 4 for s in sizes):
        raise argparse.ArgumentTypeError("image sizes must be >= 4")
    return sizes


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_split(args) -> int:
    root = _existing_dir(args.dataset, "dataset")
    if not math.isclose(sum(args.ratios), 1.0, abs_tol=1e-9) or any(r < 0 for r in args.ratios):
        raise InvalidInput(f"ratios must be non-negative and sum to 1, got {args.ratios}")
    out = Path(args.out) if args.out else None
    try:
        manifest = make_split(root, args.ratios, args.seed,
                              relative_to=out.parent if out else Path.cwd())
    except (ManifestError, PgmError) as exc:
        raise InvalidInput(str(exc)) from exc
    text = format_manifest(manifest.entries)
    if out:
        _write_text(out, text)
        log.info("wrote %d entries to %s", len(manifest.entries), out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    manifest = _load_manifest(args.manifest)
    if args.bundle is None:
        raise InvalidInput("--bundle is required")
    bundle = fit(manifest, cfg)
    bundle.save(args.bundle)
    log.info("bundle written to %s (checksum %s)", args.bundle, bundle.checksum())
    for stage, ms in bundle.timings.items():
        log.info("  %-10s %9.1f ms", stage, ms)
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = _load_bundle(args.bundle)
    manifest = _load_manifest(args.manifest)
    if args.out is None:
        raise InvalidInput("--out is required")
    if args.split == "test":
        result = calibrate_and_test(bundle, manifest, args.threshold_policy)
    else:
        result = evaluate(bundle, manifest, args.split, policy=args.threshold_policy)
    out = Path(args.out)
    summary = {k: _json_value(v) for k, v in result.summary.items()}
    summary["policy"] = args.threshold_policy
    summary["split"] = args.split
    _write_text(out / "roc.csv", result.curve.to_csv())
    _write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("far=%.4f frr=%.4f eer=%.4f recognition_rate=%.4f", summary["far"], summary["frr"],
             summary["eer"], summary["recognition_rate"])
    return EXIT_OK


def cmd_verify(args) -> int:
    bundle = _load_bundle(args.bundle)
    image_path = _existing_file(args.image, "image")
    try:
        probe = load_pgm(image_path)
    except PgmError as exc:
        raise InvalidInput(str(exc)) from exc
    if args.subject not in set(bundle.subjects.tolist()):
        raise InvalidInput(f"subject {args.subject} is not enrolled in the bundle")
    threshold = args.threshold
    if threshold is None:
        if args.manifest is None:
            raise InvalidInput("verify needs --threshold or --manifest (to calibrate on the eval split)")
        calib = evaluate(bundle, _load_manifest(args.manifest), "eval", policy=args.threshold_policy)
        threshold = select_threshold(calib.curve, args.threshold_policy)
    score, accept = verify(bundle, probe, args.subject, threshold)
    print(f"score={score:.17g} accept={'true' if accept else 'false'}")
    return EXIT_OK


def run_bench(sizes, n_subjects=6, n_instances=6, cfg: PipelineConfig | None = None, seed=0,
              n_probes=None) -> list[tuple[str, int, int, float]]:
    """Time each stage on synthetic data at every image size (fit from scratch).

    The filter bank is held fixed across sizes: unless the config sets
    ``support_cap``, every size uses the cap of the largest one.
    """
    cfg = cfg or PipelineConfig()
    if cfg.support_cap is None:
        cfg = cfg.replace(support_cap=max(sizes) // 2)
    rows = []
    for size in sizes:
        base = cfg.replace(image_size=size, seed=seed)
        samples = make_subjects(n_subjects, n_instances, size=size, seed=seed)
        images = [im for im, _ in samples]
        subjects = [s for _, s in samples]
        bundle = fit_images(images, subjects, base)
        for stage in BENCH_STAGES[:-1]:
            rows.append((stage, size, len(images), bundle.timings[stage]))
        probes = samples[: n_probes or len(samples)]
        t0 = time.perf_counter()
        for im, s in probes:
            verify(bundle, im, s, 0.0)
        rows.append(("verify", size, len(probes), (time.perf_counter() - t0) * 1000.0))
    return rows


def format_bench(rows) -> str:
    lines = ["stage,n,images,millis"]
    lines.extend(f"{stage},{n},{count},{ms:.3f}" for stage, n, count, ms in rows)
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if len(args.sizes) < 3:
        raise InvalidInput("bench needs at least 3 image sizes")
    rows = run_bench(args.sizes, args.subjects, args.instances, cfg, cfg.seed)
    text = format_bench(rows)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise InvalidInput(f"output directory is not empty: {out}")
    write_dataset(out, make_subjects(args.subjects, args.instances, args.size, args.noise,
                                     args.max_shift, args.seed))
    log.info("wrote %d subjects x %d images to %s", args.subjects, args.instances, out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvface", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a train/eval/test manifest for a dataset directory")
    p.add_argument("dataset", help="directory of per-subject subdirectories of PGM files")
    p.add_argument("--out", help="manifest CSV path (default: stdout)")
    p.add_argument("--ratios", type=_ratios, default=(0.6, 0.2, 0.2))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="fit a model bundle on the manifest's train split")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--bundle", help="output bundle directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="write roc.csv and summary.json for a split")
    p.add_argument("--bundle")
    p.add_argument("--manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", choices=("eval", "test", "train"), default="test",
                   help="test: threshold chosen on eval, applied to test; otherwise self-calibrated")
    p.add_argument("--threshold-policy", type=_policy, default="eer")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="score one probe image against a claimed subject")
    p.add_argument("--bundle")
    p.add_argument("--image")
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--threshold", type=_parse_threshold, help="accept when score >= threshold (inf allowed)")
    p.add_argument("--manifest", help="calibrate the threshold on this manifest's eval split")
    p.add_argument("--threshold-policy", type=_policy, default="eer")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="per-stage wall-clock timings on synthetic data")
    p.add_argument("--sizes", type=_sizes, default=[64, 128, 256])
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--instances", type=int, default=4)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic per-subject PGM dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--instances", type=int, default=12)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--max-shift", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PipelineError, RuntimeError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
