"""``ctxmask`` command line: validate, mask, cooccur, eval, analyze, report, synth.

Exit codes: 0 success, 1 usage error, 2 data validation failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import analyzer, report
from .coco import CocoFormatError, format_violations, load_dataset, load_detections, write_detections
from .cooccur import cooccurrence_matrix, matrix_to_csv
from .evaluator import evaluate, read_result_csv, result_from_dict, write_result_csv, write_result_json
from .masker import DEFAULT_GREY, MaskingError, generate_masked_dataset, load_manifest, manifest_path
from .segm import SegmentationError
from .synth import SynthConfig, config_to_dict, default_config, generate_synthetic, scripted_detect

log = logging.getLogger("ctxmask")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grey(text: str) -> tuple[int, int, int]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        values = ()
    if len(values) != 3 or not all(0 <= v <= 255 for v in values):
        raise argparse.ArgumentTypeError(f"expected R,G,B with values 0-255, got {text!r}")
    return values


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _need(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


# -- subcommands --------------------------------------------------------------


def cmd_validate(args) -> int:
    _need(args, "ann")
    from .coco import validate

    violations = validate(load_dataset(args.ann))
    sys.stdout.write(format_violations(violations))
    return EXIT_DATA if any(v.severity == "error" for v in violations) else EXIT_OK


def _select_categories(dataset, selector: str) -> list[int]:
    if selector == "all":
        return dataset.category_ids
    if selector.isdigit():
        cid = int(selector)
        dataset.category(cid)
        return [cid]
    return [dataset.category_by_name(selector).id]


def cmd_mask(args) -> int:
    _need(args, "ann", "images", "out")
    dataset = load_dataset(args.ann)
    try:
        ids = _select_categories(dataset, args.category or "all")
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    for cid in ids:
        m = generate_masked_dataset(
            dataset, args.images, cid, args.grey, args.out, jobs=args.jobs, image_format=args.image_format
        )
        print(f"category {cid}: {m.total_masked_pixels} pixels masked, "
              f"{m.total_skipped_overlap_pixels} overlap pixels kept")
    return EXIT_OK


def cmd_cooccur(args) -> int:
    _need(args, "ann")
    dataset = load_dataset(args.ann)
    _write(args.out, matrix_to_csv(cooccurrence_matrix(dataset), dataset))
    return EXIT_OK


def _eval_paths(out: Path) -> tuple[Path, Path]:
    if out.suffix in (".csv", ".json"):
        return out.with_suffix(".csv"), out.with_suffix(".json")
    return out / "eval.csv", out / "eval.json"


def cmd_eval(args) -> int:
    _need(args, "ann", "dets", "out")
    dataset = load_dataset(args.ann)
    dets = load_detections(args.dets, dataset, lenient=args.lenient)
    result = evaluate(dataset, dets)
    csv_path, json_path = _eval_paths(args.out)
    _write(csv_path, write_result_csv(result, dataset))
    _write(json_path, write_result_json(result, dataset))
    print(f"mAP {result.map:.4f} over {sum(c.ap is not None for c in result.per_category)} categories")
    return EXIT_OK


_EVAL_NAME = re.compile(r"^eval_(\d+)\.(json|csv)$")


def _read_eval(path: Path):
    text = path.read_text()
    if path.suffix == ".csv":
        return read_result_csv(text)
    return result_from_dict(json.loads(text))


def discover_masked_evals(directory: Path) -> dict[int, Path]:
    """``eval_<category_id>.json`` (preferred) or ``.csv`` files in a directory."""
    found: dict[int, Path] = {}
    for path in sorted(directory.iterdir()):
        match = _EVAL_NAME.match(path.name)
        if match:
            cid = int(match.group(1))
            if cid not in found or path.suffix == ".json":
                found[cid] = path
    return found


def cmd_analyze(args) -> int:
    _need(args, "baseline", "out")
    if args.evals is None and not args.masked:
        raise UsageError("analyze requires --evals or at least one --masked")
    paths = discover_masked_evals(args.evals) if args.evals else {}
    for item in args.masked or []:
        cid, _, path = item.partition("=")
        if not cid.isdigit() or not path:
            raise UsageError(f"--masked expects CATEGORY_ID=PATH, got {item!r}")
        paths[int(cid)] = Path(path)
    baseline = _read_eval(args.baseline)
    masked = {cid: _read_eval(p) for cid, p in sorted(paths.items())}
    dataset = load_dataset(args.ann) if args.ann else None
    result = analyzer.analyze(baseline, masked, dataset, k=args.top_k)
    json_path = args.out if args.out.suffix == ".json" else args.out / "analysis.json"
    _write(json_path, analyzer.write_report_json(result))
    _write(json_path.with_suffix(".csv"), analyzer.write_report_csv(result))
    for cid in result.excluded:
        print(f"notice: category {result.name(cid)} excluded (baseline AP undefined or zero)")
    return EXIT_OK


def cmd_report(args) -> int:
    _need(args, "analysis")
    result = analyzer.load_report(args.analysis)
    top_rows = args.rows or 10
    context_rows = args.rows or 15
    if args.format == "md":
        text = report.render_markdown(result, top_rows, context_rows)
    else:
        text = report.render_csv(result, top_rows, context_rows)
    _write(args.out, text)
    return EXIT_OK


def cmd_synth(args) -> int:
    _need(args, "out")
    config = SynthConfig.load(args.config) if args.config else default_config()
    if args.seed is not None:
        config.seed = args.seed
        config.detector.seed = args.seed
    out: Path = args.out
    dataset = generate_synthetic(config, out)
    (out / "config.json").write_text(json.dumps(config_to_dict(config), indent=1))
    dets_dir = out / "detections"
    dets_dir.mkdir(parents=True, exist_ok=True)
    (dets_dir / "baseline.json").write_text(write_detections(scripted_detect(dataset, None, config.detector)))
    for cid in dataset.category_ids:
        manifest = generate_masked_dataset(
            dataset, out / "images", cid, args.grey, out / "masked", jobs=args.jobs
        )
        dets = scripted_detect(dataset, manifest, config.detector)
        (dets_dir / f"dets_{cid}.json").write_text(write_detections(dets))
    print(f"wrote {len(dataset.images)} images, {len(dataset.annotations)} annotations to {out}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "mask": cmd_mask,
    "cooccur": cmd_cooccur,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxmask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--ann", type=Path, help="COCO annotation file")
    parser.add_argument("--images", type=Path, help="root directory of the image files")
    parser.add_argument("--dets", type=Path, help="COCO detection-results file")
    parser.add_argument("--out", type=Path, help="output file or directory")
    parser.add_argument("--category", help="category id, name, or 'all' (mask)")
    parser.add_argument("--grey", type=_grey, default=DEFAULT_GREY, help="mask colour as R,G,B")
    parser.add_argument("--image-format", choices=("png", "jpeg"), default="png")
    parser.add_argument("--top-k", type=_positive, default=3, help="context entries per category")
    parser.add_argument("--rows", type=_positive, help="rows per rendered table")
    parser.add_argument("--format", choices=("md", "csv"), default="md")
    parser.add_argument("--jobs", type=_positive, default=os.cpu_count() or 1)
    parser.add_argument("--lenient", action="store_true", help="accept detections on unknown images")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--baseline", type=Path, help="baseline evaluation file (analyze)")
    parser.add_argument("--evals", type=Path, help="directory of eval_<category_id> files (analyze)")
    parser.add_argument("--masked", action="append", metavar="ID=PATH", help="explicit masked evaluation")
    parser.add_argument("--analysis", type=Path, help="analysis JSON (report)")
    parser.add_argument("--config", type=Path, help="synthetic config JSON (synth)")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ctxmask: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CocoFormatError, SegmentationError, MaskingError, ValueError, KeyError) as exc:
        print(f"ctxmask: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"ctxmask: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
