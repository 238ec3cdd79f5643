"""Command line for batch feature extraction.

    extract --images <dir> [--gt <dir>] --clip <spec> --vfm <spec>
            --short-side {336,448} --window 336 --stride 112
            --classes <txt> [--templates <txt>] --out <dir>
            [--qk] [--jobs N] [--device cpu]

Exit codes: 0 success, 1 validation or model error, 2 I/O error.
"""

import argparse
import sys

from .errors import ExtractorError
from .extract import ExtractionSpec, run_extraction
from .prompts import load_class_names, load_templates


def build_parser():
    parser = argparse.ArgumentParser(prog="extract", description=__doc__.splitlines()[0])
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--gt", help="directory of annotations matched to images by stem")
    parser.add_argument("--clip", required=True, help="CLIP model spec (see models module)")
    parser.add_argument("--vfm", required=True, help="VFM model spec (see models module)")
    parser.add_argument("--short-side", type=int, default=336, choices=(336, 448))
    parser.add_argument("--window", type=int, default=336)
    parser.add_argument("--stride", type=int, default=112)
    parser.add_argument("--classes", required=True, help="text file, one class name per line")
    parser.add_argument("--templates", help="prompt templates file; default is the 80-template set")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--qk", action="store_true", help="also capture per-head q and k")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = ExtractionSpec(
            clip_spec=args.clip,
            vfm_spec=args.vfm,
            short_side=args.short_side,
            window=args.window,
            stride=args.stride,
            class_names=load_class_names(args.classes),
            templates=load_templates(args.templates),
            with_qk=args.qk,
            device=args.device,
        )
        run_extraction(spec, args.images, args.out, gt_dir=args.gt, jobs=max(1, args.jobs))
    except ExtractorError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
