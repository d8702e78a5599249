"""Command line front-end: extract features, list the encoder roster."""

from __future__ import annotations

import argparse
import sys

from .errors import ModelUnavailable, SliceEncError
from .extract import extract_features
from .specs import get_spec, list_encoders


def cmd_extract(args) -> int:
    spec = get_spec(args.encoder, args.canonical)
    summary = extract_features(args.infile, spec, int(args.k), args.out)
    print(f"{summary['encoder']}: encoded slices {summary['encoded_slices']} "
          f"-> grid {summary['grid_side']}x{summary['grid_side']}"
          f"x{summary['token_dim']} tokens, wrote {summary['out']}")
    return 0


def cmd_encoders(args) -> int:
    rows = list_encoders()
    print(f"{'id':12s} {'input':>6s} {'patch':>6s} {'grid':>6s} {'D':>5s} "
          f"{'recipe':14s} {'weights':8s}")
    for row in rows:
        cached = "cached" if row["weights_cached"] else "-"
        print(f"{row['id']:12s} {row['canonical_size']:6d} {row['patch_size']:6d} "
              f"{row['grid_side']:6d} {row['token_dim']:5d} {row['recipe']:14s} "
              f"{cached:8s}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sliceenc",
        description="Slice-wise vision-encoder feature extraction to FVOL")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="encode every k-th slice of a volume")
    p_ext.add_argument("--in", dest="infile", required=True, help="input FVOL volume")
    p_ext.add_argument("--encoder", required=True)
    p_ext.add_argument("--k", default="1", help="slice stride")
    p_ext.add_argument("--out", required=True, help="output FVOL stack")
    p_ext.add_argument("--canonical", type=int,
                       help="override canonical size (stub/dinov2 only)")
    p_ext.set_defaults(func=cmd_extract)

    p_list = sub.add_parser("encoders", help="list encoder specs and weight status")
    p_list.set_defaults(func=cmd_encoders)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelUnavailable as exc:
        print(f"sliceenc: model unavailable: {exc}", file=sys.stderr)
        return 3
    except SliceEncError as exc:
        print(f"sliceenc: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sliceenc: io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
