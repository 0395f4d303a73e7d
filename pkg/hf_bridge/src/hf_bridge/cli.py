"""Minimal batch CLI: generate a spec file from a real model, optionally
submit it straight to a running dock."""

import argparse
import json
import sys
from pathlib import Path

from .descriptor import PAPER_PRESET, RealAnchorDescriptor
from .genspec import gen_real_spec, submit_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hf-bridge",
        description="Generate an LWSPEC01 spec file from a pretrained causal LM.",
    )
    parser.add_argument("--anchor", required=True,
                        help="descriptor JSON (kind external-lm)")
    parser.add_argument("--data", required=True,
                        help='JSONL with {"prompt", "answer"} rows')
    parser.add_argument("--mode", choices=["developer", "user"], default="user")
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=None,
                        help="override the preset step count")
    parser.add_argument("--shuffle-seed", type=int, default=0)
    parser.add_argument("--layers", type=int, nargs="*", default=None,
                        help="layer indices to adapt (default: all)")
    parser.add_argument("--submit-to", default=None,
                        help="dock base URL; submits the file after writing it")
    parser.add_argument("--model-uri", default=None,
                        help="model reference stored with the submission")
    args = parser.parse_args(argv)

    descriptor = RealAnchorDescriptor.from_dict(
        json.loads(Path(args.anchor).read_text("utf-8"))
    )
    overrides = {"shuffle_seed": args.shuffle_seed}
    if args.steps is not None:
        overrides["steps"] = args.steps
    data = gen_real_spec(
        descriptor,
        args.data,
        mode=args.mode,
        preset=PAPER_PRESET,
        layers=args.layers,
        **overrides,
    )
    Path(args.out).write_bytes(data)
    print(f"wrote {len(data)} bytes to {args.out}")
    if args.submit_to:
        uri = args.model_uri or descriptor.pretrained_model_id
        lw_id = submit_spec(args.submit_to, data, uri)
        print(f"submitted as learnware id {lw_id}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
