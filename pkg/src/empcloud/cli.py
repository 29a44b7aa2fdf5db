"""Command-line entry point.

Subcommands: dataset, train, infer, eval, export-ply. Global flags select the
configuration profile, an optional JSON config overlay, the master seed, and
the output directory.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, pipeline
from .config import load_config


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None, help="JSON config overlay")
    parser.add_argument("--profile", choices=("desk", "paper"), default="desk")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True, help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="empcloud", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a dataset (shards + manifest)")
    _add_common(p)

    p = sub.add_parser("train", help="train encoder + noise estimator")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None, help="latest checkpoint to continue from")
    p.add_argument("--force", action="store_true", help="accept a dataset with a different physics hash")
    p.add_argument("--no-embed", action="store_true", help="drop position/SNR embeddings")
    p.add_argument("--direct-channel", action="store_true",
                   help="condition the diffusion on the raw vectorized channel")

    p = sub.add_parser("infer", help="reconstruct clouds for a dataset slice")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--slice", default="test", choices=("train", "val", "test"))
    p.add_argument("--no-ply", action="store_true")

    p = sub.add_parser("eval", help="score reconstructions against the truth slice")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--recon", type=Path, required=True, help="reconstructions.blob from infer")
    p.add_argument("--slice", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("export-ply", help="dump clouds from a shard or reconstruction blob")
    p.add_argument("--blob", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    args = parser.parse_args(argv)

    if args.command == "dataset":
        cfg = load_config(args.profile, args.config)
        manifest = pipeline.build_dataset(cfg, args.out, args.seed)
        print(json.dumps(manifest["counts"]))
        return 0

    if args.command == "train":
        overrides = {}
        if args.no_embed and args.direct_channel:
            parser.error("--no-embed and --direct-channel are mutually exclusive")
        if args.no_embed:
            overrides["encoder_mode"] = "noebd"
        if args.direct_channel:
            overrides["encoder_mode"] = "direct"
        cfg = load_config(args.profile, args.config, overrides)
        result = pipeline.train(cfg, args.dataset, args.out, args.seed,
                                resume=args.resume, force=args.force)
        print(f"initial val {result['initial_val']:.6f}  final val {result['final_val']:.6f}")
        return 0

    if args.command == "infer":
        stats = pipeline.infer(args.checkpoint, args.dataset, args.out, args.seed,
                               slice_name=args.slice, export_ply=not args.no_ply)
        print(json.dumps(stats))
        return 0

    if args.command == "eval":
        report = pipeline.evaluate(args.dataset, args.recon, args.out, slice_name=args.slice)
        print(json.dumps(report["overall"]))
        return 0

    if args.command == "export-ply":
        arrays, _ = dataio.read_blob(args.blob)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        clouds = arrays.get("clouds", arrays.get("cloud"))
        if clouds is None:
            print("blob contains no cloud arrays", file=sys.stderr)
            return 1
        rotor = arrays.get("rotor")
        for i, sample_id in enumerate(np.asarray(arrays["ids"], dtype=np.int64)):
            mask = rotor[i] if rotor is not None else None
            dataio.save_ply(out / f"{int(sample_id):06d}.ply", clouds[i], mask)
        print(f"wrote {clouds.shape[0]} PLY files to {out}")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
