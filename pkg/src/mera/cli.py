"""Command-line interface.

Subcommands: synth, build-db, train, eval, predict, calibrate,
export-embeddings. Exit codes: 0 success, 1 usage error, 2 data/format
error, 3 numerical/training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import MeraConfig
from .errors import MeraError, UsageError
from .synth import SynthConfig

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage failures on exit code 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mera", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, store=True, checkpoint=True):
        p.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
        if store:
            p.add_argument("--store", required=True, help="vector store file")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="model checkpoint file")
        p.add_argument("--split", default="test", choices=("train", "valid", "test"))

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=200, dest="n_train")
    p.add_argument("--valid", type=int, default=25, dest="n_valid")
    p.add_argument("--test", type=int, default=25, dest="n_test")
    p.add_argument("--length", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--text-dim", type=int, default=16)
    p.add_argument("--text-tokens", type=int, default=6)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--positive-rate", type=float, default=0.1)
    p.add_argument("--difficulty", type=float, default=0.5)
    p.add_argument("--noise-text", action="store_true",
                   help="degrade the text modality until it is useless on its own")
    p.add_argument("--ambiguity", type=float, default=None,
                   help="fraction of active motifs that are cluster-ambiguous "
                        "(default: difficulty)")
    p.add_argument("--residue-noise", type=float, default=None,
                   help="residue noise norm (default: 0.9 * difficulty)")
    p.add_argument("--label-noise", type=float, default=0.0,
                   help="fraction of valid/test active labels made cryptic")
    p.add_argument("--active-motifs", type=int, default=8)
    p.add_argument("--background-motifs", type=int, default=8)

    p = sub.add_parser("build-db", help="build and save the vector store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "valid", "test"))

    p = sub.add_parser("train", help="train and write the best checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="per-epoch JSONL log path")
    p.add_argument("--config", default=None, help="JSON config overriding defaults")
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the config file's seed (default 0)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="retrieval neighbors")
    p.add_argument("--disable-modality", action="append", default=[],
                   choices=("seq", "rag", "text"))
    p.add_argument("--disable-expert", action="append", default=[])

    p = sub.add_parser("eval", help="metric report on a split")
    common(p)
    p.add_argument("--disable-modality", action="append", default=[],
                   choices=("seq", "rag", "text"))
    p.add_argument("--disable-expert", action="append", default=[])
    p.add_argument("--hits-mode", default=None, choices=("any", "recall"))
    p.add_argument("--fmax-mode", default=None, choices=("micro", "macro"))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default=None, help="report base path (.json/.txt)")

    p = sub.add_parser("predict", help="per-residue score file")
    p.add_argument("--manifest", default=None, help="dataset manifest (JSON)")
    p.add_argument("--store", required=True, help="vector store file")
    p.add_argument("--checkpoint", required=True, help="model checkpoint file")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--seq-emb", default=None,
                   help="single-protein mode: residue embedding file")
    p.add_argument("--text-emb", default=None,
                   help="single-protein mode: text embedding file")
    p.add_argument("--id", default="query", help="single-protein mode: output id")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", help="reliability-error calibration table")
    common(p)
    p.add_argument("--band", type=float, default=0.8)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", default=None)

    p = sub.add_parser("export-embeddings", help="dump per-residue representations")
    common(p)
    p.add_argument("--which", required=True, choices=("seq", "rag", "text"))
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out", default=None)

    return parser


def _train_config(args) -> MeraConfig:
    if args.config:
        data = json.loads(Path(args.config).read_text())
        if args.seed is not None:
            data["seed"] = args.seed
        data.setdefault("seed", 0)
        config = MeraConfig.from_dict(data)
    else:
        config = MeraConfig(seed=args.seed if args.seed is not None else 0)
    config = config.override(epochs=args.epochs, learning_rate=args.lr, k_neighbors=args.k)
    if args.disable_modality:
        keep = tuple(m for m in config.modalities if m not in set(args.disable_modality))
        config = config.override(modalities=keep)
    if args.disable_expert:
        keep = tuple(e for e in config.experts if e not in set(args.disable_expert))
        config = config.override(experts=keep)
    return config


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        config = SynthConfig(
            seed=args.seed,
            n_train=args.n_train,
            n_valid=args.n_valid,
            n_test=args.n_test,
            length=args.length,
            dim=args.dim,
            text_dim=args.text_dim,
            text_tokens=args.text_tokens,
            clusters=args.clusters,
            positive_rate=args.positive_rate,
            difficulty=args.difficulty,
            noise_text=args.noise_text,
            ambiguity=args.ambiguity,
            residue_noise=args.residue_noise,
            label_noise=args.label_noise,
            active_motifs=args.active_motifs,
            background_motifs=args.background_motifs,
        )
        pipeline.cmd_synth(config, args.out)
    elif args.command == "build-db":
        pipeline.cmd_build_db(args.manifest, args.out, args.split)
    elif args.command == "train":
        pipeline.cmd_train(args.manifest, args.store, _train_config(args), args.out, args.log)
    elif args.command == "eval":
        pipeline.cmd_eval(
            args.manifest,
            args.store,
            args.checkpoint,
            split=args.split,
            disable_modalities=tuple(args.disable_modality),
            disable_experts=tuple(args.disable_expert),
            hits_mode=args.hits_mode,
            fmax_mode=args.fmax_mode,
            k=args.k,
            out=args.out,
        )
    elif args.command == "predict":
        if args.manifest is None and args.seq_emb is None:
            raise UsageError("predict needs --manifest or --seq-emb")
        pipeline.cmd_predict(
            args.manifest, args.store, args.checkpoint, args.out,
            split=args.split, k=args.k,
            seq_emb_path=args.seq_emb, text_emb_path=args.text_emb,
            protein_id=args.id,
        )
    elif args.command == "calibrate":
        pipeline.cmd_calibrate(
            args.manifest, args.store, args.checkpoint,
            band=args.band, bins=args.bins, split=args.split, out=args.out,
        )
    elif args.command == "export-embeddings":
        pipeline.cmd_export_embeddings(
            args.manifest, args.store, args.checkpoint,
            which=args.which, out=args.out, labels_out=args.labels_out,
            split=args.split,
        )
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return run(argv)
    except MeraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
