"""Command-line entry point exposing every pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure.  Every subcommand accepts --seed (default 0; wall-clock entropy is
never used) and --help.  A key=value config file can preload flag defaults
via --config; explicit flags win.  On success each subcommand prints one
machine-parseable summary line of key=value pairs.  The STYLESPACE_LOG
environment variable (error|info|debug) controls logging verbosity.
"""

from __future__ import annotations

import argparse
import difflib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, annotate, cam, data, train
from .errors import ContractError, DataError, DimensionError, DomainError, FormatError, NumericError
from .losses import LossWeights

log = logging.getLogger("stylespace.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _suggest(message: str, options: list[str]) -> str:
    if "unrecognized arguments:" in message:
        bad = message.split("unrecognized arguments:", 1)[1].strip().split()[0]
        close = difflib.get_close_matches(bad, options, n=1)
        if close:
            return f"{message} (did you mean {close[0]}?)"
    return message


def _read_config(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _print_summary(**pairs) -> None:
    print(" ".join(f"{k}={v}" for k, v in pairs.items()))


def _weights_from_args(args) -> LossWeights:
    return LossWeights(
        lambda_kl=args.lambda_kl,
        lambda_recon=args.lambda_recon,
        lambda_triplet=args.lambda_triplet,
        lambda_percep=args.lambda_percep,
        margin=args.margin,
    )


def _write_split(manifest, args, out_dir: Path) -> tuple[int, int]:
    train_m, test_m = data.split(manifest, args.test_fraction, args.seed)
    data.save_manifest(train_m, out_dir / "manifest_train.jsonl")
    data.save_manifest(test_m, out_dir / "manifest_test.jsonl")
    return len(train_m), len(test_m)


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_synth_data(args) -> None:
    out_dir = Path(args.out)
    manifest, params = data.gen_synthetic(args.n, args.classes, args.seed, out_dir)
    data.save_manifest(manifest, out_dir / "manifest.jsonl")
    data.save_params_table(params, out_dir / "params.jsonl")
    n_train, n_test = _write_split(manifest, args, out_dir)
    _print_summary(ok=1, images=len(manifest), classes=args.classes,
                   manifest=out_dir / "manifest.jsonl", train=n_train, test=n_test)


def _cmd_ingest(args) -> None:
    manifest = data.ingest(args.images, args.metadata)
    out = Path(args.out)
    data.save_manifest(manifest, out)
    n_train, n_test = _write_split(manifest, args, out.parent)
    _print_summary(ok=1, rows=len(manifest), manifest=out, train=n_train, test=n_test)


def _cmd_make_triplets(args) -> None:
    manifest = data.load_manifest(args.manifest)
    triplets = data.make_triplets(manifest, args.seed)
    data.save_triplets(triplets, args.out)
    _print_summary(ok=1, triplets=len(triplets), out=args.out)


def _cmd_oracle_label(args) -> None:
    triplets = data.load_triplets(args.triplets)
    params = data.load_params_table(args.params)
    labels = [data.oracle_label(t, params) for t in triplets]
    data.save_labels(labels, args.out)
    _print_summary(ok=1, labels=len(labels), out=args.out)


def _cmd_annotate_serve(args) -> None:
    manifest = data.load_manifest(args.manifest)
    triplets = data.load_triplets(args.triplets)
    service = annotate.AnnotationService(
        manifest, triplets, args.labels, seed=args.seed, lease_seconds=args.lease
    )
    static = Path(args.static) if args.static else None
    server = annotate.make_server(service, port=args.port, host=args.host, static_dir=static)
    _print_summary(ok=1, url=f"http://{args.host}:{server.server_address[1]}/",
                   triplets=len(triplets))
    annotate.serve_forever(server)


def _cmd_train(args) -> None:
    manifest = data.load_manifest(args.manifest)
    labels = None
    if args.labels:
        labels = data.load_labels(args.labels, manifest=manifest)
    config = train.TrainConfig(
        model_variant=args.variant,
        weights=_weights_from_args(args),
        latent_dim=args.latent_dim,
        lr=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    ckpt, metrics = train.train_model(config, manifest, labels)
    train.save_checkpoint(ckpt, args.out)
    if args.metrics:
        train.write_metrics(metrics, args.metrics)
    final_total = metrics[-1]["total"] if metrics else 0.0
    _print_summary(ok=1, variant=args.variant, epochs=len(metrics),
                   final_total=f"{final_total:.6g}", checkpoint=args.out)


def _cmd_eval_triplets(args) -> None:
    ckpt = train.load_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    labels = data.load_labels(args.labels, manifest=manifest)
    margin = ckpt.config.weights.margin if args.margin is None else args.margin
    rate = train.eval_triplet_satisfaction(ckpt, manifest, labels, margin)
    _print_summary(ok=1, rate=f"{rate:.6f}", labels=len(labels), margin=margin)


def _cmd_embed(args) -> None:
    ckpt = train.load_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    embeddings, errors = analysis.embed_dataset(ckpt, manifest)
    analysis.save_embeddings(embeddings, args.out)
    for image_id, message in errors:
        log.error("embed failed for %s: %s", image_id, message)
    _print_summary(ok=1, embeddings=len(embeddings), failed=len(errors),
                   dim=train.embedding_length(ckpt), out=args.out)


def _cmd_project(args) -> None:
    embeddings = analysis.load_embeddings(args.embeddings)
    if args.top_artists:
        keep = set(analysis.top_artists(embeddings, args.top_artists))
        embeddings = [e for e in embeddings if e.artist in keep]
    points, info = analysis.project_embeddings(
        embeddings, perplexity=args.perplexity, iterations=args.iterations, seed=args.seed
    )
    analysis.save_projection(points, args.out)
    _print_summary(ok=1, points=len(points), kl_initial=f"{info['kl_initial']:.4f}",
                   kl_final=f"{info['kl_final']:.4f}", out=args.out)


def _cmd_classify(args) -> None:
    train_embs = analysis.load_embeddings(args.train)
    test_embs = analysis.load_embeddings(args.test)
    for name, embs in (("train", train_embs), ("test", test_embs)):
        if any(e.artist is None for e in embs):
            raise DataError(f"{name} embeddings lack artist labels; re-run embed on a manifest")
    train_x = np.stack([e.vector for e in train_embs])
    test_x = np.stack([e.vector for e in test_embs])
    preds, accuracy = analysis.knn_classify(
        train_x, [e.artist for e in train_embs], test_x, args.k,
        test_labels=[e.artist for e in test_embs],
    )
    _print_summary(ok=1, accuracy=f"{accuracy:.6f}", k=args.k, n_train=len(train_embs),
                   n_test=len(test_embs))


def _cmd_interpolate(args) -> None:
    ckpt = train.load_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    images = data.load_images(manifest, ids=[args.source, args.target])
    frames = analysis.interpolate(ckpt, images[0], images[1], args.steps)
    analysis.save_interpolation_frames(frames, args.out)
    _print_summary(ok=1, frames=len(frames), source=args.source, target=args.target,
                   out=args.out)


def _cmd_cam(args) -> None:
    ckpt = train.load_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.manifest)
    ids = [args.anchor, args.positive, args.negative]
    images = data.load_images(manifest, ids=ids)
    margin = ckpt.config.weights.margin if args.margin is None else args.margin
    maps, inactive = cam.grad_cam(ckpt, images, image_ids=ids,
                                  target_layer=args.layer, margin=margin)
    written = cam.export_maps(maps, images, args.out)
    _print_summary(ok=1, inactive=int(inactive), files=len(written), out=args.out)


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="stylespace", description=__doc__,
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, add_help=True,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0, help="random seed (all randomness)")
        p.add_argument("--config", type=str, default=None,
                       help="key=value file preloading flag defaults")
        return p

    p = add("synth-data", _cmd_synth_data, "generate a synthetic portrait corpus")
    p.add_argument("--n", type=int, default=600, help="number of images")
    p.add_argument("--classes", type=int, default=6, help="number of style classes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--test-fraction", type=float, default=0.15, help="held-out image fraction")

    p = add("ingest", _cmd_ingest, "build a manifest from an image dir + metadata CSV")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--metadata", required=True, help="CSV with id,path,artist,date")
    p.add_argument("--out", required=True, help="manifest output path")
    p.add_argument("--test-fraction", type=float, default=0.15, help="held-out image fraction")

    p = add("make-triplets", _cmd_make_triplets, "draw one unlabeled triplet per image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="triplet file output path")

    p = add("oracle-label", _cmd_oracle_label, "label synthetic triplets analytically")
    p.add_argument("--triplets", required=True)
    p.add_argument("--params", required=True, help="synthetic params table")
    p.add_argument("--out", required=True, help="label file output path")

    p = add("annotate-serve", _cmd_annotate_serve, "serve the human annotation UI + API")
    p.add_argument("--manifest", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--labels", required=True, help="append-only label file")
    p.add_argument("--port", type=int, default=annotate.DEFAULT_PORT)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--lease", type=float, default=annotate.DEFAULT_LEASE_SECONDS,
                   help="task lease in seconds")
    p.add_argument("--static", default=None, help="override the built-in UI asset directory")

    p = add("train", _cmd_train, "train a model variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", default=None, help="triplet label file (required by *_triplet)")
    p.add_argument("--variant", default="vae_triplet", choices=train.MODEL_VARIANTS)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=8, help="batch size in triplets")
    p.add_argument("--latent-dim", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--lambda-kl", type=float, default=1e-3)
    p.add_argument("--lambda-recon", type=float, default=1.0)
    p.add_argument("--lambda-triplet", type=float, default=1.0)
    p.add_argument("--lambda-percep", type=float, default=1e-2)
    p.add_argument("--margin", type=float, default=0.2, help="triplet margin")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--metrics", default=None, help="per-epoch metric CSV output path")

    p = add("eval-triplets", _cmd_eval_triplets, "triplet satisfaction of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--margin", type=float, default=None,
                   help="margin (default: the checkpoint's training margin)")

    p = add("embed", _cmd_embed, "export per-image style embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="embedding JSONL output path")

    p = add("project", _cmd_project, "PCA + t-SNE projection to 2-D CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="projection CSV output path")
    p.add_argument("--perplexity", type=float, default=None,
                   help="t-SNE perplexity (default 30, clamped to (n-1)/3)")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--top-artists", type=int, default=0,
                   help="keep only the N most represented artists (0 = all)")

    p = add("classify", _cmd_classify, "zero-shot k-NN artist classification")
    p.add_argument("--train", required=True, help="train embedding JSONL")
    p.add_argument("--test", required=True, help="test embedding JSONL")
    p.add_argument("--k", type=int, default=1)

    p = add("interpolate", _cmd_interpolate, "decode latents interpolated between two images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--source", required=True, help="source image id")
    p.add_argument("--target", required=True, help="target image id")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", required=True, help="frame output directory")

    p = add("cam", _cmd_cam, "triplet-loss activation maps for one triplet")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--anchor", required=True)
    p.add_argument("--positive", required=True)
    p.add_argument("--negative", required=True)
    p.add_argument("--layer", default=None, help="target conv layer (default: last conv block)")
    p.add_argument("--margin", type=float, default=None,
                   help="margin (default: the checkpoint's training margin)")
    p.add_argument("--out", required=True, help="map output directory")

    return parser


def _apply_config_defaults(parser: _Parser, argv: list[str]) -> list[str]:
    """Preload defaults from a --config file; explicit flags still win."""
    if not argv or argv[0].startswith("-"):
        return argv
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    values = _read_config(known.config)
    if not values:
        return argv
    # inject as flags ahead of the user's own so later (explicit) flags win
    command, rest = argv[0], argv[1:]
    injected: list[str] = []
    for key, value in values.items():
        injected += [f"--{key.replace('_', '-')}", value]
    return [command] + injected + rest


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = _LOG_LEVELS.get(os.environ.get("STYLESPACE_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    parser = build_parser()
    try:
        argv = _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return 1
        args.func(args)
        return 0
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except UsageError as e:
        options = []
        for action in parser._subparsers._group_actions:
            for sub_parser in action.choices.values():
                for act in sub_parser._actions:
                    options.extend(act.option_strings)
        print(f"usage error: {_suggest(str(e), sorted(set(options)))}", file=sys.stderr)
        return 1
    except (DataError, FormatError, ContractError, DimensionError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: missing input file: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
