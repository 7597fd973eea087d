"""``dlite`` command line.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .compressor import CompressorConfig, ConfigError, TrainingError
from .signal import FormatError, IntegrityError

log = logging.getLogger("dlite")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _add_compressor_flags(p: argparse.ArgumentParser) -> None:
    d = CompressorConfig()
    g = p.add_argument_group("compressor")
    g.add_argument("--d-latent", type=int, default=d.d_latent)
    g.add_argument("--enc-layers", type=int, default=d.enc_layers)
    g.add_argument("--dec-layers", type=int, default=d.dec_layers)
    g.add_argument("--heads", type=int, default=d.heads)
    g.add_argument("--num-patches", type=int, default=d.num_patches)
    g.add_argument("--beta", type=float, default=d.beta)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--lr", type=float, default=d.base_lr)
    g.add_argument("--clip-norm", type=float, default=d.clip_norm)
    g.add_argument("--batch-size", type=int, default=d.batch_size)


def _compressor_from_args(a) -> CompressorConfig:
    return CompressorConfig(
        d_latent=a.d_latent, enc_layers=a.enc_layers, dec_layers=a.dec_layers, heads=a.heads,
        num_patches=a.num_patches, beta=a.beta, epochs=a.epochs, base_lr=a.lr, clip_norm=a.clip_norm,
        batch_size=a.batch_size, seed=a.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlite", description="Distil segment datasets into small diverse subsets.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-compressor", help="train the multi-view compressor on every pair under --input")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    _add_compressor_flags(p)

    p = sub.add_parser("distill", help="score, remove outliers and select a subset per dataset pair")
    p.add_argument("--input", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--eta", type=float, default=5.0, help="percent of post-removal segments to keep")
    p.add_argument("--tau", type=float, default=0.05, help="percent of highest-scoring segments to drop")
    p.add_argument("--strategy", choices=("proposed", "random", "pca_ds"), default="proposed")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--alpha", type=float, default=1e-6)
    p.add_argument("--normalization", choices=("max", "density"), default="max")
    p.add_argument("--init", choices=("centroid", "random"), default="centroid")
    p.add_argument("--pca-dim", type=int, default=CompressorConfig().d_latent)

    p = sub.add_parser("export", help="write the selected segments of a manifest as a new pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--input", required=True, help="source pair directory")
    p.add_argument("--out", required=True, help="destination pair directory")

    p = sub.add_parser("bench", help="synthetic benchmark of selection strategies")
    p.add_argument("--spec", default=None, help="JSON benchmark spec (synth/compressor/etas/...)")
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--seeds", type=int, default=5)
    return parser


def _limit_threads():
    n = os.environ.get("DLITE_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items()}
    limiter = _limit_threads()
    try:
        return _dispatch(args, flags)
    except (ConfigError, IntegrityError, FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"dlite: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # UsageError and argument-range problems raised by the library
        print(f"dlite: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError, RuntimeError, OSError) as exc:
        print(f"dlite: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if limiter is not None:
            limiter.unregister()


def _dispatch(args, flags) -> int:
    from . import pipeline

    if args.command == "train-compressor":
        res = pipeline.cmd_train_compressor(args.input, args.out, _compressor_from_args(args), flags)
        print(json.dumps({"checkpoint": res["checkpoint"], "sha256": res["sha256"]}))
    elif args.command == "distill":
        cfg = pipeline.RunConfig(
            input_root=args.input, output_root=args.out, eta=args.eta, tau=args.tau, strategy=args.strategy,
            checkpoint=args.ckpt, bins=args.bins, pca_dim=args.pca_dim,
            alpha=args.alpha, normalization=args.normalization, init=args.init, seed=args.seed,
        )
        for row in pipeline.cmd_distill(cfg, flags):
            print(f"{row['dataset_id']}: N={row['N']} kept={row['kept']} selected={row['selected']}")
    elif args.command == "export":
        path = pipeline.cmd_export(args.manifest, args.input, args.out)
        print(str(path))
    elif args.command == "bench":
        _bench(args, flags)
    return EXIT_OK


def _bench(args, flags) -> None:
    from .bench import BenchConfig, load_bench_config, run_benchmark, summarize, write_results
    from .pipeline import write_run_json

    cfg = load_bench_config(args.spec) if args.spec else BenchConfig()
    if args.seeds < 1:
        raise ValueError("--seeds must be >= 1")
    rows = run_benchmark(cfg, seeds=args.seeds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(rows, out)
    write_run_json(out.with_name(out.name + ".run.json"), "bench", {"bench": asdict(cfg), "flags": flags},
                   cfg.seed, {}, config_hash=cfg.hash())
    for (strategy, eta), s in summarize(rows).items():
        print(f"{strategy:9s} eta={eta:5.1f}  acc {s['acc_mean']:.4f} +- {s['acc_std']:.4f}  "
              f"radius {s['radius_mean']:.4f} +- {s['radius_std']:.4f}")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
