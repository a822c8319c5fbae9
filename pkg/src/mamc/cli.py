"""Command-line entry points: train, bank, evaluate, sweep, protect, serve.

Thin wrappers over the library operations. Output is line-oriented
key=value pairs plus report artifacts on disk. Exit status: 0 success,
1 runtime failure (with a diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from mamc.errors import MamcError


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MamcError(f"cannot read config file {path}: {exc}") from exc


def _load_images(args):
    """Corpus dict + deterministic split from either a directory or the
    bundled synthetic corpus."""
    from mamc.imagecore import list_corpus, load_image, split_dataset

    if args.corpus:
        directory = Path(args.corpus)
        ids = list_corpus(directory)
        images = {i: load_image(directory / i) for i in ids}
    else:
        from mamc.corpus import toy_corpus

        images = toy_corpus(args.toy, seed=args.corpus_seed)
    split = split_dataset(sorted(images), seed=args.split_seed)
    return images, split


def _train_config(args, cfg_file: dict):
    from mamc.oracle import OracleConfig
    from mamc.training import TrainConfig

    section = dict(cfg_file.get("train", {}))
    oracle_section = dict(cfg_file.get("oracle", {}))
    for key, flag in (("level", "level"), ("epochs", "epochs"), ("seed", "seed"),
                      ("learning_rate", "lr"), ("batch_size", "batch_size"),
                      ("loss_variant", "variant")):
        value = getattr(args, flag, None)
        if value is not None:
            section[key] = value
    strength = getattr(args, "strength", None)
    if strength is not None:
        oracle_section["strength"] = strength
    mode = getattr(args, "mode", None)
    if mode is not None:
        oracle_section["mode"] = mode
    config = TrainConfig(**section)
    if oracle_section:
        config = replace(config, oracle_config=OracleConfig(**oracle_section))
    return config


def _get_oracle(args, images):
    from mamc.oracle import OracleWeights, pretrain_oracle
    from mamc.unet import UNetSpec

    path = Path(args.oracle)
    if path.exists():
        return OracleWeights.load(path)
    if not getattr(args, "pretrain_oracle", False):
        raise MamcError(f"oracle weights not found at {path} (pass --pretrain-oracle to build)")
    spec = UNetSpec(depth=3, base_channels=16, output_squash="none",
                    updown="stride_transpose")
    weights = pretrain_oracle([images[k] for k in sorted(images)],
                              epochs=args.oracle_epochs, seed=args.oracle_seed,
                              batch_size=32, spec=spec,
                              log=lambda m: print(f"log {m}"))
    weights.save(path)
    print(f"oracle_saved path={path} hash={weights.weights_hash[:16]}")
    return weights


def _add_corpus_flags(p):
    p.add_argument("--corpus", help="directory of images (default: bundled synthetic corpus)")
    p.add_argument("--toy", type=int, default=1000, help="synthetic corpus size")
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)


def _add_train_flags(p):
    p.add_argument("--config", help="JSON config file with train/oracle sections")
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, dest="lr")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--variant", default=None, dest="variant")
    p.add_argument("--strength", type=int, default=None)
    p.add_argument("--mode", choices=("reconstruct", "inpaint"), default=None)


def _add_oracle_flags(p):
    p.add_argument("--oracle", required=True, help="oracle weights container")
    p.add_argument("--pretrain-oracle", action="store_true",
                   help="pretrain and save the oracle if the file is missing")
    p.add_argument("--oracle-epochs", type=int, default=40)
    p.add_argument("--oracle-seed", type=int, default=31)


def cmd_train(args) -> int:
    from mamc.training import emit_loss_curves, train

    images, split = _load_images(args)
    config = _train_config(args, _load_config(args.config))
    oracle = _get_oracle(args, images)
    ckpt, report = train(images, split, config, oracle, args.out,
                         log=lambda m: print(f"log {m}"))
    prefix = Path(args.out).with_suffix("")
    emit_loss_curves(report, prefix)
    print(f"checkpoint path={args.out} hash={ckpt.weights_hash[:16]} "
          f"wall_time={report.wall_time:.1f}")
    return 0


def cmd_bank(args) -> int:
    from mamc.training import train_balance_bank

    images, split = _load_images(args)
    config = _train_config(args, _load_config(args.config))
    oracle = _get_oracle(args, images)
    manifest = train_balance_bank(images, split, config, oracle, args.out,
                                  log=lambda m: print(f"log {m}"))
    available = [e["level"] for e in manifest["levels"] if e.get("available")]
    print(f"bank dir={args.out} available={available}")
    return 0


def cmd_evaluate(args) -> int:
    from mamc.evalsuite import eval_protocols
    from mamc.protector import load_checkpoint

    images, split = _load_images(args)
    oracle = _get_oracle(args, images)
    ckpt = load_checkpoint(args.checkpoint)
    p1, p2 = eval_protocols(images, split, ckpt, oracle, force=args.force,
                            max_images=args.max_images)
    result = {"p1": p1.to_dict(), "p2": p2.to_dict()}
    print(json.dumps(result, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2))
    return 0


def cmd_sweep(args) -> int:
    from mamc import evalsuite
    from mamc.protector import load_checkpoint

    images, split = _load_images(args)
    oracle = _get_oracle(args, images)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.axis in ("strength", "postprocess"):
        ckpt = load_checkpoint(args.checkpoint)
        if args.axis == "strength":
            report = evalsuite.strength_sweep(images, split, ckpt, oracle,
                                              max_images=args.max_images)
        else:
            report = evalsuite.robustness_sweep(images, split, ckpt, oracle,
                                                max_images=args.max_images)
    else:
        config = _train_config(args, _load_config(args.config))
        if args.axis == "ablation":
            report = evalsuite.ablation_suite(images, split, config, oracle, out_dir,
                                              max_images=args.max_images,
                                              log=lambda m: print(f"log {m}"))
        elif args.axis == "alpha_r2":
            report = evalsuite.weight_sweep(images, split, config, oracle, out_dir,
                                            max_images=args.max_images,
                                            log=lambda m: print(f"log {m}"))
        else:  # inpaint
            from mamc.oracle import OracleConfig
            from mamc.training import train

            recon_ckpt, _ = train(images, split, config, oracle,
                                  out_dir / "protector_recon.mamc",
                                  log=lambda m: print(f"log {m}"))
            inpaint_cfg = replace(config,
                                  oracle_config=OracleConfig(strength=5, mode="inpaint"))
            inpaint_ckpt, _ = train(images, split, inpaint_cfg, oracle,
                                    out_dir / "protector_inpaint.mamc",
                                    log=lambda m: print(f"log {m}"))
            report = evalsuite.inpaint_scenarios(images, split, recon_ckpt, inpaint_ckpt,
                                                 oracle, out_dir,
                                                 max_images=args.max_images)
    report_path = out_dir / f"sweep_{args.axis}.json"
    report.save(report_path)
    plot_path = out_dir / f"sweep_{args.axis}.png"
    try:
        evalsuite.plot_sweep(report, plot_path)
    except Exception as exc:  # noqa: BLE001 - plots are best-effort artifacts
        print(f"log plot skipped: {exc}")
    print(f"sweep axis={args.axis} report={report_path}")
    return 0


def cmd_protect(args) -> int:
    from mamc.imagecore import load_image, save_image
    from mamc.protector import load_checkpoint, protect

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
    else:
        bank = Path(args.bank)
        manifest = json.loads((bank / "bank_manifest.json").read_text())
        entry = next((e for e in manifest["levels"]
                      if e["level"] == args.level and e.get("available")), None)
        if entry is None:
            raise MamcError(f"level {args.level} not available in bank {bank}")
        ckpt = load_checkpoint(bank / entry["path"])
    import torch

    img = load_image(args.infile)
    with torch.no_grad():
        protected = protect(img, ckpt.model)
    save_image(protected, args.out)
    print(f"protected in={args.infile} level={ckpt.level} out={args.out}")
    return 0


def cmd_serve(args) -> int:
    from mamc.service import serve

    serve(args.bank, args.oracle, host=args.host, port=args.port,
          concurrency=args.concurrency)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mamc",
                                     description="image protection against diffusion oracles")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one protector checkpoint")
    _add_corpus_flags(p)
    _add_train_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bank", help="train the full balance bank")
    _add_corpus_flags(p)
    _add_train_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bank)

    p = sub.add_parser("evaluate", help="run both evaluation protocols")
    _add_corpus_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--force", action="store_true",
                   help="evaluate even if the oracle hash does not match")
    p.add_argument("--max-images", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run an experiment sweep")
    _add_corpus_flags(p)
    _add_train_flags(p)
    _add_oracle_flags(p)
    p.add_argument("--axis", default="strength",
                   choices=("strength", "postprocess", "ablation", "alpha_r2", "inpaint"))
    p.add_argument("--checkpoint", help="required for strength/postprocess axes")
    p.add_argument("--max-images", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("protect", help="protect a single image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=int, default=50)
    p.add_argument("--bank", default="bank")
    p.add_argument("--checkpoint", help="bypass the bank and use one checkpoint")
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bank", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--concurrency", type=int, default=2)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MamcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
