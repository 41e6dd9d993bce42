"""Command line entry point: ``hpmr {degrade,train,eval,ablate}``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

import argparse
import glob
import json
import logging
import os
import statistics
import sys

import numpy as np

from . import data, kspace, report, training
from .errors import ConfigError, HPMRError

log = logging.getLogger("hpmr")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared helpers

def load_cfg(args):
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        cfg = training.load_config(args.config)
    else:
        cfg = training.TrainConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def manifest_for(cfg):
    if cfg.manifest:
        if not os.path.exists(cfg.manifest):
            raise UsageError(f"manifest not found: {cfg.manifest}")
        return data.read_manifest(cfg.manifest)
    return data.phantom_manifest(cfg.n_phantoms, cfg.split_ratio, cfg.split_seed,
                                 cfg.image_size)


def _checkpoint_matches(path, cfg):
    try:
        header, _ = training._read_checkpoint(path)
    except HPMRError:
        return False
    return header.get("config") == cfg.to_dict()


def train_cached(cfg, out_dir, force=False):
    """Train ``cfg`` into ``out_dir`` unless a finished run with the same config is there."""
    final = os.path.join(out_dir, "final.ckpt")
    man = manifest_for(cfg)
    train = data.load_split(man, "train")
    if len(train) == 0:
        raise ConfigError("the manifest has no training images")
    total = cfg.epochs * -(-len(train) // cfg.batch_size)
    if not force and os.path.exists(final) and _checkpoint_matches(final, cfg):
        state = training.load_checkpoint(final)
        if state.step >= total:
            log.info("reusing %s", final)
            return state
        return training.fit(train, state=state, out_dir=out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(training.dump_config(cfg))
    data.write_manifest(man, os.path.join(out_dir, "manifest.tsv"))
    log_path = os.path.join(out_dir, "train_log.csv")
    if os.path.exists(log_path):
        os.remove(log_path)
    return training.fit(train, cfg, out_dir=out_dir)


def method_name(cfg):
    return "HPMR" if cfg.ablation == "full" else f"HPMR_{cfg.ablation}"


def checkpoint_rows(state, gts, names=None, method=None):
    cfg = state.cfg
    m = kspace.make_mask(cfg.image_size, cfg.image_size, cfg.mask_rate)
    lr = np.stack([kspace.degrade(g, m) for g in gts])
    recon = training.reconstruct(state.generator, lr)
    return report.evaluate_images(method or method_name(cfg), cfg.mask_rate, recon, gts, names)


def _emit_eval(rows, cfg_dict, out_dir, stem="eval"):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}_per_image.csv")
    report.write_rows(csv_path, rows)
    return _emit_from_csv(csv_path, cfg_dict, out_dir, stem)


def _emit_from_csv(csv_path, cfg_dict, out_dir, stem="eval"):
    rows = report.read_rows(csv_path)
    summary = report.summarize(rows)
    rr = report.RunReport(cfg_dict, summary, rows_csv=os.path.basename(csv_path))
    with open(os.path.join(out_dir, f"{stem}_summary.json"), "w") as fh:
        fh.write(rr.to_json())
    table = report.render_table(summary)
    with open(os.path.join(out_dir, f"{stem}_table.txt"), "w") as fh:
        fh.write(table)
    print(table, end="")
    return summary


# ---------------------------------------------------------------------------
# subcommands

def run_degrade(args):
    try:
        rate = float(args.rate)
        kspace.kept_band(8, rate)
    except (ValueError, ConfigError) as exc:
        raise UsageError(f"bad --rate {args.rate!r}: {exc}") from exc
    if os.path.isdir(args.input):
        sources = sorted(glob.glob(os.path.join(args.input, "*.png")))
        if not sources:
            raise UsageError(f"no PNG files in {args.input}")
        os.makedirs(args.output, exist_ok=True)
        targets = [os.path.join(args.output, os.path.basename(s)) for s in sources]
        meta_path = os.path.join(args.output, "mask.json")
    else:
        if not os.path.exists(args.input):
            raise UsageError(f"input not found: {args.input}")
        sources, targets = [args.input], [args.output]
        meta_path = os.path.splitext(args.output)[0] + ".json"
    masks = {}
    for src, dst in zip(sources, targets):
        img = data.load_image(src)
        m = kspace.make_mask(img.shape[0], img.shape[1], rate)
        data.save_image(kspace.degrade(img, m), dst, bits=args.bits)
        masks[os.path.basename(dst)] = m.to_dict()
    with open(meta_path, "w") as fh:
        json.dump({"rate": rate, "convention": "fftshift-centred, DC at column W//2",
                   "images": masks}, fh, indent=2, sort_keys=True)
    print(f"wrote {len(targets)} image(s) and {meta_path}")
    return EXIT_OK


def run_train(args):
    cfg = load_cfg(args)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    out = args.out_dir
    if args.resume:
        if not os.path.exists(args.resume):
            raise UsageError(f"checkpoint not found: {args.resume}")
        state = training.load_checkpoint(args.resume)
        train = data.load_split(manifest_for(state.cfg), "train")
        state = training.fit(train, state=state, out_dir=out, max_steps=args.max_steps)
    else:
        os.makedirs(out, exist_ok=True)
        man = manifest_for(cfg)
        with open(os.path.join(out, "config.txt"), "w") as fh:
            fh.write(training.dump_config(cfg))
        data.write_manifest(man, os.path.join(out, "manifest.tsv"))
        state = training.fit(data.load_split(man, "train"), cfg, out_dir=out,
                             max_steps=args.max_steps)
    last = state.history[-1] if state.history else None
    print(f"trained to step {state.step}; final losses {last}")
    print(f"checkpoint: {os.path.join(out, 'final.ckpt')}")
    return EXIT_OK


def run_eval(args):
    out = args.out_dir
    if args.from_csv:
        if not os.path.exists(args.from_csv):
            raise UsageError(f"CSV not found: {args.from_csv}")
        os.makedirs(out, exist_ok=True)
        _emit_from_csv(args.from_csv, {"regenerated_from": args.from_csv}, out)
        return EXIT_OK
    cfg = load_cfg(args)
    states = []
    for spec in args.checkpoint or []:
        name, _, path = spec.rpartition("=")
        if not os.path.exists(path):
            raise UsageError(f"checkpoint not found: {path}")
        states.append((name or None, training.load_checkpoint(path)))
    man = manifest_for(states[0][1].cfg if states else cfg)
    gts = data.load_split(man, "test")
    if len(gts) == 0:
        raise ConfigError("the manifest has no test images")
    names = [s.rsplit("/", 1)[-1] for s in man.test]
    rows = []
    for rate in args.rates:
        rows += report.baseline_rows(gts, rate, names, self_check=args.self_check)
    for name, st in states:
        rows += checkpoint_rows(st, gts, names, method=name)
    cfg_dict = {"config": cfg.to_dict(), "checkpoints": args.checkpoint or [],
                "rates": args.rates}
    _emit_eval(rows, cfg_dict, out)
    return EXIT_OK


def config_diff(base, other):
    a, b = _flatten(base.to_dict()), _flatten(other.to_dict())
    return {k: b[k] for k in sorted(a) if a[k] != b.get(k)}


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


def run_ablate(args):
    base = load_cfg(args)
    seeds = args.seeds if args.seeds else [base.seed]
    variants = list(training.ABLATION_VARIANTS)
    full_cfg = training.make_ablation_config(base, "full")
    per_seed = {}
    tables = []
    for seed in seeds:
        seed_dir = os.path.join(args.out_dir, f"seed{seed}")
        rows = []
        for v in variants:
            cfg = training.make_ablation_config(base, v)
            cfg.seed = seed
            state = train_cached(cfg, os.path.join(seed_dir, v), force=args.force)
            gts = data.load_split(manifest_for(cfg), "test")
            rows += checkpoint_rows(state, gts)
        os.makedirs(seed_dir, exist_ok=True)
        csv_path = os.path.join(seed_dir, "ablation_per_image.csv")
        report.write_rows(csv_path, rows)
        summary = report.summarize(report.read_rows(csv_path))
        table = report.render_ablation_table(summary, training.ABLATION_FLAGS, base.mask_rate)
        with open(os.path.join(seed_dir, "ablation_table.txt"), "w") as fh:
            fh.write(table)
        tables.append(f"seed {seed}\n{table}")
        per_seed[seed] = {name: s[base.mask_rate] for name, s in summary.items()}
    names = {v: ("HPMR" if v == "full" else f"HPMR_{v}") for v in variants}
    median = {names[v]: statistics.median(per_seed[s][names[v]]["psnr"]["mean"] for s in seeds)
              for v in variants}
    diffs = {}
    for v in variants:
        cfg = training.make_ablation_config(base, v)
        diffs[names[v]] = config_diff(full_cfg, cfg)
    result = report.RunReport(
        full_cfg.to_dict(), {str(s): per_seed[s] for s in seeds},
        rows_csv="seed*/ablation_per_image.csv",
        extra={"median_psnr": median, "seeds": seeds, "config_diff_vs_full": diffs,
               "flags": {names[v]: list(f) for v, f in training.ABLATION_FLAGS.items()},
               "reference": "HPMR"},
    )
    with open(os.path.join(args.out_dir, "ablation_summary.json"), "w") as fh:
        fh.write(result.to_json())
    text = "\n".join(tables) + "\nmedian PSNR across seeds: " + ", ".join(
        f"{k} {v:.3f}" for k, v in median.items()) + "\n"
    with open(os.path.join(args.out_dir, "ablation_table.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _common(suppress):
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="key = value training config file")
    p.add_argument("--seed", type=int, default=d, help="override the config seed")
    p.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "hpmr_out",
                   help="output directory (default: hpmr_out)")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hpmr", parents=[_common(False)],
        description="k-space degradation, GAN super-resolution training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(True)

    p = sub.add_parser("degrade", parents=[common], help="zero-filled low-resolution images")
    p.add_argument("--rate", required=True, help="fraction of k-space columns kept, in (0, 1]")
    p.add_argument("--in", dest="input", required=True, help="PNG file or directory of PNGs")
    p.add_argument("--out", dest="output", required=True, help="output PNG file or directory")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=run_degrade)

    p = sub.add_parser("train", parents=[common], help="train a generator/discriminator pair")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.add_argument("--max-steps", type=int, help="stop after this many global steps")
    p.set_defaults(func=run_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate baselines and checkpoints")
    p.add_argument("--checkpoint", action="append",
                   help="[NAME=]PATH of a checkpoint; repeatable")
    p.add_argument("--rates", type=float, nargs="+", default=[0.5, 0.25])
    p.add_argument("--self-check", action="store_true",
                   help="add a GT row scoring the ground truth against itself")
    p.add_argument("--from-csv", help="regenerate the summary and table from a per-image CSV")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    p.add_argument("--seeds", type=int, nargs="+", help="seeds to repeat the ablation over")
    p.add_argument("--force", action="store_true", help="retrain even when a matching run exists")
    p.set_defaults(func=run_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"hpmr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HPMRError, OSError, RuntimeError) as exc:
        print(f"hpmr {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
