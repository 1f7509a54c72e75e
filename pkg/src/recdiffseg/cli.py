"""Command-line entry point: ``recdiffseg {gen-data,train,infer,eval,inspect-schedule}``.

Exit codes: 0 success, 2 usage error, 3 validation/compatibility error,
4 I/O or checkpoint error, 5 training diverged.
"""

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataset import (
    AugmentConfig,
    generate_shapes_dataset,
    load_image_png,
    load_label_png,
    read_dataset,
    read_manifest,
    read_palette,
    save_image_png,
    save_label_png,
    shapes_palette,
    write_dataset,
)
from .diffusion import make_schedule
from .errors import (
    CheckpointError,
    CompatibilityError,
    IngestionError,
    InvalidParameterError,
    RecDiffSegError,
    ShapeError,
    TrainingDivergedError,
    ValidationError,
)
from .metrics import ConfusionMatrix, format_report, write_report
from .persistence import load_checkpoint, save_checkpoint
from .sampler import SampleConfig, sample_ensemble, scale_ladder
from .trainer import init_training, train

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4, 5


class UsageError(RecDiffSegError):
    pass


def _positive(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return v
    return parse


def _nonneg(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _prepare_out(path, overwrite):
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise UsageError(f"output directory {path} is not empty (use --overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- gen-data -----------------------------------------------------------------

def cmd_gen_data(args):
    out = _prepare_out(args.out or cfgmod.default_output_root() / "data", args.overwrite)
    palette = shapes_palette(args.classes)
    train_set = generate_shapes_dataset(args.n, args.size, args.size, args.classes, args.seed)
    write_dataset(train_set, out, "train", palette)
    if args.n_test:
        test_set = generate_shapes_dataset(args.n_test, args.size, args.size, args.classes, args.seed + 1)
        write_dataset(test_set, out, "test", palette)
    print(f"wrote {args.n} train / {args.n_test} test samples to {out}")
    return EXIT_OK


# -- train --------------------------------------------------------------------

def _train_objects(args):
    file_values = cfgmod.read_config_file(args.config)
    overrides = {
        "model": {"base_channels": args.base_channels, "depth": args.depth, "embed_dim": args.embed_dim,
                  "attention_at_bottleneck": False if args.no_attention else None},
        "train": {"T": args.T, "M": args.scales, "lr": args.lr, "lr_decay_gamma": args.gamma,
                  "weight_decay": args.weight_decay, "clip_norm": args.clip_norm,
                  "epochs": args.epochs, "seed": args.seed},
    }
    merged = cfgmod.merge(file_values, overrides)
    return merged


def cmd_train(args):
    samples, _, palette = read_dataset(args.data, args.split)
    merged = _train_objects(args)
    merged.setdefault("model", {})["num_classes"] = len(palette)
    model_cfg = cfgmod.build(cfgmod.DenoiserConfig, merged.get("model", {}))
    train_cfg = cfgmod.build(cfgmod.TrainConfig, merged.get("train", {}))
    run = merged.get("run", {})
    use_aug = not args.no_augment and str(run.get("augment", "true")).lower() not in ("0", "false", "no", "off")
    aug_cfg = None
    if use_aug:
        aug_cfg = cfgmod.build(AugmentConfig, merged.get("augment", {}))
    if samples:
        H, W = samples[0].labels.shape
        div = 2 ** (train_cfg.M - 1) * 2 ** model_cfg.depth
        if H % div or W % div:
            raise ValidationError(f"image size {W}x{H} must be divisible by {div} for M={train_cfg.M}, "
                                  f"depth={model_cfg.depth}")
    # load before _prepare_out: the checkpoint may live in the directory being replaced
    if args.resume:
        state, ckpt_model, _ = load_checkpoint(args.resume)
        if ckpt_model != model_cfg:
            raise CompatibilityError("resume checkpoint model config differs from the requested one")
    else:
        state = init_training(model_cfg, train_cfg)
    out = _prepare_out(args.out or cfgmod.default_output_root() / "train", args.overwrite)
    objects = {"model": model_cfg, "train": train_cfg}
    if aug_cfg is not None:
        objects["augment"] = aug_cfg
    cfgmod.write_resolved(out / "resolved.ini", objects,
                          {"data": args.data, "split": args.split, "augment": aug_cfg is not None})

    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(state, train_cfg, ckpt)

    def on_epoch_end(st):
        save_checkpoint(st, train_cfg, ckpt)
        if args.checkpoint_every and st.epoch % args.checkpoint_every == 0:
            save_checkpoint(st, train_cfg, out / f"epoch{st.epoch:03d}.ckpt")
        print(f"epoch {st.epoch}: mean loss {st.report.epoch_losses[-1]:.5f}", flush=True)

    with open(out / "train.log", "w") as log:
        try:
            net, report = train(samples, train_cfg, state=state, augment=aug_cfg,
                                on_epoch_end=on_epoch_end, log=log)
        except TrainingDivergedError as exc:
            print(f"training diverged: {exc}; last good checkpoint kept at {ckpt}", file=sys.stderr)
            return EXIT_DIVERGED
    with open(out / "losses.csv", "w") as fh:
        fh.write("epoch,mean_loss\n")
        fh.writelines(f"{i + 1},{v!r}\n" for i, v in enumerate(report.epoch_losses))
    with open(out / "report.json", "w") as fh:
        json.dump({"epoch_losses": report.epoch_losses, "updates": report.updates,
                   "wall_clock": report.wall_clock, "checksum": report.checksum}, fh, indent=2)
    print(f"trained {report.updates} updates; checksum {report.checksum}")
    return EXIT_OK


# -- infer --------------------------------------------------------------------

def cmd_infer(args):
    state, model_cfg, train_cfg = load_checkpoint(args.checkpoint)
    root = Path(args.data)
    palette = read_palette(root)
    if len(palette) != model_cfg.num_classes:
        raise CompatibilityError(f"checkpoint predicts {model_cfg.num_classes} classes but the dataset "
                                 f"palette has {len(palette)}")
    steps = tuple(int(s) for s in args.steps.replace(",", " ").split()) if args.steps else None
    scfg = SampleConfig(stride=args.stride, steps=steps, M=args.scales or train_cfg.M,
                        ensemble_n=args.ensemble, seed=args.seed)
    schedule = make_schedule(train_cfg.T)
    step_list = scfg.step_list(train_cfg.T)
    out = _prepare_out(args.out or cfgmod.default_output_root() / "infer", args.overwrite)
    (out / "labels").mkdir()
    (out / "soft").mkdir()
    cfgmod.write_resolved(out / "resolved.ini", {"sample": scfg},
                          {"checkpoint": args.checkpoint, "data": args.data, "split": args.split})
    (out / "palette.txt").write_text(palette.to_text())
    stems = read_manifest(root, args.split)
    div = 2 ** (scfg.M - 1) * 2 ** model_cfg.depth
    for i, stem in enumerate(stems):
        image = load_image_png(root / args.split / "images" / f"{stem}.png")
        H, W = image.shape[:2]
        if H % div or W % div:
            raise CompatibilityError(f"{stem}: image size {W}x{H} is not divisible by {div} "
                                     f"(depth={model_cfg.depth}, M={scfg.M})")
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        soft, labels = sample_ensemble(state.net, image, schedule,
                                       SampleConfig(scfg.stride, scfg.steps, scfg.M, scfg.ensemble_n, seed))
        save_label_png(labels, out / "labels" / f"{stem}.png", palette)
        np.save(out / "soft" / f"{stem}.npy", soft)
    (out / "manifest.txt").write_text("".join(f"{s}\n" for s in stems))
    print(f"predicted {len(stems)} images with steps {step_list} at {scfg.M} scale(s), "
          f"ensemble {scfg.ensemble_n}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def _label_dir(path):
    path = Path(path)
    return path / "labels" if (path / "labels").is_dir() else path


def cmd_eval(args):
    truth_dir = _label_dir(args.truth)
    pred_dir = _label_dir(args.pred)
    palette_path = Path(args.palette) if args.palette else None
    if palette_path is None:
        for cand in (Path(args.truth) / "palette.txt", Path(args.truth).parent / "palette.txt",
                     Path(args.pred) / "palette.txt"):
            if cand.exists():
                palette_path = cand
                break
    if palette_path is None:
        raise FileNotFoundError("no palette.txt found; pass --palette")
    palette = read_palette(palette_path.parent) if palette_path.name == "palette.txt" else None
    truth = {p.stem: p for p in sorted(truth_dir.glob("*.png"))}
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    orphans = sorted(set(truth) ^ set(preds))
    if orphans:
        for stem in orphans:
            side = "prediction" if stem in preds else "ground truth"
            print(f"orphan {side}: {stem}.png", file=sys.stderr)
        return EXIT_VALIDATION
    cm = ConfusionMatrix(len(palette))
    for stem in sorted(truth):
        cm.accumulate(load_label_png(preds[stem], palette), load_label_png(truth[stem], palette))
    text = format_report(cm, palette.names)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(cm, out / "report.txt", out / "report.json", palette.names)
    return EXIT_OK


# -- inspect-schedule ---------------------------------------------------------

def cmd_inspect_schedule(args):
    schedule = make_schedule(args.T)
    steps = tuple(int(s) for s in args.steps.replace(",", " ").split()) if args.steps else None
    step_list = SampleConfig(stride=args.stride, steps=steps).step_list(args.T)
    print("t\tbeta_t")
    for t, b in enumerate(schedule.betas):
        print(f"{t}\t{b:g}")
    print(f"executed steps ({len(step_list)}): {','.join(map(str, step_list))}")
    width, height = args.size[0], args.size[-1]
    ladder = scale_ladder(width, height, args.scales)
    print("scales: " + ", ".join(f"{w}x{h}" for w, h in ladder))
    if args.png:
        _noise_strip(args, schedule, step_list)
        print(f"wrote {args.png}")
    return EXIT_OK


def _noise_strip(args, schedule, step_list):
    """Save one sample's clean map and its noised versions at the executed steps."""
    from .dataset import one_hot_encode
    from .diffusion import diffuse

    width, height = args.size[0], args.size[-1]
    s = generate_shapes_dataset(1, width, height, 3, args.seed)[0]
    seg = one_hot_encode(s.labels, 3, np.float64)
    rng = np.random.default_rng(args.seed)
    tiles = [s.image.astype(np.float64), seg]
    for t in step_list:
        tiles.append(np.clip(diffuse(seg, t, schedule, rng)[0], 0.0, 1.0))
    save_image_png(np.concatenate(tiles, axis=1), args.png)


# -- argument parsing ---------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="recdiffseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    g.add_argument("--out", help="dataset directory (default: $RECDIFFSEG_OUTPUT_ROOT/data)")
    g.add_argument("--n", type=_nonneg, default=200)
    g.add_argument("--n-test", type=_nonneg, default=0, help="also write a test split of this size")
    g.add_argument("--size", type=_positive("size"), default=64)
    g.add_argument("--classes", type=int, default=3, help="number of classes including background")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--overwrite", action="store_true", help="allow a non-empty output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a denoiser (recursive; hierarchical with --scales > 1)")
    t.add_argument("--data", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--config", help="INI file; command-line flags take precedence")
    t.add_argument("--out")
    t.add_argument("--overwrite", action="store_true")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=0, help="also keep epochNNN.ckpt every N epochs")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--base-channels", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--embed-dim", type=int)
    t.add_argument("--no-attention", action="store_true")
    t.add_argument("--T", type=int, help="diffusion time steps")
    t.add_argument("--scales", type=int, help="number of scales M")
    t.add_argument("--lr", type=float)
    t.add_argument("--gamma", type=float, help="per-epoch learning-rate multiplier")
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--clip-norm", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict label maps for a dataset split")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="test")
    i.add_argument("--out")
    i.add_argument("--overwrite", action="store_true")
    i.add_argument("--stride", type=_positive("stride"), default=1, help="execute every k-th step")
    i.add_argument("--steps", help="explicit decreasing step list, e.g. '5,3,1'")
    i.add_argument("--scales", type=int, help="default: the training value")
    i.add_argument("--ensemble", type=_positive("ensemble"), default=1, help="runs averaged per image")
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predicted label PNGs against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True, help="dataset split directory with ground-truth labels")
    e.add_argument("--palette", help="palette.txt (default: found next to the predictions)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect-schedule", help="print the noise schedule, step list and scale ladder")
    s.add_argument("--T", type=_positive("T"), default=25)
    s.add_argument("--scales", type=_positive("scales"), default=1)
    s.add_argument("--size", type=_positive("size"), nargs="+", default=[64], metavar="W [H]")
    s.add_argument("--stride", type=_positive("stride"), default=1)
    s.add_argument("--steps")
    s.add_argument("--png", help="write a strip of one noisy trajectory")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_inspect_schedule)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse has already printed usage
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, InvalidParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ShapeError, CompatibilityError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
