"""Desk-scale ablation grids driven through the command-line interface.

    python3 repro/run_grid.py scales       # training/inference scales M in {1, 2, 3, 4}
    python3 repro/run_grid.py train-steps  # training steps T in {5, 15, 25}
    python3 repro/run_grid.py ensemble     # ensemble sizes in {1, 3, 5}
    python3 repro/run_grid.py skip         # executed inference steps 25, 13, 9, 5, 3, 2, 1 (T = 25)
    python3 repro/run_grid.py all

Every run lands under ``--root`` (default ``runs/grid``) and a tab-separated
summary is written to ``<root>/<grid>.tsv``. ``--epochs`` and ``--n`` trade
fidelity for time; the defaults take a few hours per grid on one core.
"""

import argparse
import json
from pathlib import Path

from recdiffseg import cli

GRIDS = ("scales", "train-steps", "ensemble", "skip")
MODEL = ["--base-channels", "8", "--depth", "3", "--embed-dim", "32", "--lr", "1e-3", "--no-augment"]


def call(*args):
    code = cli.main([str(a) for a in args])
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}: {' '.join(map(str, args))}")


def miou_of(eval_dir):
    return json.loads((eval_dir / "report.json").read_text())["miou"]


def train_run(root, data, name, epochs, T, M=1):
    out = root / "train" / name
    if not (out / "report.json").exists():
        call("train", "--data", data, "--out", out, "--overwrite", "--epochs", epochs, "--T", T, "--scales", M, *MODEL)
    return out / "checkpoint.ckpt"


def infer_eval(root, data, ckpt, name, *flags):
    out = root / "infer" / name
    call("infer", "--checkpoint", ckpt, "--data", data, "--out", out, "--overwrite", *flags)
    call("eval", "--pred", out, "--truth", data / "test", "--out", root / "eval" / name)
    return miou_of(root / "eval" / name)


def grid(name, root, data, epochs):
    rows = []
    if name == "scales":
        for M in (1, 2, 3, 4):
            # matched update budget: M scales cost M updates per step
            ckpt = train_run(root, data, f"scales_M{M}", max(1, epochs // M), T=5, M=M)
            rows.append((f"M={M}", infer_eval(root, data, ckpt, f"scales_M{M}", "--scales", M)))
    elif name == "train-steps":
        for T in (5, 15, 25):
            ckpt = train_run(root, data, f"T{T}", epochs, T=T)
            rows.append((f"T={T}", infer_eval(root, data, ckpt, f"T{T}")))
    elif name == "ensemble":
        ckpt = train_run(root, data, "T5", epochs, T=5)
        for n in (1, 3, 5):
            rows.append((f"ensemble={n}", infer_eval(root, data, ckpt, f"ens{n}", "--ensemble", n)))
    elif name == "skip":
        ckpt = train_run(root, data, "T25", epochs, T=25)
        for stride in (1, 2, 3, 5, 9, 13, 25):
            steps = len(range(25, 0, -stride))
            rows.append((f"steps={steps}", infer_eval(root, data, ckpt, f"skip{stride}", "--stride", stride)))
    table = root / f"{name}.tsv"
    table.write_text("setting\tmIoU\n" + "".join(f"{k}\t{v:.4f}\n" for k, v in rows))
    print(table.read_text(), end="")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("grid", choices=GRIDS + ("all",))
    ap.add_argument("--root", default="runs/grid")
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--n-test", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    root = Path(args.root)
    data = root / "data"
    if not (data / "palette.txt").exists():
        call("gen-data", "--out", data, "--overwrite", "--n", args.n, "--n-test", args.n_test, "--size", 64,
             "--classes", 3, "--seed", args.seed)
    for name in (GRIDS if args.grid == "all" else (args.grid,)):
        grid(name, root, data, args.epochs)


if __name__ == "__main__":
    main()
