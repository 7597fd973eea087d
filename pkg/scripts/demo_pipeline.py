"""Write two synthetic dataset pairs and push them through train -> distill -> export via the CLI."""

import argparse
import subprocess
import sys
from pathlib import Path

from dlite.signal import save_segment_set
from dlite.synth import SynthSpec, generate


def sh(*args):
    print("$ dlite", " ".join(args), flush=True)
    subprocess.run([sys.executable, "-m", "dlite", *args], check=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="results/demo")
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()
    work = Path(args.work)
    for i, seed in enumerate((1, 2)):
        d = generate(SynthSpec(n_subjects=6, segments_per_subject=50, samples=200, seed=seed))
        save_segment_set(d.segset, work / "input" / f"site{i}")

    ckpt = str(work / "compressor.ckpt")
    sh("train-compressor", "--input", str(work / "input"), "--out", ckpt, "--epochs", str(args.epochs),
       "--enc-layers", "2", "--dec-layers", "1", "--heads", "4")
    sh("distill", "--input", str(work / "input"), "--ckpt", ckpt, "--eta", "5", "--tau", "1",
       "--out", str(work / "distilled"))
    sh("export", "--manifest", str(work / "distilled" / "synth-1.manifest.json"),
       "--input", str(work / "input" / "site0"), "--out", str(work / "subset" / "site0"))
    print((work / "distilled" / "summary.csv").read_text())


if __name__ == "__main__":
    main()
