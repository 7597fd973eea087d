"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from dlite import tensor as T
from dlite.bench import BenchConfig, run_benchmark, summarize
from dlite.cli import run
from dlite.compressor import Compressor, CompressorConfig, idc_from_projections, loss_rec
from dlite.distill import coverage_radius, fit_histograms, kcenter_select, remove_outliers, score_ood
from dlite.optim import lr_schedule
from dlite.pipeline import file_sha256
from dlite.signal import fft_views, save_segment_set
from dlite.synth import SynthSpec, generate
from dlite.tensor import Tensor

from helpers import OP_CASES, check_op, max_rel_err, numeric_grad


def test_gradient_correctness(criterion):
    t0 = time.time()
    op_worst = {name: max(check_op(op, *shapes, seed=s, **kw) for s in range(2))
                for name, (op, shapes, kw) in OP_CASES.items()}

    cfg = CompressorConfig(d_latent=8, enc_layers=1, dec_layers=1, heads=2, num_patches=2, conv_channels=2,
                           conv_kernel=3, ffn_mult=2, channels=1, samples=8, beta=0.5, seed=21)
    model = Compressor(cfg, dtype=np.float64)
    views = np.random.default_rng(22).standard_normal((3, 3, 1, 2, 4))
    model.losses(views)["total"].backward()
    names = list(model.params)

    def f(*_):
        with T.no_grad():
            return model.losses(views)["total"].item()

    num = numeric_grad(f, [model.params[n].data for n in names])
    analytic = np.concatenate([model.params[n].grad.ravel() for n in names])
    model_err = max_rel_err(analytic, np.concatenate([g.ravel() for g in num]))
    elapsed = time.time() - t0

    bad = sorted(k for k, v in op_worst.items() if v >= 1e-4)
    ok = not bad and model_err < 1e-3 and elapsed < 60
    criterion(1, "gradient correctness", ok,
              f"worst op {max(op_worst.values()):.1e}, model {model_err:.1e}, {elapsed:.0f}s, failing ops {bad}")
    assert ok


def _naive_dft(x):
    t = len(x)
    n = np.arange(t)
    k = np.arange(t // 2 + 1)
    return np.exp(-2j * np.pi * np.outer(k, n) / t) @ x


def test_fft_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst_abs, worst_parseval = 0.0, 0.0
    for _ in range(100):
        t = int(rng.integers(2, 513))
        x = rng.standard_normal(t)
        mag, pha = fft_views(x)
        ref = _naive_dft(x)
        worst_abs = max(worst_abs, np.abs(mag * np.exp(1j * pha) - ref).max(), np.abs(mag - np.abs(ref)).max())
        two_sided = mag[0] ** 2 + 2 * (mag[1:] ** 2).sum() - (mag[-1] ** 2 if t % 2 == 0 else 0.0)
        energy = (x**2).sum()
        worst_parseval = max(worst_parseval, abs(two_sided / t - energy) / energy)
    ok = worst_abs < 1e-5 and worst_parseval < 1e-4
    criterion(2, "FFT vs naive DFT and Parseval", ok, f"max abs {worst_abs:.1e}, parseval rel {worst_parseval:.1e}")
    assert ok


def test_hbos_oracle(criterion):
    # dim 0 on [0, 8] with 4 bins of width 2: counts 3, 2, 0, 3 -> heights 1, 2/3, 0, 1
    # dim 1 on [0, 1] with 4 bins of width 0.25: counts 4, 0, 1, 3 -> heights 1, 0, 1/4, 3/4
    z = np.array([[0.0, 0.0], [1.0, 0.1], [1.5, 0.2], [2.0, 0.2], [3.0, 0.6],
                  [6.0, 0.8], [7.0, 0.9], [8.0, 1.0]])
    alpha = 1e-6
    p0 = [1, 1, 1, 2 / 3, 2 / 3, 1, 1, 1]
    p1 = [1, 1, 1, 1, 1 / 4, 3 / 4, 3 / 4, 3 / 4]
    expected = np.array([math.log(1.0 / (a + alpha)) + math.log(1.0 / (b + alpha)) for a, b in zip(p0, p1)])
    got = score_ood(z, fit_histograms(z, bins=4, alpha=alpha)).scores
    hand_err = float(np.abs(got - expected).max())

    rng = np.random.default_rng(7)
    cloud = rng.standard_normal((1000, 8))
    out_idx = rng.choice(1000, 10, replace=False)
    cloud[out_idx] += rng.choice([-1.0, 1.0], size=(10, 8)) * rng.uniform(5, 8, size=(10, 8))
    scores = score_ood(cloud, fit_histograms(cloud)).scores
    removed = np.setdiff1d(np.arange(1000), remove_outliers(scores, 1.0))
    recall = len(np.intersect1d(removed, out_idx)) / len(out_idx)

    ok = hand_err <= 4 * np.finfo(float).eps * np.abs(expected).max() and recall >= 0.9
    criterion(3, "HBOS hand instance and outlier recall", ok, f"hand err {hand_err:.1e}, recall {recall:.2f}")
    assert ok


def _brute_radius(z, k):
    d = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
    return min(d[:, list(c)].min(axis=1).max() for c in itertools.combinations(range(len(z)), k))


def test_kcenter_approximation(criterion):
    rng = np.random.default_rng(44)
    violations = 0
    for _ in range(50):
        n = int(rng.integers(2, 13))
        k = int(rng.integers(1, min(3, n) + 1))
        z = rng.standard_normal((n, int(rng.integers(1, 5))))
        _, r = kcenter_select(z, k)
        violations += r > 2 * _brute_radius(z, k) + 1e-12

    prefix_fail = 0
    for _ in range(100):
        n = int(rng.integers(2, 60))
        z = rng.standard_normal((n, int(rng.integers(1, 6))))
        full, _ = kcenter_select(z, n)
        prev = math.inf
        for k in range(1, n + 1):
            sel, r = kcenter_select(z, k)
            if not np.array_equal(sel, full[:k]) or r > prev or not math.isclose(r, coverage_radius(z, sel)):
                prefix_fail += 1
                break
            prev = r
    ok = violations == 0 and prefix_fail == 0
    criterion(4, "k-center 2-approximation, prefix, monotone radius", ok,
              f"{violations} bound violations, {prefix_fail} prefix/monotone failures")
    assert ok


def test_loss_closed_forms(criterion):
    s = 0.37
    a = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    b = np.array([[s, math.sqrt(1 - s * s), 0.0], [s, 0.0, math.sqrt(1 - s * s)]])
    two = idc_from_projections(Tensor(a), Tensor(b)).item()
    three = idc_from_projections(Tensor(np.eye(3)), Tensor(np.eye(3))).item()
    x = np.random.default_rng(5).standard_normal((2, 3, 4, 5, 6)).astype(np.float32)
    rec = loss_rec(Tensor(x), x).item()
    err2 = abs(two - math.log(2 * math.exp(s)) / 2)
    err3 = abs(three - math.log(6) / 6)
    ok = err2 < 1e-6 and err3 < 1e-6 and rec == 0.0
    criterion(5, "loss closed forms", ok, f"|B|=2 err {err2:.1e}, |B|=3 err {err3:.1e}, rec(x,x)={rec}")
    assert ok


def test_determinism(criterion, tmp_path):
    for i, seed in enumerate((31, 32)):
        d = generate(SynthSpec(n_subjects=3, segments_per_subject=30, samples=200, seed=seed))
        save_segment_set(d.segset, tmp_path / "in" / f"p{i}")
    tiny = ["--epochs", "2", "--enc-layers", "1", "--dec-layers", "1", "--heads", "2", "--d-latent", "16"]
    codes = [run(["train-compressor", "--input", str(tmp_path / "in"), "--out", str(tmp_path / f"m{j}.ckpt"), *tiny])
             for j in (0, 1)]
    same_ckpt = file_sha256(tmp_path / "m0.ckpt") == file_sha256(tmp_path / "m1.ckpt")
    for out in ("a", "b"):
        codes.append(run(["distill", "--input", str(tmp_path / "in"), "--ckpt", str(tmp_path / "m0.ckpt"),
                          "--eta", "5", "--seed", "9", "--out", str(tmp_path / out)]))
    names = sorted(p.name for p in (tmp_path / "a").glob("*.manifest.json"))
    same_man = len(names) == 2 and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = codes == [0, 0, 0, 0] and same_ckpt and same_man
    criterion(6, "determinism of checkpoints and manifests", ok,
              f"exit codes {codes}, checkpoint match {same_ckpt}, manifests match {same_man}")
    assert ok


@pytest.mark.slow
def test_synthetic_benchmark_trend(criterion):
    cfg = BenchConfig()
    t0 = time.time()
    rows = run_benchmark(cfg, seeds=5)
    elapsed = time.time() - t0
    table = summarize(rows)
    acc_p5, acc_r5 = table[("proposed", 5.0)]["acc_mean"], table[("random", 5.0)]["acc_mean"]

    def cell(strategy, seed, eta=5.0):
        return next(r for r in rows if r["strategy"] == strategy and r["seed"] == seed and r["eta"] == eta)

    seeds = sorted({r["seed"] for r in rows})
    wins = sum(cell("proposed", s)["coverage_radius"] < cell("random", s)["coverage_radius"] for s in seeds)
    trend = [table[("proposed", e)]["acc_mean"] for e in (1.0, 5.0, 10.0, 25.0)]
    monotone = all(a <= b for a, b in zip(trend, trend[1:]))
    ok = acc_p5 >= acc_r5 and wins >= 4 and monotone and elapsed < 30 * 60
    criterion(7, "synthetic benchmark ordering", ok,
              f"eta=5 acc proposed {acc_p5:.4f} vs random {acc_r5:.4f}, radius wins {wins}/5, "
              f"proposed acc by eta {[round(a, 4) for a in trend]}, {elapsed / 60:.1f} min, n={cfg.synth.n}")
    assert ok


def test_default_hyperparameters(criterion):
    cfg = CompressorConfig()
    got = {
        "epochs": cfg.epochs, "lr": cfg.base_lr, "clip": cfg.clip_norm, "decay": cfg.decay_factor,
        "decay_every": cfg.decay_every, "beta": cfg.beta, "enc_layers": cfg.enc_layers,
        "dec_layers": cfg.dec_layers, "heads": cfg.heads, "d": cfg.d_latent, "patches": cfg.num_patches,
    }
    want = {"epochs": 50, "lr": 1e-3, "clip": 5.0, "decay": 0.5, "decay_every": 10, "beta": 1e-4,
            "enc_layers": 6, "dec_layers": 2, "heads": 8, "d": 64, "patches": 20}
    sched = [lr_schedule(e, cfg.base_lr, cfg.decay_every, cfg.decay_factor) for e in (0, 9, 10, 49)]
    ok = got == want and sched == [1e-3, 1e-3, 5e-4, 6.25e-5]
    diff = {k: (got[k], want[k]) for k in want if got[k] != want[k]}
    criterion(8, "default hyperparameter snapshot", ok, f"mismatches {diff}" if diff else "all match")
    assert ok
