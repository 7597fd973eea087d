"""Batch orchestration: train one compressor per input root, distill each dataset pair, export subsets."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .compressor import CompressorConfig, ConfigError, encode_dataset, load_checkpoint, save_checkpoint, train
from .distill import (
    ALPHA,
    STRATEGIES,
    TAU,
    SelectionManifest,
    distill_dataset,
    pca_embed,
    random_manifest,
    write_scores_csv,
)
from .rng import derive_seed
from .signal import IntegrityError, discover_pairs, load_segment_set, save_segment_set

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("dataset_id", "N", "kept", "selected", "coverage_radius", "subject_counts")


class UsageError(ValueError):
    """Bad command-line input: missing paths, empty inputs, out-of-range options."""


@dataclass
class RunConfig:
    input_root: str
    output_root: str
    eta: float = 5.0
    tau: float = TAU
    strategy: str = "proposed"
    checkpoint: str | None = None
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    bins: int | None = None
    alpha: float = ALPHA
    normalization: str = "max"
    init: str = "centroid"
    pca_dim: int = 64
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.eta <= 100:
            raise UsageError(f"eta must be in (0, 100], got {self.eta}")
        if not 0 <= self.tau < 100:
            raise UsageError(f"tau must be in [0, 100), got {self.tau}")
        if self.strategy not in STRATEGIES:
            raise UsageError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "proposed" and not self.checkpoint:
            raise UsageError("strategy 'proposed' needs a compressor checkpoint")
        if self.bins is not None and self.bins < 1:
            raise UsageError(f"bins must be >= 1, got {self.bins}")
        if not Path(self.input_root).exists():
            raise UsageError(f"input {self.input_root} does not exist")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def input_hashes(pairs: list[Path], root: Path) -> dict[str, str]:
    out = {}
    for p in pairs:
        h = hashlib.sha256()
        h.update(file_sha256(p / "data.bin").encode())
        h.update(file_sha256(p / "manifest.json").encode())
        out[str(p.relative_to(root)) if p != root else "."] = h.hexdigest()
    return out


def write_run_json(path, command: str, config: dict, seed: int, inputs: dict, **extra) -> None:
    doc = {"command": command, "config": config, "seed": seed, "inputs": inputs, **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _pairs_or_fail(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"input directory {root} does not exist")
    pairs = discover_pairs(root)
    if not pairs:
        raise UsageError(f"no dataset pairs (data.bin + manifest.json) under {root}")
    return pairs


def cmd_train_compressor(input_root, out_ckpt, config: CompressorConfig, argv: dict | None = None) -> dict:
    """Train one compressor on every pair under ``input_root``; writes checkpoint, log and run record."""
    root = Path(input_root)
    pairs = _pairs_or_fail(root)
    sets = [load_segment_set(p) for p in pairs]
    out_ckpt = Path(out_ckpt)
    out_ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = out_ckpt.with_name(out_ckpt.name + ".train_log.csv")
    model, rows = train(sets, config, log_path=log_path)
    digest = save_checkpoint(model, out_ckpt)
    write_run_json(
        out_ckpt.with_name(out_ckpt.name + ".run.json"),
        "train-compressor",
        {"compressor": asdict(model.config), "flags": argv or {}},
        config.seed,
        input_hashes(pairs, root),
        checkpoint_sha256=digest,
    )
    return {"checkpoint": str(out_ckpt), "sha256": digest, "log": str(log_path), "final": rows[-1]}


def cmd_distill(cfg: RunConfig, argv: dict | None = None) -> list[dict]:
    """Encode, score, remove and select per dataset pair; returns the summary rows."""
    cfg.validate()
    root = Path(cfg.input_root)
    pairs = _pairs_or_fail(root)
    out = Path(cfg.output_root)
    out.mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(cfg.checkpoint) if cfg.strategy == "proposed" else None
    if model is not None:
        cfg.compressor = model.config
    ckpt_hash = file_sha256(cfg.checkpoint) if model is not None else None

    summary, seen = [], set()
    for pair in pairs:
        seg = load_segment_set(pair)
        if seg.dataset_id in seen:
            raise IntegrityError(f"duplicate dataset_id {seg.dataset_id!r} under {root}")
        seen.add(seg.dataset_id)
        sel_seed = derive_seed(cfg.seed, "select", seg.dataset_id)
        common = {"checkpoint_sha256": ckpt_hash, "bins_flag": cfg.bins}
        if cfg.strategy == "random":
            man = random_manifest(len(seg), cfg.eta, sel_seed, seg.dataset_id, common)
            scores = None
        else:
            if cfg.strategy == "proposed":
                latents = encode_dataset(seg, model)
            else:
                latents = pca_embed(seg, cfg.pca_dim)
            man, scores = distill_dataset(latents, cfg.tau, cfg.eta, sel_seed, seg.dataset_id, cfg.bins, cfg.alpha,
                                          cfg.normalization, cfg.init, {**common, "strategy": cfg.strategy})
            man.strategy = cfg.strategy
        man.seed = int(cfg.seed)
        counts = Counter(seg.subject_ids[i] for i in man.selected)
        man.extra = {**(man.extra or {}), "selection_seed": sel_seed, "subject_counts": dict(sorted(counts.items()))}
        man.save(out / f"{seg.dataset_id}.manifest.json")
        if scores is not None:
            write_scores_csv(scores, out / f"{seg.dataset_id}.scores.csv")
        summary.append({
            "dataset_id": seg.dataset_id,
            "N": len(seg),
            "kept": len(man.kept_after_ood),
            "selected": len(man.selected),
            "coverage_radius": man.coverage_radius,
            "subject_counts": ";".join(f"{k}:{v}" for k, v in sorted(counts.items())),
        })
        log.info("%s: N=%d kept=%d selected=%d", seg.dataset_id, len(seg), len(man.kept_after_ood), len(man.selected))

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in summary:
            w.writerow({**row, "coverage_radius": "" if row["coverage_radius"] is None else repr(row["coverage_radius"])})
    resolved = asdict(cfg)
    write_run_json(out / "run.json", "distill", {"resolved": resolved, "flags": argv or {}}, cfg.seed,
                   input_hashes(pairs, root), checkpoint_sha256=ckpt_hash)
    return summary


def cmd_export(manifest_path, input_pair, out_pair) -> Path:
    """Write a new container pair holding only the selected segments, in manifest order."""
    man = SelectionManifest.load(manifest_path)
    seg = load_segment_set(input_pair)
    if man.n != len(seg):
        raise IntegrityError(f"manifest covers N={man.n} segments but {input_pair} holds {len(seg)}")
    idx = np.asarray(man.selected, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(seg)):
        raise IntegrityError(f"manifest selects indices outside 0..{len(seg) - 1}")
    sub = seg.subset(idx)
    if len(idx) != len(seg) or np.any(idx != np.arange(len(seg))):
        sub.source_notes = f"{seg.source_notes} | distilled: {len(idx)}/{len(seg)} ({man.strategy}, eta={man.eta}%)".strip(" |")
    return save_segment_set(sub, out_pair)
