"""Select small, diverse, artifact-free subsets of multichannel segment datasets."""

from .bench import BenchConfig, run_benchmark
from .compressor import Compressor, CompressorConfig, encode_dataset, load_checkpoint, save_checkpoint, train
from .distill import SelectionManifest, distill_dataset, fit_histograms, kcenter_select, score_ood
from .signal import SegmentSet, load_segment_set, make_views, save_segment_set
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "Compressor",
    "CompressorConfig",
    "SegmentSet",
    "SelectionManifest",
    "SynthSpec",
    "distill_dataset",
    "encode_dataset",
    "fit_histograms",
    "generate",
    "kcenter_select",
    "load_checkpoint",
    "load_segment_set",
    "make_views",
    "run_benchmark",
    "save_checkpoint",
    "save_segment_set",
    "score_ood",
    "train",
]
