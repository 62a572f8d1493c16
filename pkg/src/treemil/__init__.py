"""Tree-based multi-instance learning for time-series anomaly detection."""

from .config import RunConfig
from .data import SeriesDataset, SynthSpec, Window, segment, split, synthesize
from .evaluation import evaluate, f1, iou, score_map
from .model import TreeMIL
from .train import Trainer

__all__ = [
    "RunConfig",
    "SeriesDataset",
    "SynthSpec",
    "Window",
    "segment",
    "split",
    "synthesize",
    "evaluate",
    "f1",
    "iou",
    "score_map",
    "TreeMIL",
    "Trainer",
]
__version__ = "0.1.0"
