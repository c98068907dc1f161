"""dutrack: a vision-language tracker with dynamically updated multi-modal
references, a synthetic benchmark generator, and an evaluation harness."""

__version__ = "0.1.0"

from .boxes import Box
from .config import RunConfig, load_config
from .metrics import Metrics, iou, norm_precision, precision, success_auc
from .sequences import Sequence, read_sequence, write_sequence
from .synthworld import SynthSpec, generate_sequence, suite_specs
from .tracker import TrackConfig, init_tracker, track_frame, track_sequence

__all__ = [
    "Box",
    "Metrics",
    "RunConfig",
    "Sequence",
    "SynthSpec",
    "TrackConfig",
    "generate_sequence",
    "init_tracker",
    "iou",
    "load_config",
    "norm_precision",
    "precision",
    "read_sequence",
    "success_auc",
    "suite_specs",
    "track_frame",
    "track_sequence",
    "write_sequence",
]
