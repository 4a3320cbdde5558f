"""Zero-shot two-pass VLM grounding of traffic accidents in CCTV video.

Time, impact point and collision type come from two frozen vision-language
models, merged by two deterministic confidence gates. The package also
carries the benchmark metric, bootstrap statistics and failure diagnostics.
"""

from .config import FallbackMode, RunConfig, Workers, resolve_config
from .evaluator import (
    ScoreRow,
    bootstrap_ci,
    dataset_summary,
    paired_bootstrap,
    score_video,
    spatial_score,
    temporal_score,
    type_score,
)
from .gates import gate1_temporal, gate2_spatial
from .parser import extract_json_block, normalize_type, parse_pass1, parse_pass2
from .pipeline import ground_video, naive_fill, run_batch
from .types import CollisionType, GroundTruth, PassKind, Prediction, VideoRecord

__version__ = "0.1.0"

__all__ = [
    "CollisionType",
    "FallbackMode",
    "GroundTruth",
    "PassKind",
    "Prediction",
    "RunConfig",
    "ScoreRow",
    "VideoRecord",
    "Workers",
    "bootstrap_ci",
    "dataset_summary",
    "extract_json_block",
    "gate1_temporal",
    "gate2_spatial",
    "ground_video",
    "naive_fill",
    "normalize_type",
    "paired_bootstrap",
    "parse_pass1",
    "parse_pass2",
    "resolve_config",
    "run_batch",
    "score_video",
    "spatial_score",
    "temporal_score",
    "type_score",
]
