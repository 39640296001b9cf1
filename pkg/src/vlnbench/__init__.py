"""Graph-based evaluation harness for instruction-following navigation agents."""

from .metrics import MetricsReport, aggregate, score_episode
from .models import Model, ModelRequest, ModelResponse, ScriptedModel
from .observation import Observation, ObservationFormat, compose_observation, quantize_heading
from .records import TrajectoryRecord, read_log
from .registry import Registry, default_registry, register_component
from .runner import RunConfig, RunResult, load_config, run
from .tasks import EpisodeSpec, Granularity, Instruction, SamplingPlan, load_split, stratified_sample
from .world import Pose, WorldGraph, geodesic_distance, load_world, shortest_path

__version__ = "0.1.0"

__all__ = [
    "EpisodeSpec",
    "Granularity",
    "Instruction",
    "MetricsReport",
    "Model",
    "ModelRequest",
    "ModelResponse",
    "Observation",
    "ObservationFormat",
    "Pose",
    "Registry",
    "RunConfig",
    "RunResult",
    "SamplingPlan",
    "ScriptedModel",
    "TrajectoryRecord",
    "WorldGraph",
    "aggregate",
    "compose_observation",
    "default_registry",
    "geodesic_distance",
    "load_config",
    "load_split",
    "load_world",
    "quantize_heading",
    "read_log",
    "register_component",
    "run",
    "score_episode",
    "shortest_path",
    "stratified_sample",
]
