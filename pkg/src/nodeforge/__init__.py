"""Domain node generation and reward-driven node refinement for multi-agent pipelines."""

from .errors import *  # noqa: F401,F403
from .model import NodeBlueprint, NodeLibrary, build_pipeline_graph, validate_library  # noqa: F401
from .reward import (  # noqa: F401
    aggregate_epoch,
    consistency_score,
    improvement_score,
    objective,
    quality_score,
    relative_gain,
    score_trajectory,
    step_rewards,
)
from .runtime import Sample, Trajectory, execute_node, run_pipeline  # noqa: F401

__version__ = "0.1.0"
