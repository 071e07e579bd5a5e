"""Two-stage, style-aware speech-to-3D-face animation at desk scale."""
from .config import BackboneConfig, LossWeights, RunConfig, StageSchedule, desk_config, load_config
from .model import Backbone

__version__ = "0.1.0"

__all__ = ["Backbone", "BackboneConfig", "LossWeights", "RunConfig", "StageSchedule",
           "desk_config", "load_config", "__version__"]
