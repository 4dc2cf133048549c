"""Model-worker service for the synthetic data generation engine."""

from .config import WorkerConfig
from .model import TinyCausalLM
from .service import build_app

__version__ = "0.1.0"
__all__ = ["WorkerConfig", "TinyCausalLM", "build_app", "__version__"]
