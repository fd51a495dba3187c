"""Graph matching attention for visual question answering, in plain numpy."""
from .config import DESK, RunConfig, load_config
from .model import GmaNet, batch_loss, forward
from .train import evaluate, train

__all__ = ["DESK", "RunConfig", "load_config", "GmaNet", "batch_loss", "forward", "evaluate", "train"]
__version__ = "0.1.0"
