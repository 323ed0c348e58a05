from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compare import SummaryRow, compare, discover_configs
from .config import ExperimentConfig, load_config, parse_text
from .data import Dataset, Standardizer, load_csv, parse_csv, split
from .runner import evaluate_checkpoint, prepare, run_experiment

__all__ = [
    "Checkpoint",
    "Dataset",
    "ExperimentConfig",
    "Standardizer",
    "SummaryRow",
    "compare",
    "discover_configs",
    "evaluate_checkpoint",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "parse_csv",
    "parse_text",
    "prepare",
    "run_experiment",
    "save_checkpoint",
    "split",
]
