from .checkpoint import CheckpointError
from .config import DatasetConfig, OptimizerConfig, TrainConfig
from .data import Dataset, IdxFormatError, load_idx_dataset, read_idx, write_idx, write_idx_dataset
from .gradcheck import gradcheck
from .loop import TrainingError, build_model, evaluate, restore, save_checkpoint, train
from .model import KWNet
from .stats import AttentionStats, collect_attention_stats, write_stats_csv
