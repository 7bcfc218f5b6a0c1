from src.training.optim import AdamState, optim_step
from src.training.schedule import SCHEDULES, lr_at
from src.training.stage import GROUPS, STAGE1_GROUPS, STAGE2_GROUPS, StageConfig, trainable_names
from src.training.trainer import (
    METRIC_COLUMNS,
    StageResult,
    StageTrainer,
    eval_schedule,
    final_metrics,
    language_probabilities,
    routing_weights,
    train_stage1,
    train_stage2,
)
from src.training.warmstart import WarmStartSource, compatibility_problems, initial_b_warmstart, steps_to_threshold
