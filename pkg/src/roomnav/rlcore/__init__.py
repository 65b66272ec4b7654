from .checkpoint import CheckpointError, load_policy, policy_meta, read_checkpoint, save_checkpoint
from .policy import ArchConfig, ConfigError, RecurrentPolicy, policy_forward, tiny_arch
from .ppo import (
    PPO,
    DivergenceError,
    EnvWorkerError,
    MetricsWriter,
    PpoConfig,
    RolloutBatch,
    RolloutCollector,
    clipped_surrogate,
    collect_rollouts,
    compute_gae,
    normalize_advantages,
    ppo_loss,
    ppo_update,
    train_ppo,
)
