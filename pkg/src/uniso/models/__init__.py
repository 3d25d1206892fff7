from .config import ModelConfig
from .network import UniSONet, parameter_count
from .state import (
    ModelState,
    attention_profile,
    attention_shares,
    embed,
    init_model,
    load_checkpoint,
    pad_batch,
    pooled_embeddings,
    predict_n,
    predict_t,
    save_checkpoint,
)
from .training import (
    Corpus,
    TaskData,
    TrainConfig,
    build_corpus,
    finetune_few_shot,
    make_batch,
    train_n,
    train_step_t,
    train_t,
)

__all__ = [
    "Corpus",
    "ModelConfig",
    "ModelState",
    "TaskData",
    "TrainConfig",
    "UniSONet",
    "attention_profile",
    "attention_shares",
    "build_corpus",
    "embed",
    "finetune_few_shot",
    "init_model",
    "load_checkpoint",
    "make_batch",
    "pad_batch",
    "parameter_count",
    "pooled_embeddings",
    "predict_n",
    "predict_t",
    "save_checkpoint",
    "train_n",
    "train_step_t",
    "train_t",
]
