from .gating import GatingAnalysis, analyze_gating, componentwise_field, hadamard_field, staircase_integral
from .gru import GruCell, GruSnofLike, gru_forward, gru_to_snof_like
from .lpgrnn import (LpGrnnCell, lpgrnn_forward, lpgrnn_from_snof, lpgrnn_intermediate, lpgrnn_rollout,
                     lpgrnn_step, lpgrnn_to_snof)
from .training import TrainConfig, effective_memory, loss_and_grad, rmse, sensitivity_curve, train_bptt

__all__ = [
    "GatingAnalysis", "analyze_gating", "componentwise_field", "hadamard_field", "staircase_integral",
    "GruCell", "GruSnofLike", "gru_forward", "gru_to_snof_like",
    "LpGrnnCell", "lpgrnn_forward", "lpgrnn_from_snof", "lpgrnn_intermediate", "lpgrnn_rollout",
    "lpgrnn_step", "lpgrnn_to_snof",
    "TrainConfig", "effective_memory", "loss_and_grad", "rmse", "sensitivity_curve", "train_bptt",
]
