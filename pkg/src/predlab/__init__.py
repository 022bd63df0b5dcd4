"""Learned next-frame prediction: CRNN, CLSTM and residual FCNN predictors on a
small reverse-mode autodiff engine, with stateless and stateful truncated
BPTT training and a PSNR benchmark harness."""

__version__ = "0.1.0"

from .tensor import Tensor, backward, conv2d, detach, mse_loss, no_grad
from .models import (
    FcnnConfig,
    ModelParams,
    RecurrentConfig,
    RecurrentState,
    fcnn_forward,
    init_params,
    load_checkpoint,
    param_count,
    recurrent_step,
    save_checkpoint,
)
from .training import TrainConfig, TrainLog, run_training
from .evaluation import bench_runtime, copy_last_frame_baseline, predict_video, psnr

__all__ = [
    "Tensor", "backward", "conv2d", "detach", "mse_loss", "no_grad",
    "FcnnConfig", "ModelParams", "RecurrentConfig", "RecurrentState", "fcnn_forward",
    "init_params", "load_checkpoint", "param_count", "recurrent_step", "save_checkpoint",
    "TrainConfig", "TrainLog", "run_training",
    "bench_runtime", "copy_last_frame_baseline", "predict_video", "psnr",
]
