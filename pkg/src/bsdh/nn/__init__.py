from .checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .layers import tanh_like, tanh_like_grad
from .model import LayerSpec, Model, build_model, preset
from .optim import SGD, sgd_step

__all__ = [
    "LayerSpec", "Model", "SGD", "build_model", "dumps_checkpoint", "grad_check", "load_checkpoint",
    "loads_checkpoint",
    "preset", "relative_error", "save_checkpoint", "sgd_step", "tanh_like", "tanh_like_grad",
]
