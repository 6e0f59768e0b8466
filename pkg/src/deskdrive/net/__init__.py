"""From-scratch numeric kit: layers, LSTM cell, losses, Adam, gradient checking."""

from .layers import (  # noqa: F401
    LayerSpec,
    conv2d,
    relu,
    maxpool,
    batchnorm,
    dense,
    dropout,
    softmax,
    flatten,
    lstm,
    time_distributed,
    output_shape,
    layer_forward,
    layer_backward,
    init_layer_params,
)
from .lstm import LstmState, lstm_step  # noqa: F401
from .losses import mse_loss, cross_entropy_loss, LOSSES  # noqa: F401
from .optim import AdamState, adam_init, adam_update  # noqa: F401
from .model import Model, save_weights, load_weights, load_model, flatten_params  # noqa: F401
from .gradcheck import grad_check  # noqa: F401
