"""A small numpy CNN: layers, training and inference."""
from .network import (Checkpoint, Network, NetworkSpec, forward, loss_and_gradients, monitor,
                      predict_probability)
from .train import TrainConfig, cosine_lr, sgd_step, train

__all__ = ["Checkpoint", "Network", "NetworkSpec", "TrainConfig", "cosine_lr", "forward",
           "loss_and_gradients", "monitor", "predict_probability", "sgd_step", "train"]
