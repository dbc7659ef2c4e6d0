from .model import LstmParams, backward, forward, load_checkpoint, loss, save_checkpoint
from .train import TrainConfig, TrainResult, train_epochs

__all__ = ["LstmParams", "TrainConfig", "TrainResult", "backward", "forward", "load_checkpoint",
           "loss", "save_checkpoint", "train_epochs"]
