"""Multi-scale joint refinement of flow, segmentation and normal predictions."""
from .config import RefineConfig, MODALITY_ORDER, COUPLINGS
from .pyramid import Pyramid, build_pyramid
from .model import RefineModel, infer, prepare, save_model, load_model
from .train import RefineData, TrainConfig, train, predict, evaluate_losses, trace_to_csv

__all__ = [
    "RefineConfig", "MODALITY_ORDER", "COUPLINGS", "Pyramid", "build_pyramid",
    "RefineModel", "infer", "prepare", "save_model", "load_model",
    "RefineData", "TrainConfig", "train", "predict", "evaluate_losses", "trace_to_csv",
]
