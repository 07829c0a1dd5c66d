from leaps.zoo.checkpoint import load_model, save_model
from leaps.zoo.data import (CLASS_NAMES, ClipParams, SyntheticDataset, SyntheticVideoSpec, generate_dataset,
                            label_of, render, sample_params)
from leaps.zoo.models import ToyConv3d, ToyVideoTransformer, build_model, freeze
from leaps.zoo.train import ToyModelSpec, TrainingReport, accuracy, fit, train_model

__all__ = [
    "CLASS_NAMES", "ClipParams", "SyntheticDataset", "SyntheticVideoSpec", "ToyConv3d", "ToyModelSpec",
    "ToyVideoTransformer", "TrainingReport", "accuracy", "build_model", "fit", "freeze", "generate_dataset",
    "label_of", "load_model", "render", "sample_params", "save_model", "train_model",
]
