"""Tactile sample extraction and the pluggable classifier."""
from .dataset import Dataset, load_dataset, save_dataset
from .evaluate import ConfusionMatrix, evaluate
from .model import ClassifierModel, TrainConfig, load_model, predict, save_model, train
from .preprocess import ClassSample, PcaPose, crop_rotate, extract_samples, pca_pose

__all__ = ["ClassSample", "ClassifierModel", "ConfusionMatrix", "Dataset", "PcaPose",
           "TrainConfig", "crop_rotate", "evaluate", "extract_samples", "load_dataset",
           "load_model", "pca_pose", "predict", "save_dataset", "save_model", "train"]
