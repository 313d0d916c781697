"""Seleção de detecções em cenas aglomeradas com processos pontuais determinantais."""

from .config import Config
from .dpp import FeatureMatrix, KernelMatrix, SimilarityMatrix, build_kernel, build_similarity, log_det_psd
from .errors import (
    CombinatorialLimitError,
    ConfigError,
    InvalidInputError,
    NumericalDomainError,
    SceneGenerationError,
    SeletorError,
)
from .evaluation import EvalReport, average_precision, coco_ap, correct_box_probability, crowd_recall, evaluate
from .geometry import BoundingBox, GroundTruthObject, iou, iou_matrix
from .inference import SelectionResult, exact_map, idpp_greedy, nms, select_scene
from .losses import LossBundle, id_loss_all, id_loss_ic, ss_loss
from .matching import hungarian
from .scene import Candidate, Detection, Scene
from .synthetic import SceneSpec, TrainState, generate_scene, train_toy

__all__ = [
    "BoundingBox",
    "Candidate",
    "CombinatorialLimitError",
    "Config",
    "ConfigError",
    "Detection",
    "EvalReport",
    "FeatureMatrix",
    "GroundTruthObject",
    "InvalidInputError",
    "KernelMatrix",
    "LossBundle",
    "NumericalDomainError",
    "Scene",
    "SceneGenerationError",
    "SceneSpec",
    "SelectionResult",
    "SeletorError",
    "SimilarityMatrix",
    "TrainState",
    "average_precision",
    "build_kernel",
    "build_similarity",
    "coco_ap",
    "correct_box_probability",
    "crowd_recall",
    "evaluate",
    "exact_map",
    "generate_scene",
    "hungarian",
    "id_loss_all",
    "id_loss_ic",
    "idpp_greedy",
    "iou",
    "iou_matrix",
    "log_det_psd",
    "nms",
    "select_scene",
    "ss_loss",
    "train_toy",
]
