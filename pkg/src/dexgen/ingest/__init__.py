"""Interchange formats: reconstruction bundles, hand models, task annotations
and generated datasets."""

from .bundle import FrameRecord, ReconBundle, load_bundle, resample_frame_indices, write_bundle
from .dataset import load_demo_dataset, write_demo_dataset
from .formats import read_cloud, read_mesh, write_cloud, write_mesh
from .hand_model import HandModelSpec, hand_model_from_dict, load_hand_model, write_hand_model
from .tasks import TaskAnnotation, annotation_from_dict, load_task_annotation, write_task_annotation

__all__ = [
    "FrameRecord", "ReconBundle", "load_bundle", "resample_frame_indices", "write_bundle",
    "load_demo_dataset", "write_demo_dataset", "read_cloud", "read_mesh", "write_cloud",
    "write_mesh", "HandModelSpec", "hand_model_from_dict", "load_hand_model", "write_hand_model",
    "TaskAnnotation", "annotation_from_dict", "load_task_annotation", "write_task_annotation",
]
