"""Sensor placement by clustering correlated candidates and attributing a learned surrogate."""

from .attribution import IGConfig, PipelineConfig, caaf_run, caaf_select, naive_fa_select
from .clustering import APConfig, affinity_propagation, cluster, compute_affinity
from .datamodel import SelectionResult, SensorDataset, apply_scaling, load_dataset, save_dataset
from .errors import CAAFError, ConfigError
from .surrogate import MLPConfig, TrainConfig, fit

__all__ = [
    "APConfig", "CAAFError", "ConfigError", "IGConfig", "MLPConfig", "PipelineConfig",
    "SelectionResult", "SensorDataset", "TrainConfig", "affinity_propagation", "apply_scaling",
    "caaf_run", "caaf_select", "cluster", "compute_affinity", "fit", "load_dataset",
    "naive_fa_select", "save_dataset",
]
