"""Genetic search over bearing-fault detection pipelines for PMSM phase currents."""

__version__ = "0.1.0"

from faultpipe.core import (  # noqa: E402
    Dataset,
    DatasetError,
    Label,
    MotorMetadata,
    PhaseCurrentRecord,
    WorkingCondition,
    load_dataset,
    make_grouped_folds,
    save_dataset,
)
from faultpipe.kernels import BACKEND  # noqa: E402
from faultpipe.synthgen import SynthConfig, generate_dataset  # noqa: E402

__all__ = [
    "BACKEND",
    "Dataset",
    "DatasetError",
    "Label",
    "MotorMetadata",
    "PhaseCurrentRecord",
    "SynthConfig",
    "WorkingCondition",
    "__version__",
    "generate_dataset",
    "load_dataset",
    "make_grouped_folds",
    "save_dataset",
]
