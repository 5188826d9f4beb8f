"""Model-based calibration and sparse imaging for ultrasonic MIMO arrays."""

__version__ = "0.1.0"

from ._backend import get_backend, set_backend, use_backend
from .calibration import (
    BcdConfig,
    BcdState,
    CalibrationEstimate,
    CalibrationSet,
    calibrate,
    normalized_cost,
    rescale,
)
from .dictionary import (
    Dictionary,
    PhaseModel,
    build_dictionary,
    estimate_r0,
    load_dictionary,
    phase_response,
    save_dictionary,
)
from .imaging import OmpConfig, image, threshold_and_project
from .model import (
    ArrayGeometry,
    PositionParams,
    SharedParams,
    TargetPosition,
    rank1_cpd,
    synthesize,
)
from .tensor import fold, unfold

__all__ = [
    "__version__",
    "get_backend",
    "set_backend",
    "use_backend",
    "BcdConfig",
    "BcdState",
    "CalibrationEstimate",
    "CalibrationSet",
    "calibrate",
    "normalized_cost",
    "rescale",
    "Dictionary",
    "PhaseModel",
    "build_dictionary",
    "estimate_r0",
    "load_dictionary",
    "phase_response",
    "save_dictionary",
    "OmpConfig",
    "image",
    "threshold_and_project",
    "ArrayGeometry",
    "PositionParams",
    "SharedParams",
    "TargetPosition",
    "rank1_cpd",
    "synthesize",
    "fold",
    "unfold",
]
