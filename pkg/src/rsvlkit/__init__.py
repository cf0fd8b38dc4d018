"""Toolkit for remote-sensing vision-language data curation and evaluation.

Submodules: geometry (box primitives), resolution (dynamic input planning),
tiling (sliding-window split/merge), response_codec (model-output grammar),
metrics (confidence-free AP and task accuracies), data_engine (record
unification + weighted sampling), zoomchain (two-turn UHR reasoning data),
cli (the ``rsvlkit`` command).
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    CategorySet,
    HBox,
    LabeledDetection,
    OBox,
    Point2D,
    QuadBox,
    canonicalize_quad,
    hbox_envelope,
    obox_to_quad,
    quad_area,
    quad_iou,
    scale_detections,
)
from .metrics import (  # noqa: F401
    ApNcProtocol,
    EvalReport,
    ScoredDetection,
    ap_nc,
    average_precision,
    classification_accuracy,
    grounding_accuracy,
    lrsvqa_average_accuracy,
    match_detections,
    mean_f1,
    threshold_sweep,
)
from .resolution import (  # noqa: F401
    ImageGeometry,
    PatchSpec,
    ResizePlan,
    ScaleClass,
    classify_scale,
    from_model_space,
    smart_resize,
    to_model_space,
)
