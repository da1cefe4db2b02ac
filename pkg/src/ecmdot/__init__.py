"""ECM performance modeling and accuracy experiments for (Kahan) dot products."""
from __future__ import annotations

from .catalog import (
    KernelDescription,
    MachineDescription,
    bind,
    builtin_catalog,
    load_kernel,
    load_machine,
    predict,
    transfer_cycles,
)
from .model import (
    ECMInputs,
    ECMPrediction,
    LevelTransfer,
    OverlapPolicy,
    WorkUnit,
    compose_prediction,
    format_shorthand,
    parse_shorthand,
    predicted_performance,
    saturation_point,
    scale_curve,
)
from .scheduler import in_core_times, recurrence_bound, resource_bound

__version__ = "0.1.0"
