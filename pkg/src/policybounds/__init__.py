"""Sharp bounds on counterfactual treatment-assignment policies in multi-judge designs."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    MTR,
    AverageDisagreement,
    DataDistribution,
    JudgeCell,
    KnownY0,
    KnownY1,
    ModelError,
    OutcomeDisparity,
    OutcomeGrid,
    PairwiseDisagreement,
    PCBound,
    PolicyMonotonicity,
    PolicySpec,
    RestrictionSet,
    TECap,
    validate_instance,
)
from .identify import BoundsResult, identified_set, intersection_bounds_universal  # noqa: E402

__all__ = [
    "MTR",
    "AverageDisagreement",
    "BoundsResult",
    "DataDistribution",
    "JudgeCell",
    "KnownY0",
    "KnownY1",
    "ModelError",
    "OutcomeDisparity",
    "OutcomeGrid",
    "PairwiseDisagreement",
    "PCBound",
    "PolicyMonotonicity",
    "PolicySpec",
    "RestrictionSet",
    "TECap",
    "identified_set",
    "intersection_bounds_universal",
    "validate_instance",
]
