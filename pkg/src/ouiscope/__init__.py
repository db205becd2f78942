"""OUI-instrumented deterministic MLP training, screening and decay control."""

from .metric import (
    ActivationCounts,
    ActivationMask,
    MinorityCounts,
    OuiValue,
    activation_counts,
    compute_masks,
    minority_counts,
    oui_from_preactivations,
    oui_of_mask,
)

__version__ = "0.1.0"
