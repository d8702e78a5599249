"""featreg: training-free deformable 3-D registration of feature volumes.

Aligns multi-channel feature volumes (or raw intensity volumes) with a
two-stage optimizer: a coupled convex solve over a discrete displacement
search space followed by Adam instance refinement of the energy
E(phi) = MSE(ref, mov∘phi) + lambda * |grad phi|^2.
"""

__version__ = "0.1.0"

from .discrete import (
    CandidateSet,
    ControlGrid,
    CostVolume,
    build_cost_volume,
    coupled_convex,
    upsample_field,
)
from .errors import FeatRegError
from .features import (
    PcaProjection,
    SliceFeatureStack,
    apply_pca,
    fit_joint_pca,
    interpolate_skipped_slices,
    upsample_to_volume,
)
from .metrics import RegistrationReport, dice, jacobian_stats, lesion_volume_error, write_report
from .refine import AdamParams, EnergyConfig, adam_refine, energy, energy_gradient, warp
from .volume import (
    FeatureVolume,
    LabelMask,
    pad_to_cube,
    read_fvol,
    resample_isotropic,
    write_fvol,
)

__all__ = [
    "AdamParams", "CandidateSet", "ControlGrid", "CostVolume", "EnergyConfig",
    "FeatRegError", "FeatureVolume", "LabelMask", "PcaProjection",
    "RegistrationReport", "SliceFeatureStack", "adam_refine", "apply_pca",
    "build_cost_volume", "coupled_convex", "dice", "energy", "energy_gradient",
    "fit_joint_pca", "interpolate_skipped_slices", "jacobian_stats",
    "lesion_volume_error", "pad_to_cube", "read_fvol", "resample_isotropic",
    "upsample_field", "upsample_to_volume", "warp", "write_fvol", "write_report",
]
