"""Encoder roster: canonical input sizes, patch geometry and token dims.

Sizes follow each model's published preprocessing: the SAM family takes
1024x1024 inputs, the DINO-v2 adapter defaults to 1792x1792 (reducible
for memory), MedCLIP-SAM takes 224x224. The stub encoder is a pure
pixel function so the pipeline stays testable without any weights.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import SliceEncError


@dataclass(frozen=True)
class EncoderSpec:
    """Static contract of one encoder."""

    id: str
    canonical_size: int
    patch_size: int
    token_dim: int
    recipe: str  # normalization recipe id, see preprocess.RECIPES
    checkpoint: str = ""

    def __post_init__(self):
        if self.canonical_size % self.patch_size != 0:
            raise SliceEncError(
                f"{self.id}: canonical size {self.canonical_size} not divisible "
                f"by patch size {self.patch_size}")

    @property
    def grid_side(self) -> int:
        return self.canonical_size // self.patch_size


ENCODERS = {
    "sam": EncoderSpec("sam", 1024, 16, 256, "sam-255",
                       checkpoint="facebook/sam-vit-base"),
    "medsam": EncoderSpec("medsam", 1024, 16, 256, "sam-255",
                          checkpoint="wanglab/medsam-vit-base"),
    "sslsam": EncoderSpec("sslsam", 1024, 16, 256, "sam-255",
                          checkpoint="facebook/sam-vit-base"),
    "dinov2": EncoderSpec("dinov2", 1792, 14, 384, "imagenet-unit",
                          checkpoint="facebook/dinov2-small"),
    "medclipsam": EncoderSpec("medclipsam", 224, 16, 768, "clip-unit",
                              checkpoint="openai/clip-vit-base-patch16"),
    "stub": EncoderSpec("stub", 64, 16, 8, "unit"),
}

# encoders whose canonical size may be overridden (memory-bound or synthetic)
RESIZABLE = {"stub", "dinov2"}


def get_spec(encoder_id: str, canonical_size: int | None = None) -> EncoderSpec:
    if encoder_id not in ENCODERS:
        raise SliceEncError(f"unknown encoder '{encoder_id}' "
                            f"(known: {', '.join(sorted(ENCODERS))})")
    spec = ENCODERS[encoder_id]
    if canonical_size is not None and canonical_size != spec.canonical_size:
        if encoder_id not in RESIZABLE:
            raise SliceEncError(f"{encoder_id}: canonical size is fixed at "
                                f"{spec.canonical_size}")
        spec = replace(spec, canonical_size=int(canonical_size))
    return spec


def weights_cached(spec: EncoderSpec) -> bool:
    """True when the encoder can run locally (stub always can)."""
    if spec.id == "stub":
        return True
    from .models import probe_weights

    return probe_weights(spec)


def list_encoders() -> list[dict]:
    """Roster table: one row per encoder plus local-weights flags."""
    rows = []
    for spec in ENCODERS.values():
        rows.append({
            "id": spec.id,
            "canonical_size": spec.canonical_size,
            "patch_size": spec.patch_size,
            "token_dim": spec.token_dim,
            "grid_side": spec.grid_side,
            "recipe": spec.recipe,
            "weights_cached": weights_cached(spec),
        })
    return rows
