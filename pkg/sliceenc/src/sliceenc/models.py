"""Optional real-encoder backends (torch + transformers, local cache only).

Loading never touches the network: checkpoints must already sit in the
local HF cache, otherwise ModelUnavailable is raised and callers fall
back to the stub. The adapter taps each model's final encoder output
(the SAM family's neck output carries the 256-dim tokens; ViT backbones
expose patch tokens directly) and drops the CLS token.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelUnavailable
from .specs import EncoderSpec


def probe_weights(spec: EncoderSpec) -> bool:
    """True when the checkpoint config resolves from the local cache."""
    if not spec.checkpoint:
        return False
    try:
        from transformers import AutoConfig

        AutoConfig.from_pretrained(spec.checkpoint, local_files_only=True)
        return True
    except Exception:
        return False


def _to_batch(preprocessed: np.ndarray):
    import torch

    arr = np.ascontiguousarray(preprocessed.transpose(2, 0, 1), dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0)


def load_encoder(spec: EncoderSpec):
    """Callable (canonical, canonical, 3) float32 -> (grid, grid, D) tokens."""
    try:
        import torch
    except ImportError as exc:
        raise ModelUnavailable(f"{spec.id}: torch is not installed") from exc
    try:
        if spec.recipe == "sam-255":
            from transformers import SamModel

            model = SamModel.from_pretrained(spec.checkpoint, local_files_only=True)
            encoder = model.vision_encoder.eval()

            def encode(preprocessed: np.ndarray) -> np.ndarray:
                with torch.no_grad():
                    out = encoder(_to_batch(preprocessed)).last_hidden_state
                # neck output (1, D, side, side)
                return out[0].permute(1, 2, 0).numpy().astype(np.float32)

        elif spec.id == "dinov2":
            from transformers import AutoModel

            model = AutoModel.from_pretrained(spec.checkpoint, local_files_only=True).eval()

            def encode(preprocessed: np.ndarray) -> np.ndarray:
                with torch.no_grad():
                    tokens = model(pixel_values=_to_batch(preprocessed)).last_hidden_state
                side = spec.canonical_size // spec.patch_size
                patch = tokens[0, 1:, :]  # drop CLS
                return patch.reshape(side, side, -1).numpy().astype(np.float32)

        else:
            from transformers import CLIPVisionModel

            model = CLIPVisionModel.from_pretrained(spec.checkpoint,
                                                    local_files_only=True).eval()

            def encode(preprocessed: np.ndarray) -> np.ndarray:
                with torch.no_grad():
                    tokens = model(pixel_values=_to_batch(preprocessed)).last_hidden_state
                side = spec.canonical_size // spec.patch_size
                patch = tokens[0, 1:, :]
                return patch.reshape(side, side, -1).numpy().astype(np.float32)

    except ModelUnavailable:
        raise
    except Exception as exc:
        raise ModelUnavailable(
            f"{spec.id}: cannot load '{spec.checkpoint}' from the local cache "
            f"({exc})") from exc
    return encode
