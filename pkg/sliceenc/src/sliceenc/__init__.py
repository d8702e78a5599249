"""sliceenc: run pretrained vision encoders slice-by-slice over volumes
and emit patch-token feature stacks as FVOL files."""

__version__ = "0.1.0"

from .errors import BadVolume, ModelUnavailable, SliceEncError
from .extract import extract_features
from .preprocess import preprocess_slice
from .specs import EncoderSpec, get_spec, list_encoders

__all__ = [
    "BadVolume", "EncoderSpec", "ModelUnavailable", "SliceEncError",
    "extract_features", "get_spec", "list_encoders", "preprocess_slice",
]
