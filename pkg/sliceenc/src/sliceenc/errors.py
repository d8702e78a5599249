"""Adapter-side exception types."""


class SliceEncError(Exception):
    """Base class for adapter errors."""


class ModelUnavailable(SliceEncError):
    """Encoder weights are not available locally (offline environment)."""


class BadVolume(SliceEncError):
    """Input volume is unreadable or not a single-channel float volume."""
