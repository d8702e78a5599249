"""Pipeline configuration: flat key=value files with CLI overrides.

Flags win over file values; every effective value is echoed into the
report so a run can be reproduced from its own output.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvariantViolation, IoFailure

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _BOOL_TRUE:
        return True
    if v in _BOOL_FALSE:
        return False
    raise InvariantViolation(f"not a boolean: '{value}'")


@dataclass
class PipelineConfig:
    """Every knob of a registration run, file- and flag-settable."""

    fixed: str = ""
    moving: str = ""
    fixed_mask: str = ""
    moving_mask: str = ""
    out_dir: str = "out"
    pair_id: str = ""
    d: int = 0  # 0 = per-encoder default (resolved from the stack metadata)
    skip_pca: bool = False
    lam: float = 2.0
    stage1_grid: int = 4
    stage1_radius: int = 6
    stage1_step: int = 2
    stage1_iters: int = 3
    stage1_alpha: tuple = (1.0, 3.0, 10.0)
    stage2_spacing: int = 2
    adam_lr: float = 1.0
    adam_iters: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    lesion_label: int = 0
    dump_stage1: bool = False
    timing: str = "wall"
    preprocess: bool = False
    target_spacing: float = 1.0
    pad_size: int = 512

    def __post_init__(self):
        if self.d < 0:
            raise InvariantViolation("d must be >= 0 (0 = per-encoder default)")
        if self.lam < 0:
            raise InvariantViolation("lam must be >= 0")
        if self.stage1_grid < 1 or self.stage1_step < 1 or self.stage1_radius < 0:
            raise InvariantViolation("stage-1 grid/step must be >= 1, radius >= 0")
        if self.stage1_radius % self.stage1_step != 0:
            raise InvariantViolation("stage1_radius must be divisible by stage1_step")
        if self.stage1_iters < 1:
            raise InvariantViolation("stage1_iters must be >= 1")
        self.stage1_alpha = tuple(float(a) for a in self.stage1_alpha)
        if len(self.stage1_alpha) != self.stage1_iters:
            raise InvariantViolation(
                f"need {self.stage1_iters} alpha values, got {len(self.stage1_alpha)}")
        if self.timing not in ("wall", "zero"):
            raise InvariantViolation("timing must be 'wall' or 'zero'")
        if self.adam_iters < 0:
            raise InvariantViolation("adam_iters must be >= 0")
        if self.target_spacing <= 0:
            raise InvariantViolation("target_spacing must be positive")

    @property
    def alphas(self) -> tuple:
        """Effective coupling weights: multipliers scaled by lambda."""
        return tuple(a * self.lam for a in self.stage1_alpha)

    def echo(self) -> dict[str, str]:
        """Flat string map of every effective value (report embed)."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                out[f.name] = ",".join(repr(v) if isinstance(v, float) else str(v)
                                       for v in value)
            elif isinstance(value, bool):
                out[f.name] = "true" if value else "false"
            elif isinstance(value, float):
                out[f.name] = repr(value)
            else:
                out[f.name] = str(value)
        return out


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    raw = raw.strip()
    if name not in _FIELD_TYPES:
        raise InvariantViolation(f"unknown config key '{name}'")
    current = PipelineConfig.__dataclass_fields__[name].default
    if name == "stage1_alpha":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if isinstance(current, bool):
        return _parse_bool(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment; blank lines skipped."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise InvariantViolation(f"{path}:{lineno}: expected key=value, got '{line}'")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return values


def build_config(file_path=None, overrides: dict | None = None) -> PipelineConfig:
    """File values first, then overrides (CLI flags win)."""
    values = {}
    if file_path:
        values.update(parse_config_file(file_path))
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return PipelineConfig(**values)
