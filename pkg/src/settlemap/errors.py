"""Exception hierarchy shared by all settlemap modules."""


class SettlemapError(Exception):
    """Base class for every error raised by this package."""


class ContractError(SettlemapError, ValueError):
    """An argument violates a documented precondition of the called operation."""


class DomainError(SettlemapError, ValueError):
    """Inputs are structurally valid but outside the operable domain."""


class ConfigError(SettlemapError):
    """A configuration file, manifest, or threshold table is invalid or incomplete."""


class RasterFormatError(SettlemapError):
    """A raster file is malformed or uses an unsupported layout."""


class TrainingError(SettlemapError, RuntimeError):
    """Classifier training failed to converge within its iteration budget."""


class UnclassifiableUnitError(DomainError):
    """A working unit has no usable training candidates for one of the classes."""


class PipelineStageError(SettlemapError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
