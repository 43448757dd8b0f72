"""Exception hierarchy shared by all clustercam modules."""


class ClusterCamError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ClusterCamError):
    """An input value violates a documented invariant."""


class DimensionMismatchError(ValidationError):
    """Arrays that must share a shape do not."""


class NonFiniteError(ValidationError):
    """An array contains NaN or infinity."""


class ParameterError(ValidationError):
    """A parameter is out of its documented range."""


class ConvergenceError(ClusterCamError):
    """An iterative solver exhausted its budget without converging."""


class ModelLoadError(ClusterCamError):
    """A model file could not be parsed."""


class UnknownLayerError(ModelLoadError):
    """The requested layer is not in the model graph.

    Carries the candidate layer names so callers can print suggestions.
    """

    def __init__(self, layer: str, candidates: list[str]):
        self.layer = layer
        self.candidates = candidates
        preview = ", ".join(candidates[:12])
        if len(candidates) > 12:
            preview += ", ..."
        super().__init__(f"unknown layer {layer!r}; conv-like candidates: {preview}")


class UnsupportedSplitError(ClusterCamError):
    """The model graph cannot be re-entered at the requested layer."""


class UsageError(ClusterCamError):
    """Bad command-line arguments or configuration (CLI exit code 1)."""
