"""Exception types shared across the package."""


class MeshFormatError(ValueError):
    """Malformed mesh file or out-of-range face index."""


class EmptyMeshError(ValueError):
    """Mesh has no faces."""


class DimensionError(ValueError):
    """Per-vertex arrays disagree in length."""


class SimilarityError(ValueError):
    """Cosine similarity requested for a zero vector."""


class CapabilityError(RuntimeError):
    """A required backend (pretrained weights, device) is unavailable."""


class ConsistencyError(RuntimeError):
    """Artifacts that should describe the same mesh do not."""


class NumericsError(RuntimeError):
    """Optimization produced a non-finite value."""
