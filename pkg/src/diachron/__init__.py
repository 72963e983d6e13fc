"""Time-conditioned cross-modal embeddings.

Projects images and texts into one space where an item's neighborhood
depends on the instant of projection, trained with a temporally constrained
ranking loss; includes a binned+Procrustes baseline and the retrieval
evaluation suite.
"""

from ._kernels import (
    active_backend_name,
    available_backends,
    kernel_backends,
    set_backend,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "active_backend_name",
    "available_backends",
    "kernel_backends",
    "set_backend",
]
