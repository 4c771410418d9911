"""sembench: desk-scale contrastive sentence-embedding workbench."""

__version__ = "0.1.0"

from .backend import active_backend, set_backend, use_backend  # noqa: F401
from .errors import SembenchError  # noqa: F401
