from .app import create_app
from .config import ServiceConfig
from .workflow import ConflictError, NotFoundError, ServiceError, Workflow

__all__ = [
    "ConflictError",
    "NotFoundError",
    "ServiceConfig",
    "ServiceError",
    "Workflow",
    "create_app",
]
