from .app import create_app
from .config import ServiceConfig, load_config

__all__ = ["create_app", "ServiceConfig", "load_config"]
