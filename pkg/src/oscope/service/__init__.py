from .app import create_app, load_config, serve

__all__ = ["create_app", "load_config", "serve"]
