"""Reference denoiser server speaking the newline-delimited JSON protocol."""

from .server import ServerConfig, TabularServerModel, handle_line, serve

__all__ = ["ServerConfig", "TabularServerModel", "handle_line", "serve"]

__version__ = "0.1.0"
