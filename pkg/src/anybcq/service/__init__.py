"""HTTP service; `uvicorn anybcq.service:app` serves the default home dir."""

from .server import create_app

__all__ = ["app", "create_app"]


def __getattr__(name):
    # build the default app (and its data dir) only when actually served
    if name == "app":
        return create_app()
    raise AttributeError(name)
