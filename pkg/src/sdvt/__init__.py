"""Desk-scale vision-transformer training and distillation engine.

Submodules are imported lazily so the CLI can pin BLAS thread counts via
environment variables before numpy is loaded.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor", "losses", "optim", "gradcheck", "vit", "checkpoint",
    "distill", "data", "train", "metrics", "projection", "plots", "cli",
    "errors",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
