"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy reference is
the fallback. `FTLK_BACKEND` overrides: "python" forces the reference,
"cython" demands the extension (ImportError if missing), "auto" (default)
takes what it can get. Both backends expose the same function surface.
"""

import os

from . import reference

_choice = os.environ.get("FTLK_BACKEND", "auto").lower()

if _choice not in ("auto", "python", "cython"):
    raise ValueError(f"FTLK_BACKEND must be auto|python|cython, got {_choice!r}")

if _choice == "python":
    _impl = reference
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "cython":
            raise
        _impl = reference


def active_backend() -> str:
    return _impl.NAME


def get_backend(name: str):
    """Explicit backend module by name, independent of the ambient choice."""
    if name == "python":
        return reference
    if name == "cython":
        from . import _fast

        return _fast
    raise ValueError(f"unknown backend {name!r}")


dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
mha_forward = _impl.mha_forward
mha_backward = _impl.mha_backward
