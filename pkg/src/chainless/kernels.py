"""Backend selection for the Merkle hashing kernels.

The compiled extension (``_ckernels``) is used when it was built; otherwise the
pure-Python module takes over. Both expose ``merkle_root``, ``merkle_levels``
and ``merkle_fold`` with identical results.
"""

from __future__ import annotations

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None else "python"


def use_backend(name: str) -> None:
    """Switch kernels at runtime: ``"cython"`` or ``"python"``."""
    global _active, BACKEND
    if name == "python":
        _active = python_backend
    elif name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _active = compiled_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def merkle_root(leaves):
    return _active.merkle_root(leaves)


def merkle_levels(leaves):
    return _active.merkle_levels(leaves)


def merkle_fold(leaf, index, siblings):
    return _active.merkle_fold(leaf, index, siblings)
