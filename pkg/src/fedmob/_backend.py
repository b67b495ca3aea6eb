"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise the pure
Python mirror takes over. Set ``FEDMOB_PURE=1`` to force the fallback (used
by the benchmark and the backend-parity tests).
"""

import os

_force_pure = os.environ.get("FEDMOB_PURE", "").strip().lower() in {"1", "true", "yes"}

if _force_pure:
    from fedmob import _pykernels as _impl

    BACKEND = "pure"
else:
    try:
        from fedmob import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from fedmob import _pykernels as _impl  # type: ignore[no-redef]

        BACKEND = "pure"

replicator_rhs = _impl.replicator_rhs
replicator_path = _impl.replicator_path
nondominated_fronts = _impl.nondominated_fronts


def backend_name() -> str:
    """Which kernel implementation is active: 'compiled' or 'pure'."""
    return BACKEND
