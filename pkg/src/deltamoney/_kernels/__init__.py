"""Backend selection for the Merkle hot loops.

The compiled extension is preferred when present; setting the environment
variable ``DELTAMONEY_PURE_PYTHON=1`` forces the pure-Python kernels (used by
the benchmark and by tests that compare the two backends).
"""

import os

from . import _merkle_py

if os.environ.get("DELTAMONEY_PURE_PYTHON"):
    _impl = _merkle_py
else:
    try:
        from . import _merkle_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _merkle_py

BACKEND = _impl.BACKEND
hash_leaves = _impl.hash_leaves
build_levels = _impl.build_levels
fold_proof = _impl.fold_proof

pure = _merkle_py
