"""Hot-loop kernels, compiled when available.

The Cython extension ``_ckernels`` is used if it imports; otherwise the
pure-Python ``_pykernels`` provide identical results, only slower. Set
``MNKLAB_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import SplitMix64

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MNKLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

features = _impl.features
playouts = _impl.playouts
mcts_uniform = _impl.mcts_uniform


def negamax(cells, depth, theta, W, lines, through, k, centers, prune=True, table=None, table_empties=-1):
    if table is not None:
        return _pykernels.negamax(cells, depth, theta, W, lines, through, k, centers, prune, table, table_empties)
    return _impl.negamax(cells, depth, theta, W, lines, through, k, centers, prune)


__all__ = ["BACKEND", "SplitMix64", "features", "negamax", "playouts", "mcts_uniform"]
