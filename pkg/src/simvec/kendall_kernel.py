"""Backend selection for the inversion-counting kernel.

Prefers the compiled Cython extension when it was built; otherwise falls
back to the pure-Python merge sort. Both produce identical integer counts.
"""

from __future__ import annotations

try:
    from . import _kendall_c as _impl
    COMPILED = True
except ImportError:  # extension not built
    from . import _kendall_py as _impl
    COMPILED = False

count_inversions = _impl.count_inversions
