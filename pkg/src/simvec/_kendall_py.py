"""Pure-Python inversion counting, the fallback for the compiled kernel.

Bottom-up merge sort counting strictly-decreasing pairs; equal elements are
never counted, so ties contribute nothing.
"""

from __future__ import annotations


def count_inversions(a) -> int:
    """Number of index pairs i < j with a[i] > a[j]."""
    src = list(a)
    n = len(src)
    buf = [0] * n
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    buf[k] = src[i]
                    i += 1
                else:
                    buf[k] = src[j]
                    j += 1
                    inv += mid - i
                k += 1
            buf[k:k + mid - i] = src[i:mid]
            k += mid - i
            buf[k:k + hi - j] = src[j:hi]
            src[lo:hi] = buf[lo:hi]
        width *= 2
    return inv
