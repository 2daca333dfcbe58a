# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inversion-counting kernel for the Kendall tau hot path.

Same algorithm as simvec._kendall_py: bottom-up merge sort counting
strictly-decreasing pairs, so both backends agree exactly.
"""

import numpy as np


def count_inversions(arr):
    """Number of index pairs i < j with arr[i] > arr[j]."""
    # always copy: the merge sort scrambles src, and the caller's array
    # must stay intact
    cdef long long[::1] src = np.array(arr, dtype=np.int64, copy=True)
    cdef Py_ssize_t n = src.shape[0]
    cdef long long[::1] buf = np.empty(n, dtype=np.int64)
    cdef unsigned long long inv = 0
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    while width < n:
        lo = 0
        while lo < n:
            mid = lo + width
            if mid > n:
                mid = n
            hi = lo + 2 * width
            if hi > n:
                hi = n
            i = lo; j = mid; k = lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    buf[k] = src[i]
                    i += 1
                else:
                    buf[k] = src[j]
                    j += 1
                    inv += mid - i
                k += 1
            while i < mid:
                buf[k] = src[i]
                i += 1; k += 1
            while j < hi:
                buf[k] = src[j]
                j += 1; k += 1
            for k in range(lo, hi):
                src[k] = buf[k]
            lo += 2 * width
        width *= 2
    return int(inv)
