"""glibc allocator tuning.

Training allocates and frees many mid-sized float64 temporaries per step.
With glibc defaults every array above 128 KiB is a fresh ``mmap`` whose pages
fault in on first touch, which costs more than the arithmetic.  Raising the
mmap and trim thresholds lets those blocks be recycled from the heap.
"""
import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator() -> bool:
    """Idempotent; returns False when not running on glibc."""
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    mallopt(_M_MMAP_THRESHOLD, 512 * 1024 * 1024)
    mallopt(_M_TRIM_THRESHOLD, 1024 * 1024 * 1024)
    mallopt(_M_TOP_PAD, 64 * 1024 * 1024)
    _done = True
    return True
