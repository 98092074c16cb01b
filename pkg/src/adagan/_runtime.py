"""Process-level tuning applied by the command-line entry point."""
import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def retain_freed_memory(limit=1 << 28):
    """Ask glibc malloc to reuse freed blocks up to ``limit`` bytes instead of unmapping them.

    Training allocates and frees arrays of the same sizes every iteration.
    By default glibc returns large blocks to the kernel, so each iteration
    page-faults its working set back in; on small models that is about a
    fifth of the step time. Returns False when the allocator is not glibc.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        mallopt = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6").mallopt
    except (OSError, AttributeError):
        return False
    return bool(mallopt(_M_MMAP_THRESHOLD, limit)) and bool(mallopt(_M_TRIM_THRESHOLD, limit))
