"""Worker-thread policy.

The only knob is the ANYBCQ_THREADS environment variable: unset or "1"
means single-threaded, "0" means one worker per CPU, any other positive
integer is an explicit cap. Row-parallel code paths (the GEMV engine)
consult this at call time, so the variable can be flipped between calls.
"""

import os

_ENV_VAR = "ANYBCQ_THREADS"


def thread_count() -> int:
    """Number of worker threads row-parallel operations may use (>= 1)."""
    raw = os.environ.get(_ENV_VAR, "1").strip()
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def row_chunks(n_rows: int, workers: int) -> list[tuple[int, int]]:
    """Split [0, n_rows) into at most `workers` contiguous ranges."""
    workers = max(1, min(workers, n_rows))
    step = (n_rows + workers - 1) // workers
    return [(lo, min(lo + step, n_rows)) for lo in range(0, n_rows, step)]
