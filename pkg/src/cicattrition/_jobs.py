import os

THREADS_ENV = "CICATTR_THREADS"


def default_jobs() -> int:
    """Worker count for bootstrap and Monte Carlo loops (env ``CICATTR_THREADS``, default 1)."""
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1
