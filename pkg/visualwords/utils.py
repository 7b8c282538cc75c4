import time
from contextlib import contextmanager

from joblib import Parallel, delayed

from .boot import thread_count


def parallel_map(func, items, prefer='threads'):
    """
        Applies ``func`` to every item, in order, on up to VV_THREADS
        workers. With one worker everything runs in-process.
    """
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    return Parallel(n_jobs=workers, prefer=prefer)(
        delayed(func)(item) for item in items)


class PhaseTimer(dict):
    """Accumulated wall-clock seconds per named phase."""

    @contextmanager
    def phase(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self[name] = self.get(name, 0.0) + time.perf_counter() - start

    @property
    def total(self):
        return sum(self.values())
