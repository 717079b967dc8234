import queue
import threading


class ThreadsafeIter(object):
    """Takes an iterator/generator and makes it thread-safe by
    serializing call to the `next` method of given iterator/generator.
    """

    def __init__(self, it):
        self.it = it
        self.lock = threading.Lock()

    def __iter__(self):
        return self

    def __next__(self):
        with self.lock:
            return next(self.it)


def threadsafe_generator(f):
    """A decorator that takes a generator function and makes it thread-safe.
    """

    def g(*a, **kw):
        return ThreadsafeIter(f(*a, **kw))

    return g


_END = object()


class _Failure(object):
    def __init__(self, exc):
        self.exc = exc


class Prefetcher(object):
    """Runs a generator on a daemon thread behind a bounded queue.

    Items come out in production order. Exceptions raised by the producer
    are re-raised on the consumer side.
    """

    def __init__(self, it, depth):
        if depth < 1:
            raise ValueError('prefetch depth must be >= 1')
        self.it = it
        self.queue = queue.Queue(maxsize=depth)
        self.stopped = threading.Event()
        self.thread = threading.Thread(target=self._produce, daemon=True)
        self.thread.start()

    def _put(self, item):
        while not self.stopped.is_set():
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self):
        try:
            for item in self.it:
                if not self._put(item):
                    return
        except Exception as e:  # re-raised by the consumer
            self._put(_Failure(e))
            return
        self._put(_END)

    def __iter__(self):
        return self

    def __next__(self):
        item = self.queue.get()
        if item is _END:
            raise StopIteration
        if isinstance(item, _Failure):
            raise item.exc
        return item

    def close(self):
        self.stopped.set()


def prefetch(it, depth):
    """Returns `it` unchanged when depth is 0, otherwise a `Prefetcher`."""
    if depth <= 0:
        return it
    return Prefetcher(it, depth)
