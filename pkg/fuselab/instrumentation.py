"""
A tiny publish/subscribe broker for numerical instrumentation.

The integrator publishes one message per covariance propagation over an epoch interval,
tagged with a topic naming who asked for it (`"local"` for the local filters, `"cross"` for
the cross-covariance bank).  Publishers never know who listens; subscribers such as
`PropagationCounter` register with the broker for the topics they care about.  This is
how the cost claims ("N(N-1)/2 cross propagations per epoch against N local ones") are
asserted without threading counters through every call.
"""
from __future__ import annotations

import contextlib
import threading
import typing

LOCAL = "local"
CROSS = "cross"


class Recorder(typing.Protocol):
    """
    Anything that can receive a propagation message.
    """

    def record(self, topic: str) -> None:
        raise NotImplementedError


class SupportsSubscribing(typing.Protocol):
    def subscribe(self, topic: str, recorder: Recorder) -> None:
        raise NotImplementedError

    def unsubscribe(self, topic: str, recorder: Recorder) -> None:
        raise NotImplementedError


class PropagationBroker:
    """
    The middle man between the integrator and the recorders.  It retains a mapping of
    topic: list of recorders and delivers synchronously.
    """

    def __init__(self) -> None:
        self.recorders: typing.Dict[str, typing.List[Recorder]] = {}
        self._lock = threading.Lock()

    def subscribe(self, topic: str, recorder: Recorder) -> None:
        with self._lock:
            self.recorders.setdefault(topic, []).append(recorder)

    def unsubscribe(self, topic: str, recorder: Recorder) -> None:
        with self._lock:
            self.recorders[topic].remove(recorder)

    def publish(self, topic: str) -> None:
        with self._lock:
            recorders = tuple(self.recorders.get(topic, ()))
        for recorder in recorders:
            recorder.record(topic)


class PropagationCounter:
    """
    Counts propagations per topic.

    >>> broker = PropagationBroker()
    >>> counter = PropagationCounter()
    >>> broker.subscribe("cross", counter)
    >>> broker.publish("cross"); broker.publish("local")
    >>> counter.counts
    {'cross': 1}
    """

    def __init__(self) -> None:
        self.counts: typing.Dict[str, int] = {}
        self._lock = threading.Lock()

    def record(self, topic: str) -> None:
        with self._lock:
            self.counts[topic] = self.counts.get(topic, 0) + 1

    def __getitem__(self, topic: str) -> int:
        return self.counts.get(topic, 0)


broker = PropagationBroker()


@contextlib.contextmanager
def counting(*topics: str, provider: SupportsSubscribing = broker) -> typing.Iterator[PropagationCounter]:
    topics = topics or (LOCAL, CROSS)
    counter = PropagationCounter()
    for topic in topics:
        provider.subscribe(topic, counter)
    try:
        yield counter
    finally:
        for topic in topics:
            provider.unsubscribe(topic, counter)
