"""Topic-based publish-subscribe hub for live workshop displays.

Five fixed topics carry session deltas from the engine to every display
client. Each topic keeps a strictly increasing sequence number and
retains its last envelope as a snapshot, so late joiners render current
state immediately. Publishing requires a shared token and a payload that
validates against the topic's JSON schema; subscribers that fall behind
a bounded outbound buffer are dropped rather than allowed to stall the
live displays.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Protocol

import jsonschema

from .session import TOPICS

DEFAULT_BUFFER_LIMIT = 1000
DEFAULT_PUBLISH_TOKEN = "workshop-table"


class SyncError(ValueError):
    """Base for hub rejections; the wire layer turns these into error frames."""


class TopicError(SyncError):
    """Unknown topic name."""


class AuthError(SyncError):
    """Publish attempted without the shared publisher token."""


class PayloadError(SyncError):
    """Payload failed the topic's schema; nothing was delivered."""


def load_topic_schemas() -> dict[str, dict]:
    schema_dir = resources.files("siteboard") / "schemas"
    return {
        topic: json.loads((schema_dir / f"{topic}.json").read_text(encoding="utf-8"))
        for topic in TOPICS
    }


@dataclass(frozen=True)
class Envelope:
    topic: str
    seq: int
    ts: int
    payload: dict

    def to_json(self) -> dict:
        return {"topic": self.topic, "seq": self.seq, "ts": self.ts, "payload": self.payload}


class Sink(Protocol):
    """Where a subscription delivers envelopes. send must not block; a
    False return tells the hub to drop the subscription."""

    def send(self, envelope: Envelope) -> bool: ...


class QueueSink:
    """Thread-safe bounded sink; the default for in-process subscribers."""

    def __init__(self, maxsize: int = DEFAULT_BUFFER_LIMIT):
        self.queue: queue.Queue[Envelope] = queue.Queue(maxsize=maxsize)

    def send(self, envelope: Envelope) -> bool:
        try:
            self.queue.put_nowait(envelope)
            return True
        except queue.Full:
            return False

    def get(self, timeout: float | None = None) -> Envelope:
        return self.queue.get(timeout=timeout)

    def drain(self) -> list[Envelope]:
        out = []
        while True:
            try:
                out.append(self.queue.get_nowait())
            except queue.Empty:
                return out


class CallbackSink:
    """Adapts a non-blocking callable (e.g. a loop.call_soon_threadsafe
    trampoline) to the sink contract."""

    def __init__(self, fn: Callable[[Envelope], bool]):
        self._fn = fn

    def send(self, envelope: Envelope) -> bool:
        return bool(self._fn(envelope))


@dataclass
class Subscription:
    topic: str
    sink: Sink
    active: bool = True


@dataclass
class _TopicState:
    lock: threading.Lock = field(default_factory=threading.Lock)
    seq: int = 0
    snapshot: Envelope | None = None
    subscribers: list[Subscription] = field(default_factory=list)


class Hub:
    """Serializes publishes per topic; fan-out happens under the topic lock
    through non-blocking sinks, so no subscriber can stall another topic."""

    def __init__(
        self,
        publish_token: str = DEFAULT_PUBLISH_TOKEN,
        schemas: dict[str, dict] | None = None,
        clock: Callable[[], int] | None = None,
    ):
        self._token = publish_token
        self._clock = clock or (lambda: int(time.time() * 1000))
        schemas = load_topic_schemas() if schemas is None else schemas
        missing = [t for t in TOPICS if t not in schemas]
        if missing:
            raise SyncError(f"missing payload schemas for topics: {missing}")
        self._validators = {
            topic: jsonschema.Draft202012Validator(schema) for topic, schema in schemas.items()
        }
        self._topics = {topic: _TopicState() for topic in TOPICS}

    def _state(self, topic: str) -> _TopicState:
        try:
            return self._topics[topic]
        except KeyError:
            raise TopicError(f"unknown topic {topic!r}; valid topics: {', '.join(TOPICS)}") from None

    def topics(self) -> tuple[str, ...]:
        return TOPICS

    def check_token(self, token: str | None) -> None:
        if token != self._token:
            raise AuthError("publishing requires the shared table token")

    def publish(self, topic: str, payload: dict, token: str | None) -> int:
        self.check_token(token)
        st = self._state(topic)
        error = jsonschema.exceptions.best_match(self._validators[topic].iter_errors(payload))
        if error is not None:
            raise PayloadError(f"{topic}: {error.message}")
        with st.lock:
            st.seq += 1
            envelope = Envelope(topic=topic, seq=st.seq, ts=self._clock(), payload=payload)
            st.snapshot = envelope
            dead = [sub for sub in st.subscribers if sub.active and not sub.sink.send(envelope)]
            for sub in dead:
                sub.active = False
            if dead:
                st.subscribers = [s for s in st.subscribers if s.active]
            return st.seq

    def subscribe(self, topic: str, sink: Sink) -> Subscription:
        st = self._state(topic)
        sub = Subscription(topic=topic, sink=sink)
        with st.lock:
            # snapshot delivered under the lock: nothing can interleave
            # between the retained envelope and the next live one
            if st.snapshot is not None and not sink.send(st.snapshot):
                sub.active = False
                return sub
            st.subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        st = self._state(sub.topic)
        with st.lock:
            sub.active = False
            st.subscribers = [s for s in st.subscribers if s is not sub]

    def snapshot(self, topic: str) -> Envelope | None:
        st = self._state(topic)
        with st.lock:
            return st.snapshot

    def seq(self, topic: str) -> int:
        st = self._state(topic)
        with st.lock:
            return st.seq

    def subscriber_count(self, topic: str) -> int:
        st = self._state(topic)
        with st.lock:
            return sum(1 for s in st.subscribers if s.active)

    def stats(self) -> dict:
        return {
            topic: {"seq": self.seq(topic), "subscribers": self.subscriber_count(topic)}
            for topic in TOPICS
        }


# -- wire frames ----------------------------------------------------------------
#
# Client -> hub: {"op": "subscribe", "topic": T}
#              | {"op": "publish", "topic": T, "payload": P, "token": K}
# Hub -> client: {"topic": T, "seq": n, "ts": ms, "payload": P}
#              | {"error": message}

def error_frame(message: str) -> dict:
    return {"error": message}


def parse_frame(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SyncError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SyncError("frame must be a JSON object")
    if "op" not in doc:
        raise SyncError("frame needs an 'op' field")
    return doc
