import threading

import pytest

from siteboard.sync import (
    AuthError,
    Envelope,
    Hub,
    PayloadError,
    QueueSink,
    SyncError,
    TopicError,
    error_frame,
    load_topic_schemas,
    parse_frame,
)

TOKEN = "test-token"


def make_hub(**kw):
    kw.setdefault("publish_token", TOKEN)
    kw.setdefault("clock", lambda: 1234)
    return Hub(**kw)


def stats_payload(seq=1, remaining=20_000, proposed=0):
    return {
        "session_id": "s1",
        "seq": seq,
        "target_total": 20_000,
        "proposed_total": proposed,
        "remaining": remaining,
        "session_active_proposals": 0,
        "status": "open" if remaining > 0 else ("target met" if remaining == 0 else "target exceeded"),
    }


def district_payload(seq=1):
    return {
        "session_id": "s1",
        "seq": seq,
        "district_id": "d1",
        "name": "District 1",
        "population": 100_000,
        "current_refugees": 1_000,
        "session_active_proposals": 0,
        "session_proposed_capacity": 0,
    }


class TestPublish:
    def test_seq_assignment_and_snapshot(self):
        hub = make_hub()
        assert hub.publish("global_stats", stats_payload(1), TOKEN) == 1
        assert hub.publish("global_stats", stats_payload(2), TOKEN) == 2
        assert hub.seq("global_stats") == 2
        snap = hub.snapshot("global_stats")
        assert snap.seq == 2 and snap.ts == 1234 and snap.topic == "global_stats"
        # other topics untouched
        assert hub.seq("proposals") == 0 and hub.snapshot("proposals") is None

    def test_unknown_topic(self):
        hub = make_hub()
        with pytest.raises(TopicError, match="unknown topic 'weather'"):
            hub.publish("weather", {}, TOKEN)
        with pytest.raises(TopicError):
            hub.subscribe("weather", QueueSink())

    def test_bad_token(self):
        hub = make_hub()
        with pytest.raises(AuthError):
            hub.publish("global_stats", stats_payload(), "nope")
        with pytest.raises(AuthError):
            hub.publish("global_stats", stats_payload(), None)

    def test_invalid_payload_rejected_atomically(self):
        hub = make_hub()
        sink = QueueSink()
        hub.subscribe("global_stats", sink)
        bad = stats_payload()
        del bad["remaining"]
        with pytest.raises(PayloadError, match="global_stats"):
            hub.publish("global_stats", bad, TOKEN)
        with pytest.raises(PayloadError, match="not one of"):
            hub.publish("global_stats", {**stats_payload(), "status": "nearly there"}, TOKEN)
        assert hub.seq("global_stats") == 0
        assert hub.snapshot("global_stats") is None
        assert sink.drain() == []

    def test_fifo_to_subscriber(self):
        hub = make_hub()
        sink = QueueSink()
        hub.subscribe("global_stats", sink)
        for i in range(1, 6):
            hub.publish("global_stats", stats_payload(i), TOKEN)
        seqs = [env.seq for env in sink.drain()]
        assert seqs == [1, 2, 3, 4, 5]


class TestSubscribe:
    def test_no_snapshot_before_first_publish(self):
        hub = make_hub()
        sink = QueueSink()
        hub.subscribe("district_state", sink)
        assert sink.drain() == []

    def test_late_joiner_gets_retained_snapshot_first(self):
        hub = make_hub()
        for i in range(1, 6):
            hub.publish("global_stats", stats_payload(i), TOKEN)
        sink = QueueSink()
        hub.subscribe("global_stats", sink)
        hub.publish("global_stats", stats_payload(6), TOKEN)
        seqs = [env.seq for env in sink.drain()]
        assert seqs == [5, 6]

    def test_unsubscribe_stops_delivery(self):
        hub = make_hub()
        sink = QueueSink()
        sub = hub.subscribe("global_stats", sink)
        hub.publish("global_stats", stats_payload(1), TOKEN)
        hub.unsubscribe(sub)
        hub.publish("global_stats", stats_payload(2), TOKEN)
        assert [e.seq for e in sink.drain()] == [1]
        assert hub.subscriber_count("global_stats") == 0

    def test_hub_state_survives_full_disconnect(self):
        hub = make_hub()
        subs = [hub.subscribe("global_stats", QueueSink()) for _ in range(5)]
        hub.publish("global_stats", stats_payload(1), TOKEN)
        for sub in subs:
            hub.unsubscribe(sub)
        assert hub.subscriber_count("global_stats") == 0
        assert hub.seq("global_stats") == 1
        assert hub.snapshot("global_stats").seq == 1


class TestBackpressure:
    def test_slow_subscriber_dropped_others_unaffected(self):
        hub = make_hub()
        slow = QueueSink(maxsize=3)
        fast = QueueSink()
        hub.subscribe("global_stats", slow)
        hub.subscribe("global_stats", fast)
        for i in range(1, 8):
            hub.publish("global_stats", stats_payload(i), TOKEN)
        assert [e.seq for e in fast.drain()] == list(range(1, 8))
        assert [e.seq for e in slow.drain()] == [1, 2, 3]
        assert hub.subscriber_count("global_stats") == 1

    def test_snapshot_overflow_never_subscribes(self):
        hub = make_hub()
        hub.publish("global_stats", stats_payload(1), TOKEN)
        full = QueueSink(maxsize=1)
        full.queue.put_nowait(Envelope("global_stats", 0, 0, {}))
        sub = hub.subscribe("global_stats", full)
        assert not sub.active
        assert hub.subscriber_count("global_stats") == 0


class TestFanOutContract:
    def test_20_subscribers_1000_publishes_identical_gapless_runs(self):
        hub = make_hub()
        topics = hub.topics()
        sinks = [
            {topic: QueueSink(maxsize=2000) for topic in topics} for _ in range(20)
        ]
        for per_topic in sinks:
            for topic, sink in per_topic.items():
                hub.subscribe(topic, sink)

        payloads = {
            "global_stats": stats_payload(),
            "district_state": district_payload(),
            "map_extents": {
                "session_id": "s1", "seq": 1, "district_id": "d1", "station": "District",
                "extent": {"min_x": 0, "min_y": 0, "max_x": 10, "max_y": 10},
                "scale_denominator": 750.0,
            },
            "proposals": {
                "session_id": "s1", "seq": 1, "kind": "created",
                "proposal": {"id": "prop-1", "parcel_id": "pa", "capacity": 40,
                             "suitability_at_placement": "low", "created_seq": 1,
                             "status": "Suggested"},
                "active": [], "session_proposed_capacity": 40,
            },
            "parcel_detail": {"session_id": "s1", "seq": 1, "kind": "cleared"},
        }

        def worker(offset):
            for i in range(250):
                topic = topics[(offset + i) % len(topics)]
                hub.publish(topic, payloads[topic], TOKEN)

        threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        assert sum(hub.seq(t) for t in topics) == 1000
        reference = {topic: list(range(1, hub.seq(topic) + 1)) for topic in topics}
        for per_topic in sinks:
            for topic, sink in per_topic.items():
                seqs = [e.seq for e in sink.drain()]
                assert seqs == reference[topic]


class TestFrames:
    def test_parse_frame(self):
        assert parse_frame('{"op": "subscribe", "topic": "global_stats"}')["op"] == "subscribe"
        with pytest.raises(SyncError, match="not valid JSON"):
            parse_frame("{nope")
        with pytest.raises(SyncError, match="JSON object"):
            parse_frame('[1, 2]')
        with pytest.raises(SyncError, match="'op'"):
            parse_frame('{"topic": "global_stats"}')
        assert error_frame("boom") == {"error": "boom"}

    def test_schemas_cover_all_topics(self):
        schemas = load_topic_schemas()
        assert set(schemas) == set(Hub().topics())
