"""WebSocket service: one live session engine fanned out through the hub.

Display clients subscribe to topics over a single /ws endpoint and get
retained snapshots first, then live deltas. The virtual table drives the
session by sending command frames (a server-level extension to the wire
protocol) which are applied by a single engine thread in arrival order,
so the session log stays a serial record that replays bit-identically.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .session import (
    SessionDataset,
    SessionState,
    SessionStore,
    apply_and_log,
    start_and_log,
)
from .sync import (
    DEFAULT_BUFFER_LIMIT,
    DEFAULT_PUBLISH_TOKEN,
    CallbackSink,
    Hub,
    SyncError,
    error_frame,
    parse_frame,
)


@dataclass
class ServeSettings:
    host: str = "127.0.0.1"
    port: int = 8700
    session_id: str = "live"
    district_id: str = "d1"
    target_total: int | None = None
    token: str = DEFAULT_PUBLISH_TOKEN
    buffer_limit: int = DEFAULT_BUFFER_LIMIT
    static_dir: str | Path | None = None


class EngineWorker:
    """Single-writer wrapper around one live session.

    Commands run on a dedicated thread in submission order; every
    resulting delta is published to the hub under the shared token.
    """

    def __init__(self, ds: SessionDataset, store: SessionStore, hub: Hub, settings: ServeSettings):
        self.ds = ds
        self.store = store
        self.hub = hub
        self.settings = settings
        self.state: SessionState | None = None
        self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="engine")

    def start(self) -> None:
        self.state, deltas = start_and_log(
            self.ds,
            self.store,
            self.settings.session_id,
            self.settings.district_id,
            target_total=self.settings.target_total,
        )
        for delta in deltas:
            self.hub.publish(delta.topic, delta.payload, self.settings.token)

    def _apply(self, cmd: dict) -> int:
        deltas = apply_and_log(self.ds, self.store, self.state, cmd)
        for delta in deltas:
            self.hub.publish(delta.topic, delta.payload, self.settings.token)
        return len(deltas)

    async def submit(self, cmd: dict) -> int:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._executor, self._apply, cmd)

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)
        if self.state is not None:
            self.store.record_session_total(self.state.session_id, self.state.session_capacity())


def create_app(ds: SessionDataset, store: SessionStore, settings: ServeSettings) -> FastAPI:
    hub = Hub(publish_token=settings.token)
    engine = EngineWorker(ds, store, hub, settings)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        engine.start()
        yield
        engine.shutdown()

    app = FastAPI(lifespan=lifespan)
    app.state.hub = hub
    app.state.engine = engine

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "session_id": settings.session_id,
            "district_id": settings.district_id,
            "topics": hub.stats(),
        }

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        loop = asyncio.get_running_loop()
        out: asyncio.Queue[str | None] = asyncio.Queue(maxsize=settings.buffer_limit)
        subs = []
        closing = False

        def put_on_loop(text: str) -> None:
            nonlocal closing
            if closing:
                return
            try:
                out.put_nowait(text)
            except asyncio.QueueFull:
                # slow subscriber: drop the connection, never the topic order
                closing = True
                loop.create_task(close_slow())

        async def close_slow() -> None:
            try:
                await ws.close(code=1013, reason="outbound buffer overflow")
            except RuntimeError:
                pass

        def enqueue(envelope) -> bool:
            loop.call_soon_threadsafe(put_on_loop, json.dumps(envelope.to_json()))
            return True

        def reply(frame: dict) -> None:
            put_on_loop(json.dumps(frame))

        async def writer() -> None:
            while True:
                text = await out.get()
                if text is None:
                    return
                await ws.send_text(text)

        writer_task = asyncio.create_task(writer())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    frame = parse_frame(raw)
                except SyncError as exc:
                    reply(error_frame(str(exc)))
                    continue
                op = frame.get("op")
                if op == "subscribe":
                    try:
                        subs.append(hub.subscribe(frame.get("topic", ""), CallbackSink(enqueue)))
                    except SyncError as exc:
                        reply(error_frame(str(exc)))
                elif op == "publish":
                    try:
                        hub.publish(frame.get("topic", ""), frame.get("payload"), frame.get("token"))
                    except SyncError as exc:
                        reply(error_frame(str(exc)))
                elif op == "command":
                    if frame.get("token") != settings.token:
                        reply(error_frame("commands require the shared table token"))
                        continue
                    try:
                        await engine.submit(frame.get("command") or {})
                    except ValueError as exc:
                        reply(error_frame(f"command rejected: {exc}"))
                else:
                    reply(error_frame(f"unknown op {op!r}"))
        except WebSocketDisconnect:
            pass
        finally:
            for sub in subs:
                hub.unsubscribe(sub)
            closing = True
            writer_task.cancel()

    static_dir = Path(settings.static_dir) if settings.static_dir else None
    if static_dir is not None and static_dir.is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def run_server(ds: SessionDataset, store: SessionStore, settings: ServeSettings) -> None:
    app = create_app(ds, store, settings)
    uvicorn.run(app, host=settings.host, port=settings.port, log_level="info")


class BackgroundServer:
    """Run an app under uvicorn on a background thread; port 0 picks a free
    port. Used by tests and embedding callers; stop() shuts down cleanly."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        self._config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def start(self, timeout: float = 10.0) -> "BackgroundServer":
        self._thread.start()
        end = time.monotonic() + timeout
        while not self._server.started:
            if time.monotonic() > end or not self._thread.is_alive():
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        return self

    @property
    def port(self) -> int:
        return self._server.servers[0].sockets[0].getsockname()[1]

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)
