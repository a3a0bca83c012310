"""A local stand-in for a research partner's engine, with scriptable behavior.

Speaks the remote-engine wire protocol on a loopback port. Behaviors:
ok(latency) answers valid items, slow(latency) answers too (pair it with
a latency past the client deadline), error500 always fails, malformed
answers 200 with an unparseable body. Responses are a pure function of
the request, which keeps simulation runs reproducible.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler

from .errors import ConfigError
from .http_api import QuietThreadingHTTPServer

BEHAVIOR_MODES = ("ok", "slow", "error500", "malformed")


@dataclass(frozen=True)
class MockBehavior:
    mode: str
    latency_ms: int = 0

    def __post_init__(self):
        if self.mode not in BEHAVIOR_MODES:
            raise ConfigError(f"unknown mock engine behavior: {self.mode!r}")
        if self.latency_ms < 0:
            raise ConfigError("mock engine latency must be non-negative")


def _items_for(query_title: str, max_items: int) -> list[dict]:
    slug = "-".join(query_title.split())[:60] or "untitled"
    return [
        {
            "title": f"Related reading {i} for {query_title}".strip(),
            "url": f"https://mock-engine.example/articles/{slug}/{i}",
            "score": round(1.0 - 0.01 * (i - 1), 4),
        }
        for i in range(1, max_items + 1)
    ]


class _MockHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    behavior: MockBehavior
    request_log: list[dict]
    log_lock: threading.Lock

    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            request = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            request = {}
        with self.log_lock:
            self.request_log.append(request)

        behavior = self.behavior
        if behavior.latency_ms:
            time.sleep(behavior.latency_ms / 1000.0)

        try:
            if behavior.mode == "error500":
                payload = b'{"error":"boom"}'
                self.send_response(500)
            elif behavior.mode == "malformed":
                payload = b"this is not json {"
                self.send_response(200)
            else:  # ok / slow
                title = str(request.get("query", {}).get("title", ""))
                max_items = int(request.get("max_items", 0) or 0)
                payload = json.dumps(
                    {"items": _items_for(title, max_items)}, ensure_ascii=False
                ).encode("utf-8")
                self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client gave up (deadline); nothing to answer


class MockResearchEngine:
    """Scriptable partner engine bound to 127.0.0.1 on an ephemeral port."""

    def __init__(self, behavior: MockBehavior, host: str = "127.0.0.1", port: int = 0):
        self.request_log: list[dict] = []
        handler = type(
            "BoundMockHandler",
            (_MockHandler,),
            {
                "behavior": behavior,
                "request_log": self.request_log,
                "log_lock": threading.Lock(),
            },
        )
        self._server = QuietThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None
        self.behavior = behavior

    @property
    def endpoint_url(self) -> str:
        host, port = self._server.server_address[0], self._server.server_address[1]
        return f"http://{host}:{port}/recommend"

    def start(self) -> "MockResearchEngine":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockResearchEngine":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
