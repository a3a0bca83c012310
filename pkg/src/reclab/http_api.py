"""HTTP adapter for the living-lab core.

All bodies are UTF-8 JSON. The handler holds no state of its own; every
route delegates to a LivingLab instance and maps package errors onto
status codes. Responses are shape-identical regardless of which engine
served the request, so partners cannot infer engine identity.
"""

from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .engines import EngineDescriptor
from .errors import (
    AuthError,
    DuplicateIdError,
    EmptyTitleError,
    NoAllocationError,
    RecLabError,
    StorageUnavailableError,
    UnknownClickTargetError,
    ValidationError,
)
from .gateway import LivingLab, PartnerRegistration
from .router import AllocationConfig


class QuietThreadingHTTPServer(ThreadingHTTPServer):
    """Thread-per-request server that does not dump tracebacks for dead peers."""

    daemon_threads = True

    def handle_error(self, request, client_address):
        exc = sys.exc_info()[1]
        if isinstance(exc, (BrokenPipeError, ConnectionResetError, ConnectionAbortedError)):
            return
        super().handle_error(request, client_address)

_STATUS_BY_ERROR = (
    (AuthError, 401),
    (UnknownClickTargetError, 404),
    (DuplicateIdError, 409),
    (EmptyTitleError, 400),
    (ValidationError, 400),
    (StorageUnavailableError, 503),
    (NoAllocationError, 503),
)


def _status_for(exc: RecLabError) -> int:
    for error_type, status in _STATUS_BY_ERROR:
        if isinstance(exc, error_type):
            return status
    return 500


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    lab: LivingLab  # set on the subclass built in make_server

    def log_message(self, fmt, *args):  # quiet; the event log is the record
        pass

    # -- helpers -------------------------------------------------------------

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        if not body:
            return {}
        try:
            payload = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValidationError("body", "body is not valid JSON")
        if not isinstance(payload, dict):
            raise ValidationError("body", "body must be a JSON object")
        return payload

    def _send_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _send_error_json(self, exc: Exception) -> None:
        if isinstance(exc, RecLabError):
            status = _status_for(exc)
            code = exc.__class__.__name__.removesuffix("Error")
        else:
            status, code = 500, "Internal"
        self._send_json(status, {"error": code, "message": str(exc)})

    def _require_admin(self) -> None:
        self.lab.check_admin_key(self.headers.get("X-Admin-Key") or "")

    # -- routes ----------------------------------------------------------------

    def do_GET(self):
        try:
            parts = self.path.rstrip("/").split("/")
            if self.path == "/v1/health":
                self._send_json(200, self.lab.health())
            elif len(parts) == 5 and parts[1] == "v1" and parts[2] == "click":
                try:
                    position = int(parts[4])
                except ValueError:
                    raise UnknownClickTargetError("position is not an integer")
                target = self.lab.handle_click(parts[3], position)
                self.send_response(302)
                self.send_header("Location", target)
                self.send_header("Content-Length", "0")
                self.end_headers()
            else:
                self._send_json(404, {"error": "NotFound", "message": self.path})
        except Exception as exc:  # noqa: BLE001 - every error becomes a response
            self._send_error_json(exc)

    def do_POST(self):
        try:
            if self.path == "/v1/recommendations":
                self._recommendations()
            elif self.path == "/v1/click":
                payload = self._read_json()
                try:
                    set_id = str(payload["set_id"])
                    position = int(payload["position"])
                except (KeyError, TypeError, ValueError):
                    raise ValidationError("body", "need set_id and integer position")
                self.lab.handle_click(set_id, position)
                self.send_response(204)
                self.send_header("Content-Length", "0")
                self.end_headers()
            elif self.path == "/v1/admin/engines":
                self._require_admin()
                raw = self._read_json()
                self.lab.register_engine(
                    EngineDescriptor(
                        engine_id=str(raw.get("engine_id", "")),
                        kind=str(raw.get("kind", "")),
                        endpoint_url=raw.get("endpoint_url"),
                        deadline_ms=raw.get("deadline_ms"),
                    )
                )
                self._send_json(200, {"status": "ok"})
            elif self.path == "/v1/admin/partners":
                self._require_admin()
                raw = self._read_json()
                self.lab.register_partner(
                    PartnerRegistration(
                        partner_id=str(raw.get("partner_id", "")),
                        api_key=str(raw.get("api_key", "")),
                        display_name=str(raw.get("display_name", "")),
                    )
                )
                self._send_json(200, {"status": "ok"})
            else:
                self._send_json(404, {"error": "NotFound", "message": self.path})
        except Exception as exc:  # noqa: BLE001
            self._send_error_json(exc)

    def do_PUT(self):
        try:
            prefix = "/v1/admin/allocations/"
            if self.path.startswith(prefix) and len(self.path) > len(prefix):
                self._require_admin()
                partner_id = self.path[len(prefix):].rstrip("/")
                raw = self._read_json()
                entries = raw.get("entries")
                if not isinstance(entries, list) or not entries:
                    raise ValidationError("entries", "entries must be a non-empty list")
                fallback = raw.get("fallback_order")
                config = AllocationConfig(
                    partner_id=partner_id,
                    entries=tuple(
                        (str(e.get("engine_id", "")), float(e.get("weight", -1.0)))
                        for e in entries
                    ),
                    fallback_order=tuple(fallback) if fallback is not None else None,
                )
                self.lab.set_allocation(config)
                self._send_json(200, {"status": "ok"})
            else:
                self._send_json(404, {"error": "NotFound", "message": self.path})
        except Exception as exc:  # noqa: BLE001
            self._send_error_json(exc)

    def _recommendations(self) -> None:
        payload = self._read_json()
        title = payload.get("title")
        if not isinstance(title, str):
            raise ValidationError("title", "title must be a string")
        max_count = payload.get("max_count")
        if max_count is not None and not isinstance(max_count, int):
            raise ValidationError("max_count", "max_count must be an integer")
        response = self.lab.handle_recommend(
            partner_id=self.headers.get("X-Partner-Id") or "",
            api_key=self.headers.get("X-Api-Key") or "",
            raw_title=title,
            max_count=max_count,
        )
        self._send_json(
            200,
            {
                "set_id": response.set_id,
                "items": [
                    {"position": i.position, "title": i.title, "click_url": i.click_url}
                    for i in response.items
                ],
                "processing_time_ms": response.processing_time_ms,
            },
        )


class GatewayServer:
    """A LivingLab behind a threading HTTP server, startable in-process."""

    def __init__(self, lab: LivingLab, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"lab": lab})
        self._server = QuietThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None
        self.lab = lab

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[0], self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "GatewayServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
